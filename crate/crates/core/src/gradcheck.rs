//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::LinearLayer;

/// Anything made of [`LinearLayer`]s, visited in a fixed order.
pub trait Parameterized {
    fn layers(&self) -> Vec<&LinearLayer>;
    fn layers_mut(&mut self) -> Vec<&mut LinearLayer>;

    fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.zero_grad();
        }
    }
}

impl Parameterized for LinearLayer {
    fn layers(&self) -> Vec<&LinearLayer> {
        vec![self]
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        vec![self]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Number of randomly chosen parameter coordinates (all of them if fewer exist).
    pub coordinates: usize,
    /// Errors are `|a - n| / max(|a|, |n|, scale_floor)`.
    pub scale_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coordinates: 100,
            scale_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients with central differences.
///
/// `loss(net, backprop)` must be deterministic. With `backprop == true` it must
/// also accumulate the gradient of the returned value into the layers.
pub fn gradient_check<N, F>(net: &mut N, cfg: &GradCheckConfig, mut loss: F) -> Result<GradCheckReport>
where
    N: Parameterized,
    F: FnMut(&mut N, bool) -> Result<f64>,
{
    net.zero_grad();
    loss(net, true)?;

    let total = net.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords: Vec<usize> = if cfg.coordinates >= total {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, cfg.coordinates).into_vec();
        v.sort_unstable();
        v
    };

    let analytic: Vec<f64> = coords.iter().map(|&c| locate(net, c, |l, i| l.grad(i))).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for (&c, &a) in coords.iter().zip(&analytic) {
        let orig = locate(net, c, |l, i| l.param(i));
        set(net, c, orig + cfg.step);
        let up = loss(net, false)?;
        set(net, c, orig - cfg.step);
        let down = loss(net, false)?;
        set(net, c, orig);
        let n = (up - down) / (2.0 * cfg.step);
        let err = (a - n).abs() / a.abs().max(n.abs()).max(cfg.scale_floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coordinate = c;
            report.analytic = a;
            report.numeric = n;
        }
    }
    net.zero_grad();
    Ok(report)
}

fn locate<N: Parameterized, T>(net: &N, mut flat: usize, f: impl Fn(&LinearLayer, usize) -> T) -> T {
    for l in net.layers() {
        if flat < l.num_params() {
            return f(l, flat);
        }
        flat -= l.num_params();
    }
    panic!("parameter index out of range");
}

fn set<N: Parameterized>(net: &mut N, mut flat: usize, v: f64) {
    for l in net.layers_mut() {
        if flat < l.num_params() {
            l.set_param(flat, v);
            return;
        }
        flat -= l.num_params();
    }
    panic!("parameter index out of range");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Activation;
    use crate::tensor::Tensor;
    use rand::Rng;

    struct Toy {
        a: LinearLayer,
        b: LinearLayer,
        unused: LinearLayer,
    }

    impl Parameterized for Toy {
        fn layers(&self) -> Vec<&LinearLayer> {
            vec![&self.a, &self.b, &self.unused]
        }
        fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
            vec![&mut self.a, &mut self.b, &mut self.unused]
        }
    }

    fn toy_loss(net: &mut Toy, x: &Tensor, target: &Tensor, backprop: bool) -> Result<f64> {
        let h = Activation::Tanh.forward(&net.a.forward_train(x)?);
        let y = net.b.forward_train(&h)?;
        let diff = y.zip_map(target, "toy", |p, t| p - t)?;
        let loss = 0.5 * diff.data().iter().map(|d| d * d).sum::<f64>();
        if backprop {
            let gh = net.b.backward(&diff)?;
            let gpre = Activation::Tanh.backward(&h, &gh)?;
            net.a.backward_params(&gpre)?;
        }
        Ok(loss)
    }

    fn toy(seed: u64) -> (Toy, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Toy {
            a: LinearLayer::glorot(5, 7, &mut rng),
            b: LinearLayer::glorot(7, 3, &mut rng),
            unused: LinearLayer::glorot(2, 2, &mut rng),
        };
        let x = Tensor::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let t = Tensor::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        (net, x, t)
    }

    #[test]
    fn linear_tanh_toy_passes() {
        for seed in 0..20 {
            let (mut net, x, t) = toy(seed);
            let cfg = GradCheckConfig {
                coordinates: 1000,
                seed,
                ..Default::default()
            };
            let r = gradient_check(&mut net, &cfg, |n, bp| toy_loss(n, &x, &t, bp)).unwrap();
            assert!(r.max_rel_error <= 1e-6, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn disconnected_parameters_are_zero_both_ways() {
        let (mut net, x, t) = toy(1);
        let offset = net.a.num_params() + net.b.num_params();
        net.zero_grad();
        toy_loss(&mut net, &x, &t, true).unwrap();
        for i in 0..net.unused.num_params() {
            assert_eq!(net.unused.grad(i), 0.0);
        }
        let cfg = GradCheckConfig {
            coordinates: usize::MAX,
            ..Default::default()
        };
        let r = gradient_check(&mut net, &cfg, |n, bp| toy_loss(n, &x, &t, bp)).unwrap();
        assert!(r.worst_coordinate < offset || r.max_rel_error == 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let (mut net, x, t) = toy(2);
        let r = gradient_check(&mut net, &GradCheckConfig::default(), |n, bp| {
            let l = toy_loss(n, &x, &t, bp)?;
            if bp {
                // corrupt: accumulate everything twice
                toy_loss(n, &x, &t, true)?;
            }
            Ok(l)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
