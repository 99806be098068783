//! Probabilistic pieces of the objective: the diagonal Gaussian posterior and
//! its reparameterized samples, the analytic KL to N(0, I), the Bernoulli
//! reconstruction log-likelihood and the adversary's softmax cross-entropy.
//!
//! All logarithms are natural, so every quantity is in nats.

use crate::error::{Error, Result};
use crate::rng::{standard_normal, StreamRng};
use crate::tensor::Tensor;

pub const LOGVAR_MIN: f64 = -15.0;
pub const LOGVAR_MAX: f64 = 15.0;
/// Decoder outputs are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// `q(z | x, s) = N(mu, diag(exp(logvar)))` for each batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mu: Tensor,
    logvar: Tensor,
    /// True where the raw log-variance lay outside the clamp range.
    clamped: Vec<bool>,
}

impl GaussianPosterior {
    /// Clamps `raw_logvar` to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub fn new(mu: Tensor, raw_logvar: Tensor) -> Result<Self> {
        if mu.shape() != raw_logvar.shape() {
            return Err(Error::ShapeMismatch {
                op: "GaussianPosterior",
                left: mu.shape(),
                right: raw_logvar.shape(),
            });
        }
        let clamped = raw_logvar
            .data()
            .iter()
            .map(|&v| !(LOGVAR_MIN..=LOGVAR_MAX).contains(&v))
            .collect();
        let logvar = raw_logvar.map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        Ok(Self { mu, logvar, clamped })
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn logvar(&self) -> &Tensor {
        &self.logvar
    }

    pub fn std(&self) -> Tensor {
        self.logvar.map(|v| (0.5 * v).exp())
    }

    pub fn batch(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    /// Zeroes gradient entries whose log-variance was clamped.
    fn mask_logvar_grad(&self, grad: &mut Tensor) {
        for (g, &c) in grad.data_mut().iter_mut().zip(&self.clamped) {
            if c {
                *g = 0.0;
            }
        }
    }
}

/// `k` reparameterized draws per posterior row, stacked sample-major:
/// row `j * batch + i` holds draw `j` for item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Tensor,
    pub eps: Tensor,
}

impl LatentSample {
    pub fn draws(&self, batch: usize) -> usize {
        self.z.rows() / batch.max(1)
    }
}

/// `z = mu + exp(logvar / 2) ⊙ eps` with `eps ~ N(0, I)`, `k` draws per item.
pub fn reparameterize(post: &GaussianPosterior, k: usize, rng: &mut StreamRng) -> LatentSample {
    let eps = standard_normal(post.batch() * k, post.dim(), rng);
    reparameterize_with(post, eps).expect("noise drawn with matching shape")
}

/// Reparameterization with caller-supplied noise (`k·batch` rows).
pub fn reparameterize_with(post: &GaussianPosterior, eps: Tensor) -> Result<LatentSample> {
    let (b, d) = (post.batch(), post.dim());
    if eps.cols() != d || b == 0 || eps.rows() % b != 0 {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: eps.shape(),
            right: (b, d),
        });
    }
    let std = post.std();
    let mut z = eps.clone();
    for r in 0..eps.rows() {
        let i = r % b;
        for ((zv, &m), &s) in z.row_mut(r).iter_mut().zip(post.mu.row(i)).zip(std.row(i)) {
            *zv = m + s * *zv;
        }
    }
    Ok(LatentSample { z, eps })
}

/// Pulls a gradient on `z` back to `(mu, logvar)`, summing over draws.
///
/// `dz/dmu = 1`, `dz/dlogvar = ½·σ·ε`; `eps` receives no gradient.
pub fn reparameterize_backward(
    post: &GaussianPosterior,
    sample: &LatentSample,
    grad_z: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if grad_z.shape() != sample.z.shape() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize_backward",
            left: grad_z.shape(),
            right: sample.z.shape(),
        });
    }
    let (b, d) = (post.batch(), post.dim());
    let std = post.std();
    let mut g_mu = Tensor::zeros(b, d);
    let mut g_lv = Tensor::zeros(b, d);
    for r in 0..grad_z.rows() {
        let i = r % b;
        let gz = grad_z.row(r);
        let eps = sample.eps.row(r);
        for (gm, g) in g_mu.row_mut(i).iter_mut().zip(gz) {
            *gm += g;
        }
        for (((gl, g), e), s) in g_lv.row_mut(i).iter_mut().zip(gz).zip(eps).zip(std.row(i)) {
            *gl += g * 0.5 * s * e;
        }
    }
    post.mask_logvar_grad(&mut g_lv);
    Ok((g_mu, g_lv))
}

/// Per-item `KL(q || N(0, I)) = ½ Σ_d (μ² + σ² − log σ² − 1)`.
pub fn kl_standard_normal(post: &GaussianPosterior) -> Vec<f64> {
    (0..post.batch())
        .map(|i| {
            0.5 * post
                .mu
                .row(i)
                .iter()
                .zip(post.logvar.row(i))
                .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
                .sum::<f64>()
        })
        .collect()
}

/// Gradient of `Σ_i weight · KL_i` with respect to `(mu, logvar)`.
pub fn kl_backward(post: &GaussianPosterior, weight: f64) -> (Tensor, Tensor) {
    let g_mu = post.mu.scale(weight);
    let mut g_lv = post.logvar.map(|lv| weight * 0.5 * (lv.exp() - 1.0));
    post.mask_logvar_grad(&mut g_lv);
    (g_mu, g_lv)
}

/// Per-row `Σ_i x_i log y_i + (1 − x_i) log(1 − y_i)` with `y` clamped to
/// `[PROB_EPS, 1 − PROB_EPS]`.
pub fn bernoulli_loglik(x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "bernoulli_loglik",
            left: x.shape(),
            right: y.shape(),
        });
    }
    Ok((0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(y.row(r))
                .map(|(&xi, &yi)| {
                    let yc = yi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    xi * yc.ln() + (1.0 - xi) * (1.0 - yc).ln()
                })
                .sum()
        })
        .collect())
}

/// Gradient of the Bernoulli log-likelihood with respect to the decoder's
/// pre-sigmoid logits, `x − sigmoid(logits)`.
pub fn bernoulli_logit_grad(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    x.zip_map(y, "bernoulli_logit_grad", |xi, yi| xi - yi)
}

/// Per-item cross-entropy and its unscaled gradient `softmax − onehot`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub losses: Vec<f64>,
    pub grad_logits: Tensor,
    pub probs: Tensor,
}

impl CrossEntropy {
    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }
}

/// `−log softmax(logits)[label]`, computed after max-subtraction.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let classes = logits.cols();
    if labels.len() != logits.rows() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut probs = Tensor::zeros(logits.rows(), classes);
    let mut losses = Vec::with_capacity(labels.len());
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                label,
                index: r,
                classes,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
            *p = (v - log_norm).exp();
        }
        losses.push(log_norm - row[label]);
    }
    let mut grad_logits = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        grad_logits.row_mut(r)[label] -= 1.0;
    }
    Ok(CrossEntropy {
        losses,
        grad_logits,
        probs,
    })
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Variational lower-bound estimate of `I(s; z)`: `ln(classes) − CE`.
///
/// Assumes a uniform label prior. Not clamped, so sampling noise may make it
/// slightly negative.
pub fn mi_estimate(mean_cross_entropy: f64, num_classes: usize) -> f64 {
    (num_classes as f64).ln() - mean_cross_entropy
}
