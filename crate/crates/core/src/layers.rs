//! Affine layers, elementwise activations and the Adam update.
//!
//! Gradients accumulate across `backward` calls and are cleared by
//! [`LinearLayer::adam_step`] (or [`LinearLayer::zero_grad`]), so several loss
//! terms can be backpropagated one after the other before a single update.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Trans};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m_weight: Vec<f64>,
    v_weight: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
    step: u64,
}

/// Fully connected layer computing `x · W + b`, with `W` stored in-dim × out-dim.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    weight: Tensor,
    bias: Vec<f64>,
    grad_weight: Tensor,
    grad_bias: Vec<f64>,
    moments: Moments,
    cached_input: Option<Tensor>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
            grad_weight: Tensor::zeros(in_dim, out_dim),
            grad_bias: vec![0.0; out_dim],
            moments: Moments {
                m_weight: vec![0.0; in_dim * out_dim],
                v_weight: vec![0.0; in_dim * out_dim],
                m_bias: vec![0.0; out_dim],
                v_bias: vec![0.0; out_dim],
                step: 0,
            },
            cached_input: None,
        }
    }

    /// Glorot-uniform weights in ±√(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        for w in layer.weight.data_mut() {
            *w = dist.sample(rng);
        }
        layer
    }

    pub fn from_parts(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::ShapeMismatch {
                op: "from_parts",
                left: weight.shape(),
                right: (bias.len(), 1),
            });
        }
        let mut layer = Self::zeros(weight.rows(), weight.cols());
        layer.weight = weight;
        layer.bias = bias;
        Ok(layer)
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &Tensor {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    pub fn step_count(&self) -> u64 {
        self.moments.step
    }

    pub fn num_params(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    /// Flat parameter view: weights (row-major) followed by bias.
    pub fn param(&self, i: usize) -> f64 {
        let nw = self.weight.data().len();
        if i < nw {
            self.weight.data()[i]
        } else {
            self.bias[i - nw]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let nw = self.weight.data().len();
        if i < nw {
            self.weight.data_mut()[i] = v;
        } else {
            self.bias[i - nw] = v;
        }
        self.cached_input = None;
    }

    pub fn grad(&self, i: usize) -> f64 {
        let nw = self.grad_weight.data().len();
        if i < nw {
            self.grad_weight.data()[i]
        } else {
            self.grad_bias[i - nw]
        }
    }

    /// All parameters as weights-then-bias blocks.
    pub fn param_blocks(&self) -> [&[f64]; 2] {
        [self.weight.data(), &self.bias]
    }

    pub fn param_blocks_mut(&mut self) -> [&mut [f64]; 2] {
        self.cached_input = None;
        [self.weight.data_mut(), &mut self.bias]
    }

    /// Pure forward pass; nothing is cached.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "linear_forward",
                left: x.shape(),
                right: self.weight.shape(),
            });
        }
        let mut out = Tensor::zeros(x.rows(), self.out_dim());
        out.add_row_broadcast(&self.bias);
        gemm(1.0, x, Trans::No, &self.weight, Trans::No, 1.0, &mut out)?;
        Ok(out)
    }

    /// Forward pass that keeps `x` for a later [`backward`](Self::backward).
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.forward(x)?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    fn check_grad_out(&self, grad_out: &Tensor) -> Result<()> {
        let x = self.cached_input.as_ref().ok_or(Error::NoCachedForward)?;
        if grad_out.cols() != self.out_dim() || grad_out.rows() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "linear_backward",
                left: grad_out.shape(),
                right: (x.rows(), self.out_dim()),
            });
        }
        Ok(())
    }

    fn accumulate(&mut self, grad_out: &Tensor) -> Result<()> {
        self.check_grad_out(grad_out)?;
        let x = self.cached_input.as_ref().expect("checked above");
        gemm(1.0, x, Trans::Yes, grad_out, Trans::No, 1.0, &mut self.grad_weight)?;
        for (gb, s) in self.grad_bias.iter_mut().zip(grad_out.column_sums()) {
            *gb += s;
        }
        Ok(())
    }

    /// Accumulates `xᵀ·g` and `Σ_rows g` into the gradients and returns `g·Wᵀ`.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        self.accumulate(grad_out)?;
        self.input_grad(grad_out)
    }

    /// Like [`backward`](Self::backward) but skips the input gradient.
    pub fn backward_params(&mut self, grad_out: &Tensor) -> Result<()> {
        self.accumulate(grad_out)
    }

    /// `g·Wᵀ` only; parameter gradients are left untouched.
    pub fn input_grad(&self, grad_out: &Tensor) -> Result<Tensor> {
        self.check_grad_out(grad_out)?;
        let mut gx = Tensor::zeros(grad_out.rows(), self.in_dim());
        gemm(1.0, grad_out, Trans::No, &self.weight, Trans::Yes, 0.0, &mut gx)?;
        Ok(gx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    /// One bias-corrected Adam update; clears gradients and the forward cache.
    ///
    /// `layer_index` only labels the error when a gradient or updated parameter
    /// is not finite. On a gradient error nothing is modified.
    pub fn adam_step(&mut self, cfg: &AdamConfig, layer_index: usize) -> Result<()> {
        let grad_ok = self.grad_weight.all_finite() && self.grad_bias.iter().all(|g| g.is_finite());
        if !grad_ok {
            let max_abs_grad = self
                .grad_weight
                .data()
                .iter()
                .chain(&self.grad_bias)
                .fold(0.0_f64, |m, g| if g.is_nan() { f64::NAN } else { m.max(g.abs()) });
            return Err(Error::NonFiniteGradient {
                layer: layer_index,
                max_abs_grad,
            });
        }

        let m = &mut self.moments;
        m.step += 1;
        let t = m.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        adam_update(
            self.weight.data_mut(),
            self.grad_weight.data(),
            &mut m.m_weight,
            &mut m.v_weight,
            cfg,
            c1,
            c2,
        );
        adam_update(
            &mut self.bias,
            &self.grad_bias,
            &mut m.m_bias,
            &mut m.v_bias,
            cfg,
            c1,
            c2,
        );

        self.zero_grad();
        self.cached_input = None;

        if !(self.weight.all_finite() && self.bias.iter().all(|b| b.is_finite())) {
            return Err(Error::NonFiniteParameter { layer: layer_index });
        }
        Ok(())
    }
}

fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, c1: f64, c2: f64) {
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Elementwise nonlinearities. `backward` takes the forward *output*.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Sigmoid => x.map(sigmoid),
        }
    }

    pub fn backward(self, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(grad_out.clone()),
            Activation::Tanh => output.zip_map(grad_out, "tanh_backward", |y, g| g * (1.0 - y * y)),
            Activation::Sigmoid => output.zip_map(grad_out, "sigmoid_backward", |y, g| g * y * (1.0 - y)),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
