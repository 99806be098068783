//! Encoder, decoder and adversary networks and the configuration that shapes them.
//!
//! Each network is a single-hidden-layer perceptron with a `tanh` hidden layer.
//! The nuisance label enters as a one-hot vector appended to the input of the
//! encoder (`Full`) and/or decoder (`Full`, `Partial`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::Parameterized;
use crate::layers::{sigmoid, Activation, AdamConfig, LinearLayer};
use crate::rng::StreamRng;
use crate::stochastic::GaussianPosterior;
use crate::tensor::Tensor;

/// Where the one-hot nuisance label is fed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningMode {
    /// Encoder and decoder both see `s`.
    Full,
    /// Only the decoder sees `s`.
    Partial,
    /// Neither sees `s`.
    Basic,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 3] = [
        ConditioningMode::Full,
        ConditioningMode::Partial,
        ConditioningMode::Basic,
    ];

    pub fn encoder_conditioned(self) -> bool {
        matches!(self, ConditioningMode::Full)
    }

    pub fn decoder_conditioned(self) -> bool {
        matches!(self, ConditioningMode::Full | ConditioningMode::Partial)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditioningMode::Full => "full",
            ConditioningMode::Partial => "partial",
            ConditioningMode::Basic => "basic",
        }
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ConditioningMode::Full),
            "partial" => Ok(ConditioningMode::Partial),
            "basic" => Ok(ConditioningMode::Basic),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// Invariance-enforcing modification of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Censor {
    None,
    /// Adds `−λ · log q(s | z)` to the VAE's objective.
    Adversarial {
        lambda: f64,
    },
    /// Scales the KL term by `γ`.
    Kl {
        gamma: f64,
    },
}

impl Censor {
    pub fn lambda(&self) -> f64 {
        match *self {
            Censor::Adversarial { lambda } => lambda,
            _ => 0.0,
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            Censor::Kl { gamma } => gamma,
            _ => 1.0,
        }
    }

    /// Short name used in CSV files and directory names.
    pub fn kind(&self) -> &'static str {
        match self {
            Censor::None => "none",
            Censor::Adversarial { .. } => "adv",
            Censor::Kl { .. } => "kl",
        }
    }

    /// λ, γ, or nothing.
    pub fn param(&self) -> Option<f64> {
        match *self {
            Censor::None => None,
            Censor::Adversarial { lambda } => Some(lambda),
            Censor::Kl { gamma } => Some(gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Censor::None => Ok(()),
            Censor::Adversarial { lambda } if lambda.is_finite() && lambda >= 0.0 => Ok(()),
            Censor::Adversarial { lambda } => Err(Error::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {lambda}"
            ))),
            Censor::Kl { gamma } if gamma.is_finite() && gamma >= 1.0 => Ok(()),
            Censor::Kl { gamma } => Err(Error::InvalidConfig(format!(
                "gamma must be finite and >= 1, got {gamma}"
            ))),
        }
    }
}

impl fmt::Display for Censor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            None => f.write_str(self.kind()),
            Some(p) => write!(f, "{}-{}", self.kind(), p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_z: usize,
    pub d_s: usize,
    pub hidden: usize,
    pub mode: ConditioningMode,
    pub censor: Censor,
    /// Latent draws per item in the training objective.
    pub k: usize,
}

impl ModelConfig {
    pub fn mnist(mode: ConditioningMode, censor: Censor) -> Self {
        Self {
            d_x: 784,
            d_z: 20,
            d_s: 10,
            hidden: 500,
            mode,
            censor,
            k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.censor.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.d_x == 0 || self.d_z == 0 || self.d_s == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("layer widths must be > 0".into()));
        }
        Ok(())
    }

    pub fn encoder_input(&self) -> usize {
        self.d_x + if self.mode.encoder_conditioned() { self.d_s } else { 0 }
    }

    pub fn decoder_input(&self) -> usize {
        self.d_z + if self.mode.decoder_conditioned() { self.d_s } else { 0 }
    }

    pub fn encoder_params(&self) -> usize {
        mlp_params(self.encoder_input(), self.hidden, 2 * self.d_z)
    }

    pub fn decoder_params(&self) -> usize {
        mlp_params(self.decoder_input(), self.hidden, self.d_x)
    }

    pub fn adversary_params(&self) -> usize {
        mlp_params(self.d_z, self.hidden, self.d_s)
    }
}

fn mlp_params(input: usize, hidden: usize, output: usize) -> usize {
    input * hidden + hidden + hidden * output + output
}

/// `input → tanh(hidden) → linear output`. Output activations live in the
/// wrappers so losses can work on logits directly.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: LinearLayer,
    pub output: LinearLayer,
    cached_hidden: Option<Tensor>,
}

impl Mlp {
    pub fn glorot(input: usize, hidden: usize, output: usize, rng: &mut StreamRng) -> Self {
        let h = LinearLayer::glorot(input, hidden, rng);
        let o = LinearLayer::glorot(hidden, output, rng);
        Self::from_layers(h, o)
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self::from_layers(LinearLayer::zeros(input, hidden), LinearLayer::zeros(hidden, output))
    }

    pub fn from_layers(hidden: LinearLayer, output: LinearLayer) -> Self {
        Self {
            hidden,
            output,
            cached_hidden: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = Activation::Tanh.forward(&self.hidden.forward(x)?);
        self.output.forward(&h)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = Activation::Tanh.forward(&self.hidden.forward_train(x)?);
        let out = self.output.forward_train(&h)?;
        self.cached_hidden = Some(h);
        Ok(out)
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(&mut self, grad_out: &Tensor, want_input_grad: bool) -> Result<Option<Tensor>> {
        let h = self.cached_hidden.as_ref().ok_or(Error::NoCachedForward)?;
        let gh = self.output.backward(grad_out)?;
        let gpre = Activation::Tanh.backward(h, &gh)?;
        if want_input_grad {
            Ok(Some(self.hidden.backward(&gpre)?))
        } else {
            self.hidden.backward_params(&gpre)?;
            Ok(None)
        }
    }

    /// Input gradient through the cached forward pass; parameters untouched.
    pub fn input_grad(&self, grad_out: &Tensor) -> Result<Tensor> {
        let h = self.cached_hidden.as_ref().ok_or(Error::NoCachedForward)?;
        let gh = self.output.input_grad(grad_out)?;
        let gpre = Activation::Tanh.backward(h, &gh)?;
        self.hidden.input_grad(&gpre)
    }

    /// `first_layer_index` labels the layers in error reports.
    pub fn adam_step(&mut self, cfg: &AdamConfig, first_layer_index: usize) -> Result<()> {
        self.hidden.adam_step(cfg, first_layer_index)?;
        self.output.adam_step(cfg, first_layer_index + 1)?;
        self.cached_hidden = None;
        Ok(())
    }
}

impl Parameterized for Mlp {
    fn layers(&self) -> Vec<&LinearLayer> {
        vec![&self.hidden, &self.output]
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        self.cached_hidden = None;
        vec![&mut self.hidden, &mut self.output]
    }
}

fn conditioned_input(x: &Tensor, s_onehot: &Tensor, conditioned: bool) -> Result<Tensor> {
    if x.rows() != s_onehot.rows() {
        return Err(Error::ShapeMismatch {
            op: "conditioning",
            left: x.shape(),
            right: s_onehot.shape(),
        });
    }
    if conditioned {
        x.concat_cols(s_onehot)
    } else {
        Ok(x.clone())
    }
}

/// `q(z | x[, s])`; the 2·d_z output head is split as `mu ∥ logvar`.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub net: Mlp,
    mode: ConditioningMode,
    d_z: usize,
    d_s: usize,
}

impl EncoderNet {
    pub fn new(cfg: &ModelConfig, rng: &mut StreamRng) -> Self {
        Self {
            net: Mlp::glorot(cfg.encoder_input(), cfg.hidden, 2 * cfg.d_z, rng),
            mode: cfg.mode,
            d_z: cfg.d_z,
            d_s: cfg.d_s,
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            net: Mlp::zeros(cfg.encoder_input(), cfg.hidden, 2 * cfg.d_z),
            mode: cfg.mode,
            d_z: cfg.d_z,
            d_s: cfg.d_s,
        }
    }

    pub fn mode(&self) -> ConditioningMode {
        self.mode
    }

    /// Width of the one-hot label input.
    pub fn d_s(&self) -> usize {
        self.d_s
    }

    fn input(&self, x: &Tensor, s_onehot: &Tensor) -> Result<Tensor> {
        conditioned_input(x, s_onehot, self.mode.encoder_conditioned())
    }

    fn split(&self, head: Tensor) -> Result<GaussianPosterior> {
        let (mu, logvar) = head.split_cols(self.d_z);
        GaussianPosterior::new(mu, logvar)
    }

    pub fn encode(&self, x: &Tensor, s_onehot: &Tensor) -> Result<GaussianPosterior> {
        let head = self.net.forward(&self.input(x, s_onehot)?)?;
        self.split(head)
    }

    pub fn encode_train(&mut self, x: &Tensor, s_onehot: &Tensor) -> Result<GaussianPosterior> {
        let input = self.input(x, s_onehot)?;
        let head = self.net.forward_train(&input)?;
        self.split(head)
    }

    /// Backpropagates `(∂L/∂mu, ∂L/∂logvar)` into the parameters.
    pub fn backward(&mut self, grad_mu: &Tensor, grad_logvar: &Tensor) -> Result<()> {
        let g = grad_mu.concat_cols(grad_logvar)?;
        self.net.backward(&g, false)?;
        Ok(())
    }

    /// Same as [`backward`](Self::backward), also returning the gradient with
    /// respect to the one-hot input columns (all zero when the encoder ignores `s`).
    pub fn backward_with_label_grad(&mut self, grad_mu: &Tensor, grad_logvar: &Tensor, d_s: usize) -> Result<Tensor> {
        let g = grad_mu.concat_cols(grad_logvar)?;
        let gx = self.net.backward(&g, true)?.expect("input grad requested");
        if self.mode.encoder_conditioned() {
            Ok(gx.split_cols(gx.cols() - d_s).1)
        } else {
            Ok(Tensor::zeros(gx.rows(), d_s))
        }
    }
}

/// Decoder output for a batch: logits and `y = sigmoid(logits)`.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub logits: Tensor,
    pub y: Tensor,
}

/// `p(x | z[, s])`, Bernoulli means from a sigmoid output layer.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub net: Mlp,
    mode: ConditioningMode,
    d_z: usize,
    d_s: usize,
}

impl DecoderNet {
    pub fn new(cfg: &ModelConfig, rng: &mut StreamRng) -> Self {
        Self {
            net: Mlp::glorot(cfg.decoder_input(), cfg.hidden, cfg.d_x, rng),
            mode: cfg.mode,
            d_z: cfg.d_z,
            d_s: cfg.d_s,
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            net: Mlp::zeros(cfg.decoder_input(), cfg.hidden, cfg.d_x),
            mode: cfg.mode,
            d_z: cfg.d_z,
            d_s: cfg.d_s,
        }
    }

    pub fn mode(&self) -> ConditioningMode {
        self.mode
    }

    /// Width of the one-hot label input.
    pub fn d_s(&self) -> usize {
        self.d_s
    }

    fn input(&self, z: &Tensor, s_onehot: &Tensor) -> Result<Tensor> {
        if z.cols() != self.d_z {
            return Err(Error::ShapeMismatch {
                op: "decode",
                left: z.shape(),
                right: (z.rows(), self.d_z),
            });
        }
        conditioned_input(z, s_onehot, self.mode.decoder_conditioned())
    }

    /// Bernoulli means in (0, 1).
    pub fn decode(&self, z: &Tensor, s_onehot: &Tensor) -> Result<Tensor> {
        let logits = self.net.forward(&self.input(z, s_onehot)?)?;
        Ok(logits.map(sigmoid))
    }

    pub fn decode_train(&mut self, z: &Tensor, s_onehot: &Tensor) -> Result<Decoded> {
        let input = self.input(z, s_onehot)?;
        let logits = self.net.forward_train(&input)?;
        let y = logits.map(sigmoid);
        Ok(Decoded { logits, y })
    }

    /// Backpropagates a logit gradient; returns the gradient on `z`.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.net.backward(grad_logits, true)?.expect("input grad requested");
        Ok(g.split_cols(self.d_z).0)
    }
}

/// `q(s | z)`: a classifier over the nuisance label producing raw logits.
#[derive(Debug, Clone)]
pub struct AdversaryNet {
    pub net: Mlp,
}

impl AdversaryNet {
    pub fn new(cfg: &ModelConfig, rng: &mut StreamRng) -> Self {
        Self {
            net: Mlp::glorot(cfg.d_z, cfg.hidden, cfg.d_s, rng),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            net: Mlp::zeros(cfg.d_z, cfg.hidden, cfg.d_s),
        }
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        self.net.forward(z)
    }

    pub fn logits_train(&mut self, z: &Tensor) -> Result<Tensor> {
        self.net.forward_train(z)
    }
}

/// The three networks of one run.
#[derive(Debug, Clone)]
pub struct CensoredVae {
    pub config: ModelConfig,
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub adversary: AdversaryNet,
}

impl CensoredVae {
    /// Encoder and decoder draw from `vae_rng`, the adversary from `adversary_rng`.
    pub fn new(config: ModelConfig, vae_rng: &mut StreamRng, adversary_rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let model = Self {
            encoder: EncoderNet::new(&config, vae_rng),
            decoder: DecoderNet::new(&config, vae_rng),
            adversary: AdversaryNet::new(&config, adversary_rng),
            config,
        };
        model.check_param_counts()?;
        Ok(model)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: EncoderNet::zeros(&config),
            decoder: DecoderNet::zeros(&config),
            adversary: AdversaryNet::zeros(&config),
            config,
        })
    }

    fn check_param_counts(&self) -> Result<()> {
        let c = &self.config;
        let ok = self.encoder.net.num_params() == c.encoder_params()
            && self.decoder.net.num_params() == c.decoder_params()
            && self.adversary.net.num_params() == c.adversary_params();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "parameter count does not match configuration".into(),
            ))
        }
    }

    /// Layer names in checkpoint order.
    pub fn layer_names() -> [&'static str; 6] {
        [
            "encoder.hidden",
            "encoder.output",
            "decoder.hidden",
            "decoder.output",
            "adversary.hidden",
            "adversary.output",
        ]
    }

    /// Encoder and decoder only.
    pub fn vae_layers(&self) -> Vec<&LinearLayer> {
        vec![
            &self.encoder.net.hidden,
            &self.encoder.net.output,
            &self.decoder.net.hidden,
            &self.decoder.net.output,
        ]
    }
}

impl Parameterized for CensoredVae {
    fn layers(&self) -> Vec<&LinearLayer> {
        let mut v = self.vae_layers();
        v.push(&self.adversary.net.hidden);
        v.push(&self.adversary.net.output);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut v = self.encoder.net.layers_mut();
        v.extend(self.decoder.net.layers_mut());
        v.extend(self.adversary.net.layers_mut());
        v
    }
}

/// One-hot rows for class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                index: i,
                classes,
            });
        }
        t.set(i, l, 1.0);
    }
    Ok(t)
}
