//! Objectives and the alternating minimax loop.
//!
//! Per item, the VAE maximizes
//!
//! ```text
//! −γ·KL(q(z|x,s) || N(0,I)) + (1/k) Σ_j log p(x | s, z_j) − (λ/k) Σ_j log q(s | z_j)
//! ```
//!
//! with γ = 1 unless KL censoring is active and λ = 0 unless adversarial
//! censoring is active. The adversary minimizes its cross-entropy on the same
//! latent draws, detached from the encoder. All steps descend on the negated
//! batch mean.
//!
//! Each batch runs, in this order: one encoder pass and latent draw, one Adam
//! step of the adversary on the detached draw, then one Adam step of the
//! encoder and decoder against the just-updated (frozen) adversary. The
//! adversary is trained in every regime; only adversarial censoring feeds its
//! gradient back into the encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsRecord};
use crate::layers::AdamConfig;
use crate::mnist::{batches, Batch, Dataset};
use crate::models::{AdversaryNet, CensoredVae, DecoderNet, EncoderNet, ModelConfig};
use crate::rng::{SeedTree, Stream, StreamRng};
use crate::stochastic::{
    argmax_rows, bernoulli_logit_grad, bernoulli_loglik, kl_backward, kl_standard_normal, reparameterize,
    reparameterize_backward, softmax_cross_entropy, GaussianPosterior, LatentSample,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bad Adam hyperparameters {a:?}")));
        }
        Ok(())
    }
}

/// Batch-mean terms of one VAE step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `recon − γ·kl`, the objective actually ascended (without the λ term).
    pub elbo: f64,
    pub recon: f64,
    /// Unweighted KL.
    pub kl: f64,
    /// Mean adversary cross-entropy on this step's draws, when it was evaluated.
    pub adversary_ce: Option<f64>,
}

/// Posterior and latent draws of one batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub posterior: GaussianPosterior,
    pub sample: LatentSample,
    pub k: usize,
}

/// Encoder pass (cached for backprop) followed by `k` draws per item.
pub fn encode_and_sample(enc: &mut EncoderNet, batch: &Batch, k: usize, rng: &mut StreamRng) -> Result<EncodedBatch> {
    let posterior = enc.encode_train(&batch.x, &batch.s_onehot)?;
    let sample = reparameterize(&posterior, k, rng);
    Ok(EncodedBatch { posterior, sample, k })
}

/// Gradient of the VAE loss given an encoder pass already cached in `enc`.
///
/// With `adversary = Some((adv, λ))` and `λ != 0`, the frozen adversary's
/// cross-entropy gradient is routed into the encoder; its own parameter
/// gradients are never touched.
pub fn vae_backward(
    enc: &mut EncoderNet,
    dec: &mut DecoderNet,
    adversary: Option<(&mut AdversaryNet, f64)>,
    batch: &Batch,
    encoded: &EncodedBatch,
    gamma: f64,
) -> Result<StepReport> {
    let b = batch.len();
    let k = encoded.k;
    let rows = (b * k) as f64;
    let z = &encoded.sample.z;
    let s_rep = batch.s_onehot.tile_rows(k);
    let x_rep = batch.x.tile_rows(k);

    let decoded = dec.decode_train(z, &s_rep)?;
    let recon_items = bernoulli_loglik(&x_rep, &decoded.y)?;
    let recon = recon_items.iter().sum::<f64>() / rows;
    let kl_items = kl_standard_normal(&encoded.posterior);
    let kl = kl_items.iter().sum::<f64>() / b as f64;

    // descent on −recon: ∂/∂logits = −(x − y) / (k·b)
    let grad_logits = bernoulli_logit_grad(&x_rep, &decoded.y)?.scale(-1.0 / rows);
    let mut grad_z = dec.backward(&grad_logits)?;

    let mut adversary_ce = None;
    if let Some((adv, lambda)) = adversary {
        if lambda != 0.0 {
            let labels: Vec<usize> = (0..k).flat_map(|_| batch.s.iter().copied()).collect();
            let logits = adv.logits_train(z)?;
            let ce = softmax_cross_entropy(&logits, &labels)?;
            adversary_ce = Some(ce.mean());
            // descent on −λ·CE
            let g = ce.grad_logits.scale(-lambda / rows);
            let gz_adv = adv.net.input_grad(&g)?;
            grad_z.add_scaled(&gz_adv, 1.0)?;
        }
    }

    let (mut g_mu, mut g_lv) = reparameterize_backward(&encoded.posterior, &encoded.sample, &grad_z)?;
    let (k_mu, k_lv) = kl_backward(&encoded.posterior, gamma / b as f64);
    g_mu.add_scaled(&k_mu, 1.0)?;
    g_lv.add_scaled(&k_lv, 1.0)?;
    enc.backward(&g_mu, &g_lv)?;

    let report = StepReport {
        elbo: recon - gamma * kl,
        recon,
        kl,
        adversary_ce,
    };
    if !report.elbo.is_finite() || adversary_ce.is_some_and(|c| !c.is_finite()) {
        return Err(Error::NonFiniteLoss { batch: batch.index });
    }
    Ok(report)
}

/// Sampled ELBO step: `−γ·KL + (1/k) Σ_j log p(x|s,z_j)`, gradients into encoder and decoder.
pub fn elbo_batch(
    enc: &mut EncoderNet,
    dec: &mut DecoderNet,
    batch: &Batch,
    k: usize,
    gamma: f64,
    rng: &mut StreamRng,
) -> Result<StepReport> {
    let encoded = encode_and_sample(enc, batch, k, rng)?;
    vae_backward(enc, dec, None, batch, &encoded, gamma)
}

/// ELBO plus the adversarial term against a frozen adversary; the same draws
/// feed both the decoder and the adversary.
pub fn censored_vae_batch(
    enc: &mut EncoderNet,
    dec: &mut DecoderNet,
    adv: &mut AdversaryNet,
    batch: &Batch,
    k: usize,
    lambda: f64,
    rng: &mut StreamRng,
) -> Result<StepReport> {
    let encoded = encode_and_sample(enc, batch, k, rng)?;
    vae_backward(enc, dec, Some((adv, lambda)), batch, &encoded, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryReport {
    pub ce: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy of the adversary on detached latents; gradients go into
/// the adversary only. `labels` may be shorter than `z` when `z` stacks several
/// draws per item, in which case they repeat.
pub fn adversary_batch(adv: &mut AdversaryNet, z_detached: &Tensor, labels: &[usize]) -> Result<AdversaryReport> {
    let labels: Vec<usize> = labels.iter().copied().cycle().take(z_detached.rows()).collect();
    let logits = adv.logits_train(z_detached)?;
    let ce = softmax_cross_entropy(&logits, &labels)?;
    let n = labels.len() as f64;
    adv.net.backward(&ce.grad_logits.scale(1.0 / n), false)?;
    let hits = argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(AdversaryReport {
        ce: ce.mean(),
        accuracy: hits as f64 / n,
    })
}

/// Layer indices used in numeric error reports.
const ENCODER_LAYERS: usize = 0;
const DECODER_LAYERS: usize = 2;
const ADVERSARY_LAYERS: usize = 4;

/// One full batch of the alternating schedule. Returns the VAE report and the
/// adversary's training-step report.
pub fn train_batch(
    model: &mut CensoredVae,
    batch: &Batch,
    adam: &AdamConfig,
    noise: &mut StreamRng,
) -> Result<(StepReport, AdversaryReport)> {
    let cfg = model.config;
    let encoded = encode_and_sample(&mut model.encoder, batch, cfg.k, noise)?;

    let adv_report = adversary_batch(&mut model.adversary, &encoded.sample.z, &batch.s)?;
    model.adversary.net.adam_step(adam, ADVERSARY_LAYERS)?;

    let lambda = cfg.censor.lambda();
    let adversary = (lambda != 0.0).then_some((&mut model.adversary, lambda));
    let report = vae_backward(
        &mut model.encoder,
        &mut model.decoder,
        adversary,
        batch,
        &encoded,
        cfg.censor.gamma(),
    )?;
    model.encoder.net.adam_step(adam, ENCODER_LAYERS)?;
    model.decoder.net.adam_step(adam, DECODER_LAYERS)?;
    Ok((report, adv_report))
}

/// Fresh networks for a run, drawn from the run's init streams.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<CensoredVae> {
    let tree = SeedTree::new(seed);
    CensoredVae::new(
        config,
        &mut tree.stream(Stream::VaeInit, 0),
        &mut tree.stream(Stream::AdversaryInit, 0),
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CensoredVae,
    pub metrics: Vec<MetricsRecord>,
}

/// Trains from scratch, evaluating on `eval` after every epoch.
///
/// `on_epoch` sees each record as soon as it is produced.
pub fn train(
    config: ModelConfig,
    training: &TrainingConfig,
    data: &Dataset,
    eval: &Dataset,
    on_epoch: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    let model = init_model(config, training.seed)?;
    train_from(model, training, data, eval, on_epoch)
}

/// Like [`train`] but starting from the given networks.
pub fn train_from(
    mut model: CensoredVae,
    training: &TrainingConfig,
    data: &Dataset,
    eval: &Dataset,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    training.validate()?;
    model.config.validate()?;
    if data.is_empty() || eval.is_empty() {
        return Err(Error::InvalidConfig(
            "training and evaluation sets must be non-empty".into(),
        ));
    }
    let tree = SeedTree::new(training.seed);
    let mut shuffle = tree.stream(Stream::Shuffle, 0);
    let mut noise = tree.stream(Stream::Noise, 0);

    let mut metrics = Vec::with_capacity(training.epochs);
    for epoch in 1..=training.epochs {
        let mut train_elbo = 0.0;
        let mut seen = 0usize;
        for batch in batches(data, training.batch_size, &mut shuffle) {
            let (report, _) = train_batch(&mut model, &batch, &training.adam, &mut noise)?;
            train_elbo += report.elbo * batch.len() as f64;
            seen += batch.len();
        }
        let ev = evaluate(&model, eval, &mut tree.stream(Stream::Eval, epoch as u64))?;
        let record = MetricsRecord::new(epoch, &ev, train_elbo / seen as f64);
        on_epoch(&record);
        metrics.push(record);
    }
    Ok(TrainOutcome { model, metrics })
}
