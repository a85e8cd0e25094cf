//! Variational ability/difficulty response model.
//!
//! Generative side: `a ~ N(0, I)`, `d ~ N(0, I)`,
//! `r | a, d ~ N(w^T (a - d), sd^2)` with `w >= 0`, and
//! `lambda | d` decoded by a small network (spike density as a Normal in
//! logit space, heights as a categorical over four levels).
//!
//! Inference side: `q(d | r, lambda) q(a | d, r, lambda)`, both diagonal
//! Normals produced by amortized encoders. Training maximizes the evidence
//! lower bound with reparameterized single-sample estimates and analytic KL
//! terms against the standard-Normal priors.

mod checkpoint;
pub mod net;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{Normalizer, Response};
use crate::sim::{LevelParams, SimError};
use net::{Activation, DenseNet};

pub use checkpoint::{
    from_bytes as checkpoint_from_bytes, load_checkpoint, save_checkpoint,
    to_bytes as checkpoint_to_bytes, CheckpointError, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use train::{draw_noise, train, EpochTrace, TrainTrace};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Fixed sd of the spike-density reconstruction in logit space.
pub const SPIKE_LOGIT_SD: f64 = 0.5;
/// Generated spike densities are clamped into this range.
pub const GENERATED_DENSITY_RANGE: (f64, f64) = (0.01, 0.95);
/// Densities are clamped away from 0 and 1 before taking the logit.
const TARGET_DENSITY_EPS: f64 = 1e-3;
const LEVEL_FEATURES: usize = 5;
const LEVEL_OUTPUTS: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid level parameters: {0}")]
    InvalidParams(#[from] SimError),
    #[error("model has not been trained")]
    Untrained,
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model has no fitted normalizer")]
    MissingNormalizer,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Diagonal-Normal posterior over a latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    /// The standard-Normal prior `N(0, I)`.
    pub fn prior(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }

    pub fn is_well_formed(&self) -> bool {
        self.mean.len() == self.log_var.len()
            && self.mean.iter().all(|m| m.is_finite())
            && self
                .log_var
                .iter()
                .all(|lv| lv.is_finite() && lv.exp() > 0.0)
    }

    /// `KL(self || N(0, I))`.
    pub fn kl_to_prior(&self) -> f64 {
        -neg_kl(&self.mean, &self.log_var)
    }
}

/// Reparameterized draw `mean + exp(log_var / 2) * eps`.
pub fn sample_latent(posterior: &LatentPosterior, eps: &[f64]) -> Vec<f64> {
    posterior
        .mean
        .iter()
        .zip(&posterior.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// A single training datum: the level parameters and the normalized response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub response: Response,
    pub params: LevelParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseDistribution {
    pub mean: f64,
    pub sd: f64,
}

impl ResponseDistribution {
    pub fn log_density(&self, r: f64) -> f64 {
        normal_log_density(r, self.mean, self.sd.ln())
    }
}

/// Decoded distribution over level parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDistribution {
    pub spike_logit: f64,
    pub height_logits: [f64; 4],
}

impl LevelDistribution {
    pub fn spike_density(&self) -> f64 {
        sigmoid(self.spike_logit)
    }

    pub fn height_probs(&self) -> [f64; 4] {
        let lse = log_sum_exp(&self.height_logits);
        self.height_logits.map(|z| (z - lse).exp())
    }

    pub fn to_params(&self) -> LevelParams {
        LevelParams {
            spike_density: self.spike_density(),
            height_probs: self.height_probs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of epochs over which the KL weight ramps linearly from 0.
    pub kl_anneal_fraction: f64,
    /// KL weight reached at the end of the ramp.
    pub kl_final_weight: f64,
    /// History window used for ability inference.
    pub window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 1,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 100,
            kl_anneal_fraction: 0.2,
            kl_final_weight: 1.0,
            window: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.window == 0 {
            return bad("batch_size, epochs and window must be positive");
        }
        if !(0.0..=1.0).contains(&self.kl_anneal_fraction) {
            return bad("kl_anneal_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.kl_final_weight) || self.kl_final_weight == 0.0 {
            return bad("kl_final_weight must lie in (0, 1]");
        }
        Ok(())
    }

    /// KL weight used during `epoch` (0-based).
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        let ramp = self.kl_anneal_fraction * self.epochs as f64;
        if ramp < 1.0 {
            return self.kl_final_weight;
        }
        self.kl_final_weight * (epoch as f64 / ramp).min(1.0)
    }
}

/// The four lower-bound terms. `kl_*_term` are `E_q[log p/q]`, i.e.
/// negated KL divergences, so they are never positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon_r: f64,
    pub recon_lambda: f64,
    pub kl_a_term: f64,
    pub kl_d_term: f64,
    pub total: f64,
}

impl ElboBreakdown {
    fn from_terms(recon_r: f64, recon_lambda: f64, kl_a_term: f64, kl_d_term: f64) -> Self {
        Self {
            recon_r,
            recon_lambda,
            kl_a_term,
            kl_d_term,
            total: recon_r + recon_lambda + kl_a_term + kl_d_term,
        }
    }

    fn accumulate(&mut self, o: &ElboBreakdown) {
        *self = Self::from_terms(
            self.recon_r + o.recon_r,
            self.recon_lambda + o.recon_lambda,
            self.kl_a_term + o.kl_a_term,
            self.kl_d_term + o.kl_d_term,
        );
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_terms(
            self.recon_r * k,
            self.recon_lambda * k,
            self.kl_a_term * k,
            self.kl_d_term * k,
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.recon_r,
            self.recon_lambda,
            self.kl_a_term,
            self.kl_d_term,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Standard-Normal noise for one record's two reparameterized draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub difficulty: Vec<f64>,
    pub ability: Vec<f64>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            difficulty: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
            ability: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            difficulty: vec![0.0; dim],
            ability: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermModel {
    config: TrainConfig,
    enc_difficulty: DenseNet,
    enc_ability: DenseNet,
    dec_level: DenseNet,
    response_weight_raw: Vec<f64>,
    log_response_sd: f64,
    normalizer: Option<Normalizer>,
    trained: bool,
}

/// Gradient accumulator with the same shape as the model parameters.
struct Grads {
    enc_difficulty: DenseNet,
    enc_ability: DenseNet,
    dec_level: DenseNet,
    response_weight_raw: Vec<f64>,
    log_response_sd: f64,
}

impl Grads {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.enc_difficulty.push_params(&mut out);
        self.enc_ability.push_params(&mut out);
        self.dec_level.push_params(&mut out);
        out.extend_from_slice(&self.response_weight_raw);
        out.push(self.log_response_sd);
        out
    }
}

impl PermModel {
    /// Freshly initialized, untrained model.
    pub fn new<R: Rng + ?Sized>(config: TrainConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let n = config.latent_dim;
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let mut enc_difficulty = DenseNet::new(
            &sizes(1 + LEVEL_FEATURES, 2 * n),
            Activation::Tanh,
            0.1,
            rng,
        );
        let mut enc_ability = DenseNet::new(
            &sizes(n + 1 + LEVEL_FEATURES, 2 * n),
            Activation::Tanh,
            0.1,
            rng,
        );
        let mut dec_level = DenseNet::new(&sizes(n, LEVEL_OUTPUTS), Activation::Tanh, 1.0, rng);
        orient_axes(&mut enc_difficulty, &mut enc_ability, &mut dec_level, n);
        Ok(Self {
            response_weight_raw: vec![inverse_softplus(1.0); n],
            log_response_sd: 0.0,
            config,
            enc_difficulty,
            enc_ability,
            dec_level,
            normalizer: None,
            trained: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        self.normalizer = Some(normalizer);
    }

    /// Normalizes a raw reward with the frozen corpus normalizer.
    pub fn normalize(&self, raw_reward: f64) -> Result<Response, ModelError> {
        self.normalizer
            .as_ref()
            .map(|n| n.normalize(raw_reward))
            .ok_or(ModelError::MissingNormalizer)
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Nonnegative response-head weights `w = softplus(raw)`.
    pub fn response_weights(&self) -> Vec<f64> {
        self.response_weight_raw
            .iter()
            .map(|v| softplus(*v))
            .collect()
    }

    pub fn set_response_weights(&mut self, w: &[f64]) -> Result<(), ModelError> {
        self.check_dim(w.len())?;
        self.response_weight_raw = w.iter().map(|v| inverse_softplus(*v)).collect();
        Ok(())
    }

    pub fn response_sd(&self) -> f64 {
        self.log_response_sd.exp()
    }

    pub fn networks(&self) -> [&DenseNet; 3] {
        [&self.enc_difficulty, &self.enc_ability, &self.dec_level]
    }

    fn check_dim(&self, got: usize) -> Result<(), ModelError> {
        let expected = self.latent_dim();
        if got != expected {
            return Err(ModelError::Dimension { expected, got });
        }
        Ok(())
    }

    fn split_posterior(&self, out: &[f64]) -> LatentPosterior {
        let n = self.latent_dim();
        LatentPosterior {
            mean: out[..n].to_vec(),
            log_var: out[n..2 * n].to_vec(),
        }
    }

    /// `q(d | r, lambda)`.
    pub fn encode_difficulty(
        &self,
        r: Response,
        params: &LevelParams,
    ) -> Result<LatentPosterior, ModelError> {
        params.validate()?;
        Ok(self.split_posterior(&self.enc_difficulty.forward(&difficulty_input(r, params))))
    }

    pub fn encode_difficulty_batch(
        &self,
        batch: &[Observation],
    ) -> Result<Vec<LatentPosterior>, ModelError> {
        batch
            .iter()
            .map(|o| self.encode_difficulty(o.response, &o.params))
            .collect()
    }

    /// `q(a | d, r, lambda)`.
    pub fn encode_ability(
        &self,
        d_sample: &[f64],
        r: Response,
        params: &LevelParams,
    ) -> Result<LatentPosterior, ModelError> {
        self.check_dim(d_sample.len())?;
        params.validate()?;
        Ok(self.split_posterior(
            &self
                .enc_ability
                .forward(&ability_input(d_sample, r, params)),
        ))
    }

    /// `p(r | a, d)`: mean `w^T (a - d)`, so `a == d` gives mean exactly 0.
    pub fn decode_response(
        &self,
        a: &[f64],
        d: &[f64],
    ) -> Result<ResponseDistribution, ModelError> {
        self.check_dim(a.len())?;
        self.check_dim(d.len())?;
        let mean = self
            .response_weights()
            .iter()
            .zip(a.iter().zip(d))
            .map(|(w, (ai, di))| w * (ai - di))
            .sum();
        Ok(ResponseDistribution {
            mean,
            sd: self.response_sd(),
        })
    }

    /// `p(lambda | d)`.
    pub fn decode_level_params(&self, d_sample: &[f64]) -> Result<LevelDistribution, ModelError> {
        self.check_dim(d_sample.len())?;
        let out = self.dec_level.forward(d_sample);
        Ok(LevelDistribution {
            spike_logit: out[0],
            height_logits: [out[1], out[2], out[3], out[4]],
        })
    }

    /// Projection of a latent vector onto the response head: the scalar the
    /// response mean is linear in.
    pub fn project(&self, latent: &[f64]) -> f64 {
        self.response_weights()
            .iter()
            .zip(latent)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Single-sample reparameterized ELBO, summed over the batch.
    pub fn elbo<R: Rng + ?Sized>(
        &self,
        batch: &[Observation],
        rng: &mut R,
    ) -> Result<ElboBreakdown, ModelError> {
        let noise: Vec<Noise> = batch
            .iter()
            .map(|_| Noise::draw(self.latent_dim(), rng))
            .collect();
        self.elbo_with_noise(batch, &noise)
    }

    /// ELBO summed over the batch with caller-supplied noise.
    pub fn elbo_with_noise(
        &self,
        batch: &[Observation],
        noise: &[Noise],
    ) -> Result<ElboBreakdown, ModelError> {
        self.check_batch(batch, noise)?;
        let mut acc = ElboBreakdown::default();
        for (obs, eps) in batch.iter().zip(noise) {
            acc.accumulate(&self.record_terms(obs, eps, 1.0, None));
        }
        Ok(acc)
    }

    /// Unweighted ELBO breakdown plus the gradient of
    /// `recon_r + recon_lambda + kl_weight * (kl_a + kl_d)`, summed over the
    /// batch, in [`params`](Self::params) order.
    pub fn elbo_gradient(
        &self,
        batch: &[Observation],
        noise: &[Noise],
        kl_weight: f64,
    ) -> Result<(ElboBreakdown, Vec<f64>), ModelError> {
        self.check_batch(batch, noise)?;
        let mut grads = Grads {
            enc_difficulty: self.enc_difficulty.zeros_like(),
            enc_ability: self.enc_ability.zeros_like(),
            dec_level: self.dec_level.zeros_like(),
            response_weight_raw: vec![0.0; self.latent_dim()],
            log_response_sd: 0.0,
        };
        let mut acc = ElboBreakdown::default();
        for (obs, eps) in batch.iter().zip(noise) {
            acc.accumulate(&self.record_terms(obs, eps, kl_weight, Some(&mut grads)));
        }
        Ok((acc, grads.flatten()))
    }

    fn check_batch(&self, batch: &[Observation], noise: &[Noise]) -> Result<(), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if noise.len() != batch.len() {
            return Err(ModelError::Dimension {
                expected: batch.len(),
                got: noise.len(),
            });
        }
        for (obs, eps) in batch.iter().zip(noise) {
            obs.params.validate()?;
            self.check_dim(eps.difficulty.len())?;
            self.check_dim(eps.ability.len())?;
        }
        Ok(())
    }

    fn record_terms(
        &self,
        obs: &Observation,
        noise: &Noise,
        kl_weight: f64,
        grads: Option<&mut Grads>,
    ) -> ElboBreakdown {
        let n = self.latent_dim();
        let r = obs.response.0;

        let cache_d = self
            .enc_difficulty
            .forward_cached(&difficulty_input(obs.response, &obs.params));
        let (mu_d, lv_d) = cache_d.output().split_at(n);
        let sd_d: Vec<f64> = lv_d.iter().map(|lv| (0.5 * lv).exp()).collect();
        let d: Vec<f64> = (0..n)
            .map(|i| mu_d[i] + sd_d[i] * noise.difficulty[i])
            .collect();

        let cache_a =
            self.enc_ability
                .forward_cached(&ability_input(&d, obs.response, &obs.params));
        let (mu_a, lv_a) = cache_a.output().split_at(n);
        let sd_a: Vec<f64> = lv_a.iter().map(|lv| (0.5 * lv).exp()).collect();
        let a: Vec<f64> = (0..n)
            .map(|i| mu_a[i] + sd_a[i] * noise.ability[i])
            .collect();

        let w = self.response_weights();
        let mean_r: f64 = (0..n).map(|i| w[i] * (a[i] - d[i])).sum();
        let recon_r = normal_log_density(r, mean_r, self.log_response_sd);

        let cache_l = self.dec_level.forward_cached(&d);
        let out_l = cache_l.output();
        let target = spike_logit_target(obs.params.spike_density);
        let recon_spike = normal_log_density(target, out_l[0], SPIKE_LOGIT_SD.ln());
        let logits = &out_l[1..LEVEL_OUTPUTS];
        let lse = log_sum_exp(logits);
        let h = obs.params.height_probs;
        let recon_heights: f64 = (0..4).map(|k| h[k] * (logits[k] - lse)).sum();

        let kl_a = neg_kl(mu_a, lv_a);
        let kl_d = neg_kl(mu_d, lv_d);
        let terms = ElboBreakdown::from_terms(recon_r, recon_spike + recon_heights, kl_a, kl_d);

        let Some(g) = grads else {
            return terms;
        };

        // response head
        let var_r = (2.0 * self.log_response_sd).exp();
        let g_mean = (r - mean_r) / var_r;
        let z = (r - mean_r) / var_r.sqrt();
        g.log_response_sd += z * z - 1.0;
        let mut g_a = vec![0.0; n];
        let mut g_d = vec![0.0; n];
        for i in 0..n {
            g.response_weight_raw[i] +=
                g_mean * (a[i] - d[i]) * sigmoid(self.response_weight_raw[i]);
            g_a[i] = g_mean * w[i];
            g_d[i] = -g_mean * w[i];
        }

        // level decoder
        let mut g_out_l = vec![0.0; LEVEL_OUTPUTS];
        g_out_l[0] = (target - out_l[0]) / (SPIKE_LOGIT_SD * SPIKE_LOGIT_SD);
        let h_total: f64 = h.iter().sum();
        for k in 0..4 {
            g_out_l[k + 1] = h[k] - h_total * (logits[k] - lse).exp();
        }
        let g_from_dec = self
            .dec_level
            .backward(&cache_l, &g_out_l, &mut g.dec_level);
        for i in 0..n {
            g_d[i] += g_from_dec[i];
        }

        // ability encoder
        let mut g_out_a = vec![0.0; 2 * n];
        for i in 0..n {
            g_out_a[i] = g_a[i] - kl_weight * mu_a[i];
            g_out_a[n + i] =
                g_a[i] * noise.ability[i] * 0.5 * sd_a[i] + kl_weight * 0.5 * (1.0 - lv_a[i].exp());
        }
        let g_in_a = self
            .enc_ability
            .backward(&cache_a, &g_out_a, &mut g.enc_ability);
        for i in 0..n {
            g_d[i] += g_in_a[i];
        }

        // difficulty encoder
        let mut g_out_d = vec![0.0; 2 * n];
        for i in 0..n {
            g_out_d[i] = g_d[i] - kl_weight * mu_d[i];
            g_out_d[n + i] = g_d[i] * noise.difficulty[i] * 0.5 * sd_d[i]
                + kl_weight * 0.5 * (1.0 - lv_d[i].exp());
        }
        self.enc_difficulty
            .backward(&cache_d, &g_out_d, &mut g.enc_difficulty);

        terms
    }

    /// All trainable parameters, flattened in a fixed order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.enc_difficulty.push_params(&mut out);
        self.enc_ability.push_params(&mut out);
        self.dec_level.push_params(&mut out);
        out.extend_from_slice(&self.response_weight_raw);
        out.push(self.log_response_sd);
        out
    }

    pub fn param_count(&self) -> usize {
        self.enc_difficulty.param_count()
            + self.enc_ability.param_count()
            + self.dec_level.param_count()
            + self.latent_dim()
            + 1
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.param_count() {
            return Err(ModelError::Dimension {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = self.enc_difficulty.pull_params(flat);
        at += self.enc_ability.pull_params(&flat[at..]);
        at += self.dec_level.pull_params(&flat[at..]);
        let n = self.latent_dim();
        self.response_weight_raw.copy_from_slice(&flat[at..at + n]);
        self.log_response_sd = flat[at + n];
        Ok(())
    }

    /// Ability posterior from the most recent interactions (at most
    /// `window`; older entries are ignored). Each pair contributes
    /// `q(a | mean of q(d | r, lambda), r, lambda)`; the per-pair Normals are
    /// pooled by precision weighting. An empty history yields the prior.
    pub fn infer_ability(
        &self,
        history: &[(LevelParams, Response)],
    ) -> Result<LatentPosterior, ModelError> {
        let n = self.latent_dim();
        if history.is_empty() {
            return Ok(LatentPosterior::prior(n));
        }
        let recent = &history[history.len().saturating_sub(self.config.window)..];
        let mut precision = vec![0.0; n];
        let mut weighted = vec![0.0; n];
        for (params, r) in recent {
            let qd = self.encode_difficulty(*r, params)?;
            let qa = self.encode_ability(&qd.mean, *r, params)?;
            for i in 0..n {
                let p = (-qa.log_var[i]).exp();
                precision[i] += p;
                weighted[i] += p * qa.mean[i];
            }
        }
        Ok(LatentPosterior {
            mean: (0..n).map(|i| weighted[i] / precision[i]).collect(),
            log_var: precision.iter().map(|p| -p.ln()).collect(),
        })
    }

    /// Matches difficulty to ability (`d := a`) and decodes level parameters.
    pub fn generate_next_level_params<R: Rng + ?Sized>(
        &self,
        ability: &LatentPosterior,
        rng: &mut R,
        mode: GenerationMode,
    ) -> Result<LevelParams, ModelError> {
        if !self.trained {
            return Err(ModelError::Untrained);
        }
        self.check_dim(ability.dim())?;
        let d = match mode {
            GenerationMode::Mean => ability.mean.clone(),
            GenerationMode::Sample => {
                let eps: Vec<f64> = (0..ability.dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                sample_latent(ability, &eps)
            }
        };
        let mut params = self.decode_level_params(&d)?.to_params();
        let (lo, hi) = GENERATED_DENSITY_RANGE;
        params.spike_density = params.spike_density.clamp(lo, hi);
        Ok(params)
    }

    pub(crate) fn parts(&self) -> (&DenseNet, &DenseNet, &DenseNet, &[f64], f64) {
        (
            &self.enc_difficulty,
            &self.enc_ability,
            &self.dec_level,
            &self.response_weight_raw,
            self.log_response_sd,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: TrainConfig,
        enc_difficulty: DenseNet,
        enc_ability: DenseNet,
        dec_level: DenseNet,
        response_weight_raw: Vec<f64>,
        log_response_sd: f64,
        normalizer: Option<Normalizer>,
        trained: bool,
    ) -> Self {
        Self {
            config,
            enc_difficulty,
            enc_ability,
            dec_level,
            response_weight_raw,
            log_response_sd,
            normalizer,
            trained,
        }
    }
}

fn difficulty_input(r: Response, params: &LevelParams) -> Vec<f64> {
    let mut x = Vec::with_capacity(1 + LEVEL_FEATURES);
    x.push(r.0);
    x.extend_from_slice(&params.features());
    x
}

fn ability_input(d: &[f64], r: Response, params: &LevelParams) -> Vec<f64> {
    let mut x = Vec::with_capacity(d.len() + 1 + LEVEL_FEATURES);
    x.extend_from_slice(d);
    x.push(r.0);
    x.extend_from_slice(&params.features());
    x
}

/// Picks signs for the freshly drawn networks so that every latent axis
/// starts out with the orientation the response head needs (its weights are
/// nonnegative): difficulty rises with spike density in both the encoder and
/// the level decoder, and ability rises with the observed response. Each
/// flip maps one random initialization onto another of equal probability;
/// training is unconstrained afterwards.
fn orient_axes(enc_d: &mut DenseNet, enc_a: &mut DenseNet, dec: &mut DenseNet, n: usize) {
    let base = LevelParams::new(0.5, [0.25; 4]).expect("valid reference level");
    // Input index of the spike density feature, and of the response.
    let density_at = 1;
    let response_at = n;

    let x_d = difficulty_input(Response(0.0), &base);
    for i in 0..n {
        if slope(enc_d, &x_d, density_at, i) < 0.0 {
            flip_output(enc_d, i);
        }
    }
    let x_a = ability_input(&vec![0.0; n], Response(0.0), &base);
    for i in 0..n {
        if slope(enc_a, &x_a, response_at, i) < 0.0 {
            flip_output(enc_a, i);
        }
    }
    for i in 0..n {
        if slope(dec, &vec![0.0; n], i, 0) < 0.0 {
            let first = &mut dec.layers[0];
            for row in 0..first.out_dim {
                first.weights[row * first.in_dim + i] *= -1.0;
            }
        }
    }
}

/// Central difference of output `out` with respect to input `at`.
fn slope(net: &DenseNet, x: &[f64], at: usize, out: usize) -> f64 {
    let h = 1e-3;
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    hi[at] += h;
    lo[at] -= h;
    net.forward(&hi)[out] - net.forward(&lo)[out]
}

fn flip_output(net: &mut DenseNet, row: usize) {
    let last = net.layers.last_mut().expect("non-empty network");
    let cols = last.in_dim;
    for w in &mut last.weights[row * cols..(row + 1) * cols] {
        *w = -*w;
    }
    last.bias[row] = -last.bias[row];
}

/// Logit of the spike density after clamping away from 0 and 1.
pub fn spike_logit_target(density: f64) -> f64 {
    let p = density.clamp(TARGET_DENSITY_EPS, 1.0 - TARGET_DENSITY_EPS);
    (p / (1.0 - p)).ln()
}

fn normal_log_density(x: f64, mean: f64, log_sd: f64) -> f64 {
    let z = (x - mean) / log_sd.exp();
    -0.5 * LN_2PI - log_sd - 0.5 * z * z
}

/// `-KL(N(mu, exp(lv)) || N(0, 1))` summed over components.
fn neg_kl(mu: &[f64], lv: &[f64]) -> f64 {
    mu.iter()
        .zip(lv)
        .map(|(m, l)| 0.5 * (1.0 + l - m * m - l.exp()))
        .sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
