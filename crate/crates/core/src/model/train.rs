use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ElboBreakdown, ModelError, Noise, Observation, PermModel, TrainConfig};
use crate::irt::Normalizer;

/// Seed offset for the fixed evaluation noise used in the per-epoch trace.
const EVAL_NOISE_SALT: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub kl_weight: f64,
    /// Per-record mean ELBO over the whole corpus, evaluated after the
    /// epoch with the same noise every epoch.
    pub elbo: ElboBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial: Option<ElboBreakdown>,
    pub epochs: Vec<EpochTrace>,
}

impl TrainTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.elbo.total).collect()
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descent step on `params` for a loss with gradient `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn eval_noise(model: &PermModel, n: usize, seed: u64) -> Vec<Noise> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_NOISE_SALT);
    (0..n)
        .map(|_| Noise::draw(model.latent_dim(), &mut rng))
        .collect()
}

/// Fits a fresh model by Adam ascent on the ELBO. Deterministic in
/// `config.seed`: initialization, minibatch order and noise all come from
/// one seeded stream.
pub fn train(
    corpus: &[Observation],
    normalizer: Normalizer,
    config: &TrainConfig,
) -> Result<(PermModel, TrainTrace), ModelError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = PermModel::new(config.clone(), &mut rng)?;
    model.set_normalizer(normalizer);

    let fixed_noise = eval_noise(&model, corpus.len(), config.seed);
    let per_record = 1.0 / corpus.len() as f64;
    let mut trace = TrainTrace {
        initial: Some(
            model
                .elbo_with_noise(corpus, &fixed_noise)?
                .scaled(per_record),
        ),
        epochs: Vec::with_capacity(config.epochs),
    };

    let mut params = model.params();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut noise = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        let kl_weight = config.kl_weight(epoch);
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| corpus[i]));
            noise.clear();
            noise.extend((0..chunk.len()).map(|_| Noise::draw(model.latent_dim(), &mut rng)));
            let (terms, mut grad) = model.elbo_gradient(&batch, &noise, kl_weight)?;
            let scale = -1.0 / chunk.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            if !terms.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { epoch, batch: bi });
            }
            adam.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        let elbo = model
            .elbo_with_noise(corpus, &fixed_noise)?
            .scaled(per_record);
        if !elbo.is_finite() {
            return Err(ModelError::NonFinite {
                epoch,
                batch: usize::MAX,
            });
        }
        trace.epochs.push(EpochTrace {
            epoch,
            kl_weight,
            elbo,
        });
    }
    model.mark_trained();
    Ok((model, trace))
}

/// Draws a minibatch-sized noise set; exposed for callers that need
/// reproducible ELBO evaluations outside training.
pub fn draw_noise<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Noise> {
    (0..count).map(|_| Noise::draw(dim, rng)).collect()
}
