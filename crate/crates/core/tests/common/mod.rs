//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use perm_core::model::{Observation, PermModel, TrainConfig, TrainTrace, SPIKE_LOGIT_SD};
use perm_core::pipeline::{stage1_collect, train_perm_from_corpus, Corpus};
use perm_core::students::StudentSpec;
use rand::Rng;
use rand_distr::StandardNormal;

pub const SKILLS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// Standard normal density integrated by the composite trapezoid rule from
/// -10, evaluated on an increasing grid in one sweep.
pub fn phi_quadrature(grid: &[f64]) -> Vec<f64> {
    let h = 1e-4;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut out = Vec::with_capacity(grid.len());
    let mut x = -10.0;
    let mut acc = 0.0;
    for &target in grid {
        while x + h <= target {
            acc += 0.5 * h * (pdf(x) + pdf(x + h));
            x += h;
        }
        let rest = target - x;
        out.push(acc + 0.5 * rest * (pdf(x) + pdf(target)));
    }
    out
}

pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    // Ties share their average rank.
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation as the Pearson correlation of ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// log p(r | a, d) + log p(lambda | d), written from the model definition
/// using only the public decoder outputs.
pub fn log_likelihood(model: &PermModel, obs: &Observation, a: &[f64], d: &[f64]) -> f64 {
    let resp = model.decode_response(a, d).unwrap();
    let recon_r = normal_logpdf(obs.response.0, resp.mean, resp.sd);
    let lvl = model.decode_level_params(d).unwrap();
    let p = obs.params.spike_density.clamp(1e-3, 1.0 - 1e-3);
    let target = (p / (1.0 - p)).ln();
    let recon_s = normal_logpdf(target, lvl.spike_logit, SPIKE_LOGIT_SD);
    let probs = lvl.height_probs();
    let recon_h: f64 = (0..4)
        .map(|k| obs.params.height_probs[k] * probs[k].ln())
        .sum();
    recon_r + recon_s + recon_h
}

/// Importance-sampled log evidence of one record with the encoder as the
/// proposal: log mean_s p(x, a_s, d_s) / q(a_s, d_s | x).
pub fn is_log_evidence<R: Rng>(
    model: &PermModel,
    obs: &Observation,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let n = model.latent_dim();
    let mut logw = Vec::with_capacity(samples);
    for _ in 0..samples {
        let qd = model.encode_difficulty(obs.response, &obs.params).unwrap();
        let d: Vec<f64> = (0..n)
            .map(|i| {
                qd.mean[i] + (0.5 * qd.log_var[i]).exp() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let qa = model.encode_ability(&d, obs.response, &obs.params).unwrap();
        let a: Vec<f64> = (0..n)
            .map(|i| {
                qa.mean[i] + (0.5 * qa.log_var[i]).exp() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut lw = log_likelihood(model, obs, &a, &d);
        for i in 0..n {
            let (sd_d, sd_a) = ((0.5 * qd.log_var[i]).exp(), (0.5 * qa.log_var[i]).exp());
            lw += normal_logpdf(d[i], 0.0, 1.0) + normal_logpdf(a[i], 0.0, 1.0);
            lw -= normal_logpdf(d[i], qd.mean[i], sd_d) + normal_logpdf(a[i], qa.mean[i], sd_a);
        }
        logw.push(lw);
    }
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + (logw.iter().map(|l| (l - m).exp()).sum::<f64>() / samples as f64).ln()
}

/// Stage-1 corpus from the five scripted skills, `episodes` each.
pub fn scripted_corpus(episodes: usize, seed: u64) -> Corpus {
    let parts = SKILLS
        .iter()
        .enumerate()
        .map(|(i, &skill)| {
            stage1_collect(
                &StudentSpec::Scripted { skill },
                episodes,
                seed * 100 + i as u64,
            )
            .unwrap()
        })
        .collect();
    Corpus::merge(parts).unwrap()
}

pub fn train_scripted(
    episodes: usize,
    seed: u64,
    config: TrainConfig,
) -> (Corpus, PermModel, TrainTrace) {
    let corpus = scripted_corpus(episodes, seed);
    let (model, trace) =
        train_perm_from_corpus(&corpus, &TrainConfig { seed, ..config }, None, None).unwrap();
    (corpus, model, trace)
}

/// Mean ability projection over consecutive windows of the model's history
/// length, taken over one student's records in play order.
pub fn mean_window_projection(model: &PermModel, corpus: &Corpus, student_id: &str) -> f64 {
    let pairs: Vec<_> = corpus
        .records
        .iter()
        .filter(|r| r.student_id == student_id)
        .map(|r| (r.requested, r.response))
        .collect();
    let windows: Vec<f64> = pairs
        .chunks(model.config().window)
        .map(|w| model.project(&model.infer_ability(w).unwrap().mean))
        .collect();
    windows.iter().sum::<f64>() / windows.len() as f64
}
