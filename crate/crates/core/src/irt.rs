//! Continuous one-parameter ogive and response normalization.
//!
//! The response model relates a latent ability `a` and a latent difficulty
//! `d` through the standard normal CDF evaluated at `a - d`. Everything here
//! is a pure function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrtError {
    #[error("non-finite input: {0}")]
    NonFinite(f64),
    #[error("normalizer needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("normalizer samples have zero variance")]
    ZeroVariance,
    #[error("invalid normalizer: sd must be > 0 and finite, got {0}")]
    InvalidScale(f64),
}

/// z-normalized episodic reward.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Response(pub f64);

impl Response {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Complementary error function.
///
/// Power series for `erf` below 3, Lentz continued fraction above. Absolute
/// error is below 1e-15 over the whole line.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 3.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (2n+1)!!
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-17 * sum {
        term *= 2.0 * x2 / (2.0 * n + 3.0);
        sum += term;
        n += 1.0;
    }
    2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    const TINY: f64 = 1e-300;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..500 {
        let a = if k == 1 { 1.0 } else { (k - 1) as f64 / 2.0 };
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() * FRAC_1_SQRT_PI * f
}

/// Standard normal CDF. Saturates to exactly 0 or 1 beyond roughly |x| > 8.3.
pub fn std_normal_cdf(x: f64) -> Result<f64, IrtError> {
    if !x.is_finite() {
        return Err(IrtError::NonFinite(x));
    }
    Ok(phi(x))
}

/// Infallible CDF for internal callers that already hold finite values.
pub(crate) fn phi(x: f64) -> f64 {
    let y = x.abs() * std::f64::consts::FRAC_1_SQRT_2;
    let tail = 0.5 * erfc(y);
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Probability that a student of `ability` reaches at least the average
/// normalized score on an item of `difficulty`: `Phi(ability - difficulty)`.
pub fn ogive_probability(ability: f64, difficulty: f64) -> Result<f64, IrtError> {
    if !ability.is_finite() {
        return Err(IrtError::NonFinite(ability));
    }
    if !difficulty.is_finite() {
        return Err(IrtError::NonFinite(difficulty));
    }
    Ok(phi(ability - difficulty))
}

/// Raw-reward scale fitted once on the collection corpus and frozen afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl Normalizer {
    /// Sample mean and (n - 1) standard deviation.
    pub fn fit(raw_rewards: &[f64]) -> Result<Self, IrtError> {
        let n = raw_rewards.len();
        if n < 2 {
            return Err(IrtError::TooFewSamples(n));
        }
        if let Some(&bad) = raw_rewards.iter().find(|v| !v.is_finite()) {
            return Err(IrtError::NonFinite(bad));
        }
        let mean = raw_rewards.iter().sum::<f64>() / n as f64;
        let ss: f64 = raw_rewards.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if sd <= 0.0 || !sd.is_finite() {
            return Err(IrtError::ZeroVariance);
        }
        Ok(Self { mean, sd, count: n })
    }

    pub fn validate(&self) -> Result<(), IrtError> {
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return Err(IrtError::InvalidScale(self.sd));
        }
        if !self.mean.is_finite() {
            return Err(IrtError::NonFinite(self.mean));
        }
        if self.count < 2 {
            return Err(IrtError::TooFewSamples(self.count));
        }
        Ok(())
    }

    pub fn normalize(&self, raw_reward: f64) -> Response {
        Response((raw_reward - self.mean) / self.sd)
    }

    pub fn denormalize(&self, response: Response) -> f64 {
        response.0 * self.sd + self.mean
    }
}

/// Free-function form of [`Normalizer::fit`].
pub fn fit_normalizer(raw_rewards: &[f64]) -> Result<Normalizer, IrtError> {
    Normalizer::fit(raw_rewards)
}

/// Free-function form of [`Normalizer::normalize`].
pub fn normalize(raw_reward: f64, normalizer: &Normalizer) -> Response {
    normalizer.normalize(raw_reward)
}
