//! Two-stage collect/teach pipeline.
//!
//! Stage 1 plays domain-randomized levels with a disposable student and logs
//! every `(level params, reward)` interaction. The response model is fitted
//! on that corpus. Stage 2 deploys the fitted model as a teacher that infers
//! the current student's ability and picks the next level to match it.

mod metrics;
mod report;
mod teach;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{IrtError, Normalizer, Response};
use crate::model::{self, ModelError, Observation, PermModel, TrainConfig, TrainTrace};
use crate::sim::{generate_level, is_solvable, Level, LevelParams, SimError};
use crate::students::{random_curriculum_next, StudentSpec};

pub use metrics::{
    compare_curricula, evaluate, evaluate_outcomes, sample_eval_levels, sign_test_p_value,
    ComparisonReport, ConditionSummary, LevelOutcome, MetricsReport, SeedMetrics,
};
pub use report::{ability_trajectory_report, PerformanceGroup, TrajectoryReport, TrajectoryRow};
pub use teach::{
    replay_session, stage2_teach, AttemptLog, Condition, LevelKind, LevelLog, SessionLog, TeachMode,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("empty evaluation level set")]
    EmptyEvalSet,
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// SplitMix64 mixing, used to derive independent sub-seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One logged interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub student_id: String,
    /// Per-student interaction index, strictly increasing.
    pub t: u64,
    /// Parameters the generator was asked for; these are what the model sees.
    pub requested: LevelParams,
    /// Parameters of the level actually played (after the solvability
    /// guard); regenerate it with `level_seed`.
    pub params: LevelParams,
    pub level_seed: u64,
    pub raw_reward: f64,
    pub response: Response,
    pub reached_goal: bool,
    pub max_tile: usize,
    pub steps: usize,
    /// Logical clock: episodes elapsed since collection started.
    pub timestamp: u64,
}

impl InteractionRecord {
    pub fn observation(&self) -> Observation {
        Observation {
            response: self.response,
            params: self.requested,
        }
    }
}

/// Interaction records plus the normalizer fitted on their raw rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<InteractionRecord>,
    pub normalizer: Normalizer,
}

impl Corpus {
    /// Fits the normalizer on all raw rewards and rewrites every response.
    pub fn from_records(mut records: Vec<InteractionRecord>) -> Result<Self, PipelineError> {
        let raw: Vec<f64> = records.iter().map(|r| r.raw_reward).collect();
        let normalizer = Normalizer::fit(&raw)?;
        for r in &mut records {
            r.response = normalizer.normalize(r.raw_reward);
        }
        Ok(Self {
            records,
            normalizer,
        })
    }

    /// Concatenates corpora and refits the normalizer over the union.
    pub fn merge(parts: Vec<Corpus>) -> Result<Self, PipelineError> {
        Self::from_records(parts.into_iter().flat_map(|c| c.records).collect())
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.records
            .iter()
            .map(InteractionRecord::observation)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), PipelineError> {
        write_jsonl(path, &self.records)
    }

    /// Reads records and refits the normalizer from their raw rewards.
    pub fn read_jsonl(path: &Path) -> Result<Self, PipelineError> {
        Self::from_records(read_jsonl(path)?)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| PipelineError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Reseeds per density step before softening.
pub const GUARD_RESEEDS: usize = 10;
/// Density decrement applied after [`GUARD_RESEEDS`] failed seeds.
pub const GUARD_DENSITY_STEP: f64 = 0.1;
/// Extra seeds tried at density 0 before the heights are flattened.
const GUARD_ZERO_DENSITY_SEEDS: usize = 100;

/// A level that passed the solvability guard, with the parameters and seed
/// that reproduce it through `generate_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardedLevel {
    pub params: LevelParams,
    pub level: Level,
}

impl GuardedLevel {
    pub fn seed(&self) -> u64 {
        self.level.seed()
    }
}

/// Generates a solvable level near `params`: up to ten seeds per density,
/// then the density drops by 0.1. At density 0 a height profile can still
/// be impassable; after a further batch of seeds the heights are flattened.
pub fn generate_solvable_level<R: Rng + ?Sized>(
    params: &LevelParams,
    rng: &mut R,
) -> Result<GuardedLevel, PipelineError> {
    params.validate()?;
    let mut current = *params;
    loop {
        let tries = if current.spike_density > 0.0 {
            GUARD_RESEEDS
        } else {
            GUARD_ZERO_DENSITY_SEEDS
        };
        for _ in 0..tries {
            let level = generate_level(&current, rng.random())?;
            if is_solvable(&level).solvable {
                return Ok(GuardedLevel {
                    params: current,
                    level,
                });
            }
        }
        if current.spike_density <= 0.0 {
            break;
        }
        current.spike_density = (current.spike_density - GUARD_DENSITY_STEP).max(0.0);
    }
    let flat = LevelParams::flat_easy();
    Ok(GuardedLevel {
        params: flat,
        level: generate_level(&flat, rng.random())?,
    })
}

/// Stage 1: domain-randomized collection with a single student. Learning
/// students update after every attempt, so later records come from later
/// policy snapshots. The normalizer is fitted at the end; fewer than two
/// episodes surface as a normalizer error.
pub fn stage1_collect(
    spec: &StudentSpec,
    episodes: usize,
    seed: u64,
) -> Result<Corpus, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut student = spec.build();
    let student_id = match spec {
        StudentSpec::Learner => format!("learner#{seed}"),
        other => other.to_string(),
    };
    let mut records = Vec::with_capacity(episodes);
    for t in 0..episodes as u64 {
        let proposal = random_curriculum_next(&mut rng);
        let guarded = generate_solvable_level(&proposal, &mut rng)?;
        let mut attempt_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let result = student.attempt(&guarded.level, &mut attempt_rng, true);
        records.push(InteractionRecord {
            student_id: student_id.clone(),
            t,
            requested: proposal,
            params: guarded.params,
            level_seed: guarded.seed(),
            raw_reward: result.raw_reward,
            response: Response(0.0),
            reached_goal: result.reached_goal,
            max_tile: result.max_tile,
            steps: result.steps,
            timestamp: t,
        });
    }
    Corpus::from_records(records)
}

/// Fits the response model on a corpus and optionally persists the
/// checkpoint and the per-epoch trace (JSON).
pub fn train_perm_from_corpus(
    corpus: &Corpus,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
    trace_out: Option<&Path>,
) -> Result<(PermModel, TrainTrace), PipelineError> {
    let (model, trace) = model::train(&corpus.observations(), corpus.normalizer, config)?;
    if let Some(path) = checkpoint {
        model::save_checkpoint(&model, path)?;
    }
    if let Some(path) = trace_out {
        let json = serde_json::to_vec_pretty(&trace).expect("trace serializes");
        std::fs::write(path, json).map_err(io_err(path))?;
    }
    Ok((model, trace))
}

/// Settings shared by teaching, evaluation and curriculum comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stage1_episodes: usize,
    pub seeds: Vec<u64>,
    pub condition: Condition,
    pub levels_per_session: usize,
    pub attempts_cap: usize,
    /// Training attempts per condition in the continuous (one attempt per
    /// level) teaching mode.
    pub training_attempts: usize,
    pub eval_levels: usize,
    pub eval_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stage1_episodes: 15_000,
            seeds: (0..10).collect(),
            condition: Condition::Perm,
            levels_per_session: 10,
            attempts_cap: 15,
            training_attempts: 2_000,
            eval_levels: 20,
            eval_seed: 9_999,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.levels_per_session == 0 || self.attempts_cap == 0 || self.eval_levels == 0 {
            return Err(PipelineError::Config(
                "levels_per_session, attempts_cap and eval_levels must be positive".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::Config(
                "at least one seed is required".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_episodes_surface_normalizer_error() {
        let err = stage1_collect(&StudentSpec::Scripted { skill: 0.0 }, 0, 1).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Irt(IrtError::TooFewSamples(0))
        ));
    }

    #[test]
    fn scripted_corpus_is_centered_and_ordered() {
        let c = stage1_collect(&StudentSpec::Scripted { skill: 0.0 }, 1000, 3).unwrap();
        assert_eq!(c.len(), 1000);
        let mean: f64 = c.records.iter().map(|r| r.response.0).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 1e-12);
        assert!(c.records.windows(2).all(|w| w[0].t < w[1].t));
        for r in &c.records {
            assert_eq!(r.response, c.normalizer.normalize(r.raw_reward));
            let lvl = generate_level(&r.params, r.level_seed).unwrap();
            assert!(is_solvable(&lvl).solvable);
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let spec = StudentSpec::Learner;
        assert_eq!(
            stage1_collect(&spec, 200, 5).unwrap(),
            stage1_collect(&spec, 200, 5).unwrap()
        );
        assert_ne!(
            stage1_collect(&spec, 200, 5).unwrap().records,
            stage1_collect(&spec, 200, 6).unwrap().records
        );
    }

    #[test]
    fn guard_softens_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dense = LevelParams::new(0.95, [0.25; 4]).unwrap();
        let g = generate_solvable_level(&dense, &mut rng).unwrap();
        assert!(g.params.spike_density < 0.95);
        assert!(is_solvable(&g.level).solvable);
        assert_eq!(generate_level(&g.params, g.seed()).unwrap(), g.level);

        let easy = LevelParams::flat_easy();
        let g = generate_solvable_level(&easy, &mut rng).unwrap();
        assert_eq!(g.params, easy);
    }

    #[test]
    fn guard_flattens_impassable_heights() {
        // every tile is -1 or 2 with equal odds: cliffs of +3 are everywhere
        let cliffs = LevelParams::new(0.0, [0.5, 0.0, 0.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate_solvable_level(&cliffs, &mut rng).unwrap();
        assert!(is_solvable(&g.level).solvable);
        assert_eq!(generate_level(&g.params, g.seed()).unwrap(), g.level);
    }

    #[test]
    fn jsonl_roundtrip() {
        let c = stage1_collect(&StudentSpec::Scripted { skill: 1.0 }, 50, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        c.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert_eq!(Corpus::read_jsonl(&path).unwrap(), c);
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{}\n").unwrap();
        let err = Corpus::read_jsonl(&path).unwrap_err();
        assert!(matches!(err, PipelineError::Json { line: 1, .. }));
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
