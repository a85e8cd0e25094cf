use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, generate_solvable_level, PipelineError, RunConfig};
use crate::irt::Response;
use crate::model::{GenerationMode, LatentPosterior, ModelError, PermModel};
use crate::sim::{
    generate_level, simulate_episode, test_fixture_level, trial_fixture_level, Action,
    EpisodeResult, Level, LevelParams, ScriptedActions,
};
use crate::students::{random_curriculum_next, Student};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Perm,
    Random,
    None,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Perm, Condition::Random, Condition::None];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Perm => "perm",
            Condition::Random => "random",
            Condition::None => "none",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perm" => Ok(Condition::Perm),
            "random" => Ok(Condition::Random),
            "none" => Ok(Condition::None),
            other => Err(format!(
                "unknown condition `{other}` (expected perm, random or none)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TeachMode {
    /// Human-style session: a fixed number of levels, each played until the
    /// goal or the attempt cap, followed by the test level.
    Session,
    /// Training loop for artificial students: one attempt per level.
    Continuous { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    Trial,
    Training,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub result: EpisodeResult,
    /// Client-supplied trajectory, when the attempt came from outside.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Action>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLog {
    pub kind: LevelKind,
    /// 1-based among training levels; 0 for the trial, `levels + 1` for the test.
    pub index: usize,
    /// Parameters that regenerate the level with `level_seed` (training only).
    pub params: Option<LevelParams>,
    /// The teacher's proposal before the solvability guard.
    pub proposed: Option<LevelParams>,
    pub level_seed: u64,
    /// Base seed of the per-attempt random streams.
    pub attempt_seed: u64,
    /// Ability posterior at the time the level was assigned.
    pub ability: LatentPosterior,
    pub ability_projection: f64,
    pub attempts: Vec<AttemptLog>,
    /// Normalized best-attempt reward, once the level is closed.
    pub response: Option<Response>,
}

impl LevelLog {
    pub fn rebuild_level(&self) -> Result<Level, PipelineError> {
        match self.kind {
            LevelKind::Trial => Ok(trial_fixture_level()),
            LevelKind::Test => Ok(test_fixture_level()),
            LevelKind::Training => {
                let params = self.params.ok_or_else(|| {
                    PipelineError::Replay(format!(
                        "training level {} has no parameters",
                        self.index
                    ))
                })?;
                Ok(generate_level(&params, self.level_seed)?)
            }
        }
    }

    pub fn completed(&self) -> bool {
        self.attempts.iter().any(|a| a.result.reached_goal)
    }

    pub fn best_raw_reward(&self) -> Option<f64> {
        self.attempts
            .iter()
            .map(|a| a.result.raw_reward)
            .fold(None, |acc, r| Some(acc.map_or(r, |m: f64| m.max(r))))
    }

    pub fn results(&self) -> Vec<EpisodeResult> {
        self.attempts.iter().map(|a| a.result).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub condition: Condition,
    pub mode: TeachMode,
    pub student_id: String,
    pub seed: u64,
    pub attempts_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<LevelLog>,
    pub levels: Vec<LevelLog>,
    pub test: Option<LevelLog>,
}

impl SessionLog {
    /// Trial, training levels and test, in play order.
    pub fn all_levels(&self) -> impl Iterator<Item = &LevelLog> {
        self.trial.iter().chain(&self.levels).chain(&self.test)
    }

    pub fn attempt_results(&self) -> Vec<Vec<EpisodeResult>> {
        self.all_levels().map(LevelLog::results).collect()
    }

    pub fn training_attempts(&self) -> usize {
        self.levels.iter().map(|l| l.attempts.len()).sum()
    }
}

fn attempt_rng(attempt_seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(attempt_seed, k as u64))
}

/// Plays up to `cap` attempts, stopping at the first success.
fn play_level(
    student: &mut Student,
    level: &Level,
    attempt_seed: u64,
    cap: usize,
    learn: bool,
) -> Vec<AttemptLog> {
    let mut attempts = Vec::new();
    for k in 0..cap {
        let result = student.attempt(level, &mut attempt_rng(attempt_seed, k), learn);
        attempts.push(AttemptLog {
            result,
            actions: None,
            duration_ms: None,
        });
        if result.reached_goal {
            break;
        }
    }
    attempts
}

/// Stage 2: teaches `student` under `config.condition`.
///
/// Session mode assigns the first level from the prior (average ability),
/// then after each closed level infers ability from the last `window`
/// levels (best-attempt response each) and generates the next level. The
/// random condition draws parameters by domain randomization but still logs
/// the inferred ability; the none condition goes straight to the test.
/// Continuous mode plays one attempt per level, starting from a uniformly
/// sampled level.
pub fn stage2_teach(
    model: &PermModel,
    student: &mut Student,
    student_id: &str,
    config: &RunConfig,
    mode: TeachMode,
    seed: u64,
) -> Result<SessionLog, PipelineError> {
    if !model.is_trained() {
        return Err(ModelError::Untrained.into());
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (level_count, cap) = match (config.condition, mode) {
        (Condition::None, _) => (0, config.attempts_cap),
        (_, TeachMode::Session) => (config.levels_per_session, config.attempts_cap),
        (_, TeachMode::Continuous { attempts }) => (attempts, 1),
    };

    let mut history: Vec<(LevelParams, Response)> = Vec::new();
    let mut levels = Vec::with_capacity(level_count);
    for index in 1..=level_count {
        let ability = model.infer_ability(&history)?;
        let proposal = match (config.condition, mode) {
            (Condition::Perm, TeachMode::Continuous { .. }) if index == 1 => {
                random_curriculum_next(&mut rng)
            }
            (Condition::Perm, _) => {
                model.generate_next_level_params(&ability, &mut rng, GenerationMode::Mean)?
            }
            _ => random_curriculum_next(&mut rng),
        };
        let guarded = generate_solvable_level(&proposal, &mut rng)?;
        let attempt_seed: u64 = rng.random();
        let attempts = play_level(student, &guarded.level, attempt_seed, cap, true);
        let best = attempts
            .iter()
            .map(|a| a.result.raw_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        let response = model.normalize(best)?;
        history.push((proposal, response));
        levels.push(LevelLog {
            kind: LevelKind::Training,
            index,
            params: Some(guarded.params),
            proposed: Some(proposal),
            level_seed: guarded.seed(),
            attempt_seed,
            ability_projection: model.project(&ability.mean),
            ability,
            attempts,
            response: Some(response),
        });
    }

    let test = match mode {
        TeachMode::Session => {
            let ability = model.infer_ability(&history)?;
            let attempt_seed: u64 = rng.random();
            let level = test_fixture_level();
            let attempts = play_level(student, &level, attempt_seed, config.attempts_cap, false);
            let best = attempts
                .iter()
                .map(|a| a.result.raw_reward)
                .fold(f64::NEG_INFINITY, f64::max);
            Some(LevelLog {
                kind: LevelKind::Test,
                index: level_count + 1,
                params: None,
                proposed: None,
                level_seed: level.seed(),
                attempt_seed,
                ability_projection: model.project(&ability.mean),
                ability,
                attempts,
                response: Some(model.normalize(best)?),
            })
        }
        TeachMode::Continuous { .. } => None,
    };

    Ok(SessionLog {
        condition: config.condition,
        mode,
        student_id: student_id.to_string(),
        seed,
        attempts_cap: cap,
        trial: None,
        levels,
        test,
    })
}

/// Re-plays every logged attempt from its recorded seeds (or recorded
/// client actions) with a fresh copy of the student, returning the results
/// in play order. Learners update during training levels exactly as they
/// did originally.
pub fn replay_session(
    log: &SessionLog,
    student: &mut Student,
) -> Result<Vec<Vec<EpisodeResult>>, PipelineError> {
    let mut out = Vec::new();
    for lvl in log.all_levels() {
        let level = lvl.rebuild_level()?;
        let learn = lvl.kind != LevelKind::Test;
        let mut results = Vec::with_capacity(lvl.attempts.len());
        for (k, attempt) in lvl.attempts.iter().enumerate() {
            let result = match &attempt.actions {
                Some(actions) => simulate_episode(
                    &level,
                    &mut ScriptedActions::new(actions.clone()),
                    actions.len(),
                ),
                None => student.attempt(&level, &mut attempt_rng(lvl.attempt_seed, k), learn),
            };
            results.push(result);
        }
        out.push(results);
    }
    Ok(out)
}
