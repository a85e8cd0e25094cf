//! Server-held state for one interactive play session.
//!
//! Phases only move forward: trial -> training levels -> test -> done. The
//! `none` condition skips the training phase. Each level stays open until
//! the goal is reached or the attempt cap is used up; the next level can only
//! be requested once the current one is closed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::Response;
use crate::model::{GenerationMode, LatentPosterior, ModelError, PermModel};
use crate::pipeline::{
    generate_solvable_level, AttemptLog, Condition, LevelKind, LevelLog, PipelineError, SessionLog,
    TeachMode,
};
use crate::sim::{
    is_solvable, raw_reward, render_descriptor, simulate_episode, test_fixture_level,
    trial_fixture_level, Action, EpisodeResult, Level, LevelDescriptor, LevelParams,
    ScriptedActions, DEFAULT_MAX_STEPS, GOAL,
};
use crate::students::random_curriculum_next;

pub const SESSION_TRAINING_LEVELS: usize = 10;
pub const SESSION_ATTEMPT_CAP: usize = 15;
/// Accepted gap between a client-claimed reward and the recomputed one.
pub const REWARD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid attempt report: {0}")]
    InvalidReport(String),
    #[error("session is finished")]
    Finished,
    #[error("current level is closed; request the next level")]
    LevelClosed,
    #[error("current level is still open")]
    LevelOpen,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl SessionError {
    /// HTTP status class for the error.
    pub fn status(&self) -> u16 {
        match self {
            SessionError::InvalidReport(_) => 422,
            SessionError::Finished | SessionError::LevelClosed | SessionError::LevelOpen => 409,
            SessionError::Model(_) | SessionError::Pipeline(_) => 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Trial,
    Training,
    Test,
    Done,
}

/// What the client says happened in one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptReport {
    pub reached_goal: bool,
    pub max_tile: usize,
    pub steps: usize,
    #[serde(default)]
    pub duration_ms: Option<u64>,
    /// Full trajectory; when present it is re-simulated and must agree.
    #[serde(default)]
    pub actions: Option<Vec<Action>>,
    /// Client-side reward; checked against the server computation.
    #[serde(default)]
    pub raw_reward: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    /// 0 for the trial, 1..=10 for training levels, 11 for the test.
    pub level_index: usize,
    pub attempts_used: usize,
    pub attempts_cap: usize,
    pub level_closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptAck {
    pub result: EpisodeResult,
    pub state: SessionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedLevel {
    pub kind: LevelKind,
    pub index: usize,
    pub descriptor: LevelDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextLevel {
    Level(AssignedLevel),
    Done,
}

#[derive(Debug, Clone)]
pub struct Session {
    rng: ChaCha8Rng,
    phase: Phase,
    level: Level,
    closed: bool,
    history: Vec<(LevelParams, Response)>,
    log: SessionLog,
}

impl Session {
    /// Opens a session on the trial level. `seed` drives every random
    /// choice the session makes, so equal seeds and equal reports give
    /// equal logs.
    pub fn new(
        model: &PermModel,
        condition: Condition,
        display_name: &str,
        seed: u64,
    ) -> Result<Self, SessionError> {
        if !model.is_trained() {
            return Err(ModelError::Untrained.into());
        }
        let level = trial_fixture_level();
        let ability = LatentPosterior::prior(model.latent_dim());
        let trial = LevelLog {
            kind: LevelKind::Trial,
            index: 0,
            params: None,
            proposed: None,
            level_seed: level.seed(),
            attempt_seed: 0,
            ability_projection: model.project(&ability.mean),
            ability,
            attempts: Vec::new(),
            response: None,
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Trial,
            level,
            closed: false,
            history: Vec::new(),
            log: SessionLog {
                condition,
                mode: TeachMode::Session,
                student_id: display_name.to_string(),
                seed,
                attempts_cap: SESSION_ATTEMPT_CAP,
                trial: Some(trial),
                levels: Vec::new(),
                test: None,
            },
        })
    }

    pub fn condition(&self) -> Condition {
        self.log.condition
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn current_level(&self) -> &Level {
        &self.level
    }

    pub fn current_assignment(&self) -> AssignedLevel {
        let lvl = self.current_log();
        AssignedLevel {
            kind: lvl.kind,
            index: lvl.index,
            descriptor: render_descriptor(&self.level),
        }
    }

    pub fn summary(&self) -> &SessionLog {
        &self.log
    }

    pub fn state(&self) -> SessionState {
        let lvl = self.current_log();
        SessionState {
            phase: self.phase,
            level_index: lvl.index,
            attempts_used: lvl.attempts.len(),
            attempts_cap: SESSION_ATTEMPT_CAP,
            level_closed: self.closed,
        }
    }

    fn current_log(&self) -> &LevelLog {
        match self.phase {
            Phase::Trial => self.log.trial.as_ref(),
            Phase::Training => self.log.levels.last(),
            Phase::Test | Phase::Done => self.log.test.as_ref(),
        }
        .expect("current level is always logged")
    }

    fn current_log_mut(&mut self) -> &mut LevelLog {
        match self.phase {
            Phase::Trial => self.log.trial.as_mut(),
            Phase::Training => self.log.levels.last_mut(),
            Phase::Test | Phase::Done => self.log.test.as_mut(),
        }
        .expect("current level is always logged")
    }

    /// Checks a report against the current level and returns the
    /// server-side result.
    pub fn verify_report(&self, report: &AttemptReport) -> Result<EpisodeResult, SessionError> {
        let bad = |m: String| Err(SessionError::InvalidReport(m));
        if report.max_tile > GOAL {
            return bad(format!("max_tile {} beyond the goal", report.max_tile));
        }
        if report.reached_goal != (report.max_tile == GOAL) {
            return bad("reached_goal must hold exactly when max_tile is the goal".into());
        }
        if report.steps == 0 || report.steps > DEFAULT_MAX_STEPS {
            return bad(format!("steps must lie in 1..={DEFAULT_MAX_STEPS}"));
        }
        // Each step advances at most two tiles.
        if report.max_tile > 2 * report.steps {
            return bad(format!(
                "tile {} is unreachable in {} steps",
                report.max_tile, report.steps
            ));
        }
        if report.reached_goal && !is_solvable(&self.level).solvable {
            return bad("goal reported on an unsolvable level".into());
        }
        let result = EpisodeResult::new(report.reached_goal, report.max_tile, report.steps);
        if let Some(actions) = &report.actions {
            if actions.len() > DEFAULT_MAX_STEPS {
                return bad(format!("more than {DEFAULT_MAX_STEPS} actions"));
            }
            let sim = simulate_episode(
                &self.level,
                &mut ScriptedActions::new(actions.clone()),
                actions.len(),
            );
            if sim != result {
                return bad(format!(
                    "trajectory replays to goal={} max_tile={} steps={}",
                    sim.reached_goal, sim.max_tile, sim.steps
                ));
            }
        }
        if let Some(claimed) = report.raw_reward {
            let actual = raw_reward(&result);
            if !claimed.is_finite() || (claimed - actual).abs() > REWARD_TOLERANCE {
                return bad(format!(
                    "claimed reward {claimed} but the outcome is worth {actual}"
                ));
            }
        }
        Ok(result)
    }

    /// Records one attempt on the open level and closes it on the goal or
    /// the last allowed attempt. Closing the test ends the session.
    pub fn submit_attempt(
        &mut self,
        model: &PermModel,
        report: &AttemptReport,
    ) -> Result<AttemptAck, SessionError> {
        if self.phase == Phase::Done {
            return Err(SessionError::Finished);
        }
        if self.closed {
            return Err(SessionError::LevelClosed);
        }
        let result = self.verify_report(report)?;
        let phase = self.phase;
        let lvl = self.current_log_mut();
        lvl.attempts.push(AttemptLog {
            result,
            actions: report.actions.clone(),
            duration_ms: report.duration_ms,
        });
        if result.reached_goal || lvl.attempts.len() >= SESSION_ATTEMPT_CAP {
            let best = lvl.best_raw_reward().expect("at least one attempt");
            let response = model.normalize(best)?;
            lvl.response = Some(response);
            // The model was fit on requested parameters, so infer from those.
            let params = lvl.proposed;
            self.closed = true;
            match phase {
                Phase::Training => {
                    self.history
                        .push((params.expect("training levels carry a proposal"), response));
                }
                Phase::Test => self.phase = Phase::Done,
                _ => {}
            }
        }
        Ok(AttemptAck {
            result,
            state: self.state(),
        })
    }

    /// Assigns the next level once the current one is closed. While the
    /// current level is open and untouched the same assignment is returned,
    /// so repeated calls are idempotent.
    pub fn next_level(&mut self, model: &PermModel) -> Result<NextLevel, SessionError> {
        if self.phase == Phase::Done {
            return Ok(NextLevel::Done);
        }
        if !self.closed {
            if self.current_log().attempts.is_empty() {
                return Ok(NextLevel::Level(self.current_assignment()));
            }
            return Err(SessionError::LevelOpen);
        }
        let enter_test = match self.phase {
            Phase::Trial => self.log.condition == Condition::None,
            Phase::Training => self.log.levels.len() >= SESSION_TRAINING_LEVELS,
            Phase::Test | Phase::Done => unreachable!("closed test ends the session"),
        };
        let ability = model.infer_ability(&self.history)?;
        if enter_test {
            let level = test_fixture_level();
            self.log.test = Some(LevelLog {
                kind: LevelKind::Test,
                index: self.log.levels.len() + 1,
                params: None,
                proposed: None,
                level_seed: level.seed(),
                attempt_seed: 0,
                ability_projection: model.project(&ability.mean),
                ability,
                attempts: Vec::new(),
                response: None,
            });
            self.level = level;
            self.phase = Phase::Test;
        } else {
            let proposal = match self.log.condition {
                Condition::Perm => model.generate_next_level_params(
                    &ability,
                    &mut self.rng,
                    GenerationMode::Mean,
                )?,
                _ => random_curriculum_next(&mut self.rng),
            };
            let guarded = generate_solvable_level(&proposal, &mut self.rng)?;
            self.log.levels.push(LevelLog {
                kind: LevelKind::Training,
                index: self.log.levels.len() + 1,
                params: Some(guarded.params),
                proposed: Some(proposal),
                level_seed: guarded.seed(),
                attempt_seed: self.rng.random(),
                ability_projection: model.project(&ability.mean),
                ability,
                attempts: Vec::new(),
                response: None,
            });
            self.level = guarded.level;
            self.phase = Phase::Training;
        }
        self.closed = false;
        Ok(NextLevel::Level(self.current_assignment()))
    }
}
