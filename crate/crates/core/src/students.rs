//! Students that play Jumper levels, plus the domain-randomization teacher.
//!
//! All students interact with levels only through the public simulator API
//! (`step`, `is_legal`, `is_solvable`, tile inspection).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::irt::phi;
use crate::sim::{
    is_legal, is_solvable, simulate_episode_with, step, Action, EpisodeResult, Level, LevelParams,
    StepOutcome, DEFAULT_MAX_STEPS, GOAL, LEVEL_LEN,
};

/// Spiked-gap coefficient of the jump hazard.
pub const HAZARD_SPIKE: f64 = 1.5;
/// Height-gain coefficient of the jump hazard.
pub const HAZARD_GAIN: f64 = 0.5;

/// Difficulty of the jump from tile `from`: spiked intermediate tile and
/// landing height gain.
pub fn jump_hazard(level: &Level, from: usize) -> f64 {
    let gap = f64::from(u8::from(level.tile(from + 1).spiked));
    let gain = (level.tile(from + 2).height - level.tile(from).height).max(0);
    HAZARD_SPIKE * gap + HAZARD_GAIN * f64::from(gain)
}

/// Probability that a student of `skill` lands the jump from `from`.
pub fn jump_success_probability(skill: f64, level: &Level, from: usize) -> f64 {
    phi(skill - jump_hazard(level, from))
}

/// A student with a fixed, known skill. It follows the fewest-jump route and
/// each jump succeeds independently with `Phi(skill - hazard)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedStudent {
    pub skill: f64,
}

impl ScriptedStudent {
    pub fn new(skill: f64) -> Self {
        assert!(skill.is_finite(), "skill must be finite");
        Self { skill }
    }

    pub fn attempt<R: Rng + ?Sized>(&self, level: &Level, rng: &mut R) -> EpisodeResult {
        scripted_attempt(level, self, rng)
    }
}

pub fn scripted_attempt<R: Rng + ?Sized>(
    level: &Level,
    student: &ScriptedStudent,
    rng: &mut R,
) -> EpisodeResult {
    let Some(route) = is_solvable(level).witness else {
        return walk_until_blocked(level);
    };
    let mut pos = 0;
    let mut steps = 0;
    for action in route {
        steps += 1;
        if action == Action::Jump {
            let p = jump_success_probability(student.skill, level, pos);
            if rng.random::<f64>() >= p {
                return EpisodeResult::new(false, pos + 1, steps);
            }
        }
        match step(level, pos, action) {
            StepOutcome::Moved(to) => pos = to,
            StepOutcome::Goal => return EpisodeResult::new(true, GOAL, steps),
            // the witness only contains legal, spike-free moves
            StepOutcome::Stalled | StepOutcome::Spiked(_) => unreachable!("invalid witness"),
        }
    }
    unreachable!("witness ends at the goal")
}

fn walk_until_blocked(level: &Level) -> EpisodeResult {
    let mut pos = 0;
    let mut steps = 0;
    while is_legal(level, pos, Action::Walk) {
        steps += 1;
        match step(level, pos, Action::Walk) {
            StepOutcome::Moved(to) => pos = to,
            StepOutcome::Spiked(to) => return EpisodeResult::new(false, to, steps),
            StepOutcome::Goal => return EpisodeResult::new(true, GOAL, steps),
            StepOutcome::Stalled => break,
        }
    }
    EpisodeResult::new(false, pos, steps)
}

/// Number of tiles ahead a learner can see.
pub const VIEW_WINDOW: usize = 3;
const OFF_LEVEL: i8 = i8::MAX;

/// Local observation: heights of the next tiles relative to the current one
/// and whether they are spiked. Tiles past the goal read as `OFF_LEVEL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalView {
    pub rel_heights: [i8; VIEW_WINDOW],
    pub spikes: [bool; VIEW_WINDOW],
}

impl LocalView {
    pub fn at(level: &Level, pos: usize) -> Self {
        let here = level.tile(pos).height;
        let mut rel_heights = [OFF_LEVEL; VIEW_WINDOW];
        let mut spikes = [false; VIEW_WINDOW];
        for k in 0..VIEW_WINDOW {
            let i = pos + k + 1;
            if i < LEVEL_LEN {
                let t = level.tile(i);
                rel_heights[k] = t.height - here;
                spikes[k] = t.spiked;
            }
        }
        Self {
            rel_heights,
            spikes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub exploration: f64,
    pub discount: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            exploration: 0.1,
            discount: 0.95,
        }
    }
}

/// Tabular epsilon-greedy learner over [`LocalView`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningStudent {
    config: LearnerConfig,
    table: HashMap<LocalView, [f64; 2]>,
}

/// One visited decision and the reward that followed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub view: LocalView,
    pub action: Action,
    pub reward: f64,
}

fn action_index(a: Action) -> usize {
    match a {
        Action::Walk => 0,
        Action::Jump => 1,
    }
}

impl LearningStudent {
    pub fn new(config: LearnerConfig) -> Self {
        assert!(
            (0.0..=1.0).contains(&config.exploration),
            "exploration must lie in [0, 1]"
        );
        Self {
            config,
            table: HashMap::new(),
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn preferences(&self, view: &LocalView) -> [f64; 2] {
        self.table.get(view).copied().unwrap_or([0.0; 2])
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn is_finite(&self) -> bool {
        self.table.values().flatten().all(|v| v.is_finite())
    }

    /// Greedy action; ties go to walking.
    pub fn greedy(&self, view: &LocalView) -> Action {
        let [walk, jump] = self.preferences(view);
        if jump > walk {
            Action::Jump
        } else {
            Action::Walk
        }
    }

    /// Epsilon-greedy action selection.
    pub fn act<R: Rng + ?Sized>(&self, view: &LocalView, exploration: f64, rng: &mut R) -> Action {
        if exploration > 0.0 && rng.random::<f64>() < exploration {
            if rng.random::<bool>() {
                Action::Jump
            } else {
                Action::Walk
            }
        } else {
            self.greedy(view)
        }
    }

    /// Moves each visited preference toward its realized discounted return.
    pub fn update(&mut self, trace: &[TraceStep]) {
        let mut ret = 0.0;
        let lr = self.config.learning_rate;
        for s in trace.iter().rev() {
            ret = s.reward + self.config.discount * ret;
            let q = &mut self.table.entry(s.view).or_insert([0.0; 2])[action_index(s.action)];
            *q += lr * (ret - *q);
        }
    }

    /// Plays one attempt. With `learn`, explores and updates afterwards;
    /// without, acts greedily and leaves the table untouched.
    pub fn play<R: Rng + ?Sized>(
        &mut self,
        level: &Level,
        rng: &mut R,
        learn: bool,
    ) -> EpisodeResult {
        let exploration = if learn { self.config.exploration } else { 0.0 };
        let mut trace: Vec<TraceStep> = Vec::new();
        let mut policy =
            |lvl: &Level, pos: usize| self.act(&LocalView::at(lvl, pos), exploration, rng);
        let mut max_tile = 0usize;
        let result = simulate_episode_with(
            level,
            &mut policy,
            DEFAULT_MAX_STEPS,
            |pos, action, outcome| {
                let (reached, bonus) = match outcome {
                    StepOutcome::Moved(to) | StepOutcome::Spiked(to) => (to, 0.0),
                    StepOutcome::Goal => (GOAL, 1.0),
                    StepOutcome::Stalled => (max_tile, 0.0),
                };
                let gained = reached.saturating_sub(max_tile);
                max_tile = max_tile.max(reached);
                trace.push(TraceStep {
                    view: LocalView::at(level, pos),
                    action,
                    reward: gained as f64 / GOAL as f64 + bonus,
                });
            },
        );
        if learn {
            self.update(&trace);
        }
        result
    }
}

/// Domain randomization: density uniform on [0, 1], heights from a flat
/// Dirichlet (normalized unit exponentials).
pub fn random_curriculum_next<R: Rng + ?Sized>(rng: &mut R) -> LevelParams {
    let spike_density = rng.random::<f64>();
    let draws: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(Exp1));
    let total: f64 = draws.iter().sum();
    LevelParams {
        spike_density,
        height_probs: draws.map(|x| x / total),
    }
}

/// How to build a student; parsed from `scripted:<skill>` or `learner`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StudentSpec {
    Scripted { skill: f64 },
    Learner,
}

impl StudentSpec {
    pub fn build(&self) -> Student {
        match *self {
            StudentSpec::Scripted { skill } => Student::Scripted(ScriptedStudent::new(skill)),
            StudentSpec::Learner => {
                Student::Learner(LearningStudent::new(LearnerConfig::default()))
            }
        }
    }
}

impl fmt::Display for StudentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StudentSpec::Scripted { skill } => write!(f, "scripted:{skill}"),
            StudentSpec::Learner => write!(f, "learner"),
        }
    }
}

impl FromStr for StudentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "learner" {
            return Ok(StudentSpec::Learner);
        }
        let skill = s
            .strip_prefix("scripted:")
            .ok_or_else(|| format!("expected `scripted:<skill>` or `learner`, got `{s}`"))?;
        let skill: f64 = skill
            .parse()
            .map_err(|e| format!("bad skill `{skill}`: {e}"))?;
        if !skill.is_finite() {
            return Err(format!("skill must be finite, got {skill}"));
        }
        Ok(StudentSpec::Scripted { skill })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Student {
    Scripted(ScriptedStudent),
    Learner(LearningStudent),
}

impl Student {
    /// One attempt. Learners explore and update only when `learn` is set.
    pub fn attempt<R: Rng + ?Sized>(
        &mut self,
        level: &Level,
        rng: &mut R,
        learn: bool,
    ) -> EpisodeResult {
        match self {
            Student::Scripted(s) => s.attempt(level, rng),
            Student::Learner(l) => l.play(level, rng, learn),
        }
    }
}
