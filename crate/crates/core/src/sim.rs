//! Deterministic tile-based Jumper environment.
//!
//! A level is a strip of [`LEVEL_LEN`] tiles, each with a height in
//! `{-1, 0, 1, 2}` and an optional spike. The player starts on tile 0 and
//! must reach tile 47. Two moves exist:
//!
//! * walk: advance one tile, legal iff the height gain is at most +1;
//! * jump: advance two tiles (the intermediate tile is cleared), legal iff
//!   the landing height gain is at most +2.
//!
//! Landing on a spiked tile ends the attempt. An illegal move stalls: it
//! costs a step and leaves the player in place.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LEVEL_LEN: usize = 48;
pub const GOAL: usize = LEVEL_LEN - 1;
pub const HEIGHTS: [i8; 4] = [-1, 0, 1, 2];
pub const DEFAULT_MAX_STEPS: usize = 200;
pub const DESCRIPTOR_VERSION: u32 = 1;

const WALK_MAX_GAIN: i8 = 1;
const JUMP_MAX_GAIN: i8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("spike density must lie in [0, 1], got {0}")]
    SpikeDensity(f64),
    #[error("height probabilities must be finite, non-negative and sum to 1 (sum = {0})")]
    HeightProbs(f64),
    #[error("level must have exactly {LEVEL_LEN} tiles, got {0}")]
    TileCount(usize),
    #[error("tile height {0} is not one of -1, 0, 1, 2")]
    TileHeight(i8),
    #[error("start and goal tiles must not be spiked")]
    SpikedEndpoint,
    #[error("descriptor mismatch: {0}")]
    Descriptor(String),
}

/// Generation parameters of a level: the "item" a student responds to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelParams {
    pub spike_density: f64,
    /// Probabilities over heights `-1, 0, 1, 2`.
    pub height_probs: [f64; 4],
}

impl LevelParams {
    pub fn new(spike_density: f64, height_probs: [f64; 4]) -> Result<Self, SimError> {
        let p = Self {
            spike_density,
            height_probs,
        };
        p.validate()?;
        Ok(p)
    }

    /// Spike-free level on flat ground.
    pub fn flat_easy() -> Self {
        Self {
            spike_density: 0.0,
            height_probs: [0.0, 1.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.spike_density) {
            return Err(SimError::SpikeDensity(self.spike_density));
        }
        let sum: f64 = self.height_probs.iter().sum();
        let bad = self.height_probs.iter().any(|p| !p.is_finite() || *p < 0.0);
        if bad || !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::HeightProbs(sum));
        }
        Ok(())
    }

    /// Feature vector used by the response model: density then heights.
    pub fn features(&self) -> [f64; 5] {
        let h = self.height_probs;
        [self.spike_density, h[0], h[1], h[2], h[3]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub height: i8,
    pub spiked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    tiles: Vec<Tile>,
    seed: u64,
}

impl Level {
    /// Builds a level from explicit tiles, checking every layout invariant.
    pub fn from_tiles(tiles: Vec<Tile>, seed: u64) -> Result<Self, SimError> {
        if tiles.len() != LEVEL_LEN {
            return Err(SimError::TileCount(tiles.len()));
        }
        if let Some(t) = tiles.iter().find(|t| !HEIGHTS.contains(&t.height)) {
            return Err(SimError::TileHeight(t.height));
        }
        if tiles[0].spiked || tiles[GOAL].spiked {
            return Err(SimError::SpikedEndpoint);
        }
        Ok(Self { tiles, seed })
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn tile(&self, i: usize) -> Tile {
        self.tiles[i]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn goal(&self) -> usize {
        GOAL
    }

    pub fn spike_count(&self) -> usize {
        self.tiles.iter().filter(|t| t.spiked).count()
    }
}

/// Samples a level tile by tile: height from the categorical over
/// `height_probs`, spike from a Bernoulli with `spike_density`. Tiles 0 and
/// 47 are never spiked.
pub fn generate_level(params: &LevelParams, seed: u64) -> Result<Level, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiles = (0..LEVEL_LEN)
        .map(|i| {
            let u: f64 = rng.random();
            let height = HEIGHTS[sample_categorical(&params.height_probs, u)];
            let spiked = rng.random::<f64>() < params.spike_density;
            Tile {
                height,
                spiked: spiked && i != 0 && i != GOAL,
            }
        })
        .collect();
    Ok(Level { tiles, seed })
}

fn sample_categorical(probs: &[f64; 4], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum just under u
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Walk,
    Jump,
}

impl Action {
    pub fn stride(self) -> usize {
        match self {
            Action::Walk => 1,
            Action::Jump => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Moved(usize),
    Stalled,
    Spiked(usize),
    Goal,
}

/// Whether `action` from tile `from` is legal under the move rules, ignoring spikes.
pub fn is_legal(level: &Level, from: usize, action: Action) -> bool {
    let to = from + action.stride();
    if to >= LEVEL_LEN {
        return false;
    }
    let gain = level.tiles[to].height - level.tiles[from].height;
    match action {
        Action::Walk => gain <= WALK_MAX_GAIN,
        Action::Jump => gain <= JUMP_MAX_GAIN,
    }
}

/// Applies one move.
pub fn step(level: &Level, from: usize, action: Action) -> StepOutcome {
    if !is_legal(level, from, action) {
        return StepOutcome::Stalled;
    }
    let to = from + action.stride();
    if level.tiles[to].spiked {
        StepOutcome::Spiked(to)
    } else if to == GOAL {
        StepOutcome::Goal
    } else {
        StepOutcome::Moved(to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub reached_goal: bool,
    pub max_tile: usize,
    pub steps: usize,
    pub raw_reward: f64,
}

impl EpisodeResult {
    pub fn new(reached_goal: bool, max_tile: usize, steps: usize) -> Self {
        let max_tile = if reached_goal {
            GOAL
        } else {
            max_tile.min(GOAL)
        };
        Self {
            reached_goal,
            max_tile,
            steps,
            raw_reward: raw_reward_of(reached_goal, max_tile),
        }
    }
}

fn raw_reward_of(reached_goal: bool, max_tile: usize) -> f64 {
    max_tile as f64 / GOAL as f64 + if reached_goal { 1.0 } else { 0.0 }
}

/// `max_tile / 47`, plus 1 for reaching the goal. Range `[0, 2]`.
pub fn raw_reward(result: &EpisodeResult) -> f64 {
    raw_reward_of(result.reached_goal, result.max_tile)
}

/// Anything that can choose the next move given the level and the player tile.
pub trait ActionSource {
    fn next_action(&mut self, level: &Level, position: usize) -> Action;
}

impl<F: FnMut(&Level, usize) -> Action> ActionSource for F {
    fn next_action(&mut self, level: &Level, position: usize) -> Action {
        self(level, position)
    }
}

/// Replays a fixed action list, walking once it runs out.
#[derive(Debug, Clone)]
pub struct ScriptedActions {
    actions: Vec<Action>,
    cursor: usize,
}

impl ScriptedActions {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, cursor: 0 }
    }
}

impl ActionSource for ScriptedActions {
    fn next_action(&mut self, _level: &Level, _position: usize) -> Action {
        let a = self
            .actions
            .get(self.cursor)
            .copied()
            .unwrap_or(Action::Walk);
        self.cursor += 1;
        a
    }
}

/// One attempt from tile 0 with a per-step observer, the building block for
/// learners that need the visited trajectory.
pub fn simulate_episode_with<S, O>(
    level: &Level,
    source: &mut S,
    max_steps: usize,
    mut observe: O,
) -> EpisodeResult
where
    S: ActionSource + ?Sized,
    O: FnMut(usize, Action, StepOutcome),
{
    let mut pos = 0;
    let mut max_tile = 0;
    let mut steps = 0;
    while steps < max_steps {
        let action = source.next_action(level, pos);
        let outcome = step(level, pos, action);
        steps += 1;
        observe(pos, action, outcome);
        match outcome {
            StepOutcome::Moved(to) => {
                pos = to;
                max_tile = max_tile.max(to);
            }
            StepOutcome::Stalled => {}
            StepOutcome::Spiked(to) => {
                return EpisodeResult::new(false, max_tile.max(to), steps);
            }
            StepOutcome::Goal => return EpisodeResult::new(true, GOAL, steps),
        }
    }
    EpisodeResult::new(false, max_tile, steps)
}

pub fn simulate_episode<S: ActionSource + ?Sized>(
    level: &Level,
    source: &mut S,
    max_steps: usize,
) -> EpisodeResult {
    simulate_episode_with(level, source, max_steps, |_, _, _| {})
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solvability {
    pub solvable: bool,
    /// Fewest-jump action sequence from start to goal, when solvable.
    pub witness: Option<Vec<Action>>,
}

/// Reachability over tile indices. The witness minimises the number of jumps
/// (walks cost 0, jumps cost 1 in a 0-1 BFS); since walks+2*jumps = 47 this
/// also fixes the step count for a given jump count.
pub fn is_solvable(level: &Level) -> Solvability {
    const UNSEEN: usize = usize::MAX;
    let mut cost = [UNSEEN; LEVEL_LEN];
    let mut parent: [Option<(usize, Action)>; LEVEL_LEN] = [None; LEVEL_LEN];
    let mut queue = VecDeque::new();
    cost[0] = 0;
    queue.push_back(0usize);
    while let Some(i) = queue.pop_front() {
        if i == GOAL {
            continue;
        }
        for action in [Action::Walk, Action::Jump] {
            let to = match step(level, i, action) {
                StepOutcome::Moved(to) => to,
                StepOutcome::Goal => GOAL,
                StepOutcome::Stalled | StepOutcome::Spiked(_) => continue,
            };
            let w = usize::from(action == Action::Jump);
            if cost[i] + w < cost[to] {
                cost[to] = cost[i] + w;
                parent[to] = Some((i, action));
                if w == 0 {
                    queue.push_front(to);
                } else {
                    queue.push_back(to);
                }
            }
        }
    }
    if cost[GOAL] == UNSEEN {
        return Solvability {
            solvable: false,
            witness: None,
        };
    }
    let mut path = Vec::new();
    let mut at = GOAL;
    while let Some((prev, action)) = parent[at] {
        path.push(action);
        at = prev;
    }
    path.reverse();
    Solvability {
        solvable: true,
        witness: Some(path),
    }
}

/// Serializable level layout shared with the session service and browser client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDescriptor {
    pub version: u32,
    pub tiles: Vec<TileDescriptor>,
    pub start: usize,
    pub goal: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileDescriptor {
    pub height: i8,
    pub spike: bool,
}

pub fn render_descriptor(level: &Level) -> LevelDescriptor {
    LevelDescriptor {
        version: DESCRIPTOR_VERSION,
        tiles: level
            .tiles
            .iter()
            .map(|t| TileDescriptor {
                height: t.height,
                spike: t.spiked,
            })
            .collect(),
        start: 0,
        goal: GOAL,
        seed: level.seed,
    }
}

impl TryFrom<&LevelDescriptor> for Level {
    type Error = SimError;

    fn try_from(d: &LevelDescriptor) -> Result<Self, Self::Error> {
        if d.version != DESCRIPTOR_VERSION {
            return Err(SimError::Descriptor(format!(
                "unsupported version {}",
                d.version
            )));
        }
        if d.start != 0 || d.goal != GOAL {
            return Err(SimError::Descriptor(format!(
                "start/goal must be 0/{GOAL}, got {}/{}",
                d.start, d.goal
            )));
        }
        let tiles = d
            .tiles
            .iter()
            .map(|t| Tile {
                height: t.height,
                spiked: t.spike,
            })
            .collect();
        Level::from_tiles(tiles, d.seed)
    }
}

fn tiles_from_rows(heights: &[i8; LEVEL_LEN], spikes: &[usize]) -> Vec<Tile> {
    heights
        .iter()
        .enumerate()
        .map(|(i, &height)| Tile {
            height,
            spiked: spikes.contains(&i),
        })
        .collect()
}

/// Handcrafted final-test level: longer spike runs and height steps than
/// the generator typically produces at moderate densities. Solvable.
pub fn test_fixture_level() -> Level {
    #[rustfmt::skip]
    let heights: [i8; LEVEL_LEN] = [
        0, 0, 0, 1, 1, 2, 2, 0, 0, -1,
        -1, 1, 1, 1, 0, 0, 2, 2, 2, 0,
        0, 0, 1, 1, -1, -1, 0, 1, 2, 2,
        1, 1, 0, 0, 0, 2, 2, 1, 1, 0,
        0, -1, 0, 1, 1, 2, 2, 2,
    ];
    let spikes = [4, 8, 12, 15, 20, 23, 26, 31, 33, 37, 40, 43];
    Level::from_tiles(tiles_from_rows(&heights, &spikes), 0).expect("fixture layout is valid")
}

/// Gentle familiarization level: flat ground with two isolated spikes.
pub fn trial_fixture_level() -> Level {
    let heights = [0i8; LEVEL_LEN];
    Level::from_tiles(tiles_from_rows(&heights, &[16, 32]), 0).expect("fixture layout is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(spikes: &[usize]) -> Level {
        Level::from_tiles(tiles_from_rows(&[0; LEVEL_LEN], spikes), 0).unwrap()
    }

    fn all_walk() -> impl FnMut(&Level, usize) -> Action {
        |_: &Level, _| Action::Walk
    }

    #[test]
    fn degenerate_params() {
        let lvl = generate_level(&LevelParams::flat_easy(), 7).unwrap();
        assert!(lvl.tiles().iter().all(|t| t.height == 0 && !t.spiked));

        let all = LevelParams::new(1.0, [0.1, 0.2, 0.3, 0.4]).unwrap();
        let lvl = generate_level(&all, 7).unwrap();
        for (i, t) in lvl.tiles().iter().enumerate() {
            assert_eq!(t.spiked, i != 0 && i != GOAL);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(LevelParams::new(1.2, [0.25; 4]).is_err());
        assert!(LevelParams::new(-0.1, [0.25; 4]).is_err());
        assert!(LevelParams::new(0.5, [0.5, 0.5, 0.5, 0.0]).is_err());
        assert!(LevelParams::new(0.5, [1.5, -0.5, 0.0, 0.0]).is_err());
        let bad = LevelParams {
            spike_density: f64::NAN,
            height_probs: [0.25; 4],
        };
        assert!(generate_level(&bad, 0).is_err());
    }

    #[test]
    fn golden_level_seed_42() {
        let p = LevelParams::new(0.5, [0.25; 4]).unwrap();
        let lvl = generate_level(&p, 42).unwrap();
        let heights: Vec<i8> = lvl.tiles().iter().map(|t| t.height).collect();
        let spikes: Vec<usize> = (0..LEVEL_LEN).filter(|&i| lvl.tile(i).spiked).collect();
        assert_eq!(heights, GOLDEN_HEIGHTS_42);
        assert_eq!(spikes, GOLDEN_SPIKES_42);
        assert_eq!(lvl, generate_level(&p, 42).unwrap());
    }

    // frozen from the first implementation (ChaCha8, two uniforms per tile)
    #[rustfmt::skip]
    const GOLDEN_HEIGHTS_42: [i8; LEVEL_LEN] = [
        1, 0, 0, 0, 2, 1, 2, 1, 1, 0, -1, 1, -1, 2, 1, 1, -1, 2, 0, 2, 2, -1, 2, 0,
        1, -1, 0, -1, 1, 1, -1, 2, -1, -1, 0, 0, 1, 0, 1, 2, 0, 2, 2, -1, 2, 0, 2, -1,
    ];
    const GOLDEN_SPIKES_42: [usize; 24] = [
        2, 4, 7, 8, 9, 10, 11, 12, 15, 16, 18, 26, 27, 29, 31, 33, 34, 35, 39, 40, 41, 42, 43, 45,
    ];

    #[test]
    fn flat_all_walk_reaches_goal() {
        let r = simulate_episode(&flat(&[]), &mut all_walk(), DEFAULT_MAX_STEPS);
        assert!(r.reached_goal);
        assert_eq!((r.max_tile, r.steps), (47, 47));
        assert_eq!(r.raw_reward, 2.0);
    }

    #[test]
    fn spike_at_one_ends_immediately() {
        let r = simulate_episode(&flat(&[1]), &mut all_walk(), DEFAULT_MAX_STEPS);
        assert!(!r.reached_goal);
        assert_eq!((r.max_tile, r.steps), (1, 1));
    }

    #[test]
    fn jump_clears_spike() {
        let lvl = flat(&[3]);
        assert_eq!(step(&lvl, 2, Action::Jump), StepOutcome::Moved(4));
        assert_eq!(step(&lvl, 2, Action::Walk), StepOutcome::Spiked(3));
        assert_eq!(step(&lvl, 45, Action::Jump), StepOutcome::Goal);
        assert_eq!(step(&lvl, 46, Action::Jump), StepOutcome::Stalled);
    }

    #[test]
    fn height_rules() {
        let mut h = [0i8; LEVEL_LEN];
        h[1] = 1;
        h[2] = 2;
        h[4] = -1;
        h[5] = 2;
        h[10] = -1;
        h[12] = 2;
        let lvl = Level::from_tiles(tiles_from_rows(&h, &[]), 0).unwrap();
        assert!(is_legal(&lvl, 0, Action::Walk)); // +1
        assert!(is_legal(&lvl, 0, Action::Jump)); // +2
        assert!(!is_legal(&lvl, 4, Action::Walk)); // +3
        assert!(is_legal(&lvl, 4, Action::Jump)); // -1 -> 0
        assert!(is_legal(&lvl, 3, Action::Walk)); // 0 -> -1
        assert!(!is_legal(&lvl, 10, Action::Jump)); // -1 -> 2
                                                    // h[3] = 0 after h[2] = 2: dropping is always fine
        assert!(is_legal(&lvl, 2, Action::Walk));
    }

    #[test]
    fn stall_counts_a_step_and_max_steps_bounds() {
        let mut h = [0i8; LEVEL_LEN];
        h[1] = 2;
        h[2] = 2;
        let lvl = Level::from_tiles(tiles_from_rows(&h, &[]), 0).unwrap();
        let r = simulate_episode(&lvl, &mut all_walk(), DEFAULT_MAX_STEPS);
        assert_eq!((r.reached_goal, r.max_tile, r.steps), (false, 0, 200));
        assert_eq!(r.raw_reward, 0.0);
    }

    #[test]
    fn raw_reward_formula() {
        assert_eq!(EpisodeResult::new(true, 47, 10).raw_reward, 2.0);
        assert_eq!(EpisodeResult::new(false, 0, 3).raw_reward, 0.0);
        assert_eq!(EpisodeResult::new(false, 23, 3).raw_reward, 23.0 / 47.0);
        let r = EpisodeResult::new(false, 23, 3);
        assert_eq!(raw_reward(&r), r.raw_reward);
    }

    #[test]
    fn solvability_examples() {
        let s = is_solvable(&flat(&[]));
        assert!(s.solvable);
        assert_eq!(s.witness.unwrap(), vec![Action::Walk; 47]);

        let interior: Vec<usize> = (1..GOAL).collect();
        assert!(!is_solvable(&flat(&interior)).solvable);

        let s = is_solvable(&flat(&[10]));
        let w = s.witness.unwrap();
        assert_eq!(w.iter().filter(|a| **a == Action::Jump).count(), 1);
        assert_eq!(w.len(), 46);
    }

    /// Independent reachability oracle: memoised recursion from the goal side.
    fn reaches_goal(level: &Level, from: usize, memo: &mut [Option<bool>; LEVEL_LEN]) -> bool {
        if from == GOAL {
            return true;
        }
        if let Some(v) = memo[from] {
            return v;
        }
        let ok = [Action::Walk, Action::Jump]
            .into_iter()
            .any(|a| match step(level, from, a) {
                StepOutcome::Goal => true,
                StepOutcome::Moved(to) => reaches_goal(level, to, memo),
                _ => false,
            });
        memo[from] = Some(ok);
        ok
    }

    #[test]
    fn adjacent_spikes_block_every_local_configuration() {
        // tiles 9..=13 take every height combination, spikes on 11 and 12
        for code in 0..4usize.pow(5) {
            let mut h = [0i8; LEVEL_LEN];
            let mut c = code;
            for slot in &mut h[9..=13] {
                *slot = HEIGHTS[c % 4];
                c /= 4;
            }
            let lvl = Level::from_tiles(tiles_from_rows(&h, &[11, 12]), 0).unwrap();
            let mut memo = [None; LEVEL_LEN];
            assert!(!reaches_goal(&lvl, 0, &mut memo));
            assert!(!is_solvable(&lvl).solvable, "heights code {code}");
        }
    }

    #[test]
    fn bfs_agrees_with_recursive_oracle_on_random_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..2000u64 {
            let density = rng.random::<f64>() * 0.4;
            let p = LevelParams::new(density, [0.25; 4]).unwrap();
            let lvl = generate_level(&p, seed).unwrap();
            let mut memo = [None; LEVEL_LEN];
            let s = is_solvable(&lvl);
            assert_eq!(s.solvable, reaches_goal(&lvl, 0, &mut memo));
            if let Some(w) = s.witness {
                let r = simulate_episode(&lvl, &mut ScriptedActions::new(w), DEFAULT_MAX_STEPS);
                assert!(r.reached_goal);
            }
        }
    }

    #[test]
    fn fixtures_are_solvable() {
        assert!(is_solvable(&test_fixture_level()).solvable);
        assert!(is_solvable(&trial_fixture_level()).solvable);
    }

    #[test]
    fn descriptor_roundtrip() {
        let p = LevelParams::new(0.3, [0.1, 0.4, 0.3, 0.2]).unwrap();
        let lvl = generate_level(&p, 9).unwrap();
        let d = render_descriptor(&lvl);
        assert_eq!(d.tiles.len(), 48);
        assert_eq!((d.start, d.goal), (0, 47));
        let json = serde_json::to_string(&d).unwrap();
        let back: LevelDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(Level::try_from(&back).unwrap(), lvl);
    }

    #[test]
    fn descriptor_rejects_bad_layouts() {
        let mut d = render_descriptor(&flat(&[]));
        d.tiles.pop();
        assert!(Level::try_from(&d).is_err());
        let mut d = render_descriptor(&flat(&[]));
        d.tiles[0].spike = true;
        assert!(Level::try_from(&d).is_err());
        let mut d = render_descriptor(&flat(&[]));
        d.tiles[3].height = 5;
        assert!(Level::try_from(&d).is_err());
    }
}
