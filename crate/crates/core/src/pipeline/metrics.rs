use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::teach::{stage2_teach, Condition, TeachMode};
use super::{derive_seed, generate_solvable_level, PipelineError, RunConfig};
use crate::model::PermModel;
use crate::sim::Level;
use crate::students::{random_curriculum_next, LearnerConfig, LearningStudent, Student};

/// Outcome of one evaluation level played up to the attempt cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub attempts: usize,
    pub completed: bool,
    /// Deepest tile reached over all attempts.
    pub max_depth: usize,
    pub steps: usize,
}

/// Integer tallies for one seed; every aggregate is recomputed from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub levels: usize,
    pub completed: usize,
    pub attempts: usize,
    /// Attempts summed over completed levels only.
    pub attempts_on_completed: usize,
    pub depth_sum: usize,
    pub steps: usize,
}

impl SeedMetrics {
    pub fn from_outcomes(seed: u64, outcomes: &[LevelOutcome]) -> Self {
        let mut m = SeedMetrics {
            seed,
            levels: outcomes.len(),
            completed: 0,
            attempts: 0,
            attempts_on_completed: 0,
            depth_sum: 0,
            steps: 0,
        };
        for o in outcomes {
            m.attempts += o.attempts;
            m.depth_sum += o.max_depth;
            m.steps += o.steps;
            if o.completed {
                m.completed += 1;
                m.attempts_on_completed += o.attempts;
            }
        }
        m
    }

    pub fn completion_rate(&self) -> f64 {
        ratio(self.completed, self.levels)
    }

    pub fn mean_max_depth(&self) -> f64 {
        ratio(self.depth_sum, self.levels)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub completion_rate: f64,
    /// `None` when no level was completed.
    pub mean_attempts_to_complete: Option<f64>,
    /// In tiles, best attempt per level.
    pub mean_max_depth: f64,
    pub mean_steps_per_attempt: f64,
    pub per_seed: Vec<SeedMetrics>,
}

impl MetricsReport {
    pub fn from_rows(per_seed: Vec<SeedMetrics>) -> Self {
        let sum = |f: fn(&SeedMetrics) -> usize| per_seed.iter().map(f).sum::<usize>();
        let levels = sum(|m| m.levels);
        let completed = sum(|m| m.completed);
        Self {
            completion_rate: ratio(completed, levels),
            mean_attempts_to_complete: (completed > 0)
                .then(|| ratio(sum(|m| m.attempts_on_completed), completed)),
            mean_max_depth: ratio(sum(|m| m.depth_sum), levels),
            mean_steps_per_attempt: ratio(sum(|m| m.steps), sum(|m| m.attempts)),
            per_seed,
        }
    }
}

/// Plays every level up to `cap` attempts with learning switched off.
pub fn evaluate_outcomes(
    student: &mut Student,
    levels: &[Level],
    cap: usize,
    seed: u64,
) -> Result<Vec<LevelOutcome>, PipelineError> {
    if levels.is_empty() {
        return Err(PipelineError::EmptyEvalSet);
    }
    if cap == 0 {
        return Err(PipelineError::Config(
            "attempts cap must be positive".into(),
        ));
    }
    let outcomes = levels
        .iter()
        .enumerate()
        .map(|(i, level)| {
            let level_seed = derive_seed(seed, i as u64);
            let mut out = LevelOutcome {
                attempts: 0,
                completed: false,
                max_depth: 0,
                steps: 0,
            };
            for k in 0..cap {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(level_seed, k as u64));
                let r = student.attempt(level, &mut rng, false);
                out.attempts += 1;
                out.steps += r.steps;
                out.max_depth = out.max_depth.max(r.max_tile);
                if r.reached_goal {
                    out.completed = true;
                    break;
                }
            }
            out
        })
        .collect();
    Ok(outcomes)
}

pub fn evaluate(
    student: &mut Student,
    levels: &[Level],
    cap: usize,
    seed: u64,
) -> Result<MetricsReport, PipelineError> {
    let outcomes = evaluate_outcomes(student, levels, cap, seed)?;
    Ok(MetricsReport::from_rows(vec![SeedMetrics::from_outcomes(
        seed, &outcomes,
    )]))
}

/// Held-out evaluation set: domain-randomized, solvability-guarded levels.
pub fn sample_eval_levels(eval_seed: u64, n: usize) -> Result<Vec<Level>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    (0..n)
        .map(|_| {
            let params = random_curriculum_next(&mut rng);
            Ok(generate_solvable_level(&params, &mut rng)?.level)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    /// Training attempts consumed per seed before evaluation.
    pub training_attempts: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub conditions: Vec<ConditionSummary>,
}

impl ComparisonReport {
    pub fn get(&self, condition: Condition) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    /// Per-seed wins/losses of `a` over `b` on a per-seed statistic.
    /// Seeds are paired by value; ties are dropped.
    pub fn paired_wins(
        &self,
        a: Condition,
        b: Condition,
        stat: impl Fn(&SeedMetrics) -> f64,
    ) -> (usize, usize) {
        let (Some(a), Some(b)) = (self.get(a), self.get(b)) else {
            return (0, 0);
        };
        let mut wins = 0;
        let mut losses = 0;
        for ra in &a.report.per_seed {
            if let Some(rb) = b.report.per_seed.iter().find(|r| r.seed == ra.seed) {
                let (x, y) = (stat(ra), stat(rb));
                if x > y {
                    wins += 1;
                } else if x < y {
                    losses += 1;
                }
            }
        }
        (wins, losses)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "condition,seed,levels,completed,completion_rate,mean_attempts_to_complete,mean_max_depth,mean_steps_per_attempt\n",
        );
        for c in &self.conditions {
            for m in &c.report.per_seed {
                let row = MetricsReport::from_rows(vec![*m]);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.condition,
                    m.seed,
                    m.levels,
                    m.completed,
                    row.completion_rate,
                    row.mean_attempts_to_complete
                        .map_or(String::new(), |v| v.to_string()),
                    row.mean_max_depth,
                    row.mean_steps_per_attempt
                );
            }
        }
        out
    }
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
pub fn sign_test_p_value(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // Tail sum in log space keeps large n finite.
    let ln_choose =
        |k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    let ln_half_n = n as f64 * 0.5f64.ln();
    (wins..=n)
        .map(|k| (ln_choose(k) + ln_half_n).exp())
        .sum::<f64>()
        .min(1.0)
}

/// For every seed and condition: a fresh learning student is trained with
/// the same attempt budget (none gets no training), then evaluated on the
/// shared held-out set. Trained conditions share their teaching seed so the
/// comparison is paired.
pub fn compare_curricula(
    model: &PermModel,
    config: &RunConfig,
) -> Result<ComparisonReport, PipelineError> {
    config.validate()?;
    let eval = sample_eval_levels(config.eval_seed, config.eval_levels)?;
    let mut conditions = Vec::new();
    for condition in Condition::ALL {
        let cfg = RunConfig {
            condition,
            ..config.clone()
        };
        let mode = TeachMode::Continuous {
            attempts: config.training_attempts,
        };
        let mut rows = Vec::with_capacity(config.seeds.len());
        let mut budget = 0;
        for &seed in &config.seeds {
            let mut student = Student::Learner(LearningStudent::new(LearnerConfig::default()));
            let log = stage2_teach(
                model,
                &mut student,
                &format!("learner#{seed}"),
                &cfg,
                mode,
                derive_seed(seed, 1),
            )?;
            budget = log.training_attempts();
            let outcomes = evaluate_outcomes(
                &mut student,
                &eval,
                config.attempts_cap,
                derive_seed(seed, 2),
            )?;
            rows.push(SeedMetrics::from_outcomes(seed, &outcomes));
        }
        conditions.push(ConditionSummary {
            condition,
            training_attempts: budget,
            report: MetricsReport::from_rows(rows),
        });
    }
    Ok(ComparisonReport { conditions })
}
