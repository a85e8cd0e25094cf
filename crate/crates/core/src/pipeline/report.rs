use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::teach::{LevelKind, SessionLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerformanceGroup {
    High,
    Average,
    Poor,
}

impl fmt::Display for PerformanceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerformanceGroup::High => "high",
            PerformanceGroup::Average => "average",
            PerformanceGroup::Poor => "poor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub group: PerformanceGroup,
    pub level_index: usize,
    pub mean_projection: f64,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// Group of each input session, in input order.
    pub assignments: Vec<PerformanceGroup>,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryReport {
    pub fn trajectory(&self, group: PerformanceGroup) -> Vec<&TrajectoryRow> {
        self.rows.iter().filter(|r| r.group == group).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,level_index,mean_projection,sessions\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.group, r.level_index, r.mean_projection, r.sessions
            );
        }
        out
    }
}

/// Final-test score: best raw reward, then fewer attempts.
fn test_score(log: &SessionLog) -> (f64, usize) {
    match &log.test {
        Some(t) => (t.best_raw_reward().unwrap_or(0.0), t.attempts.len()),
        None => (0.0, usize::MAX),
    }
}

/// Ranks sessions by final-test performance; the top quarter (rounded
/// down) is `High`, the bottom quarter `Poor`, the rest `Average`. Each
/// row is the mean ability projection at one level index (training levels
/// and the test; the trial is not scored by the teacher).
pub fn ability_trajectory_report(logs: &[SessionLog]) -> TrajectoryReport {
    let n = logs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (ri, ai) = test_score(&logs[i]);
        let (rj, aj) = test_score(&logs[j]);
        rj.total_cmp(&ri).then(ai.cmp(&aj)).then(i.cmp(&j))
    });
    let quarter = n / 4;
    let mut assignments = vec![PerformanceGroup::Average; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < quarter {
            assignments[i] = PerformanceGroup::High;
        } else if rank >= n - quarter {
            assignments[i] = PerformanceGroup::Poor;
        }
    }

    let mut acc: BTreeMap<(PerformanceGroup, usize), (f64, usize)> = BTreeMap::new();
    for (log, &group) in logs.iter().zip(&assignments) {
        for lvl in log.all_levels().filter(|l| l.kind != LevelKind::Trial) {
            let e = acc.entry((group, lvl.index)).or_insert((0.0, 0));
            e.0 += lvl.ability_projection;
            e.1 += 1;
        }
    }
    let rows = acc
        .into_iter()
        .map(|((group, level_index), (sum, count))| TrajectoryRow {
            group,
            level_index,
            mean_projection: sum / count as f64,
            sessions: count,
        })
        .collect();
    TrajectoryReport { assignments, rows }
}
