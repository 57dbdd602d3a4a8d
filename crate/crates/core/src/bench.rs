//! Paired policy comparison over a shared seed set.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::Result;
use crate::search::{self, PolicyKind, RolloutRecord, SearchConfig};

/// Reference figures for 1,000 simulated 15-object heaps with H = 10:
/// `(policy, success rate, [lower quartile, median, upper quartile])`.
pub const REFERENCE_ROWS: [(PolicyKind, f64, [f64; 3]); 3] = [
    (PolicyKind::XRay, 0.82, [3.0, 5.0, 6.0]),
    (PolicyKind::Largest, 0.67, [4.0, 5.0, 7.0]),
    (PolicyKind::Random, 0.42, [4.0, 7.0, 9.0]),
];

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub heaps: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Action-count quartiles over successful rollouts.
    pub quartiles: Option<[f64; 3]>,
    pub mean_actions: Option<f64>,
    /// `histogram[a - 1]` successful rollouts took `a` actions.
    pub histogram: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub horizon: u32,
    pub seeds: Vec<u64>,
    pub summaries: Vec<PolicySummary>,
    /// Policy-major, seed order within each policy.
    pub records: Vec<RolloutRecord>,
}

/// Quartiles with linear interpolation between order statistics.
pub fn quartiles(values: &[u32]) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([at(0.25), at(0.5), at(0.75)])
}

pub fn summarize(policy: PolicyKind, records: &[&RolloutRecord], horizon: u32) -> PolicySummary {
    let actions: Vec<u32> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.action_count)
        .collect();
    let mut histogram = vec![0u32; horizon as usize];
    for &a in &actions {
        if a >= 1 && a <= horizon {
            histogram[a as usize - 1] += 1;
        }
    }
    let heaps = records.len();
    PolicySummary {
        policy,
        heaps,
        successes: actions.len(),
        success_rate: if heaps == 0 { 0.0 } else { actions.len() as f64 / heaps as f64 },
        quartiles: quartiles(&actions),
        mean_actions: (!actions.is_empty())
            .then(|| actions.iter().map(|&a| a as f64).sum::<f64>() / actions.len() as f64),
        histogram,
    }
}

/// Rolls every policy out on every seed. Rollouts run in parallel; results
/// are ordered by policy then seed.
pub fn run_bench(policies: &[PolicyKind], seeds: &[u64], config: &SearchConfig) -> Result<BenchReport> {
    config.validate()?;
    let jobs: Vec<(PolicyKind, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(p, s)| search::rollout(s, p, config))
        .collect::<Result<Vec<_>>>()?;
    let summaries = policies
        .iter()
        .map(|&p| {
            let recs: Vec<&RolloutRecord> = records.iter().filter(|r| r.policy == p).collect();
            summarize(p, &recs, config.horizon)
        })
        .collect();
    Ok(BenchReport {
        horizon: config.horizon,
        seeds: seeds.to_vec(),
        summaries,
        records,
    })
}

fn fmt_quartiles(q: Option<[f64; 3]>) -> [String; 3] {
    match q {
        Some(q) => q.map(|v| format!("{v:.2}")),
        None => ["-".into(), "-".into(), "-".into()],
    }
}

impl BenchReport {
    pub fn summary(&self, policy: PolicyKind) -> Option<&PolicySummary> {
        self.summaries.iter().find(|s| s.policy == policy)
    }

    /// Aligned text table with a reference block underneath.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "policy", "heaps", "success", "q1", "median", "q3", "mean"
        );
        for s in &self.summaries {
            let [q1, q2, q3] = fmt_quartiles(s.quartiles);
            let mean = s.mean_actions.map_or("-".to_string(), |m| format!("{m:.2}"));
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>7.1}% {:>8} {:>8} {:>8} {:>8}",
                s.policy.name(),
                s.heaps,
                100.0 * s.success_rate,
                q1,
                q2,
                q3,
                mean
            );
        }
        let _ = writeln!(out, "\nreference (1000 simulated heaps, not asserted):");
        for (p, rate, [q1, q2, q3]) in REFERENCE_ROWS {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>7.1}% {:>8} {:>8} {:>8}",
                p.name(),
                1000,
                100.0 * rate,
                q1,
                q2,
                q3
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("policy,heaps,successes,success_rate,q1,median,q3,mean_actions\n");
        for s in &self.summaries {
            let [q1, q2, q3] = fmt_quartiles(s.quartiles);
            let mean = s.mean_actions.map_or("-".to_string(), |m| format!("{m:.4}"));
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{},{},{},{}",
                s.policy.name(),
                s.heaps,
                s.successes,
                s.success_rate,
                q1,
                q2,
                q3,
                mean
            );
        }
        out
    }

    pub fn rollouts_csv(&self) -> String {
        let mut out = String::from("policy,seed,success,actions,discounted_return\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.policy.name(),
                r.seed,
                r.success as u8,
                r.action_count,
                r.discounted_return
            );
        }
        out
    }

    /// Successful rollouts per action count, one column per policy.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("actions");
        for s in &self.summaries {
            let _ = write!(out, ",{}", s.policy.name());
        }
        out.push('\n');
        for a in 0..self.horizon as usize {
            let _ = write!(out, "{}", a + 1);
            for s in &self.summaries {
                let _ = write!(out, ",{}", s.histogram[a]);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        assert_eq!(quartiles(&[]), None);
        assert_eq!(quartiles(&[1]), Some([1.0, 1.0, 1.0]));
        assert_eq!(quartiles(&[1, 2, 3, 4, 5]), Some([2.0, 3.0, 4.0]));
        assert_eq!(quartiles(&[4, 5, 5, 6]), Some([4.75, 5.0, 5.25]));
    }

    #[test]
    fn summary_counts_only_successes() {
        let mk = |success, actions| RolloutRecord {
            schema_version: 1,
            seed: 0,
            policy: PolicyKind::Random,
            initial_objects: 3,
            success,
            action_count: actions,
            gamma: 0.95,
            discounted_return: 0.0,
            steps: vec![],
        };
        let recs = [mk(true, 2), mk(false, 10), mk(true, 4)];
        let refs: Vec<&RolloutRecord> = recs.iter().collect();
        let s = summarize(PolicyKind::Random, &refs, 10);
        assert_eq!(s.successes, 2);
        assert!((s.success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.quartiles, Some([2.5, 3.0, 3.5]));
        assert_eq!(s.histogram[1], 1);
        assert_eq!(s.histogram[3], 1);
        assert_eq!(s.histogram.iter().sum::<u32>(), 2);
    }
}
