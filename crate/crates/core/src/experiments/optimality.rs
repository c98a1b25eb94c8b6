use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds of the stability rule. All comparisons are relative, so a
/// verdict does not change when the FID series is rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimalityThresholds {
    /// Window length in evaluations.
    pub window: usize,
    /// Maximum window standard deviation relative to the window mean.
    pub tau_sigma: f64,
    /// Maximum excess of the window mean over the global minimum.
    pub tau_min: f64,
    /// Leading fraction of the series treated as initial transient.
    pub burn_in_fraction: f64,
}

impl Default for OptimalityThresholds {
    fn default() -> Self {
        OptimalityThresholds {
            window: 20,
            tau_sigma: 0.05,
            tau_min: 0.10,
            burn_in_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Chaotic,
    Transitional,
    Stable,
}

impl Verdict {
    pub fn is_candidate(self) -> bool {
        self != Verdict::Chaotic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimality {
    pub verdict: Verdict,
    /// First step from which every window is stable; absent for chaotic runs.
    pub transition_step: Option<u64>,
    pub final_mean: f64,
    pub final_std: f64,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Classifies an FID series.
///
/// A window is stable when its standard deviation is at most `tau_sigma`
/// times its mean and its mean is at most `(1 + tau_min)` times the global
/// minimum. The run is chaotic if the final window is unstable. Otherwise
/// `t*` is the step starting the earliest window from which all later windows
/// are stable; the run is stable if `t*` lies within the burn-in prefix and
/// transitional if it comes later.
pub fn detect_optimality(steps: &[u64], fid: &[f64], th: &OptimalityThresholds) -> Result<Optimality> {
    let w = th.window;
    if steps.len() != fid.len() {
        return Err(Error::Data(format!("{} steps but {} FID values", steps.len(), fid.len())));
    }
    if w == 0 || fid.len() < 2 * w {
        return Err(Error::Data(format!(
            "series of {} evaluations is shorter than twice the window ({w})",
            fid.len()
        )));
    }
    if fid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("FID series contains non-finite values".into()));
    }
    let global_min = fid.iter().copied().fold(f64::INFINITY, f64::min);
    let stable_at = |e: usize| {
        let (m, s) = mean_std(&fid[e..e + w]);
        s <= th.tau_sigma * m && m <= (1.0 + th.tau_min) * global_min
    };
    let last = fid.len() - w;
    let (final_mean, final_std) = mean_std(&fid[last..]);
    if !stable_at(last) {
        return Ok(Optimality {
            verdict: Verdict::Chaotic,
            transition_step: None,
            final_mean,
            final_std,
        });
    }
    let mut e0 = last;
    while e0 > 0 && stable_at(e0 - 1) {
        e0 -= 1;
    }
    let burn_in = ((fid.len() as f64) * th.burn_in_fraction).floor() as usize;
    let verdict = if e0 <= burn_in { Verdict::Stable } else { Verdict::Transitional };
    Ok(Optimality {
        verdict,
        transition_step: Some(steps[e0]),
        final_mean,
        final_std,
    })
}

/// One evaluated capacity of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityResult {
    pub capacity: usize,
    pub optimality: Option<Optimality>,
}

/// The smallest stable-or-transitional capacity whose final FID level is
/// within `tau_min` of the best such level. When stable capacities exist the
/// choice never exceeds the largest of them.
pub fn select_optimal_capacity(results: &[CapacityResult], th: &OptimalityThresholds) -> Result<usize> {
    if results.len() < 2 {
        return Err(Error::Config(format!("selection needs at least 2 capacities, got {}", results.len())));
    }
    let max_stable = results
        .iter()
        .filter(|r| matches!(r.optimality, Some(o) if o.verdict == Verdict::Stable))
        .map(|r| r.capacity)
        .max();
    let candidates: Vec<(usize, f64)> = results
        .iter()
        .filter_map(|r| match r.optimality {
            Some(o) if o.verdict.is_candidate() => Some((r.capacity, o.final_mean)),
            _ => None,
        })
        .filter(|(c, _)| max_stable.is_none_or(|m| *c <= m))
        .collect();
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|(_, m)| *m <= (1.0 + th.tau_min) * best)
        .map(|(c, _)| *c)
        .min()
        .ok_or_else(|| Error::NoOptimum("every capacity in the grid is chaotic; extend the grid".into()))
}
