//! Trajectories and their post-processing: merger verdicts, peak counting
//! and exemplar/field comparison.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::DensityField;
use crate::model::PhonPoint;

/// Statistics of one category at one sample time. `mean` and `dispersion`
/// are `None` once the category has no live weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategorySample {
    pub mean: Option<PhonPoint>,
    pub dispersion: Option<f64>,
    pub activation: f64,
    pub live_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunEvent {
    Extinction { time: f64, category: String },
    AllExtinct { time: f64 },
    Failure { time: f64, reason: String },
}

/// Counters accumulated by either engine. Fields that do not apply to an
/// engine stay at zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Production events (exemplar engine) or integration steps (field engine).
    pub events: u64,
    /// Tokens discarded, per category of origin.
    pub discards: Vec<u64>,
    /// Production attempts by categories without exemplars.
    pub extinct_attempts: Vec<u64>,
    /// Tokens produced where every density vanished.
    pub zero_density_events: u64,
    pub pruned_count: u64,
    pub pruned_weight: f64,
    /// Largest fraction of a category's weight removed in one pruning pass.
    pub max_prune_fraction: f64,
    /// Largest bound on the mean shift caused by one pruning pass.
    pub max_prune_mean_shift: f64,
    /// Production mass lost past the grid boundary.
    pub leaked_mass: f64,
    /// Negative mass removed by clipping.
    pub clipped_mass: f64,
    /// Largest clipped mass in one step relative to the total mass.
    pub max_step_clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    /// Positions and current weights of every live exemplar, per category.
    Exemplars { time: f64, categories: Vec<Vec<(PhonPoint, f64)>> },
    /// Density field per category.
    Field { time: f64, fields: Vec<DensityField> },
}

impl Snapshot {
    pub fn time(&self) -> f64 {
        match self {
            Snapshot::Exemplars { time, .. } | Snapshot::Field { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub labels: Vec<String>,
    pub dim: usize,
    pub times: Vec<f64>,
    /// `series[c][k]` is category `c` at `times[k]`.
    pub series: Vec<Vec<CategorySample>>,
    pub events: Vec<RunEvent>,
    pub diagnostics: Diagnostics,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new(labels: Vec<String>, dim: usize) -> Self {
        let n = labels.len();
        Self {
            labels,
            dim,
            times: Vec::new(),
            series: vec![Vec::new(); n],
            events: Vec::new(),
            diagnostics: Diagnostics {
                discards: vec![0; n],
                extinct_attempts: vec![0; n],
                ..Default::default()
            },
            snapshots: Vec::new(),
        }
    }

    pub fn push(&mut self, time: f64, samples: Vec<CategorySample>) {
        debug_assert_eq!(samples.len(), self.labels.len());
        debug_assert!(self.times.last().map_or(true, |&t| t < time));
        self.times.push(time);
        for (series, s) in self.series.iter_mut().zip(samples) {
            series.push(s);
        }
    }

    pub fn num_categories(&self) -> usize {
        self.labels.len()
    }

    pub fn category(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Index of the sample nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.times.is_empty() {
            return None;
        }
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return Some(0);
        }
        if k == self.times.len() {
            return Some(k - 1);
        }
        Some(if (self.times[k] - t) < (t - self.times[k - 1]) { k } else { k - 1 })
    }

    pub fn sample(&self, c: usize, k: usize) -> &CategorySample {
        &self.series[c][k]
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// `k * step`, computed as `k / m` when `step` is the reciprocal of an
/// integer `m` so that decimal sample times such as 19.9 come out as the
/// nearest double rather than carrying the rounding error of `step`.
pub fn lattice_time(k: u64, step: f64) -> f64 {
    let inv = 1.0 / step;
    let m = inv.round();
    if m >= 1.0 && (inv - m).abs() < 1e-9 * m {
        k as f64 / m
    } else {
        k as f64 * step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum VerdictKind {
    Merged,
    Distinct,
    /// Joint mean displacement over the window.
    Drifting { displacement: Vec<f64> },
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergerVerdict {
    #[serde(flatten)]
    pub kind: VerdictKind,
    /// Time-averaged distance between the two category means.
    pub gap: f64,
    /// `|mean_A + mean_B|` at the end of the window.
    pub symmetry_defect: f64,
}

impl fmt::Display for MergerVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            VerdictKind::Merged => write!(f, "Merged"),
            VerdictKind::Distinct => write!(f, "Distinct"),
            VerdictKind::Inconclusive => write!(f, "Inconclusive"),
            VerdictKind::Drifting { displacement } => {
                let signs: Vec<&str> =
                    displacement.iter().map(|d| if *d >= 0.0 { "+" } else { "-" }).collect();
                write!(f, "Drifting({})", signs.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictThresholds {
    pub gap: f64,
    pub drift: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self { gap: 0.5, drift: 0.5 }
    }
}

/// Classify a two-category trajectory over the window `[t1, t2]`.
///
/// Inconclusive if either category lacks a mean anywhere in the window;
/// otherwise Merged when the time-averaged gap is below `gap`, Drifting when
/// the activation-weighted joint mean moves by more than `drift` between the
/// window ends, and Distinct otherwise.
pub fn merger_verdict(
    traj: &Trajectory,
    window: (f64, f64),
    thresholds: VerdictThresholds,
) -> Result<MergerVerdict> {
    if traj.num_categories() != 2 {
        return Err(Error::Contract(format!(
            "merger verdicts need exactly two categories, got {}",
            traj.num_categories()
        )));
    }
    let (t1, t2) = window;
    let (first, last) = match (traj.times.first(), traj.times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Contract("empty trajectory".into())),
    };
    let tol = 1e-9 * last.abs().max(1.0);
    if !(t1 <= t2) || t1 < first - tol || t2 > last + tol {
        return Err(Error::Contract(format!(
            "window [{t1}, {t2}] lies outside the trajectory span [{first}, {last}]"
        )));
    }
    let ks: Vec<usize> =
        (0..traj.times.len()).filter(|&k| traj.times[k] >= t1 - tol && traj.times[k] <= t2 + tol).collect();
    if ks.is_empty() {
        return Err(Error::Contract(format!("no samples in window [{t1}, {t2}]")));
    }
    let pair = |k: usize| -> Option<(PhonPoint, PhonPoint, f64, f64)> {
        let a = traj.sample(0, k);
        let b = traj.sample(1, k);
        Some((a.mean?, b.mean?, a.activation, b.activation))
    };
    let mut gap_sum = 0.0;
    for &k in &ks {
        match pair(k) {
            Some((ma, mb, _, _)) => gap_sum += ma.dist(&mb),
            None => {
                return Ok(MergerVerdict {
                    kind: VerdictKind::Inconclusive,
                    gap: f64::NAN,
                    symmetry_defect: f64::NAN,
                })
            }
        }
    }
    let gap = gap_sum / ks.len() as f64;
    let joint = |k: usize| {
        let (ma, mb, wa, wb) = pair(k).expect("checked above");
        (1.0 / (wa + wb)) * (wa * ma + wb * mb)
    };
    let k_start = ks[0];
    let k_end = *ks.last().unwrap();
    let (ma, mb, _, _) = pair(k_end).unwrap();
    let symmetry_defect = (ma + mb).norm();
    let displacement = joint(k_end) - joint(k_start);
    let kind = if gap < thresholds.gap {
        VerdictKind::Merged
    } else if displacement.norm() > thresholds.drift {
        VerdictKind::Drifting { displacement: displacement.coords().to_vec() }
    } else {
        VerdictKind::Distinct
    };
    Ok(MergerVerdict { kind, gap, symmetry_defect })
}

/// Number of strict local maxima above `floor_fraction * max` in a 1D or 2D
/// field. A connected plateau of equal values counts once when every node
/// bordering it is strictly lower. 2D uses the 8-neighbourhood.
pub fn count_peaks(field: &DensityField, floor_fraction: f64) -> Result<usize> {
    if !(floor_fraction > 0.0 && floor_fraction < 1.0) {
        return Err(Error::Contract(format!("floor_fraction must lie in (0,1), got {floor_fraction}")));
    }
    let grid = field.grid();
    let [n0, n1] = grid.points();
    let v = field.values();
    let max = v.iter().cloned().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Ok(0);
    }
    let floor = floor_fraction * max;
    let neighbours = |i: usize| -> Vec<usize> {
        let (i0, i1) = (i / n1, i % n1);
        let mut out = Vec::with_capacity(8);
        for d0 in -1i64..=1 {
            for d1 in -1i64..=1 {
                if d0 == 0 && d1 == 0 {
                    continue;
                }
                let (j0, j1) = (i0 as i64 + d0, i1 as i64 + d1);
                if j0 >= 0 && j0 < n0 as i64 && j1 >= 0 && j1 < n1 as i64 {
                    out.push(j0 as usize * n1 + j1 as usize);
                }
            }
        }
        out
    };
    let mut visited = vec![false; v.len()];
    let mut peaks = 0;
    let mut queue = VecDeque::new();
    for start in 0..v.len() {
        if visited[start] || v[start] <= floor {
            continue;
        }
        // Flood the plateau of equal values containing `start`.
        let level = v[start];
        let mut is_peak = true;
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbours(i) {
                if v[j] > level {
                    is_peak = false;
                } else if v[j] == level && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if is_peak {
            peaks += 1;
        }
    }
    Ok(peaks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub label: String,
    pub time_a: f64,
    pub time_b: f64,
    pub mean: f64,
    pub dispersion: f64,
    pub activation: f64,
}

/// Per-category absolute differences between two trajectories at the
/// samples nearest to `t`. Undefined means or dispersions give NaN.
pub fn compare_models(a: &Trajectory, b: &Trajectory, t: f64) -> Result<Vec<Discrepancy>> {
    if a.labels != b.labels {
        return Err(Error::Contract(format!(
            "category labels differ: {:?} vs {:?}",
            a.labels, b.labels
        )));
    }
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    let ka = a.nearest(t).ok_or_else(|| Error::Contract("first trajectory is empty".into()))?;
    let kb = b.nearest(t).ok_or_else(|| Error::Contract("second trajectory is empty".into()))?;
    Ok(a.labels
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let sa = a.sample(c, ka);
            let sb = b.sample(c, kb);
            let mean = match (sa.mean, sb.mean) {
                (Some(x), Some(y)) => x.dist(&y),
                _ => f64::NAN,
            };
            let dispersion = match (sa.dispersion, sb.dispersion) {
                (Some(x), Some(y)) => (x - y).abs(),
                _ => f64::NAN,
            };
            Discrepancy {
                label: label.clone(),
                time_a: a.times[ka],
                time_b: b.times[kb],
                mean,
                dispersion,
                activation: (sa.activation - sb.activation).abs(),
            }
        })
        .collect())
}
