//! Smoothed category densities, selection probabilities and the three
//! categorization regimes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhonPoint;
use crate::store::CategoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Every token is stored in the category that produced it.
    NoCompetition,
    /// Categories compete for each token; the winner stores it.
    PureCompetition,
    /// Categories compete; a token claimed by a foreign category is dropped.
    CompetitionWithDiscards,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::NoCompetition => "no-competition",
            Regime::PureCompetition => "pure-competition",
            Regime::CompetitionWithDiscards => "competition-with-discards",
        }
    }
}

/// What happens to a token produced where every category density is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroDensityPolicy {
    #[default]
    AcceptSource,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassificationOutcome {
    Accept(usize),
    Discard,
}

/// Normalized two-sided exponential kernel: `(k/2) e^{-k|r|}` in 1D and
/// `(k^2 / 2 pi) e^{-k|r|}` in 2D. Both integrate to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingKernel {
    kappa: f64,
    dim: usize,
    peak: f64,
}

impl SmoothingKernel {
    pub fn new(kappa: f64, dim: usize) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParams(format!("kappa must be positive, got {kappa}")));
        }
        let peak = match dim {
            1 => 0.5 * kappa,
            2 => kappa * kappa / (2.0 * PI),
            _ => return Err(Error::InvalidParams(format!("unsupported dimension {dim}"))),
        };
        Ok(Self { kappa, dim, peak })
    }

    #[inline]
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K(0)`.
    #[inline]
    pub fn peak(&self) -> f64 {
        self.peak
    }

    #[inline]
    pub fn at_distance(&self, r: f64) -> f64 {
        self.peak * (-self.kappa * r).exp()
    }
}

/// `S(y) = sum_i w_i(t) K(y - y_i)`, evaluated by direct summation.
pub fn smoothed_density(
    store: &CategoryStore,
    y: &PhonPoint,
    kernel: &SmoothingKernel,
    t: f64,
) -> Result<f64> {
    if kernel.dim() != store.dim() {
        return Err(Error::DimensionMismatch { expected: store.dim(), got: kernel.dim() });
    }
    y.check_dim(store.dim())?;
    let mut sum = 0.0;
    for e in store.exemplars() {
        let w = crate::model::weight_at(e, t, store.lambda())?;
        sum += w * kernel.at_distance(y.dist(&e.position));
    }
    Ok(sum)
}

/// `f_c = S_c^p / sum_c' S_c'^p`, with `0^0 = 0`.
///
/// Densities are normalized by their maximum before exponentiation, so large
/// `p` cannot overflow.
pub fn selection_probability(s_values: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::Contract(format!("selection exponent must be >= 0, got {p}")));
    }
    let mut max = 0.0f64;
    for &s in s_values {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Contract(format!("densities must be finite and >= 0, got {s}")));
        }
        max = max.max(s);
    }
    if max == 0.0 {
        return Err(Error::AllZeroDensity);
    }
    let mut out: Vec<f64> = s_values
        .iter()
        .map(|&s| {
            if s == 0.0 {
                0.0
            } else if p == 0.0 {
                1.0
            } else {
                (s / max).powf(p)
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    for f in &mut out {
        *f /= total;
    }
    Ok(out)
}

/// Apply the categorization regime to a token produced by `source`.
///
/// `u` is a uniform draw on `[0, 1)` that selects the claiming category by
/// cumulative probability. `probs` is ignored under `NoCompetition`.
pub fn classify(
    regime: Regime,
    source: usize,
    probs: &[f64],
    u: f64,
) -> Result<ClassificationOutcome> {
    if regime == Regime::NoCompetition {
        return Ok(ClassificationOutcome::Accept(source));
    }
    if source >= probs.len() {
        return Err(Error::Contract(format!(
            "source category {source} out of range for {} probabilities",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("probabilities must lie in [0,1] and sum to 1: {probs:?}")));
    }
    let claimant = draw_index(probs, u);
    Ok(match regime {
        Regime::PureCompetition => ClassificationOutcome::Accept(claimant),
        _ if claimant == source => ClassificationOutcome::Accept(source),
        _ => ClassificationOutcome::Discard,
    })
}

fn draw_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (c, &f) in probs.iter().enumerate() {
        if f > 0.0 {
            last_positive = c;
        }
        acc += f;
        if u < acc {
            return c;
        }
    }
    last_positive
}

/// Exact evaluation of `sum_i m_i exp(-kappa |y - y_i|)` in 1D in time
/// proportional to the number of occupied bins.
///
/// Points are binned at width `1/kappa`. For each bin `j` with centre `c_j`
/// the sums `L_j = sum m e^{kappa (y_i - c_j)}` and
/// `R_j = sum m e^{-kappa (y_i - c_j)}` are kept, so a bin entirely to the
/// left of `y` contributes `e^{-kappa (y - c_j)} L_j` and one to the right
/// contributes `e^{-kappa (c_j - y)} R_j`. Only the bin containing `y` is
/// summed point by point.
#[derive(Debug, Clone)]
pub struct ExpSumIndex {
    kappa: f64,
    width: f64,
    step: f64,
    first: i64,
    bins: Vec<ExpBin>,
}

#[derive(Debug, Clone, Default)]
struct ExpBin {
    left: f64,
    right: f64,
    members: Vec<(f64, f64)>,
}

impl ExpSumIndex {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, width: 1.0 / kappa, step: (-1.0f64).exp(), first: 0, bins: Vec::new() }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn clear(&mut self) {
        self.bins.clear();
    }

    #[inline]
    fn bin_of(&self, y: f64) -> i64 {
        (y / self.width).floor() as i64
    }

    #[inline]
    fn centre(&self, k: i64) -> f64 {
        (k as f64 + 0.5) * self.width
    }

    pub fn insert(&mut self, y: f64, mass: f64) {
        let k = self.bin_of(y);
        if self.bins.is_empty() {
            self.first = k;
            self.bins.push(ExpBin::default());
        } else if k < self.first {
            let grow = (self.first - k) as usize;
            self.bins.splice(0..0, std::iter::repeat_with(ExpBin::default).take(grow));
            self.first = k;
        } else if k >= self.first + self.bins.len() as i64 {
            let new_len = (k - self.first + 1) as usize;
            self.bins.resize_with(new_len, ExpBin::default);
        }
        let off = self.kappa * (y - self.centre(k));
        let bin = &mut self.bins[(k - self.first) as usize];
        bin.left += mass * off.exp();
        bin.right += mass * (-off).exp();
        bin.members.push((y, mass));
    }

    pub fn sum_at(&self, y: f64) -> f64 {
        if self.bins.is_empty() {
            return 0.0;
        }
        let k = self.bin_of(y);
        let last = self.first + self.bins.len() as i64 - 1;
        let mut total = 0.0;

        if k >= self.first && k <= last {
            for &(yi, m) in &self.bins[(k - self.first) as usize].members {
                total += m * (-self.kappa * (y - yi).abs()).exp();
            }
        }

        // Bins strictly left of y, nearest first.
        let start = (k - 1).min(last);
        if start >= self.first {
            let mut factor = (-self.kappa * (y - self.centre(start))).exp();
            let mut j = start;
            while j >= self.first && factor > 0.0 {
                total += factor * self.bins[(j - self.first) as usize].left;
                factor *= self.step;
                j -= 1;
            }
        }

        // Bins strictly right of y, nearest first.
        let start = (k + 1).max(self.first);
        if start <= last {
            let mut factor = (-self.kappa * (self.centre(start) - y)).exp();
            let mut j = start;
            while j <= last && factor > 0.0 {
                total += factor * self.bins[(j - self.first) as usize].right;
                factor *= self.step;
                j += 1;
            }
        }
        total
    }
}
