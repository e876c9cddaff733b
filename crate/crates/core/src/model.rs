//! Shared domain types: phonetic points, exemplars, model parameters and
//! the closed-form equilibrium of the single-category model.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::categorization::{Regime, ZeroDensityPolicy};
use crate::error::{Error, Result};

/// A point in 1D or 2D phonetic space.
#[derive(Clone, Copy, PartialEq)]
pub struct PhonPoint {
    coords: [f64; 2],
    dim: u8,
}

impl PhonPoint {
    pub fn new1(x: f64) -> Self {
        Self { coords: [x, 0.0], dim: 1 }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Self { coords: [x, y], dim: 2 }
    }

    pub fn zero(dim: usize) -> Self {
        Self { coords: [0.0; 2], dim: dim as u8 }
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        let p = match coords {
            [x] => Self::new1(*x),
            [x, y] => Self::new2(*x, *y),
            _ => {
                return Err(Error::InvalidParams(format!(
                    "phonetic points have 1 or 2 coordinates, got {}",
                    coords.len()
                )))
            }
        };
        if !p.is_finite() {
            return Err(Error::InvalidParams(format!("non-finite coordinates {coords:?}")));
        }
        Ok(p)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> f64 {
        self.coords[axis]
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.coords[0] * self.coords[0] + self.coords[1] * self.coords[1]
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist(&self, other: &PhonPoint) -> f64 {
        (*self - *other).norm()
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, got: self.dim() });
        }
        Ok(())
    }
}

// Unused trailing coordinate is kept at zero, so the arithmetic below never
// has to branch on the dimension.
impl Add for PhonPoint {
    type Output = PhonPoint;
    #[inline]
    fn add(self, rhs: PhonPoint) -> PhonPoint {
        PhonPoint {
            coords: [self.coords[0] + rhs.coords[0], self.coords[1] + rhs.coords[1]],
            dim: self.dim,
        }
    }
}

impl Sub for PhonPoint {
    type Output = PhonPoint;
    #[inline]
    fn sub(self, rhs: PhonPoint) -> PhonPoint {
        PhonPoint {
            coords: [self.coords[0] - rhs.coords[0], self.coords[1] - rhs.coords[1]],
            dim: self.dim,
        }
    }
}

impl Mul<PhonPoint> for f64 {
    type Output = PhonPoint;
    #[inline]
    fn mul(self, rhs: PhonPoint) -> PhonPoint {
        PhonPoint { coords: [self * rhs.coords[0], self * rhs.coords[1]], dim: rhs.dim }
    }
}

impl fmt::Debug for PhonPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for PhonPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            1 => write!(f, "{}", self.coords[0]),
            _ => write!(f, "({}, {})", self.coords[0], self.coords[1]),
        }
    }
}

/// A stored token. Weight decays from `base_weight` at `birth_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exemplar {
    pub position: PhonPoint,
    pub birth_time: f64,
    pub base_weight: f64,
}

impl Exemplar {
    pub fn new(position: PhonPoint, birth_time: f64, base_weight: f64) -> Result<Self> {
        if !(base_weight > 0.0 && base_weight.is_finite()) {
            return Err(Error::InvalidParams(format!("base weight must be positive, got {base_weight}")));
        }
        if !position.is_finite() || !birth_time.is_finite() {
            return Err(Error::InvalidParams("exemplar position and birth time must be finite".into()));
        }
        Ok(Self { position, birth_time, base_weight })
    }
}

/// Weight of `e` at time `t` under exponential decay at rate `lambda`.
pub fn weight_at(e: &Exemplar, t: f64, lambda: f64) -> Result<f64> {
    if t < e.birth_time {
        return Err(Error::BeforeBirth { t, birth: e.birth_time });
    }
    Ok(e.base_weight * (-lambda * (t - e.birth_time)).exp())
}

/// Equilibrium dispersion of the one-category field model,
/// `sigma / sqrt(1 - (1 - (alpha + beta))^2)`.
///
/// Only `alpha + beta` enters, and it is formed first so that parameter
/// pairs with equal sums give bit-identical results.
pub fn equilibrium_dispersion(alpha: f64, beta: f64, sigma: f64) -> Result<f64> {
    let pull = alpha + beta;
    if !(pull > 0.0 && pull < 2.0) {
        return Err(Error::NoEquilibrium(pull));
    }
    let contraction = 1.0 - pull;
    Ok(sigma / (1.0 - contraction * contraction).sqrt())
}

/// Rate and shape constants of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Weight decay rate.
    pub lambda: f64,
    /// Production rate of each category, in category order.
    pub rates: Vec<f64>,
    /// Weight of a newly stored exemplar.
    pub w0: f64,
    /// Entrenchment (pull toward the category mean).
    pub alpha: f64,
    /// Lenition (pull toward the origin).
    pub beta: f64,
    /// Production noise.
    pub sigma: f64,
    /// Smoothing rate of the classification kernel.
    pub kappa: f64,
    /// Selection exponent.
    pub p: f64,
    /// Exemplars lighter than `prune_ratio * w0` are deleted.
    pub prune_ratio: f64,
    pub regime: Regime,
    pub zero_density: ZeroDensityPolicy,
}

impl ModelParams {
    /// Mass production rate `mu_c = w0 * nu_c` of category `c`.
    pub fn mu(&self, c: usize) -> f64 {
        self.w0 * self.rates[c]
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn equilibrium_dispersion(&self) -> Result<f64> {
        equilibrium_dispersion(self.alpha, self.beta, self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} must be a positive finite number, got {v}")))
            }
        }
        fn nonneg(name: &str, v: f64) -> Result<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} must be a nonnegative finite number, got {v}")))
            }
        }
        positive("lambda", self.lambda)?;
        positive("w0", self.w0)?;
        positive("sigma", self.sigma)?;
        positive("kappa", self.kappa)?;
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("p", self.p)?;
        if self.rates.is_empty() {
            return Err(Error::InvalidParams("at least one category rate is required".into()));
        }
        for (c, &r) in self.rates.iter().enumerate() {
            positive(&format!("rate of category {c}"), r)?;
        }
        if self.alpha + self.beta >= 2.0 {
            return Err(Error::InvalidParams(format!(
                "alpha + beta must be < 2 for a finite equilibrium dispersion, got {}",
                self.alpha + self.beta
            )));
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio < 1.0) {
            return Err(Error::InvalidParams(format!(
                "prune_ratio must lie in (0, 1), got {}",
                self.prune_ratio
            )));
        }
        Ok(())
    }
}

/// Initial condition of one category, shared by both engines.
///
/// The exemplar engine creates `count` exemplars at `position` (scattered by a
/// Gaussian of standard deviation `spread` when positive); the field engine
/// deposits the same total mass as a point mass or Gaussian bump.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryInit {
    pub label: String,
    pub position: PhonPoint,
    pub count: usize,
    pub spread: f64,
    /// Base weight of the initial exemplars; `w0` when absent.
    pub weight: Option<f64>,
}

impl CategoryInit {
    pub fn initial_mass(&self, w0: f64) -> f64 {
        self.count as f64 * self.weight.unwrap_or(w0)
    }
}
