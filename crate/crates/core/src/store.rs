//! Per-category exemplar collection with lazy decay and weight-proportional
//! sampling.
//!
//! All exemplars decay at the same rate, so the ratio of any two weights is
//! constant in time. Each exemplar therefore carries a fixed sampling mass
//! `base_weight * exp(lambda * (birth_time - t_ref))`, and its weight at time
//! `t` is that mass times the common factor `exp(-lambda * (t - t_ref))`.
//! The reference time `t_ref` is moved forward whenever the store is
//! compacted, which keeps the masses bounded.

use rand::Rng;

use crate::categorization::{ExpSumIndex, SmoothingKernel};
use crate::error::{Error, Result};
use crate::model::{weight_at, Exemplar, PhonPoint};
use crate::sampling::FenwickTree;

// Masses are rebased before exp(lambda * age) could approach overflow.
const MAX_LOG_MASS: f64 = 300.0;

#[derive(Debug, Clone)]
pub struct CategoryStore {
    label: String,
    dim: usize,
    lambda: f64,
    exemplars: Vec<Exemplar>,
    masses: FenwickTree,
    t_ref: f64,
    mass_moment: [f64; 2],
    index: Option<ExpSumIndex>,
}

/// Outcome of one pruning pass over a store.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PruneReport {
    pub removed: usize,
    pub removed_weight: f64,
    pub weight_before: f64,
    /// Upper bound on the shift of the weighted mean caused by the removal:
    /// `eps / (1 - eps) * max_i |y_i - mean|` with `eps` the removed fraction.
    pub mean_shift_bound: f64,
}

impl PruneReport {
    pub fn removed_fraction(&self) -> f64 {
        if self.weight_before > 0.0 {
            self.removed_weight / self.weight_before
        } else {
            0.0
        }
    }
}

impl CategoryStore {
    pub fn new(label: impl Into<String>, dim: usize, lambda: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidParams(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            label: label.into(),
            dim,
            lambda,
            exemplars: Vec::new(),
            masses: FenwickTree::new(),
            t_ref: 0.0,
            mass_moment: [0.0; 2],
            index: None,
        })
    }

    /// Attach an exact 1D exponential-sum index so that smoothed densities
    /// cost O(occupied bins) instead of O(n). No effect in 2D.
    pub fn with_density_index(mut self, kappa: f64) -> Self {
        if self.dim == 1 {
            self.index = Some(ExpSumIndex::new(kappa));
            self.rebuild();
        }
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    #[inline]
    fn decay_since_ref(&self, t: f64) -> f64 {
        (-self.lambda * (t - self.t_ref)).exp()
    }

    pub fn insert(&mut self, e: Exemplar) -> Result<()> {
        e.position.check_dim(self.dim)?;
        if self.lambda * (e.birth_time - self.t_ref) > MAX_LOG_MASS {
            self.t_ref = e.birth_time;
            self.rebuild();
        }
        let mass = e.base_weight * (self.lambda * (e.birth_time - self.t_ref)).exp();
        self.masses.push(mass);
        self.mass_moment[0] += mass * e.position.get(0);
        self.mass_moment[1] += mass * e.position.get(1);
        if let Some(index) = &mut self.index {
            index.insert(e.position.x(), mass);
        }
        self.exemplars.push(e);
        Ok(())
    }

    /// Sum of live weights at `t`; zero for an empty store.
    pub fn total_activation(&self, t: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.masses.total() * self.decay_since_ref(t)
    }

    /// Weighted mean position, summed afresh over all exemplars.
    pub fn weighted_mean(&self, t: f64) -> Result<PhonPoint> {
        let origin = match self.exemplars.first() {
            Some(e) => e.position,
            None => return Err(Error::EmptyCategory(self.label.clone())),
        };
        // Offsets from the first exemplar keep coincident points exact.
        let mut total = 0.0;
        let mut acc = PhonPoint::zero(self.dim);
        for e in &self.exemplars {
            let w = weight_at(e, t, self.lambda)?;
            total += w;
            acc = acc + w * (e.position - origin);
        }
        if !(total > 0.0) {
            return Err(Error::EmptyCategory(self.label.clone()));
        }
        Ok(origin + (1.0 / total) * acc)
    }

    /// Weighted standard deviation about the weighted mean (Euclidean in 2D).
    pub fn dispersion(&self, t: f64) -> Result<f64> {
        let mean = self.weighted_mean(t)?;
        let mut total = 0.0;
        let mut acc = 0.0;
        for e in &self.exemplars {
            let w = weight_at(e, t, self.lambda)?;
            total += w;
            acc += w * (e.position - mean).norm_sq();
        }
        Ok((acc / total).sqrt())
    }

    /// Weighted mean maintained incrementally; constant between events since
    /// all weights share one decay factor. Refreshed exactly on every rebuild.
    pub fn running_mean(&self) -> Option<PhonPoint> {
        let total = self.masses.total();
        if self.is_empty() || !(total > 0.0) {
            return None;
        }
        let p = match self.dim {
            1 => PhonPoint::new1(self.mass_moment[0] / total),
            _ => PhonPoint::new2(self.mass_moment[0] / total, self.mass_moment[1] / total),
        };
        Some(p)
    }

    /// Draw an exemplar with probability proportional to its current weight.
    pub fn sample_parent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Exemplar> {
        let u: f64 = rng.gen();
        self.parent_at(u)
    }

    /// Exemplar selected by the uniform draw `u` in `[0, 1)`.
    pub fn parent_at(&self, u: f64) -> Result<&Exemplar> {
        let i = self
            .masses
            .find(u * self.masses.total())
            .ok_or_else(|| Error::CategoryExtinct(self.label.clone()))?;
        Ok(&self.exemplars[i])
    }

    /// `S(y)` at time `t`: the indexed path in 1D, direct summation otherwise.
    pub fn smoothed_density(&self, y: &PhonPoint, kernel: &SmoothingKernel, t: f64) -> Result<f64> {
        match &self.index {
            Some(index) if index.kappa() == kernel.kappa() && kernel.dim() == 1 => {
                y.check_dim(1)?;
                Ok(kernel.peak() * self.decay_since_ref(t) * index.sum_at(y.x()))
            }
            _ => crate::categorization::smoothed_density(self, y, kernel, t),
        }
    }

    /// Delete exemplars whose weight at `t` is below `min_weight` and rebase
    /// the sampling masses at `t`.
    pub fn prune(&mut self, t: f64, min_weight: f64) -> PruneReport {
        let mut report = PruneReport { weight_before: self.total_activation(t), ..Default::default() };
        let lambda = self.lambda;
        let weight = |e: &Exemplar| e.base_weight * (-lambda * (t - e.birth_time)).exp();
        if self.exemplars.iter().all(|e| weight(e) >= min_weight) {
            if self.lambda * (t - self.t_ref) > 1.0 {
                self.t_ref = t;
                self.rebuild();
            }
            return report;
        }
        let mean = self.running_mean();
        let mut max_offset = 0.0f64;
        let mut kept = Vec::with_capacity(self.exemplars.len());
        for e in self.exemplars.drain(..) {
            if let Some(m) = mean {
                max_offset = max_offset.max(e.position.dist(&m));
            }
            let w = weight(&e);
            if w >= min_weight {
                kept.push(e);
            } else {
                report.removed += 1;
                report.removed_weight += w;
            }
        }
        self.exemplars = kept;
        let eps = report.removed_fraction();
        report.mean_shift_bound = if eps < 1.0 { eps / (1.0 - eps) * max_offset } else { f64::INFINITY };
        self.t_ref = t;
        self.rebuild();
        report
    }

    fn rebuild(&mut self) {
        let lambda = self.lambda;
        let t_ref = self.t_ref;
        let masses: Vec<f64> = self
            .exemplars
            .iter()
            .map(|e| e.base_weight * (lambda * (e.birth_time - t_ref)).exp())
            .collect();
        self.mass_moment = [0.0; 2];
        for (e, &m) in self.exemplars.iter().zip(&masses) {
            self.mass_moment[0] += m * e.position.get(0);
            self.mass_moment[1] += m * e.position.get(1);
        }
        if let Some(index) = &mut self.index {
            index.clear();
            for (e, &m) in self.exemplars.iter().zip(&masses) {
                index.insert(e.position.x(), m);
            }
        }
        self.masses = FenwickTree::from_values(masses);
    }
}
