//! Method-of-lines integration of the field equations.

use crate::analysis::{lattice_time, CategorySample, RunEvent, Snapshot, Trajectory};
use crate::categorization::{Regime, ZeroDensityPolicy};
use crate::error::{Error, Result, RunFailure};
use crate::model::{CategoryInit, ModelParams, PhonPoint};

use super::convolve::{ConvolutionMethod, Convolver, Stencil};
use super::{integrate, moments, DensityField, Grid};

/// Real-axis stability limit of classical RK4.
const RK4_STABILITY: f64 = 2.785;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub fields: Vec<DensityField>,
}

impl FieldState {
    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.mass()).collect()
    }
}

/// Time derivatives of every category field plus the integrals that
/// enter the mass balance.
#[derive(Debug, Clone)]
pub struct RhsEval {
    pub derivatives: Vec<Vec<f64>>,
    /// `int P_c`; below `mu_c` only by what the kernel spreads off the grid.
    pub production_mass: Vec<f64>,
    /// Integral of the part of production that each category keeps.
    pub acceptance_mass: Vec<f64>,
    /// Categories whose mass is at or below the floor.
    pub extinct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Negative mass removed after the step.
    pub clipped: f64,
    /// Production mass lost past the grid during the step.
    pub leaked: f64,
    /// RK4 substeps taken to respect the stability bound.
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRunConfig {
    pub horizon: f64,
    pub dt: f64,
    pub sample_interval: f64,
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug)]
pub struct FieldEngine {
    grid: Grid,
    params: ModelParams,
    labels: Vec<String>,
    production: Convolver,
    smoothing: Convolver,
    weights: Vec<f64>,
    floors: Vec<f64>,
}

impl FieldEngine {
    pub fn new(grid: Grid, params: ModelParams, labels: Vec<String>, method: ConvolutionMethod) -> Result<Self> {
        params.validate()?;
        if params.rates.len() != labels.len() {
            return Err(Error::InvalidParams(format!(
                "{} rates for {} categories",
                params.rates.len(),
                labels.len()
            )));
        }
        if (1.0 - params.alpha - params.beta).abs() < 1e-12 {
            return Err(Error::InvalidParams(
                "alpha + beta = 1 collapses production onto a point; use the exemplar engine".into(),
            ));
        }
        let coarsest = (0..grid.dim()).map(|a| grid.spacing(a)).fold(0.0, f64::max);
        if params.sigma < 2.0 * coarsest {
            return Err(Error::InvalidParams(format!(
                "grid spacing {coarsest} is too coarse for production noise sigma = {}",
                params.sigma
            )));
        }
        let production = Convolver::new(grid, Stencil::gaussian(&grid, params.sigma), method);
        let smoothing = Convolver::new(grid, Stencil::exponential(&grid, params.kappa), method);
        let floors = (0..labels.len()).map(|c| 1e-12 * params.mu(c) / params.lambda).collect();
        Ok(Self { weights: grid.trapezoid_weights(), grid, params, labels, production, smoothing, floors })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Mass below which category `c` counts as extinct.
    pub fn mass_floor(&self, c: usize) -> f64 {
        self.floors[c]
    }

    /// Initial fields: a point mass per category, or a Gaussian bump when
    /// the category has a positive spread.
    pub fn initial_state(&self, inits: &[CategoryInit]) -> Result<FieldState> {
        if inits.len() != self.labels.len() {
            return Err(Error::Contract(format!(
                "{} initial conditions for {} categories",
                inits.len(),
                self.labels.len()
            )));
        }
        let fields = inits
            .iter()
            .map(|ci| {
                let mass = ci.initial_mass(self.params.w0);
                if ci.spread > 0.0 {
                    DensityField::gaussian(self.grid, &ci.position, ci.spread, mass)
                } else {
                    DensityField::point_mass(self.grid, &ci.position, mass)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldState { time: 0.0, fields })
    }

    /// Density of `rho` carried through `z -> (1 - alpha - beta) z + alpha * mean`.
    ///
    /// Each node's trapezoidal mass is deposited on the nodes around its
    /// image with linear weights, which keeps mass and first moment exact.
    pub fn pushforward(&self, rho: &DensityField, mean: &PhonPoint) -> Result<DensityField> {
        self.check_grid(rho)?;
        mean.check_dim(self.grid.dim())?;
        Ok(DensityField::from_raw(self.grid, self.pushforward_raw(rho.values(), mean)))
    }

    fn pushforward_raw(&self, rho: &[f64], mean: &PhonPoint) -> Vec<f64> {
        let g = &self.grid;
        let a = 1.0 - self.params.alpha - self.params.beta;
        let dim = g.dim();
        let [n0, n1] = g.points();
        let mut out = vec![0.0; g.len()];
        let locate = |axis: usize, x: f64| -> (usize, f64) {
            let s = (a * x + self.params.alpha * mean.get(axis) - g.lo(axis)) / g.spacing(axis);
            let last = (g.points()[axis] - 1) as f64;
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(g.points()[axis] - 2);
            (i, s - i as f64)
        };
        if dim == 1 {
            for (i, (&v, &w)) in rho.iter().zip(&self.weights).enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (j, f) = locate(0, g.coord(0, i));
                out[j] += v * w * (1.0 - f);
                out[j + 1] += v * w * f;
            }
        } else {
            let targets1: Vec<(usize, f64)> = (0..n1).map(|i1| locate(1, g.coord(1, i1))).collect();
            for i0 in 0..n0 {
                let (j0, f0) = locate(0, g.coord(0, i0));
                for i1 in 0..n1 {
                    let idx = i0 * n1 + i1;
                    let m = rho[idx] * self.weights[idx];
                    if m == 0.0 {
                        continue;
                    }
                    let (j1, f1) = targets1[i1];
                    out[j0 * n1 + j1] += m * (1.0 - f0) * (1.0 - f1);
                    out[j0 * n1 + j1 + 1] += m * (1.0 - f0) * f1;
                    out[(j0 + 1) * n1 + j1] += m * f0 * (1.0 - f1);
                    out[(j0 + 1) * n1 + j1 + 1] += m * f0 * f1;
                }
            }
        }
        for (v, w) in out.iter_mut().zip(&self.weights) {
            *v /= w;
        }
        out
    }

    /// Production density of a category with field `rho`, mean `mean` and
    /// mass production rate `mu`. Its integral is `mu` up to what the noise
    /// kernel spreads past the grid.
    pub fn production_term(&self, rho: &DensityField, mean: &PhonPoint, mu: f64) -> Result<DensityField> {
        self.check_grid(rho)?;
        mean.check_dim(self.grid.dim())?;
        let mass = rho.mass();
        let floor = 1e-12 * mu / self.params.lambda;
        if !(mass > floor) {
            return Err(Error::CategoryExtinct(format!("mass {mass} at or below floor {floor}")));
        }
        let pushed = self.pushforward_raw(rho.values(), mean);
        let mut p = self.production.apply(&pushed);
        let scale = mu / mass;
        for v in &mut p {
            *v = (*v * scale).max(0.0);
        }
        Ok(DensityField::from_raw(self.grid, p))
    }

    /// Exponential-kernel smoothing of `rho`, the continuum analogue of the
    /// exemplar smoothed density.
    pub fn smoothed_field(&self, rho: &DensityField) -> Result<DensityField> {
        self.check_grid(rho)?;
        let mut s = self.smoothing.apply(rho.values());
        for v in &mut s {
            *v = v.max(0.0);
        }
        Ok(DensityField::from_raw(self.grid, s))
    }

    fn check_grid(&self, rho: &DensityField) -> Result<()> {
        if rho.grid() != &self.grid {
            return Err(Error::Contract("field lives on a different grid than the engine".into()));
        }
        Ok(())
    }

    pub fn rhs(&self, state: &FieldState) -> Result<RhsEval> {
        let k = self.labels.len();
        if state.fields.len() != k {
            return Err(Error::Contract(format!("state has {} fields for {k} categories", state.fields.len())));
        }
        for f in &state.fields {
            self.check_grid(f)?;
        }
        self.rhs_raw(&state.fields.iter().map(|f| f.values()).collect::<Vec<_>>())
    }

    fn rhs_raw(&self, rho: &[&[f64]]) -> Result<RhsEval> {
        let k = rho.len();
        let n = self.grid.len();
        let lambda = self.params.lambda;
        let mut extinct = vec![false; k];
        let mut pushed: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut masses = vec![0.0; k];
        for c in 0..k {
            match moments(&self.grid, rho[c]) {
                Some((mass, mean, _)) if mass > self.floors[c] => {
                    masses[c] = mass;
                    pushed.push(self.pushforward_raw(rho[c], &mean));
                }
                _ => {
                    extinct[c] = true;
                    pushed.push(vec![0.0; n]);
                }
            }
        }
        let mut production = self.convolve_all(&self.production, &pushed.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
        for c in 0..k {
            let scale = if extinct[c] { 0.0 } else { self.params.mu(c) / masses[c] };
            for v in &mut production[c] {
                *v = (*v * scale).max(0.0);
            }
        }
        let production_mass: Vec<f64> = production.iter().map(|p| integrate(&self.grid, p)).collect();

        let acceptance = match self.params.regime {
            Regime::NoCompetition => production,
            regime => {
                let live: Vec<&[f64]> =
                    (0..k).map(|c| if extinct[c] { &[][..] } else { rho[c] }).collect();
                let smoothed = self.convolve_all(&self.smoothing, &live);
                self.allocate(regime, &production, &smoothed)
            }
        };
        let acceptance_mass: Vec<f64> = acceptance.iter().map(|a| integrate(&self.grid, a)).collect();
        let derivatives = acceptance
            .into_iter()
            .zip(rho)
            .map(|(mut a, r)| {
                for (d, v) in a.iter_mut().zip(r.iter()) {
                    *d -= lambda * v;
                }
                a
            })
            .collect();
        Ok(RhsEval { derivatives, production_mass, acceptance_mass, extinct })
    }

    /// Convolve every field, two per transform. Empty slices stand for
    /// zero fields.
    fn convolve_all(&self, conv: &Convolver, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let live: Vec<usize> = (0..inputs.len()).filter(|&c| !inputs[c].is_empty()).collect();
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); inputs.len()];
        for pair in live.chunks(2) {
            let (a, b) = conv.apply_pair(inputs[pair[0]], pair.get(1).map(|&c| inputs[c]));
            out[pair[0]] = a;
            if let (Some(&c), Some(b)) = (pair.get(1), b) {
                out[c] = b;
            }
        }
        for (o, inp) in out.iter_mut().zip(inputs) {
            if inp.is_empty() {
                *o = vec![0.0; n];
            } else {
                for v in o.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        out
    }

    /// Nodewise acceptance densities under a competitive regime.
    fn allocate(&self, regime: Regime, production: &[Vec<f64>], smoothed: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = production.len();
        let n = self.grid.len();
        let p = self.params.p;
        let fallback = self.params.zero_density == ZeroDensityPolicy::AcceptSource;
        let mut out = vec![vec![0.0; n]; k];
        let mut f = vec![0.0; k];
        for i in 0..n {
            let max = (0..k).fold(0.0f64, |m, c| m.max(smoothed[c][i]));
            if max == 0.0 {
                if fallback {
                    for c in 0..k {
                        out[c][i] = production[c][i];
                    }
                }
                continue;
            }
            let mut total = 0.0;
            for c in 0..k {
                let s = smoothed[c][i];
                f[c] = if s == 0.0 {
                    0.0
                } else if p == 1.0 {
                    s / max
                } else if p == 0.0 {
                    1.0
                } else {
                    (s / max).powf(p)
                };
                total += f[c];
            }
            match regime {
                Regime::PureCompetition => {
                    let pooled: f64 = (0..k).map(|c| production[c][i]).sum();
                    for c in 0..k {
                        out[c][i] = f[c] / total * pooled;
                    }
                }
                _ => {
                    for c in 0..k {
                        out[c][i] = f[c] / total * production[c][i];
                    }
                }
            }
        }
        out
    }

    /// Largest stable RK4 step estimated from the decay rate and the
    /// per-mass acceptance rates of an evaluated state.
    pub fn stability_bound(&self, masses: &[f64], eval: &RhsEval) -> f64 {
        let mut rate = self.params.lambda;
        let mut worst = 0.0f64;
        for c in 0..masses.len() {
            if !eval.extinct[c] && masses[c] > 0.0 {
                worst = worst.max(eval.acceptance_mass[c].max(0.0) / masses[c]);
            }
        }
        rate += worst;
        RK4_STABILITY / rate
    }

    /// One classical RK4 step of size `dt` followed by clipping of negative
    /// values. Does not subdivide.
    pub fn step(&self, state: &FieldState, dt: f64) -> Result<(FieldState, StepReport)> {
        let k1 = self.rhs(state)?;
        self.rk4(state, dt, k1)
    }

    /// Advance by `dt`, split into equal RK4 substeps no longer than half
    /// the estimated stability bound.
    pub fn advance(&self, state: &FieldState, dt: f64) -> Result<(FieldState, StepReport)> {
        let k1 = self.rhs(state)?;
        let bound = self.stability_bound(&state.masses(), &k1);
        let substeps = (dt / (0.5 * bound)).ceil().max(1.0) as usize;
        if substeps == 1 {
            return self.rk4(state, dt, k1);
        }
        let h = dt / substeps as f64;
        let (mut cur, mut report) = self.rk4(state, h, k1)?;
        for _ in 1..substeps {
            let (next, r) = self.step(&cur, h)?;
            report.clipped += r.clipped;
            report.leaked += r.leaked;
            cur = next;
        }
        report.substeps = substeps;
        cur.time = state.time + dt;
        Ok((cur, report))
    }

    fn rk4(&self, state: &FieldState, dt: f64, k1: RhsEval) -> Result<(FieldState, StepReport)> {
        let base: Vec<&[f64]> = state.fields.iter().map(|f| f.values()).collect();
        let stage = |k: &RhsEval, h: f64| -> Vec<Vec<f64>> {
            base.iter()
                .zip(&k.derivatives)
                .map(|(r, d)| r.iter().zip(d).map(|(x, y)| x + h * y).collect())
                .collect()
        };
        let s2 = stage(&k1, 0.5 * dt);
        let k2 = self.rhs_raw(&slices(&s2))?;
        let s3 = stage(&k2, 0.5 * dt);
        let k3 = self.rhs_raw(&slices(&s3))?;
        let s4 = stage(&k3, dt);
        let k4 = self.rhs_raw(&slices(&s4))?;

        let mut clipped = 0.0;
        let mut fields = Vec::with_capacity(base.len());
        for c in 0..base.len() {
            let mut v: Vec<f64> = Vec::with_capacity(base[c].len());
            for i in 0..base[c].len() {
                let d = k1.derivatives[c][i]
                    + 2.0 * (k2.derivatives[c][i] + k3.derivatives[c][i])
                    + k4.derivatives[c][i];
                let x = base[c][i] + dt / 6.0 * d;
                if !x.is_finite() {
                    return Err(Error::IntegrationFailure {
                        time: state.time,
                        reason: format!("non-finite density in category `{}`", self.labels[c]),
                    });
                }
                if x < 0.0 {
                    clipped -= x * self.weights[i];
                    v.push(0.0);
                } else {
                    v.push(x);
                }
            }
            fields.push(DensityField::from_raw(self.grid, v));
        }
        let mut leaked = 0.0;
        for c in 0..base.len() {
            if k1.extinct[c] {
                continue;
            }
            let produced = (k1.production_mass[c]
                + 2.0 * (k2.production_mass[c] + k3.production_mass[c])
                + k4.production_mass[c])
                / 6.0;
            leaked += dt * (self.params.mu(c) - produced);
        }
        Ok((FieldState { time: state.time + dt, fields }, StepReport { clipped, leaked, substeps: 1 }))
    }

    fn sample(&self, state: &FieldState) -> Vec<CategorySample> {
        state
            .fields
            .iter()
            .enumerate()
            .map(|(c, f)| match moments(&self.grid, f.values()) {
                Some((mass, mean, disp)) if mass > self.floors[c] => CategorySample {
                    mean: Some(mean),
                    dispersion: Some(disp),
                    activation: mass,
                    live_count: 0,
                },
                other => CategorySample {
                    mean: None,
                    dispersion: None,
                    activation: other.map_or(0.0, |m| m.0),
                    live_count: 0,
                },
            })
            .collect()
    }

    /// Integrate from `init` to the horizon in steps of `dt`, sampling
    /// moments every `sample_interval` and at the horizon.
    pub fn integrate(&self, init: FieldState, config: &FieldRunConfig) -> std::result::Result<Trajectory, RunFailure> {
        let mut traj = Trajectory::new(self.labels.clone(), self.grid.dim());
        let fail = |traj: Trajectory, error: Error| RunFailure { error, partial: Box::new(traj) };
        let plan = match self.schedule(config) {
            Ok(p) => p,
            Err(e) => return Err(fail(traj, e)),
        };
        let mut state = init;
        state.time = 0.0;
        let mut extinct = vec![false; self.labels.len()];
        let record = |traj: &mut Trajectory, state: &FieldState, step: usize, extinct: &mut Vec<bool>| {
            let samples = self.sample(state);
            for (c, s) in samples.iter().enumerate() {
                if s.mean.is_none() && !extinct[c] {
                    extinct[c] = true;
                    traj.events.push(RunEvent::Extinction { time: state.time, category: self.labels[c].clone() });
                }
            }
            if plan.samples.binary_search(&step).is_ok() {
                traj.push(state.time, samples);
            }
            if plan.snapshots.binary_search(&step).is_ok() {
                traj.snapshots.push(Snapshot::Field { time: state.time, fields: state.fields.clone() });
            }
        };
        record(&mut traj, &state, 0, &mut extinct);
        for step in 1..=plan.steps {
            match self.advance(&state, config.dt) {
                Ok((mut next, report)) => {
                    next.time = lattice_time(step as u64, config.dt);
                    let d = &mut traj.diagnostics;
                    d.events += 1;
                    d.clipped_mass += report.clipped;
                    d.leaked_mass += report.leaked;
                    let mass: f64 = next.masses().iter().sum();
                    if mass > 0.0 {
                        d.max_step_clip_fraction = d.max_step_clip_fraction.max(report.clipped / mass);
                    }
                    state = next;
                }
                Err(e) => {
                    let time = state.time;
                    traj.events.push(RunEvent::Failure { time, reason: e.to_string() });
                    traj.snapshots.push(Snapshot::Field { time, fields: state.fields.clone() });
                    return Err(fail(traj, e));
                }
            }
            record(&mut traj, &state, step, &mut extinct);
            if extinct.iter().all(|&x| x) {
                traj.events.push(RunEvent::AllExtinct { time: state.time });
                break;
            }
        }
        Ok(traj)
    }

    fn schedule(&self, config: &FieldRunConfig) -> Result<Schedule> {
        let dt = config.dt;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        if dt > 0.1 / self.params.lambda * (1.0 + 1e-12) {
            return Err(Error::InvalidParams(format!("dt = {dt} exceeds 0.1/lambda")));
        }
        if !(config.horizon >= 0.0 && config.horizon.is_finite()) {
            return Err(Error::InvalidParams(format!("horizon must be >= 0, got {}", config.horizon)));
        }
        if !(config.sample_interval > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sample_interval must be positive, got {}",
                config.sample_interval
            )));
        }
        let to_step = |t: f64, what: &str| -> Result<usize> {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(Error::InvalidParams(format!("{what} {t} is not a multiple of dt = {dt}")));
            }
            Ok(k as usize)
        };
        let steps = to_step(config.horizon, "horizon")?;
        let every = to_step(config.sample_interval, "sample_interval")?;
        let mut samples: Vec<usize> = (0..=steps).step_by(every.max(1)).collect();
        if samples.last() != Some(&steps) {
            samples.push(steps);
        }
        let mut snapshots = Vec::new();
        for &t in &config.snapshot_times {
            if t < 0.0 || t > config.horizon + 1e-9 {
                return Err(Error::InvalidParams(format!("snapshot time {t} lies outside [0, horizon]")));
            }
            snapshots.push(to_step(t, "snapshot time")?);
        }
        snapshots.sort_unstable();
        snapshots.dedup();
        Ok(Schedule { steps, samples, snapshots })
    }
}

fn slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

struct Schedule {
    steps: usize,
    samples: Vec<usize>,
    snapshots: Vec<usize>,
}
