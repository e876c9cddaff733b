//! Event-driven simulation of the exemplar model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::analysis::{lattice_time, CategorySample, Diagnostics, RunEvent, Snapshot, Trajectory};
use crate::categorization::{
    classify, selection_probability, ClassificationOutcome, Regime, SmoothingKernel, ZeroDensityPolicy,
};
use crate::error::{Error, Result, RunFailure};
use crate::model::{CategoryInit, Exemplar, ModelParams, PhonPoint};
use crate::store::CategoryStore;

pub const DEFAULT_PRUNE_INTERVAL: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarRunConfig {
    pub params: ModelParams,
    pub dim: usize,
    pub categories: Vec<CategoryInit>,
    pub horizon: f64,
    pub sample_interval: f64,
    pub snapshot_times: Vec<f64>,
    /// Events between pruning passes.
    pub prune_interval: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Produced { parent: PhonPoint, position: PhonPoint, outcome: ClassificationOutcome },
    /// The drawn source category had no exemplars left.
    SourceExtinct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductionEvent {
    pub time: f64,
    pub source: usize,
    pub kind: EventKind,
}

/// `(1 - beta) z + alpha (mean - z) + sigma * noise`.
pub fn produce_position(z: &PhonPoint, mean: &PhonPoint, params: &ModelParams, noise: &PhonPoint) -> Result<PhonPoint> {
    let dim = z.dim();
    mean.check_dim(dim)?;
    noise.check_dim(dim)?;
    Ok((1.0 - params.beta) * *z + params.alpha * (*mean - *z) + params.sigma * *noise)
}

#[derive(Debug, Clone)]
pub struct ExemplarState {
    time: f64,
    params: ModelParams,
    stores: Vec<CategoryStore>,
    kernel: SmoothingKernel,
    rng: ChaCha8Rng,
    prune_interval: usize,
    since_prune: usize,
    extinct: Vec<bool>,
    diagnostics: Diagnostics,
    events: Vec<RunEvent>,
    densities: Vec<f64>,
}

impl ExemplarState {
    pub fn new(config: &ExemplarRunConfig) -> Result<Self> {
        let params = config.params.clone();
        params.validate()?;
        let k = config.categories.len();
        if k == 0 || params.rates.len() != k {
            return Err(Error::InvalidParams(format!(
                "{} rates for {k} categories",
                params.rates.len()
            )));
        }
        if config.prune_interval == 0 {
            return Err(Error::InvalidParams("prune_interval must be positive".into()));
        }
        let kernel = SmoothingKernel::new(params.kappa, config.dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stores = Vec::with_capacity(k);
        for ci in &config.categories {
            ci.position.check_dim(config.dim)?;
            let mut store = CategoryStore::new(ci.label.clone(), config.dim, params.lambda)?;
            if params.regime != Regime::NoCompetition {
                store = store.with_density_index(params.kappa);
            }
            let w = ci.weight.unwrap_or(params.w0);
            for _ in 0..ci.count {
                let mut pos = ci.position;
                if ci.spread > 0.0 {
                    pos = pos + ci.spread * gaussian(&mut rng, config.dim);
                }
                store.insert(Exemplar::new(pos, 0.0, w)?)?;
            }
            stores.push(store);
        }
        let extinct = stores.iter().map(|s| s.is_empty()).collect();
        Ok(Self {
            time: 0.0,
            params,
            stores,
            kernel,
            rng,
            prune_interval: config.prune_interval,
            since_prune: 0,
            extinct,
            diagnostics: Diagnostics { discards: vec![0; k], extinct_attempts: vec![0; k], ..Default::default() },
            events: Vec::new(),
            densities: vec![0.0; k],
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn stores(&self) -> &[CategoryStore] {
        &self.stores
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn all_extinct(&self) -> bool {
        self.stores.iter().all(|s| s.is_empty())
    }

    /// Advance to the next production event and carry it out.
    pub fn step(&mut self) -> Result<ProductionEvent> {
        let t = self.time + self.draw_wait();
        self.fire(t)
    }

    fn draw_wait(&mut self) -> f64 {
        let e: f64 = self.rng.sample(Exp1);
        e / self.params.total_rate()
    }

    fn fire(&mut self, t: f64) -> Result<ProductionEvent> {
        self.time = t;
        let source = self.draw_source();
        let kind = if self.stores[source].is_empty() {
            self.diagnostics.extinct_attempts[source] += 1;
            EventKind::SourceExtinct
        } else {
            let u_parent: f64 = self.rng.gen();
            let noise = gaussian(&mut self.rng, self.stores[source].dim());
            let u_class: f64 = self.rng.gen();
            let store = &self.stores[source];
            let parent = store.parent_at(u_parent)?.position;
            let mean = store.running_mean().ok_or_else(|| Error::EmptyCategory(store.label().to_string()))?;
            let position = produce_position(&parent, &mean, &self.params, &noise)?;
            let outcome = self.categorize(source, &position, u_class)?;
            match outcome {
                ClassificationOutcome::Accept(c) => {
                    self.stores[c].insert(Exemplar::new(position, t, self.params.w0)?)?;
                }
                ClassificationOutcome::Discard => self.diagnostics.discards[source] += 1,
            }
            EventKind::Produced { parent, position, outcome }
        };
        self.diagnostics.events += 1;
        self.since_prune += 1;
        if self.since_prune >= self.prune_interval {
            self.prune();
        }
        Ok(ProductionEvent { time: t, source, kind })
    }

    fn draw_source(&mut self) -> usize {
        let rates = &self.params.rates;
        let target = self.rng.gen::<f64>() * self.params.total_rate();
        let mut acc = 0.0;
        for (c, r) in rates.iter().enumerate() {
            acc += r;
            if target < acc {
                return c;
            }
        }
        rates.len() - 1
    }

    fn categorize(&mut self, source: usize, y: &PhonPoint, u: f64) -> Result<ClassificationOutcome> {
        let regime = self.params.regime;
        if regime == Regime::NoCompetition {
            return Ok(ClassificationOutcome::Accept(source));
        }
        for (c, store) in self.stores.iter().enumerate() {
            self.densities[c] = store.smoothed_density(y, &self.kernel, self.time)?;
        }
        match selection_probability(&self.densities, self.params.p) {
            Ok(probs) => classify(regime, source, &probs, u),
            Err(Error::AllZeroDensity) => {
                self.diagnostics.zero_density_events += 1;
                Ok(match self.params.zero_density {
                    ZeroDensityPolicy::AcceptSource => ClassificationOutcome::Accept(source),
                    ZeroDensityPolicy::Discard => ClassificationOutcome::Discard,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Delete exemplars lighter than `prune_ratio * w0` in every store.
    pub fn prune(&mut self) {
        self.since_prune = 0;
        let min_weight = self.params.prune_ratio * self.params.w0;
        for (c, store) in self.stores.iter_mut().enumerate() {
            let report = store.prune(self.time, min_weight);
            let d = &mut self.diagnostics;
            d.pruned_count += report.removed as u64;
            d.pruned_weight += report.removed_weight;
            d.max_prune_fraction = d.max_prune_fraction.max(report.removed_fraction());
            if report.mean_shift_bound.is_finite() {
                d.max_prune_mean_shift = d.max_prune_mean_shift.max(report.mean_shift_bound);
            }
            if store.is_empty() && !self.extinct[c] {
                self.extinct[c] = true;
                self.events.push(RunEvent::Extinction { time: self.time, category: store.label().to_string() });
            }
        }
    }

    /// Statistics of every category at `t >= time()`, assuming no event in
    /// between.
    pub fn sample_at(&self, t: f64) -> Vec<CategorySample> {
        self.stores
            .iter()
            .map(|s| CategorySample {
                mean: s.weighted_mean(t).ok(),
                dispersion: s.dispersion(t).ok(),
                activation: s.total_activation(t),
                live_count: s.len(),
            })
            .collect()
    }

    pub fn snapshot_at(&self, t: f64) -> Snapshot {
        let lambda = self.params.lambda;
        Snapshot::Exemplars {
            time: t,
            categories: self
                .stores
                .iter()
                .map(|s| {
                    s.exemplars()
                        .iter()
                        .map(|e| (e.position, e.base_weight * (-lambda * (t - e.birth_time)).exp()))
                        .collect()
                })
                .collect(),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> PhonPoint {
    let x: f64 = rng.sample(StandardNormal);
    if dim == 1 {
        PhonPoint::new1(x)
    } else {
        let y: f64 = rng.sample(StandardNormal);
        PhonPoint::new2(x, y)
    }
}

/// Sample times `0, d, 2d, ...` below `horizon`, then `horizon` itself.
pub(crate) fn sample_times(horizon: f64, interval: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = lattice_time(k, interval);
        if t >= horizon - 1e-9 * interval {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(horizon);
    times
}

/// Simulate to the horizon, recording statistics every `sample_interval`.
/// Stops early once every category is extinct.
pub fn run(config: &ExemplarRunConfig) -> std::result::Result<Trajectory, RunFailure> {
    let labels: Vec<String> = config.categories.iter().map(|c| c.label.clone()).collect();
    let mut traj = Trajectory::new(labels, config.dim);
    let fail = |traj: Trajectory, error: Error| RunFailure { error, partial: Box::new(traj) };
    if !(config.horizon >= 0.0 && config.horizon.is_finite()) {
        return Err(fail(traj, Error::InvalidParams(format!("horizon must be >= 0, got {}", config.horizon))));
    }
    if !(config.sample_interval > 0.0) {
        return Err(fail(
            traj,
            Error::InvalidParams(format!("sample_interval must be positive, got {}", config.sample_interval)),
        ));
    }
    if let Some(t) = config.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= config.horizon)) {
        return Err(fail(traj, Error::InvalidParams(format!("snapshot time {t} lies outside [0, horizon]"))));
    }
    let mut state = match ExemplarState::new(config) {
        Ok(s) => s,
        Err(e) => return Err(fail(traj, e)),
    };
    let samples = sample_times(config.horizon, config.sample_interval);
    let mut snaps = config.snapshot_times.clone();
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();
    let (mut next_sample, mut next_snap) = (0usize, 0usize);

    let finish = |traj: &mut Trajectory, state: &ExemplarState| {
        traj.events.extend(state.events.iter().cloned());
        traj.diagnostics = state.diagnostics.clone();
    };
    loop {
        let t_next = if state.all_extinct() { f64::INFINITY } else { state.time + state.draw_wait() };
        while next_snap < snaps.len() && snaps[next_snap] < t_next {
            traj.snapshots.push(state.snapshot_at(snaps[next_snap]));
            next_snap += 1;
        }
        while next_sample < samples.len() && samples[next_sample] < t_next {
            traj.push(samples[next_sample], state.sample_at(samples[next_sample]));
            next_sample += 1;
        }
        if state.all_extinct() {
            finish(&mut traj, &state);
            traj.events.push(RunEvent::AllExtinct { time: state.time });
            return Ok(traj);
        }
        if t_next > config.horizon {
            finish(&mut traj, &state);
            return Ok(traj);
        }
        if let Err(e) = state.fire(t_next) {
            finish(&mut traj, &state);
            traj.events.push(RunEvent::Failure { time: t_next, reason: e.to_string() });
            return Err(fail(traj, e));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(regime: Regime, rates: Vec<f64>) -> ModelParams {
        ModelParams {
            lambda: 1.0,
            rates,
            w0: 0.01,
            alpha: 0.0,
            beta: 0.1,
            sigma: 1.0,
            kappa: 10.0,
            p: 1.0,
            prune_ratio: 1e-3,
            regime,
            zero_density: ZeroDensityPolicy::AcceptSource,
        }
    }

    fn init(label: &str, x: f64, count: usize) -> CategoryInit {
        CategoryInit { label: label.into(), position: PhonPoint::new1(x), count, spread: 0.0, weight: None }
    }

    fn config(regime: Regime, cats: Vec<CategoryInit>, horizon: f64) -> ExemplarRunConfig {
        ExemplarRunConfig {
            params: params(regime, vec![100.0; cats.len()]),
            dim: 1,
            categories: cats,
            horizon,
            sample_interval: 1.0,
            snapshot_times: vec![],
            prune_interval: DEFAULT_PRUNE_INTERVAL,
            seed: 7,
        }
    }

    #[test]
    fn production_examples() {
        let mut p = params(Regime::NoCompetition, vec![1.0]);
        p.beta = 0.0;
        let z = PhonPoint::new1(10.0);
        let zero = PhonPoint::new1(0.0);
        assert_eq!(produce_position(&z, &PhonPoint::new1(-3.0), &p, &zero).unwrap().x(), 10.0);
        p.beta = 0.1;
        assert!((produce_position(&z, &zero, &p, &zero).unwrap().x() - 9.0).abs() < 1e-15);
        p.beta = 0.0;
        p.alpha = 0.5;
        let y = produce_position(&PhonPoint::new1(2.0), &PhonPoint::new1(4.0), &p, &zero).unwrap();
        assert!((y.x() - 3.0).abs() < 1e-15);
        assert!(produce_position(&z, &PhonPoint::new2(0.0, 0.0), &p, &zero).is_err());
    }

    #[test]
    fn zero_horizon_gives_initial_statistics() {
        let t = run(&config(Regime::NoCompetition, vec![init("A", 3.0, 10)], 0.0)).unwrap();
        assert_eq!(t.times, vec![0.0]);
        let s = t.sample(0, 0);
        assert_eq!(s.mean.unwrap().x(), 3.0);
        assert_eq!(s.live_count, 10);
        assert!((s.activation - 0.1).abs() < 1e-15);
    }

    #[test]
    fn no_competition_inserts_into_source() {
        let cfg = config(Regime::NoCompetition, vec![init("A", 0.0, 5), init("B", 10.0, 5)], 0.0);
        let mut st = ExemplarState::new(&cfg).unwrap();
        let mut produced = [0usize; 2];
        for _ in 0..200 {
            let ev = st.step().unwrap();
            if let EventKind::Produced { outcome, .. } = ev.kind {
                assert_eq!(outcome, ClassificationOutcome::Accept(ev.source));
                produced[ev.source] += 1;
            }
        }
        // 200 events < one prune interval, so nothing was removed
        assert_eq!(st.stores()[0].len(), 5 + produced[0]);
        assert_eq!(st.stores()[1].len(), 5 + produced[1]);
    }

    #[test]
    fn time_is_nondecreasing_and_same_seed_repeats() {
        let cfg = config(Regime::CompetitionWithDiscards, vec![init("A", 5.0, 50), init("B", 10.0, 50)], 0.0);
        let mut a = ExemplarState::new(&cfg).unwrap();
        let mut b = ExemplarState::new(&cfg).unwrap();
        let mut last = 0.0;
        for _ in 0..2000 {
            let ea = a.step().unwrap();
            assert_eq!(ea, b.step().unwrap());
            assert!(ea.time >= last);
            last = ea.time;
        }
    }

    #[test]
    fn discard_when_source_has_no_support() {
        // B holds one exemplar inside A's 200, so B's tokens are claimed by A
        // with probability 200/201 and discarded.
        let mut p = params(Regime::CompetitionWithDiscards, vec![1000.0, 1000.0]);
        p.beta = 0.0;
        p.sigma = 1e-6;
        let cfg = ExemplarRunConfig {
            params: p,
            dim: 1,
            categories: vec![init("A", 0.0, 200), init("B", 0.0, 1)],
            horizon: 0.0,
            sample_interval: 1.0,
            snapshot_times: vec![],
            prune_interval: DEFAULT_PRUNE_INTERVAL,
            seed: 3,
        };
        let mut st = ExemplarState::new(&cfg).unwrap();
        let mut b_events = 0;
        for _ in 0..400 {
            let ev = st.step().unwrap();
            if ev.source == 1 {
                b_events += 1;
            }
        }
        let discards = st.diagnostics().discards[1];
        assert!(b_events > 0);
        assert!(discards as f64 > 0.9 * b_events as f64, "{discards} of {b_events}");
    }

    #[test]
    fn activation_decays_exactly_between_events() {
        let cfg = config(Regime::NoCompetition, vec![init("A", 1.0, 30)], 0.0);
        let st = ExemplarState::new(&cfg).unwrap();
        let a1 = st.sample_at(0.5)[0].activation;
        let a2 = st.sample_at(1.25)[0].activation;
        assert!((a2 - a1 * (-0.75f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn steady_activation_near_mu_over_lambda() {
        let mut cfg = config(Regime::NoCompetition, vec![init("A", 0.0, 100)], 200.0);
        cfg.seed = 11;
        let t = run(&cfg).unwrap();
        let tail: Vec<f64> =
            t.times.iter().zip(&t.series[0]).filter(|(time, _)| **time >= 20.0).map(|(_, s)| s.activation).collect();
        let avg = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((avg - 1.0).abs() < 0.05, "{avg}");
        // expected live count bound nu ln(1/r) / lambda
        let bound = 100.0 * (1e3f64).ln();
        assert!(t.series[0].iter().all(|s| (s.live_count as f64) < 2.0 * bound));
    }

    #[test]
    fn pruning_respects_threshold() {
        let mut cfg = config(Regime::NoCompetition, vec![init("A", 0.0, 100)], 0.0);
        cfg.params.prune_ratio = 0.1;
        let mut st = ExemplarState::new(&cfg).unwrap();
        for _ in 0..3000 {
            st.step().unwrap();
        }
        st.prune();
        let t = st.time();
        for e in st.stores()[0].exemplars() {
            assert!(e.base_weight * (-(t - e.birth_time)).exp() >= 0.1 * 0.01);
        }
        assert!(st.diagnostics().pruned_count > 0);
    }

    #[test]
    fn samples_at_interval_and_horizon() {
        let mut cfg = config(Regime::NoCompetition, vec![init("A", 0.0, 10)], 2.5);
        cfg.snapshot_times = vec![1.0, 2.0];
        let t = run(&cfg).unwrap();
        assert_eq!(t.times, vec![0.0, 1.0, 2.0, 2.5]);
        assert_eq!(t.snapshots.len(), 2);
        assert_eq!(sample_times(1.0, 0.5), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn all_extinct_stops_early() {
        let mut cfg = config(Regime::NoCompetition, vec![init("A", 0.0, 0)], 5.0);
        cfg.categories[0].count = 0;
        let t = run(&cfg).unwrap();
        assert!(t.events.iter().any(|e| matches!(e, RunEvent::AllExtinct { .. })));
        assert_eq!(t.times, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(t.series[0][0].mean.is_none());
    }
}
