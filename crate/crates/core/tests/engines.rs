use exdyn::analysis::{compare_models, Snapshot, Trajectory};
use exdyn::categorization::{Regime, ZeroDensityPolicy};
use exdyn::exemplar;
use exdyn::field::{ConvolutionMethod, DensityField, FieldEngine, FieldRunConfig, FieldState, Grid};
use exdyn::model::{equilibrium_dispersion, weight_at, Exemplar};
use exdyn::run::{replicate_seed, run_field, run_replicate};
use exdyn::scenario::preset;
use exdyn::store::CategoryStore;
use exdyn::{CategoryInit, ModelParams, PhonPoint};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn params(rates: Vec<f64>, regime: Regime) -> ModelParams {
    ModelParams {
        lambda: 1.0,
        rates,
        w0: 1e-3,
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

fn init(label: &str, x: f64, spread: f64) -> CategoryInit {
    CategoryInit { label: label.into(), position: PhonPoint::new1(x), count: 1000, spread, weight: None }
}

fn store_with(weights: &[f64]) -> CategoryStore {
    let mut s = CategoryStore::new("A", 1, 1.0).unwrap();
    for (i, &w) in weights.iter().enumerate() {
        s.insert(Exemplar::new(PhonPoint::new1(i as f64), 0.0, w).unwrap()).unwrap();
    }
    s
}

fn draw_counts(store: &CategoryStore, draws: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; store.len()];
    for _ in 0..draws {
        counts[store.sample_parent(&mut rng).unwrap().position.x() as usize] += 1;
    }
    counts
}

#[test]
fn single_exemplar_is_always_the_parent() {
    assert_eq!(draw_counts(&store_with(&[0.3]), 1000, 1), vec![1000]);
}

#[test]
fn equal_pair_passes_chi_square() {
    let n = 100_000;
    let c = draw_counts(&store_with(&[1.0, 1.0]), n, 2);
    let e = n as f64 / 2.0;
    let stat: f64 = c.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    assert!(stat < ChiSquared::new(1.0).unwrap().inverse_cdf(0.999), "chi2 = {stat}");
}

#[test]
fn frequencies_follow_weights() {
    let n = 100_000;
    let c = draw_counts(&store_with(&[1.0, 2.0, 7.0]), n, 3);
    for (count, p) in c.iter().zip([0.1, 0.2, 0.7]) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*count as f64 / n as f64 - p).abs() < 3.0 * se, "{c:?}");
    }
}

proptest! {
    #[test]
    fn weight_ratios_are_constant_in_time(b1 in 0.0..10.0f64, b2 in 0.0..10.0f64, w1 in 1e-3..1.0f64, w2 in 1e-3..1.0f64, dt in 0.0..20.0f64) {
        let e1 = Exemplar::new(PhonPoint::new1(0.0), b1, w1).unwrap();
        let e2 = Exemplar::new(PhonPoint::new1(0.0), b2, w2).unwrap();
        let t = b1.max(b2);
        let r0 = weight_at(&e1, t, 1.0).unwrap() / weight_at(&e2, t, 1.0).unwrap();
        let r1 = weight_at(&e1, t + dt, 1.0).unwrap() / weight_at(&e2, t + dt, 1.0).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-9 * r0.abs());
    }

    #[test]
    fn statistics_ignore_common_weight_scale(xs in prop::collection::vec((-50.0..50.0f64, 1e-3..1.0f64), 1..40), scale in 1e-3..1e3f64) {
        let build = |k: f64| {
            let mut s = CategoryStore::new("A", 1, 1.0).unwrap();
            for &(x, w) in &xs {
                s.insert(Exemplar::new(PhonPoint::new1(x), 0.0, w * k).unwrap()).unwrap();
            }
            s
        };
        let (a, b) = (build(1.0), build(scale));
        let (ma, mb) = (a.weighted_mean(1.0).unwrap().x(), b.weighted_mean(1.0).unwrap().x());
        prop_assert!((ma - mb).abs() <= 1e-9 * (1.0 + ma.abs()));
        let (da, db) = (a.dispersion(1.0).unwrap(), b.dispersion(1.0).unwrap());
        prop_assert!((da - db).abs() <= 1e-9 * (1.0 + da));
    }

    #[test]
    fn dispersion_formula_depends_on_the_sum(a in 0.0..1.5f64, b in 0.0..0.4f64, sigma in 0.1..5.0f64) {
        let total = a + b;
        let d1 = equilibrium_dispersion(a, b, sigma).unwrap();
        let d2 = equilibrium_dispersion(total, 0.0, sigma).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-12 * d1);
    }
}

#[test]
fn live_count_stays_below_twice_the_lifetime_bound() {
    let s = preset("fig1").unwrap();
    let traj = run_replicate(&s, replicate_seed(11, 0)).unwrap();
    let bound = s.params.rates[0] * (1.0 / s.params.prune_ratio).ln() / s.params.lambda;
    let max = traj.series[0].iter().map(|x| x.live_count).max().unwrap();
    assert!((max as f64) < 2.0 * bound, "max live count {max}, bound {bound}");
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn at(traj: &Trajectory, c: usize, t: f64) -> (f64, f64) {
    let s = traj.sample(c, traj.nearest(t).unwrap());
    (s.mean.unwrap().x(), s.dispersion.unwrap())
}

#[test]
fn fig1_field_agrees_with_exemplar_replicates() {
    let ex = preset("fig1").unwrap();
    let field = run_field(&preset("fig1_field").unwrap()).unwrap();
    let reps: Vec<Trajectory> = (0..20).map(|k| run_replicate(&ex, replicate_seed(1, k)).unwrap()).collect();
    let (fm, fd) = at(&field, 0, 20.0);
    let means: Vec<f64> = reps.iter().map(|r| at(r, 0, 20.0).0).collect();
    let disps: Vec<f64> = reps.iter().map(|r| at(r, 0, 20.0).1).collect();
    for (v, f) in [(means, fm), (disps, fd)] {
        let (m, sd) = mean_sd(&v);
        let se = sd / (v.len() as f64).sqrt();
        assert!((m - f).abs() < 3.0 * se, "replicates {m} +- {se}, field {f}");
    }
    let d = compare_models(&reps[0], &field, 20.0).unwrap();
    assert!(d[0].activation < 0.5);
    assert!((fd - equilibrium_dispersion(0.0, 0.1, 1.0).unwrap()).abs() < 0.1);
}

#[test]
fn fig2_exemplar_categories_separate_with_a_trough() {
    let s = preset("fig2_exemplar").unwrap();
    let traj = run_replicate(&s, replicate_seed(2, 0)).unwrap();
    let (ma, _) = at(&traj, 0, 100.0);
    let (mb, _) = at(&traj, 1, 100.0);
    assert!(mb - ma > 2.0, "means {ma} {mb}");
    let snap = traj.snapshots.iter().find(|s| s.time() == 100.0).expect("snapshot at 100");
    let Snapshot::Exemplars { categories, .. } = snap else { panic!("wrong snapshot kind") };
    let lo = ma.floor() - 6.0;
    let mut hist = vec![0.0; 20 + (mb - ma).ceil() as usize];
    for cat in categories {
        for (p, w) in cat {
            let b = (p.x() - lo).floor();
            if b >= 0.0 && (b as usize) < hist.len() {
                hist[b as usize] += w;
            }
        }
    }
    let bin = |x: f64| (x - lo).floor() as usize;
    let (ia, ib) = (bin(ma), bin(mb));
    let trough = hist[ia..=ib].iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(trough < 0.75 * hist[ia].min(hist[ib]), "hist {hist:?}");
}

fn small_grid() -> Grid {
    Grid::new_1d(-20.0, 20.0, 512).unwrap()
}

#[test]
fn pure_decay_matches_exponential() {
    let mut p = params(vec![1e-9], Regime::NoCompetition);
    p.w0 = 1e-3;
    let engine = FieldEngine::new(small_grid(), p, vec!["A".into()], ConvolutionMethod::Auto).unwrap();
    let state = engine.initial_state(&[CategoryInit { weight: Some(1e-3), ..init("A", 1.0, 1.0) }]).unwrap();
    let m0 = state.masses()[0];
    let traj = engine
        .integrate(state, &FieldRunConfig { horizon: 5.0, dt: 0.01, sample_interval: 1.0, snapshot_times: vec![] })
        .unwrap();
    let m = traj.series[0].last().unwrap().activation;
    let expect = m0 * (-5.0f64).exp();
    assert!(((m - expect) / expect).abs() < 1e-8, "{m} vs {expect}");
}

#[test]
fn no_competition_production_mass_is_mu_on_default_grid() {
    let s = preset("fig3_nocomp").unwrap();
    let engine = FieldEngine::new(s.field_grid().unwrap(), s.params.clone(), s.labels(), ConvolutionMethod::Auto).unwrap();
    let state = engine.initial_state(&s.categories).unwrap();
    let eval = engine.rhs(&state).unwrap();
    for c in 0..2 {
        let mu = s.params.mu(c);
        assert!(((eval.acceptance_mass[c] - mu) / mu).abs() < 1e-6);
    }
}

#[test]
fn default_grid_run_clips_negligibly() {
    let traj = run_field(&preset("fig1_field").unwrap()).unwrap();
    assert!(traj.diagnostics.max_step_clip_fraction < 1e-8, "{:?}", traj.diagnostics);
    assert!(traj.diagnostics.leaked_mass.abs() < 1e-6);
}

#[test]
fn large_kappa_means_no_smoothing() {
    let mut p = params(vec![1.0], Regime::PureCompetition);
    p.kappa = 1e4;
    let engine = FieldEngine::new(small_grid(), p, vec!["A".into()], ConvolutionMethod::Direct).unwrap();
    let rho = DensityField::gaussian(small_grid(), &PhonPoint::new1(2.0), 1.5, 1.0).unwrap();
    let s = engine.smoothed_field(&rho).unwrap();
    let peak = rho.values().iter().cloned().fold(0.0, f64::max);
    for (a, b) in s.values().iter().zip(rho.values()) {
        assert!((a - b).abs() < 1e-3 * peak);
    }
}

#[test]
fn rhs_commutes_with_translation_without_lenition() {
    let mut p = params(vec![1.0], Regime::NoCompetition);
    p.beta = 0.0;
    let grid = small_grid();
    let engine = FieldEngine::new(grid, p, vec!["A".into()], ConvolutionMethod::Auto).unwrap();
    let shift = 40;
    let h = grid.spacing(0);
    let make = |x0: f64| FieldState {
        time: 0.0,
        fields: vec![DensityField::from_fn(grid, |y| {
            let r = y.x() - x0;
            (-r * r / 2.0).exp() * (1.0 + 0.3 * (1.3 * r).sin())
        })],
    };
    let a = engine.rhs(&make(-3.0)).unwrap();
    let b = engine.rhs(&make(-3.0 + shift as f64 * h)).unwrap();
    let (da, db) = (&a.derivatives[0], &b.derivatives[0]);
    let scale = da.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 100..400 {
        assert!((da[i] - db[i + shift]).abs() < 1e-10 * scale, "node {i}");
    }
}

#[test]
fn single_category_approaches_equilibrium_monotonically() {
    let engine =
        FieldEngine::new(small_grid(), params(vec![1000.0], Regime::NoCompetition), vec!["A".into()], ConvolutionMethod::Auto)
            .unwrap();
    let state = engine.initial_state(&[init("A", 3.0, 0.5)]).unwrap();
    let traj = engine
        .integrate(state, &FieldRunConfig { horizon: 40.0, dt: 0.02, sample_interval: 0.5, snapshot_times: vec![] })
        .unwrap();
    let s = equilibrium_dispersion(0.0, 0.1, 1.0).unwrap();
    let series = &traj.series[0];
    let start = traj.times.iter().position(|&t| t >= 2.0).unwrap();
    // The grid's own equilibrium dispersion sits about 1e-3 above s.
    let grid_offset = 2e-3;
    for k in start + 1..series.len() {
        let (prev, cur) = (&series[k - 1], &series[k]);
        assert!(cur.mean.unwrap().x().abs() <= prev.mean.unwrap().x().abs() + 1e-12);
        let (dp, dc) = ((prev.dispersion.unwrap() - s).abs(), (cur.dispersion.unwrap() - s).abs());
        assert!(dc <= dp + 1e-12 || dc < grid_offset, "t={}", traj.times[k]);
    }
    let last = series.last().unwrap();
    assert!((last.dispersion.unwrap() - s).abs() < grid_offset);
    assert!(last.mean.unwrap().x().abs() < 3.0 * (-0.1f64 * 40.0).exp() + 1e-3);
}

#[test]
fn exemplar_snapshot_weights_sum_to_activation() {
    let s = preset("fig2_exemplar").unwrap();
    let mut cfg = s.exemplar_config(5);
    cfg.horizon = 10.0;
    cfg.snapshot_times = vec![10.0];
    let traj = exemplar::run(&cfg).unwrap();
    let Snapshot::Exemplars { categories, .. } = &traj.snapshots[0] else { panic!() };
    for (c, cat) in categories.iter().enumerate() {
        let total: f64 = cat.iter().map(|(_, w)| w).sum();
        let act = traj.series[c].last().unwrap().activation;
        assert!((total - act).abs() < 1e-9 * act.max(1e-12));
    }
}
