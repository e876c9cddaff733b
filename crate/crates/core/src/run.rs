//! Running scenarios: replicate seeding, parallel execution and artifacts.
//!
//! For a run named `N` the output directory receives
//!
//! - `N.rK.traj.csv` per exemplar replicate `K` (`N.traj.csv` for the field
//!   engine),
//! - one snapshot file per category and snapshot time,
//!   `N[.rK].tT.LABEL.snap.csv` or `N.tT.LABEL.field.txt`,
//! - `N.manifest.json` with the resolved scenario, seeds and diagnostics.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::analysis::{Diagnostics, RunEvent, Trajectory};
use crate::error::{Error, Result, RunFailure};
use crate::exemplar;
use crate::field::{ConvolutionMethod, FieldEngine};
use crate::output::{snapshot_files, trajectory_csv, write_atomic};
use crate::scenario::{EngineKind, Scenario};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "EXDYN_OUT";

/// splitmix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `k`: `splitmix64(master + 0x9E3779B97F4A7C15 * (k + 1))`.
pub fn replicate_seed(master: u64, k: usize) -> u64 {
    splitmix64(master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1)))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub replicates: usize,
    /// Overrides the scenario's master seed.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { replicates: 1, seed: None, out_dir: PathBuf::from("."), jobs: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: Option<u64>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trajectory: String,
    pub snapshots: Vec<String>,
    pub diagnostics: Diagnostics,
    pub events: Vec<RunEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub name: String,
    pub engine: &'static str,
    pub master_seed: Option<u64>,
    pub seed_mixing: &'static str,
    pub status: &'static str,
    pub replicates: Vec<ReplicateRecord>,
    /// The resolved scenario, loadable as a scenario file.
    pub scenario: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.manifest.status != "ok"
    }
}

fn fmt_time(t: f64) -> String {
    t.to_string()
}

/// Run a single replicate in memory.
pub fn run_replicate(scenario: &Scenario, seed: u64) -> std::result::Result<Trajectory, RunFailure> {
    exemplar::run(&scenario.exemplar_config(seed))
}

/// Run the field engine in memory.
pub fn run_field(scenario: &Scenario) -> std::result::Result<Trajectory, RunFailure> {
    let labels = scenario.labels();
    let empty = |e: Error| RunFailure { error: e, partial: Box::new(Trajectory::new(labels.clone(), scenario.dimension)) };
    let grid = scenario.field_grid().map_err(empty)?;
    let engine = FieldEngine::new(grid, scenario.params.clone(), labels.clone(), ConvolutionMethod::Auto).map_err(empty)?;
    let init = engine.initial_state(&scenario.categories).map_err(empty)?;
    engine.integrate(init, &scenario.field_config())
}

/// Execute a scenario and write its artifacts. Engine failures still write
/// partial outputs and a manifest marked failed; only invalid options and
/// I/O problems return `Err`.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary> {
    scenario.validate()?;
    if opts.replicates == 0 {
        return Err(Error::Scenario("at least one replicate is required".into()));
    }
    let mut resolved = scenario.clone();
    if let Some(seed) = opts.seed {
        resolved.seed = Some(seed);
        resolved.validate()?;
    }
    if resolved.engine == EngineKind::Field && opts.replicates > 1 {
        return Err(Error::Scenario("the field engine is deterministic; run it with one replicate".into()));
    }
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::Io(format!("{}: {e}", opts.out_dir.display())))?;
    let name = resolved.name.clone();

    let results: Vec<(Option<u64>, std::result::Result<Trajectory, RunFailure>)> = match resolved.engine {
        EngineKind::Field => vec![(None, run_field(&resolved))],
        EngineKind::Exemplar => {
            let master = resolved.seed.expect("validated");
            let seeds: Vec<u64> = (0..opts.replicates).map(|k| replicate_seed(master, k)).collect();
            let slots: Vec<Mutex<Option<std::result::Result<Trajectory, RunFailure>>>> =
                (0..seeds.len()).map(|_| Mutex::new(None)).collect();
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..opts.jobs.clamp(1, seeds.len()) {
                    scope.spawn(|| loop {
                        let k = next.fetch_add(1, Ordering::SeqCst);
                        if k >= seeds.len() {
                            break;
                        }
                        let r = run_replicate(&resolved, seeds[k]);
                        *slots[k].lock().unwrap() = Some(r);
                    });
                }
            });
            seeds
                .into_iter()
                .zip(slots)
                .map(|(s, slot)| (Some(s), slot.into_inner().unwrap().expect("every replicate ran")))
                .collect()
        }
    };

    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    for (k, (seed, result)) in results.into_iter().enumerate() {
        let stem = match resolved.engine {
            EngineKind::Field => name.clone(),
            EngineKind::Exemplar => format!("{name}.r{k}"),
        };
        let (traj, error) = match result {
            Ok(t) => (t, None),
            Err(f) => (*f.partial, Some(f.error.to_string())),
        };
        let traj_file = format!("{stem}.traj.csv");
        write_atomic(&opts.out_dir.join(&traj_file), trajectory_csv(&traj).as_bytes())?;
        let mut snaps = Vec::new();
        for (time, label, ext, body) in snapshot_files(&traj) {
            let file = format!("{stem}.t{}.{label}.{ext}", fmt_time(time));
            write_atomic(&opts.out_dir.join(&file), body.as_bytes())?;
            snaps.push(file);
        }
        records.push(ReplicateRecord {
            index: k,
            seed,
            status: if error.is_some() { "failed" } else { "ok" },
            error,
            trajectory: traj_file,
            snapshots: snaps,
            diagnostics: traj.diagnostics.clone(),
            events: traj.events.clone(),
        });
        trajectories.push(traj);
    }
    let status = if records.iter().all(|r| r.error.is_none()) { "ok" } else { "failed" };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        name: name.clone(),
        engine: resolved.engine.name(),
        master_seed: resolved.seed,
        seed_mixing: "splitmix64(master + 0x9E3779B97F4A7C15 * (k + 1))",
        status,
        replicates: records,
        scenario: resolved.to_toml(),
    };
    let manifest_path = opts.out_dir.join(format!("{name}.manifest.json"));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&manifest_path, json.as_bytes())?;
    Ok(RunSummary { manifest_path, manifest, trajectories })
}

/// Output directory: explicit choice, then the environment variable, then
/// the scenario's own setting, then the working directory.
pub fn resolve_out_dir(explicit: Option<&Path>, scenario: &Scenario) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    scenario.output.as_ref().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_seeds_differ_and_repeat() {
        let a: Vec<u64> = (0..5).map(|k| replicate_seed(1, k)).collect();
        let b: Vec<u64> = (0..5).map(|k| replicate_seed(1, k)).collect();
        assert_eq!(a, b);
        let mut uniq = a.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);
        assert_ne!(replicate_seed(2, 0), a[0]);
    }

    #[test]
    fn splitmix_reference_value() {
        // First output of the reference splitmix64 generator seeded with 0.
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0xE220_A839_7B1D_CDAF);
    }
}
