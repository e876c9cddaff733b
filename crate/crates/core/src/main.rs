use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use exdyn::analysis::{compare_models, count_peaks, merger_verdict, MergerVerdict, VerdictThresholds};
use exdyn::field::DensityField;
use exdyn::output::{parse_field_snapshot, parse_trajectory_csv, write_atomic};
use exdyn::run::{resolve_out_dir, run_scenario, RunOptions, OUT_DIR_ENV};
use exdyn::scenario::{load_scenario, preset, Scenario, PRESETS};
use exdyn::Error;

#[derive(Parser)]
#[command(name = "exdyn", version, about = "Exemplar and field simulations of phonological category dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a shipped preset by name.
    Run {
        scenario: String,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Master seed; replaces the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $EXDYN_OUT, else the scenario's
        /// `output`, else the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replicates run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Classify two-category trajectories as merged, distinct or drifting.
    Verdict {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        gap: f64,
        #[arg(long, default_value_t = 0.5)]
        drift: f64,
        /// Window `T1:T2`; default is the second half of each trajectory.
        #[arg(long)]
        window: Option<String>,
    },
    /// Count peaks of the summed density in field snapshot files.
    Peaks {
        #[arg(required = true)]
        snapshots: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        floor: f64,
    },
    /// Per-category discrepancies between two trajectories.
    Compare {
        exemplar: PathBuf,
        field: PathBuf,
        /// Comparison time; default is the last time both cover.
        #[arg(long)]
        at: Option<f64>,
    },
    /// List shipped scenarios, or print one.
    Presets { name: Option<String> },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Scenario(_) | Error::InvalidParams(_) | Error::Contract(_) | Error::DimensionMismatch { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, replicates, seed, out, jobs } => run(&scenario, replicates, seed, out, jobs),
        Command::Verdict { trajectories, gap, drift, window } => verdict(&trajectories, gap, drift, window.as_deref()),
        Command::Peaks { snapshots, floor } => peaks(&snapshots, floor),
        Command::Compare { exemplar, field, at } => compare(&exemplar, &field, at),
        Command::Presets { name } => presets(name.as_deref()),
    }
}

fn load(arg: &str) -> Result<Scenario, Error> {
    let path = Path::new(arg);
    if path.exists() {
        return load_scenario(path);
    }
    if PRESETS.iter().any(|(n, _, _)| *n == arg) {
        return preset(arg);
    }
    Err(Error::Scenario(format!("`{arg}` is neither a scenario file nor a preset name")))
}

fn run(arg: &str, replicates: usize, seed: Option<u64>, out: Option<PathBuf>, jobs: usize) -> Result<(), Failure> {
    let scenario = load(arg)?;
    let out_dir = resolve_out_dir(out.as_deref(), &scenario);
    let opts = RunOptions { replicates, seed, out_dir, jobs };
    let summary = run_scenario(&scenario, &opts)?;
    for r in &summary.manifest.replicates {
        match &r.error {
            None => println!("replicate {}: {}", r.index, opts.out_dir.join(&r.trajectory).display()),
            Some(e) => println!("replicate {} failed: {e}", r.index),
        }
    }
    println!("manifest: {}", summary.manifest_path.display());
    if summary.failed() {
        return Err(Failure::Runtime(format!("run `{}` failed; partial outputs were kept", scenario.name)));
    }
    Ok(())
}

fn parse_window(s: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("window must look like T1:T2, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct VerdictFile<'a> {
    trajectory: String,
    window: [f64; 2],
    gap_threshold: f64,
    drift_threshold: f64,
    #[serde(flatten)]
    verdict: &'a MergerVerdict,
}

fn verdict(paths: &[PathBuf], gap: f64, drift: f64, window: Option<&str>) -> Result<(), Failure> {
    let window = window.map(parse_window).transpose()?;
    let thresholds = VerdictThresholds { gap, drift };
    for path in paths {
        let traj = parse_trajectory_csv(&read(path)?, &path.display().to_string())?;
        let w = match window {
            Some(w) => w,
            None => {
                let end = traj.last_time().ok_or_else(|| Failure::Usage(format!("{}: no samples", path.display())))?;
                (end / 2.0, end)
            }
        };
        let v = merger_verdict(&traj, w, thresholds)?;
        println!("{}: {v} gap={} symmetry_defect={}", path.display(), v.gap, v.symmetry_defect);
        let file = VerdictFile {
            trajectory: path.display().to_string(),
            window: [w.0, w.1],
            gap_threshold: gap,
            drift_threshold: drift,
            verdict: &v,
        };
        let mut out = path.as_os_str().to_owned();
        out.push(".verdict.json");
        let json = serde_json::to_string_pretty(&file).map_err(|e| Failure::Runtime(e.to_string()))?;
        write_atomic(Path::new(&out), json.as_bytes())?;
    }
    Ok(())
}

fn peaks(paths: &[PathBuf], floor: f64) -> Result<(), Failure> {
    let mut fields = Vec::new();
    for path in paths {
        fields.push(parse_field_snapshot(&read(path)?, &path.display().to_string())?.field);
    }
    let total = DensityField::sum(&fields)?;
    println!("{}", count_peaks(&total, floor)?);
    Ok(())
}

fn compare(a: &Path, b: &Path, at: Option<f64>) -> Result<(), Failure> {
    let ta = parse_trajectory_csv(&read(a)?, &a.display().to_string())?;
    let tb = parse_trajectory_csv(&read(b)?, &b.display().to_string())?;
    let t = match at {
        Some(t) => t,
        None => match (ta.last_time(), tb.last_time()) {
            (Some(x), Some(y)) => x.min(y),
            _ => return Err(Failure::Usage("empty trajectory".into())),
        },
    };
    println!("category,time_a,time_b,mean,dispersion,activation");
    for d in compare_models(&ta, &tb, t)? {
        println!("{},{},{},{},{},{}", d.label, d.time_a, d.time_b, d.mean, d.dispersion, d.activation);
    }
    Ok(())
}

fn presets(name: Option<&str>) -> Result<(), Failure> {
    match name {
        None => {
            for (n, desc, _) in PRESETS {
                println!("{n:<18} {desc}");
            }
            println!("\nOutput directory override: ${OUT_DIR_ENV}");
        }
        Some(n) => {
            let (_, _, text) = PRESETS
                .iter()
                .find(|(p, _, _)| *p == n)
                .ok_or_else(|| Failure::Usage(format!("unknown preset `{n}`")))?;
            print!("{text}");
        }
    }
    Ok(())
}
