//! Text formats for trajectories and snapshots, and atomic file writes.
//!
//! Trajectory CSV columns, in order: `time`, then for every category `L`
//! `L.mean_x`, (`L.mean_y` in 2D), `L.dispersion`, `L.activation`,
//! `L.live_count`. Undefined means and dispersions are written as `NaN`.
//!
//! Exemplar snapshot CSV: `category,x[,y],weight`, one row per exemplar.
//!
//! Field snapshot: `#`-prefixed header lines `dimension`, `lo`, `hi`,
//! `points`, `time` and `category`, then one line per node row with the
//! values along the last axis separated by spaces.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::analysis::{CategorySample, Snapshot, Trajectory};
use crate::error::{Error, Result};
use crate::field::{DensityField, Grid};
use crate::model::PhonPoint;

/// Write `contents` to a temporary sibling and rename it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn axes(dim: usize) -> &'static [&'static str] {
    if dim == 1 {
        &["x"]
    } else {
        &["x", "y"]
    }
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("time");
    for label in &traj.labels {
        for a in axes(traj.dim) {
            write!(out, ",{label}.mean_{a}").unwrap();
        }
        write!(out, ",{label}.dispersion,{label}.activation,{label}.live_count").unwrap();
    }
    out.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for c in 0..traj.labels.len() {
            let s = traj.sample(c, k);
            for a in 0..traj.dim {
                write!(out, ",{}", s.mean.map_or(f64::NAN, |m| m.get(a))).unwrap();
            }
            write!(out, ",{},{},{}", s.dispersion.unwrap_or(f64::NAN), s.activation, s.live_count).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse a trajectory CSV. Only the sample series are recovered.
pub fn parse_trajectory_csv(text: &str, source_name: &str) -> Result<Trajectory> {
    let perr = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"time") {
        return Err(perr(1, "first column must be `time`".into()));
    }
    let labels: Vec<String> =
        cols.iter().filter_map(|c| c.strip_suffix(".mean_x")).map(str::to_string).collect();
    if labels.is_empty() {
        return Err(perr(1, "no `<label>.mean_x` columns".into()));
    }
    let dim = if cols.iter().any(|c| c.ends_with(".mean_y")) { 2 } else { 1 };
    let per = dim + 3;
    let mut expected = vec!["time".to_string()];
    for l in &labels {
        for a in axes(dim) {
            expected.push(format!("{l}.mean_{a}"));
        }
        expected.extend([format!("{l}.dispersion"), format!("{l}.activation"), format!("{l}.live_count")]);
    }
    if cols != expected {
        return Err(perr(1, format!("unexpected columns; expected {}", expected.join(","))));
    }
    let mut traj = Trajectory::new(labels.clone(), dim);
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected.len() {
            return Err(perr(i + 1, format!("expected {} fields, found {}", expected.len(), fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(i + 1, format!("`{s}`: {e}")));
        let time = num(fields[0])?;
        if traj.times.last().is_some_and(|&last| time <= last) {
            return Err(perr(i + 1, "sample times must increase".into()));
        }
        let mut samples = Vec::with_capacity(labels.len());
        for c in 0..labels.len() {
            let f = &fields[1 + c * per..1 + (c + 1) * per];
            let coords = f[..dim].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let mean = if coords.iter().all(|v| v.is_finite()) { Some(PhonPoint::from_slice(&coords)?) } else { None };
            let disp = num(f[dim])?;
            samples.push(CategorySample {
                mean,
                dispersion: disp.is_finite().then_some(disp),
                activation: num(f[dim + 1])?,
                live_count: f[dim + 2].parse().map_err(|e| perr(i + 1, format!("`{}`: {e}", f[dim + 2])))?,
            });
        }
        traj.push(time, samples);
    }
    Ok(traj)
}

/// One exemplar snapshot file body for category `c`.
pub fn exemplar_snapshot_csv(label: &str, dim: usize, exemplars: &[(PhonPoint, f64)]) -> String {
    let mut out = String::from("category");
    for a in axes(dim) {
        write!(out, ",{a}").unwrap();
    }
    out.push_str(",weight\n");
    for (p, w) in exemplars {
        out.push_str(label);
        for a in 0..dim {
            write!(out, ",{}", p.get(a)).unwrap();
        }
        writeln!(out, ",{w}").unwrap();
    }
    out
}

pub fn field_snapshot_text(field: &DensityField, time: f64, label: &str) -> String {
    let g = field.grid();
    let d = g.dim();
    let join = |f: &dyn Fn(usize) -> String| (0..d).map(f).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    writeln!(out, "# dimension {d}").unwrap();
    writeln!(out, "# lo {}", join(&|a| g.lo(a).to_string())).unwrap();
    writeln!(out, "# hi {}", join(&|a| g.hi(a).to_string())).unwrap();
    writeln!(out, "# points {}", join(&|a| g.points()[a].to_string())).unwrap();
    writeln!(out, "# time {time}").unwrap();
    writeln!(out, "# category {label}").unwrap();
    let n1 = g.points()[1];
    for row in field.values().chunks(n1) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub field: DensityField,
    pub time: f64,
    pub category: String,
}

pub fn parse_field_snapshot(text: &str, source_name: &str) -> Result<FieldSnapshot> {
    let perr = |message: String| Error::Parse { source_name: source_name.to_string(), message };
    let mut header = std::collections::HashMap::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.trim().splitn(2, ' ');
            let key = parts.next().unwrap_or("").to_string();
            header.insert(key, parts.next().unwrap_or("").trim().to_string());
            continue;
        }
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f64>().map_err(|e| perr(format!("line {}: `{tok}`: {e}", i + 1)))?);
        }
    }
    let get = |k: &str| header.get(k).ok_or_else(|| perr(format!("missing `# {k}` header")));
    let nums = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| perr(format!("header {k}: `{s}`: {e}"))))
            .collect()
    };
    let dim: usize = get("dimension")?.parse().map_err(|e| perr(format!("header dimension: {e}")))?;
    let lo = nums("lo")?;
    let hi = nums("hi")?;
    let points: Vec<usize> = get("points")?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| perr(format!("header points: `{s}`: {e}"))))
        .collect::<Result<_>>()?;
    let grid = Grid::new(dim, &lo, &hi, &points).map_err(|e| perr(e.to_string()))?;
    let time: f64 = get("time")?.parse().map_err(|e| perr(format!("header time: {e}")))?;
    let category = get("category")?.clone();
    let field = DensityField::new(grid, values).map_err(|e| perr(e.to_string()))?;
    Ok(FieldSnapshot { field, time, category })
}

/// File bodies for every snapshot of a trajectory, one per category:
/// `(time, label, extension, contents)`.
pub fn snapshot_files(traj: &Trajectory) -> Vec<(f64, String, &'static str, String)> {
    let mut out = Vec::new();
    for snap in &traj.snapshots {
        match snap {
            Snapshot::Exemplars { time, categories } => {
                for (label, ex) in traj.labels.iter().zip(categories) {
                    out.push((*time, label.clone(), "snap.csv", exemplar_snapshot_csv(label, traj.dim, ex)));
                }
            }
            Snapshot::Field { time, fields } => {
                for (label, f) in traj.labels.iter().zip(fields) {
                    out.push((*time, label.clone(), "field.txt", field_snapshot_text(f, *time, label)));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(dim: usize) -> Trajectory {
        let mut t = Trajectory::new(vec!["A".into(), "B2".into()], dim);
        let p = |x: f64| if dim == 1 { PhonPoint::new1(x) } else { PhonPoint::new2(x, -x) };
        for k in 0..4 {
            let time = k as f64 * 0.1;
            t.push(
                time,
                vec![
                    CategorySample { mean: Some(p(time + 0.3)), dispersion: Some(1.0 / 3.0), activation: 0.2 + time, live_count: k },
                    CategorySample { mean: None, dispersion: None, activation: 0.0, live_count: 0 },
                ],
            );
        }
        t
    }

    #[test]
    fn trajectory_round_trip() {
        for dim in [1, 2] {
            let t = traj(dim);
            let text = trajectory_csv(&t);
            assert!(text.starts_with(if dim == 1 {
                "time,A.mean_x,A.dispersion,A.activation,A.live_count,B2.mean_x,"
            } else {
                "time,A.mean_x,A.mean_y,A.dispersion,"
            }));
            let back = parse_trajectory_csv(&text, "t").unwrap();
            assert_eq!(back.times, t.times);
            assert_eq!(back.series, t.series);
            assert_eq!(trajectory_csv(&back), text);
        }
    }

    #[test]
    fn malformed_trajectory_rejected() {
        assert!(parse_trajectory_csv("", "t").is_err());
        assert!(parse_trajectory_csv("t,A.mean_x\n", "t").is_err());
        let text = trajectory_csv(&traj(1)).replace("0.1,", "0.1,zz,");
        assert!(parse_trajectory_csv(&text, "t").is_err());
    }

    #[test]
    fn field_snapshot_round_trip() {
        let g = Grid::new_2d([-1.0, -2.0], [1.0, 2.0], [16, 20]).unwrap();
        let f = DensityField::from_fn(g, |p| (-(p.get(0).powi(2) + p.get(1).powi(2))).exp());
        let text = field_snapshot_text(&f, 12.5, "A");
        let back = parse_field_snapshot(&text, "s").unwrap();
        assert_eq!(back, FieldSnapshot { field: f, time: 12.5, category: "A".into() });
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 16);
    }

    #[test]
    fn exemplar_snapshot_layout() {
        let text = exemplar_snapshot_csv("A", 2, &[(PhonPoint::new2(1.0, 2.5), 0.01)]);
        assert_eq!(text, "category,x,y,weight\nA,1,2.5,0.01\n");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
