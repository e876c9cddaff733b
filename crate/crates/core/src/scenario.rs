//! Scenario files: one TOML document per experiment.
//!
//! ```toml
//! name = "fig1"
//! engine = "exemplar"          # or "field"
//! dimension = 1
//! horizon = 20.0
//! sample_interval = 0.1        # default 1.0
//! snapshot_times = [20.0]      # default []
//! seed = 1                     # required for the exemplar engine
//!
//! [params]                     # defaults shown for the optional keys
//! lambda = 1.0
//! w0 = 0.01                    # required
//! alpha = 0.0
//! beta = 0.0
//! sigma = 1.0
//! kappa = 10.0
//! p = 1.0
//! prune_ratio = 0.1
//! regime = "no-competition"    # pure-competition, competition-with-discards
//! zero_density = "accept-source"   # or "discard"
//!
//! [[category]]
//! label = "A"
//! rate = 100.0                 # tokens per unit time
//! position = [0.0]
//! count = 100                  # initial exemplars (field: mass count * weight)
//! spread = 0.0                 # default 0: all at `position`
//! weight = 0.01                # default w0
//!
//! [grid]                       # field engine; default derived from categories
//! lo = [-25.0]
//! hi = [35.0]
//! points = [1024]
//!
//! [integrator]
//! dt = 0.01                    # field engine step
//! prune_interval = 256         # exemplar engine events between prunings
//! ```
//!
//! Loading fills every default, so writing a loaded scenario produces a
//! fully explicit file that loads back to an equal value.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::categorization::{Regime, ZeroDensityPolicy};
use crate::error::{Error, Result};
use crate::exemplar::{ExemplarRunConfig, DEFAULT_PRUNE_INTERVAL};
use crate::field::{FieldRunConfig, Grid};
use crate::model::{CategoryInit, ModelParams, PhonPoint};

/// Default 1D field grid.
pub const DEFAULT_GRID_1D: (f64, f64, usize) = (-25.0, 35.0, 1024);
/// Default 2D field grid resolution per axis.
pub const DEFAULT_POINTS_2D: usize = 256;
/// Required distance, in equilibrium dispersions, between an initial
/// position and the grid edge.
pub const COVERAGE_MARGIN: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    Exemplar,
    Field,
}

impl EngineKind {
    pub fn name(&self) -> &'static str {
        match self {
            EngineKind::Exemplar => "exemplar",
            EngineKind::Field => "field",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn to_grid(&self) -> Result<Grid> {
        Grid::new(self.lo.len(), &self.lo, &self.hi, &self.points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub engine: EngineKind,
    pub dimension: usize,
    pub params: ModelParams,
    pub categories: Vec<CategoryInit>,
    pub horizon: f64,
    pub sample_interval: f64,
    pub snapshot_times: Vec<f64>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub dt: f64,
    pub prune_interval: usize,
    /// Output directory relative to the working directory.
    pub output: Option<String>,
}

// On-disk layout.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    engine: EngineKind,
    dimension: usize,
    horizon: f64,
    #[serde(default = "default_sample_interval")]
    sample_interval: f64,
    #[serde(default)]
    snapshot_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    params: ParamsFile,
    #[serde(rename = "category")]
    categories: Vec<CategoryFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridSpec>,
    #[serde(default)]
    integrator: IntegratorFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    #[serde(default = "one")]
    lambda: f64,
    w0: f64,
    #[serde(default)]
    alpha: f64,
    #[serde(default)]
    beta: f64,
    #[serde(default = "one")]
    sigma: f64,
    #[serde(default = "default_kappa")]
    kappa: f64,
    #[serde(default = "one")]
    p: f64,
    #[serde(default = "default_prune_ratio")]
    prune_ratio: f64,
    #[serde(default = "default_regime")]
    regime: Regime,
    #[serde(default)]
    zero_density: ZeroDensityPolicy,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryFile {
    label: String,
    rate: f64,
    position: Vec<f64>,
    count: usize,
    #[serde(default)]
    spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegratorFile {
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_prune_interval")]
    prune_interval: usize,
}

impl Default for IntegratorFile {
    fn default() -> Self {
        Self { dt: default_dt(), prune_interval: default_prune_interval() }
    }
}

fn one() -> f64 {
    1.0
}
fn default_sample_interval() -> f64 {
    1.0
}
fn default_kappa() -> f64 {
    10.0
}
fn default_prune_ratio() -> f64 {
    0.1
}
fn default_regime() -> Regime {
    Regime::NoCompetition
}
fn default_dt() -> f64 {
    0.01
}
fn default_prune_interval() -> usize {
    DEFAULT_PRUNE_INTERVAL
}

/// Parse and validate scenario text. `source_name` labels diagnostics.
pub fn parse_scenario(text: &str, source_name: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text)
        .map_err(|e| Error::Parse { source_name: source_name.to_string(), message: e.to_string() })?;
    let categories = file
        .categories
        .iter()
        .map(|c| {
            Ok(CategoryInit {
                label: c.label.clone(),
                position: PhonPoint::from_slice(&c.position)
                    .map_err(|e| Error::Scenario(format!("category `{}`: {e}", c.label)))?,
                count: c.count,
                spread: c.spread,
                weight: c.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams {
        lambda: file.params.lambda,
        rates: file.categories.iter().map(|c| c.rate).collect(),
        w0: file.params.w0,
        alpha: file.params.alpha,
        beta: file.params.beta,
        sigma: file.params.sigma,
        kappa: file.params.kappa,
        p: file.params.p,
        prune_ratio: file.params.prune_ratio,
        regime: file.params.regime,
        zero_density: file.params.zero_density,
    };
    let mut s = Scenario {
        name: file.name,
        engine: file.engine,
        dimension: file.dimension,
        params,
        categories,
        horizon: file.horizon,
        sample_interval: file.sample_interval,
        snapshot_times: file.snapshot_times,
        seed: file.seed,
        grid: file.grid,
        dt: file.integrator.dt,
        prune_interval: file.integrator.prune_interval,
        output: file.output,
    };
    if s.engine == EngineKind::Field && s.grid.is_none() && s.dimension >= 1 && s.dimension <= 2 {
        s.grid = Some(default_grid(&s).map_err(|e| Error::Scenario(e.to_string()))?);
    }
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, &path.display().to_string())
}

/// Default field grid: the fixed 1D grid when it covers the initial
/// positions, otherwise their bounding box widened by the coverage margin
/// plus one unit.
pub fn default_grid(s: &Scenario) -> Result<GridSpec> {
    let disp = s.params.equilibrium_dispersion()?;
    let pad = COVERAGE_MARGIN * disp + 1.0;
    let d = s.dimension;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in &s.categories {
        for a in 0..d.min(c.position.dim()) {
            lo[a] = lo[a].min(c.position.get(a));
            hi[a] = hi[a].max(c.position.get(a));
        }
    }
    if s.categories.is_empty() {
        return Err(Error::Scenario("at least one category is required".into()));
    }
    if d == 1 {
        let (glo, ghi, n) = DEFAULT_GRID_1D;
        if lo[0] - COVERAGE_MARGIN * disp >= glo && hi[0] + COVERAGE_MARGIN * disp <= ghi {
            return Ok(GridSpec { lo: vec![glo], hi: vec![ghi], points: vec![n] });
        }
        return Ok(GridSpec { lo: vec![lo[0] - pad], hi: vec![hi[0] + pad], points: vec![n] });
    }
    Ok(GridSpec {
        lo: lo.iter().map(|v| v - pad).collect(),
        hi: hi.iter().map(|v| v + pad).collect(),
        points: vec![DEFAULT_POINTS_2D; d],
    })
}

fn valid_label(label: &str) -> bool {
    !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !valid_label(&self.name) {
            return bad(format!("name `{}` may only contain letters, digits, `_` and `-`", self.name));
        }
        if !(self.dimension == 1 || self.dimension == 2) {
            return bad(format!("dimension must be 1 or 2, got {}", self.dimension));
        }
        if self.categories.is_empty() {
            return bad("at least one category is required".into());
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            if !valid_label(&c.label) {
                return bad(format!("category label `{}` may only contain letters, digits, `_` and `-`", c.label));
            }
            if !seen.insert(c.label.as_str()) {
                return bad(format!("duplicate category label `{}`", c.label));
            }
            if c.position.dim() != self.dimension {
                return bad(format!(
                    "category `{}` has a {}-dimensional position in a {}-dimensional scenario",
                    c.label,
                    c.position.dim(),
                    self.dimension
                ));
            }
            if !(c.spread >= 0.0 && c.spread.is_finite()) {
                return bad(format!("category `{}`: spread must be >= 0", c.label));
            }
            if let Some(w) = c.weight {
                if !(w > 0.0 && w.is_finite()) {
                    return bad(format!("category `{}`: weight must be positive", c.label));
                }
            }
        }
        self.params.validate().map_err(|e| Error::Scenario(e.to_string()))?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be >= 0, got {}", self.horizon));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return bad(format!("sample_interval must be positive, got {}", self.sample_interval));
        }
        if let Some(t) = self.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= self.horizon)) {
            return bad(format!("snapshot time {t} lies outside [0, {}]", self.horizon));
        }
        if self.prune_interval == 0 {
            return bad("integrator.prune_interval must be positive".into());
        }
        match self.engine {
            EngineKind::Exemplar => {
                match self.seed {
                    None => return bad("exemplar scenarios need a seed".into()),
                    Some(s) if s > i64::MAX as u64 => return bad(format!("seed {s} exceeds {}", i64::MAX)),
                    _ => {}
                }
            }
            EngineKind::Field => {
                if (self.params.alpha + self.params.beta - 1.0).abs() < 1e-12 {
                    return bad("alpha + beta = 1 is only supported by the exemplar engine".into());
                }
                if !(self.dt > 0.0 && self.dt.is_finite()) {
                    return bad(format!("integrator.dt must be positive, got {}", self.dt));
                }
                let spec = self.grid.as_ref().ok_or_else(|| Error::Scenario("field scenarios need a grid".into()))?;
                if spec.lo.len() != self.dimension {
                    return bad(format!("grid has {} axes in a {}-dimensional scenario", spec.lo.len(), self.dimension));
                }
                let grid = spec.to_grid().map_err(|e| Error::Scenario(e.to_string()))?;
                let margin = COVERAGE_MARGIN * self.params.equilibrium_dispersion().map_err(|e| Error::Scenario(e.to_string()))?;
                for c in &self.categories {
                    if !grid.covers(&c.position, margin) {
                        return bad(format!(
                            "grid does not cover category `{}` at {} with margin {margin:.3}",
                            c.label, c.position
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.label.clone()).collect()
    }

    /// Fully explicit TOML text.
    pub fn to_toml(&self) -> String {
        let file = ScenarioFile {
            name: self.name.clone(),
            engine: self.engine,
            dimension: self.dimension,
            horizon: self.horizon,
            sample_interval: self.sample_interval,
            snapshot_times: self.snapshot_times.clone(),
            seed: self.seed,
            output: self.output.clone(),
            params: ParamsFile {
                lambda: self.params.lambda,
                w0: self.params.w0,
                alpha: self.params.alpha,
                beta: self.params.beta,
                sigma: self.params.sigma,
                kappa: self.params.kappa,
                p: self.params.p,
                prune_ratio: self.params.prune_ratio,
                regime: self.params.regime,
                zero_density: self.params.zero_density,
            },
            categories: self
                .categories
                .iter()
                .zip(&self.params.rates)
                .map(|(c, &rate)| CategoryFile {
                    label: c.label.clone(),
                    rate,
                    position: c.position.coords().to_vec(),
                    count: c.count,
                    spread: c.spread,
                    weight: c.weight,
                })
                .collect(),
            grid: self.grid.clone(),
            integrator: IntegratorFile { dt: self.dt, prune_interval: self.prune_interval },
        };
        toml::to_string(&file).expect("scenario serializes")
    }

    pub fn exemplar_config(&self, seed: u64) -> ExemplarRunConfig {
        ExemplarRunConfig {
            params: self.params.clone(),
            dim: self.dimension,
            categories: self.categories.clone(),
            horizon: self.horizon,
            sample_interval: self.sample_interval,
            snapshot_times: self.snapshot_times.clone(),
            prune_interval: self.prune_interval,
            seed,
        }
    }

    pub fn field_config(&self) -> FieldRunConfig {
        FieldRunConfig {
            horizon: self.horizon,
            dt: self.dt,
            sample_interval: self.sample_interval,
            snapshot_times: self.snapshot_times.clone(),
        }
    }

    pub fn field_grid(&self) -> Result<Grid> {
        match &self.grid {
            Some(g) => g.to_grid(),
            None => default_grid(self)?.to_grid(),
        }
    }
}

/// Scenarios shipped with the crate: `(name, description, text)`.
pub const PRESETS: &[(&str, &str, &str)] = &[
    ("fig1", "one category, exemplar engine, relaxation to equilibrium", include_str!("../presets/fig1.scn")),
    ("fig1_field", "field counterpart of fig1", include_str!("../presets/fig1_field.scn")),
    ("fig2_exemplar", "two categories, discards, exemplar engine", include_str!("../presets/fig2_exemplar.scn")),
    ("fig3_nocomp", "two categories, no competition, field engine", include_str!("../presets/fig3_nocomp.scn")),
    ("fig3_pure_p1", "two categories, pure competition p=1, field engine", include_str!("../presets/fig3_pure_p1.scn")),
    ("fig3_pure_p15", "two categories, pure competition p=1.5, field engine", include_str!("../presets/fig3_pure_p15.scn")),
    ("fig3_discards", "two categories, competition with discards, field engine", include_str!("../presets/fig3_discards.scn")),
    ("fig4_2d", "five categories in 2D, discards, field engine", include_str!("../presets/fig4_2d.scn")),
    ("fig4_2d_6cat", "six categories in 2D, discards, field engine", include_str!("../presets/fig4_2d_6cat.scn")),
    ("fig4_2d_exemplar", "five categories in 2D, discards, exemplar engine", include_str!("../presets/fig4_2d_exemplar.scn")),
];

pub fn preset(name: &str) -> Result<Scenario> {
    let (_, _, text) = PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::Scenario(format!("unknown preset `{name}`")))?;
    parse_scenario(text, &format!("preset {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
engine = "exemplar"
dimension = 1
horizon = 5.0
seed = 3

[params]
w0 = 0.01
beta = 0.1

[[category]]
label = "A"
rate = 100.0
position = [0.0]
count = 10
"#;

    #[test]
    fn defaults_are_filled() {
        let s = parse_scenario(MINIMAL, "t").unwrap();
        assert_eq!(s.params.lambda, 1.0);
        assert_eq!(s.params.kappa, 10.0);
        assert_eq!(s.params.prune_ratio, 0.1);
        assert_eq!(s.params.regime, Regime::NoCompetition);
        assert_eq!(s.sample_interval, 1.0);
        assert_eq!(s.prune_interval, 256);
        assert!(s.grid.is_none());
    }

    #[test]
    fn every_preset_round_trips() {
        for (name, _, _) in PRESETS {
            let s = preset(name).unwrap();
            assert_eq!(&s.name, name);
            let again = parse_scenario(&s.to_toml(), "rt").unwrap();
            assert_eq!(s, again, "{name}");
        }
    }

    #[test]
    fn fig1_and_fig3_presets_match_their_descriptions() {
        let s = preset("fig1").unwrap();
        assert_eq!(s.categories.len(), 1);
        assert_eq!(s.params.rates, vec![100.0]);
        assert_eq!((s.params.lambda, s.params.w0, s.params.alpha, s.params.beta), (1.0, 0.01, 0.0, 0.1));
        let s = preset("fig3_discards").unwrap();
        assert_eq!(s.params.regime, Regime::CompetitionWithDiscards);
        assert_eq!((s.params.p, s.params.kappa, s.params.beta), (1.0, 10.0, 0.1));
        let xs: Vec<f64> = s.categories.iter().map(|c| c.position.x()).collect();
        assert_eq!(xs, vec![5.0, 10.0]);
        assert!(s.categories.iter().all(|c| c.count == 50));
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let with = |from: &str, to: &str| parse_scenario(&MINIMAL.replace(from, to), "t");
        assert!(matches!(with("beta = 0.1", "alpha = 1.5\nbeta = 1.0"), Err(Error::Scenario(_))));
        assert!(matches!(with("seed = 3", ""), Err(Error::Scenario(_))));
        assert!(matches!(with("count = 10", "count = 10\ncolour = 1"), Err(Error::Parse { .. })));
        assert!(matches!(with("label = \"A\"", "label = \"A B\""), Err(Error::Scenario(_))));
        assert!(matches!(with("position = [0.0]", "position = [0.0, 1.0]"), Err(Error::Scenario(_))));
        let dup = format!("{MINIMAL}\n[[category]]\nlabel = \"A\"\nrate = 1.0\nposition = [1.0]\ncount = 1\n");
        assert!(parse_scenario(&dup, "t").is_err());
    }

    #[test]
    fn field_grid_must_cover_positions() {
        let text = MINIMAL.replace("engine = \"exemplar\"", "engine = \"field\"")
            + "\n[grid]\nlo = [-5.0]\nhi = [5.0]\npoints = [256]\n";
        assert!(matches!(parse_scenario(&text, "t"), Err(Error::Scenario(_))));
        let text = MINIMAL.replace("engine = \"exemplar\"", "engine = \"field\"");
        let s = parse_scenario(&text, "t").unwrap();
        assert_eq!(s.grid.unwrap(), GridSpec { lo: vec![-25.0], hi: vec![35.0], points: vec![1024] });
    }

    #[test]
    fn collapsing_field_map_rejected() {
        let text = MINIMAL.replace("engine = \"exemplar\"", "engine = \"field\"").replace("beta = 0.1", "alpha = 0.5\nbeta = 0.5");
        assert!(parse_scenario(&text, "t").is_err());
    }
}
