//! Run configuration: defaults, an optional TOML file, environment and flags.
//!
//! Precedence, lowest first: built-in defaults, the config file, `QMETA_*`
//! environment variables, command-line flags. The file is a flat table whose
//! keys are the long flag names with `-` replaced by `_`:
//!
//! ```toml
//! lattice = "paper"        # or a path to a graph file
//! phi_min = "-pi"
//! phi_max = "pi"
//! phi_points = 41
//! horizon = 1000
//! trajectories = 10
//! seed = 1
//! method = "waiting_time"
//! gamma_in = 1.0
//! gamma_out = 1.0
//! mu_sign = "+"
//! bin_width = 1.0
//! workers = 4
//! output = "sweep.csv"
//! format = "csv"
//! ```
//!
//! A graph file describes a custom lattice; edges marked `controlled` carry
//! the swept phase, the others a fixed `phi` (default 0):
//!
//! ```toml
//! n_qubits = 3
//! input_node = 1
//! detector_nodes = [3]
//!
//! [[edges]]
//! i = 1
//! j = 2
//! mu = 0.5
//! controlled = true
//!
//! [[edges]]
//! i = 2
//! j = 3
//! mu = 0.5
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{paper_lattice_with, Edge, LatticeSpec};
use crate::trajectory::{IntegratorConfig, Method};

pub const DEFAULT_HORIZON: f64 = 1000.0;
pub const DEFAULT_TRAJECTORIES: u32 = 10;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_PHI_POINTS: usize = 41;
pub const DEFAULT_BIN_WIDTH: f64 = 1.0;
pub const DEFAULT_ORACLE_DT: f64 = 0.05;
/// Largest max/min detector-count ratio still called flat.
pub const FLAT_RATIO_BOUND: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Parses a phase such as `0.3`, `-pi`, `3pi/4`, `3*pi/4` or `pi/8`.
pub fn parse_phase(text: &str) -> Result<f64> {
    let err = || Error::Parse { what: "phase".into(), reason: format!("{text:?} is not a number or multiple of pi") };
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
    if let Ok(v) = s.parse::<f64>() {
        return if v.is_finite() { Ok(v) } else { Err(err()) };
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(&s)),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| err())?),
        None => (body, 1.0),
    };
    let coef = match num.strip_suffix("pi").or_else(|| num.strip_suffix('π')) {
        Some("") => 1.0,
        Some(c) => c.strip_suffix('*').unwrap_or(c).parse::<f64>().map_err(|_| err())?,
        None => return Err(err()),
    };
    let v = sign * coef * PI / den;
    if v.is_finite() { Ok(v) } else { Err(err()) }
}

fn parse_mu_sign(text: &str) -> Result<f64> {
    match text.trim() {
        "+" | "+1" | "1" | "plus" | "+0.5" | "0.5" => Ok(1.0),
        "-" | "-1" | "minus" | "-0.5" => Ok(-1.0),
        other => Err(Error::Parse { what: "mu sign".into(), reason: format!("{other:?}, expected + or -") }),
    }
}

/// A number, or for phases also a `pi` expression.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    fn phase(&self) -> Result<f64> {
        match self {
            Number::Int(v) => Ok(*v as f64),
            Number::Float(v) => Ok(*v),
            Number::Text(s) => parse_phase(s),
        }
    }

    fn real(&self, key: &str) -> Result<f64> {
        match self {
            Number::Int(v) => Ok(*v as f64),
            Number::Float(v) => Ok(*v),
            Number::Text(s) => s.trim().parse().map_err(|_| Error::Parse {
                what: key.into(),
                reason: format!("{s:?} is not a number"),
            }),
        }
    }
}

/// Contents of a config file; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    lattice: Option<String>,
    phi: Option<Number>,
    phi_min: Option<Number>,
    phi_max: Option<Number>,
    phi_points: Option<usize>,
    horizon: Option<Number>,
    dt: Option<Number>,
    method: Option<String>,
    trajectories: Option<i64>,
    seed: Option<u64>,
    gamma_in: Option<Number>,
    gamma_out: Option<Number>,
    mu_sign: Option<Number>,
    bin_width: Option<Number>,
    workers: Option<usize>,
    output: Option<PathBuf>,
    format: Option<Format>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { what: "config file".into(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse { what: format!("config file {}", path.display()), reason },
            other => other,
        })
    }
}

/// Values given on the command line or through the environment, as text.
#[derive(Clone, Debug, Default, PartialEq, clap::Args)]
pub struct Overrides {
    /// TOML config file; flags override its values.
    #[arg(long, env = "QMETA_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// `paper` for the 3x3 lattice, or a path to a graph file.
    #[arg(long, env = "QMETA_LATTICE")]
    pub lattice: Option<String>,
    /// Single control phase, e.g. `0.3` or `3pi/4`.
    #[arg(long, env = "QMETA_PHI", allow_hyphen_values = true)]
    pub phi: Option<String>,
    #[arg(long, env = "QMETA_PHI_MIN", allow_hyphen_values = true)]
    pub phi_min: Option<String>,
    #[arg(long, env = "QMETA_PHI_MAX", allow_hyphen_values = true)]
    pub phi_max: Option<String>,
    #[arg(long, env = "QMETA_PHI_POINTS")]
    pub phi_points: Option<usize>,
    #[arg(long, env = "QMETA_HORIZON")]
    pub horizon: Option<f64>,
    /// Integrator step; the oracle subcommand uses it for the master equation.
    #[arg(long, env = "QMETA_DT")]
    pub dt: Option<f64>,
    /// `waiting_time` or `fixed_step`.
    #[arg(long, env = "QMETA_METHOD")]
    pub method: Option<String>,
    #[arg(long, env = "QMETA_TRAJECTORIES", value_parser = clap::value_parser!(u32).range(1..))]
    pub trajectories: Option<u32>,
    #[arg(long, env = "QMETA_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "QMETA_GAMMA_IN")]
    pub gamma_in: Option<f64>,
    #[arg(long, env = "QMETA_GAMMA_OUT")]
    pub gamma_out: Option<f64>,
    /// Sign of every coupling, `+` or `-`.
    #[arg(long, env = "QMETA_MU_SIGN", allow_hyphen_values = true)]
    pub mu_sign: Option<String>,
    #[arg(long, env = "QMETA_BIN_WIDTH")]
    pub bin_width: Option<f64>,
    #[arg(long, env = "QMETA_WORKERS")]
    pub workers: Option<usize>,
    /// Output file; standard output if absent.
    #[arg(long, short, env = "QMETA_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long, env = "QMETA_FORMAT", value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub mu: f64,
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub controlled: bool,
}

/// A custom lattice read from a graph file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n_qubits: usize,
    pub input_node: usize,
    pub detector_nodes: Vec<usize>,
    pub edges: Vec<GraphEdge>,
}

impl GraphFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { what: "graph file".into(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeSource {
    Paper,
    Graph { path: PathBuf, graph: GraphFile },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSelection {
    Single(f64),
    Grid { min: f64, max: f64, points: usize },
}

impl PhiSelection {
    /// Grid points; a grid with `min == -max` is exactly antisymmetric.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            PhiSelection::Single(phi) => vec![phi],
            PhiSelection::Grid { min, points: 1, .. } => vec![min],
            PhiSelection::Grid { min, max, points } => {
                let n = (points - 1) as f64;
                if min == -max {
                    (0..points).map(|k| max * (2.0 * k as f64 - n) / n).collect()
                } else {
                    (0..points).map(|k| min + (max - min) * k as f64 / n).collect()
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lattice: LatticeSource,
    pub phi: PhiSelection,
    pub horizon: f64,
    pub method: Method,
    /// Integrator step; `None` means the method's (or the oracle's) default.
    pub dt: Option<f64>,
    pub trajectories: u32,
    pub seed: u64,
    pub gamma_in: f64,
    pub gamma_out: f64,
    /// +1 or -1, multiplying every coupling.
    pub mu_sign: f64,
    pub bin_width: f64,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeSource::Paper,
            phi: PhiSelection::Grid { min: -PI, max: PI, points: DEFAULT_PHI_POINTS },
            horizon: DEFAULT_HORIZON,
            method: Method::WaitingTime,
            dt: None,
            trajectories: DEFAULT_TRAJECTORIES,
            seed: DEFAULT_SEED,
            gamma_in: 1.0,
            gamma_out: 1.0,
            mu_sign: 1.0,
            bin_width: DEFAULT_BIN_WIDTH,
            workers: default_workers(),
            output: None,
            format: Format::Csv,
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl RunConfig {
    /// Layers the config file (if any) and the overrides over the defaults.
    pub fn resolve(overrides: &Overrides) -> Result<Self> {
        let file = match &overrides.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        Self::from_layers(&file, overrides)
    }

    pub fn from_layers(file: &ConfigFile, o: &Overrides) -> Result<Self> {
        let mut c = RunConfig::default();

        let lattice = o.lattice.clone().or_else(|| file.lattice.clone());
        if let Some(l) = lattice {
            if l != "paper" {
                let path = PathBuf::from(&l);
                let graph = GraphFile::load(&path)?;
                c.lattice = LatticeSource::Graph { path, graph };
            }
        }

        let phase = |flag: &Option<String>, key: &Option<Number>| -> Result<Option<f64>> {
            match (flag, key) {
                (Some(s), _) => parse_phase(s).map(Some),
                (None, Some(n)) => n.phase().map(Some),
                (None, None) => Ok(None),
            }
        };
        let real = |name: &str, flag: Option<f64>, key: &Option<Number>| -> Result<Option<f64>> {
            match (flag, key) {
                (Some(v), _) => Ok(Some(v)),
                (None, Some(n)) => n.real(name).map(Some),
                (None, None) => Ok(None),
            }
        };

        // a single phase or grid given on the command line beats the file's choice
        let flag_grid = o.phi_min.is_some() || o.phi_max.is_some() || o.phi_points.is_some();
        let file_grid = file.phi_min.is_some() || file.phi_max.is_some() || file.phi_points.is_some();
        let grid = || -> Result<PhiSelection> {
            Ok(PhiSelection::Grid {
                min: phase(&o.phi_min, &file.phi_min)?.unwrap_or(-PI),
                max: phase(&o.phi_max, &file.phi_max)?.unwrap_or(PI),
                points: o.phi_points.or(file.phi_points).unwrap_or(DEFAULT_PHI_POINTS),
            })
        };
        c.phi = if let Some(s) = &o.phi {
            PhiSelection::Single(parse_phase(s)?)
        } else if flag_grid {
            grid()?
        } else if let Some(n) = &file.phi {
            PhiSelection::Single(n.phase()?)
        } else if file_grid {
            grid()?
        } else {
            c.phi
        };

        if let Some(v) = real("horizon", o.horizon, &file.horizon)? {
            c.horizon = v;
        }
        c.dt = real("dt", o.dt, &file.dt)?;
        if let Some(m) = o.method.as_deref().or(file.method.as_deref()) {
            c.method = m.parse()?;
        }
        match (o.trajectories, file.trajectories) {
            (Some(t), _) => c.trajectories = t,
            (None, Some(t)) => {
                c.trajectories = u32::try_from(t).ok().filter(|&t| t >= 1).ok_or_else(|| {
                    Error::InvalidConfig(format!("trajectories must be at least 1, got {t}"))
                })?
            }
            (None, None) => {}
        }
        if let Some(s) = o.seed.or(file.seed) {
            c.seed = s;
        }
        if let Some(v) = real("gamma_in", o.gamma_in, &file.gamma_in)? {
            c.gamma_in = v;
        }
        if let Some(v) = real("gamma_out", o.gamma_out, &file.gamma_out)? {
            c.gamma_out = v;
        }
        match (&o.mu_sign, &file.mu_sign) {
            (Some(s), _) => c.mu_sign = parse_mu_sign(s)?,
            (None, Some(Number::Text(s))) => c.mu_sign = parse_mu_sign(s)?,
            (None, Some(n)) => c.mu_sign = parse_mu_sign(&n.real("mu_sign")?.to_string())?,
            (None, None) => {}
        }
        if let Some(v) = real("bin_width", o.bin_width, &file.bin_width)? {
            c.bin_width = v;
        }
        if let Some(w) = o.workers.or(file.workers) {
            c.workers = w;
        }
        c.output = o.output.clone().or_else(|| file.output.clone());
        if let Some(f) = o.format.or(file.format) {
            c.format = f;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self.phi {
            PhiSelection::Single(phi) if !phi.is_finite() => return bad(format!("phi must be finite, got {phi}")),
            PhiSelection::Grid { min, max, points } => {
                if points < 1 {
                    return bad("phi grid needs at least one point".into());
                }
                if !(min.is_finite() && max.is_finite()) || min > max {
                    return bad(format!("phi grid bounds [{min}, {max}] are not an interval"));
                }
            }
            _ => {}
        }
        if self.trajectories < 1 {
            return bad("trajectories must be at least 1".into());
        }
        if self.workers < 1 {
            return bad("workers must be at least 1".into());
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return bad(format!("bin_width must be > 0, got {}", self.bin_width));
        }
        for (name, g) in [("gamma_in", self.gamma_in), ("gamma_out", self.gamma_out)] {
            if !(g.is_finite() && g >= 0.0) {
                return bad(format!("{name} must be >= 0, got {g}"));
            }
        }
        if self.mu_sign != 1.0 && self.mu_sign != -1.0 {
            return bad(format!("mu_sign must be +1 or -1, got {}", self.mu_sign));
        }
        self.integrator().validate()?;
        self.spec(self.phis()[0])?.validate()
    }

    pub fn phis(&self) -> Vec<f64> {
        self.phi.values()
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let cfg = IntegratorConfig::new(self.method).with_horizon(self.horizon);
        match self.dt {
            Some(dt) => cfg.with_dt(dt),
            None => cfg,
        }
    }

    pub fn oracle_dt(&self) -> f64 {
        self.dt.unwrap_or(DEFAULT_ORACLE_DT)
    }

    /// The lattice at control phase `phi`.
    pub fn spec(&self, phi: f64) -> Result<LatticeSpec> {
        let spec = match &self.lattice {
            LatticeSource::Paper => paper_lattice_with(phi, 0.5 * self.mu_sign, self.gamma_in, self.gamma_out),
            LatticeSource::Graph { graph, .. } => LatticeSpec {
                n_qubits: graph.n_qubits,
                edges: graph
                    .edges
                    .iter()
                    .map(|e| Edge::new(e.i, e.j, self.mu_sign * e.mu, if e.controlled { phi } else { e.phi }))
                    .collect(),
                input_node: graph.input_node,
                detector_nodes: graph.detector_nodes.clone(),
                gamma_in: self.gamma_in,
                gamma_out: self.gamma_out,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lattice_name(&self) -> String {
        match &self.lattice {
            LatticeSource::Paper => "paper".into(),
            LatticeSource::Graph { path, .. } => path.display().to_string(),
        }
    }

    pub fn detectors(&self) -> Result<Vec<usize>> {
        Ok(self.spec(self.phis()[0])?.detector_nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_expressions() {
        assert_eq!(parse_phase("0.3").unwrap(), 0.3);
        assert_eq!(parse_phase("-pi").unwrap(), -PI);
        assert_eq!(parse_phase("pi").unwrap(), PI);
        assert_eq!(parse_phase("3pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_phase("3*pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_phase("-pi/8").unwrap(), -PI / 8.0);
        assert_eq!(parse_phase(" PI / 2 ").unwrap(), PI / 2.0);
        assert!(parse_phase("tau").is_err());
        assert!(parse_phase("nan").is_err());
        assert!(parse_phase("pi/x").is_err());
    }

    #[test]
    fn default_grid_is_antisymmetric_and_hits_feature_points() {
        let phis = RunConfig::default().phis();
        assert_eq!(phis.len(), 41);
        assert_eq!(phis[0], -PI);
        assert_eq!(phis[40], PI);
        assert_eq!(phis[20], 0.0);
        for k in 0..41 {
            assert_eq!(phis[k], -phis[40 - k]);
        }
        let on_grid = |phis: &[f64], target: f64| phis.iter().any(|p| (p - target).abs() < 1e-15);
        for target in [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0] {
            assert!(on_grid(&phis, target) && on_grid(&phis, -target), "{target}");
        }
        // spacing pi/20 misses pi/8; 81 points reach it
        assert!(!on_grid(&phis, PI / 8.0));
        let fine = PhiSelection::Grid { min: -PI, max: PI, points: 81 }.values();
        assert!(on_grid(&fine, PI / 8.0) && on_grid(&fine, -PI / 8.0));
    }

    #[test]
    fn file_then_flags() {
        let file = ConfigFile::parse(
            "horizon = 200\ntrajectories = 3\nseed = 9\nphi = \"3pi/4\"\nmu_sign = \"-\"\nformat = \"json\"\n",
        )
        .unwrap();
        let c = RunConfig::from_layers(&file, &Overrides::default()).unwrap();
        assert_eq!(c.horizon, 200.0);
        assert_eq!(c.trajectories, 3);
        assert_eq!(c.seed, 9);
        assert_eq!(c.phi, PhiSelection::Single(3.0 * PI / 4.0));
        assert_eq!(c.mu_sign, -1.0);
        assert_eq!(c.format, Format::Json);

        let o = Overrides { horizon: Some(50.0), seed: Some(2), phi_points: Some(5), ..Overrides::default() };
        let c = RunConfig::from_layers(&file, &o).unwrap();
        assert_eq!(c.horizon, 50.0);
        assert_eq!(c.seed, 2);
        assert_eq!(c.trajectories, 3);
        assert_eq!(c.phi, PhiSelection::Grid { min: -PI, max: PI, points: 5 });
    }

    #[test]
    fn invalid_values_rejected() {
        let o = |f: fn(&mut Overrides)| {
            let mut o = Overrides::default();
            f(&mut o);
            RunConfig::from_layers(&ConfigFile::default(), &o)
        };
        assert!(o(|o| o.phi_points = Some(0)).is_err());
        assert!(o(|o| o.horizon = Some(0.0)).is_err());
        assert!(o(|o| o.bin_width = Some(-1.0)).is_err());
        assert!(o(|o| o.gamma_in = Some(-1.0)).is_err());
        assert!(o(|o| o.method = Some("euler".into())).is_err());
        assert!(o(|o| o.mu_sign = Some("2".into())).is_err());
        assert!(o(|o| o.workers = Some(0)).is_err());
        assert!(o(|o| {
            o.phi_min = Some("1".into());
            o.phi_max = Some("0".into());
        })
        .is_err());
        assert!(RunConfig::from_layers(&ConfigFile::parse("trajectories = 0").unwrap(), &Overrides::default()).is_err());
        assert!(ConfigFile::parse("unknown_key = 1").is_err());
    }

    #[test]
    fn graph_file_lattice() {
        let graph = GraphFile::parse(
            "n_qubits = 3\ninput_node = 1\ndetector_nodes = [3]\n\
             [[edges]]\ni = 1\nj = 2\nmu = 0.5\ncontrolled = true\n\
             [[edges]]\ni = 2\nj = 3\nmu = 0.25\nphi = 0.1\n",
        )
        .unwrap();
        let c = RunConfig {
            lattice: LatticeSource::Graph { path: "g.toml".into(), graph },
            mu_sign: -1.0,
            ..RunConfig::default()
        };
        let spec = c.spec(0.7).unwrap();
        assert_eq!(spec.edges, vec![Edge::new(1, 2, -0.5, 0.7), Edge::new(2, 3, -0.25, 0.1)]);
        assert_eq!(spec.detector_nodes, vec![3]);
    }
}
