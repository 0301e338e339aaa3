//! Run configuration, p-grid sweeps and CSV output.
//!
//! A run is described by [`ConfigValues`], filled from command-line flags
//! and optionally a `key = value` config file (flags win), then validated
//! into a [`RunConfig`]. [`run_sweep`] dispatches to one solver and
//! [`write_csv`] emits the rows after a `#` preamble that reproduces the
//! configuration in config-file syntax.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use clap::{Args, Parser};

use crate::error::{Error, Result};
use crate::graph::{build_2d_regular, build_3d_stack, build_complete, build_ring, Graph};
use crate::mapping::{coupling_from_noise, log_partition_function, spin_histogram};
use crate::meanfield::solve_self_consistent;
use crate::montecarlo::{encode_samples, scheme_description, sweep_depolarizing, sweep_noise, MCConfig, McSweep};
use crate::numeric::{depolarizing_beta, log_sum_exp};
use crate::pauli::{enumerate_weights, fidelity_complete_closed_form, NoiseModel, WeightHistogram, DEFAULT_ENUMERATION_CAP};
use crate::transfer::{fidelity_1d, observables_1d, ChainSize};

/// Solver that produced a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Exact,
    SpinExact,
    Transfer,
    Mc,
    Mf,
    ClosedForm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Exact,
        Method::SpinExact,
        Method::Transfer,
        Method::Mc,
        Method::Mf,
        Method::ClosedForm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::SpinExact => "spin-exact",
            Method::Transfer => "transfer",
            Method::Mc => "mc",
            Method::Mf => "mf",
            Method::ClosedForm => "closed-form",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}' (expected one of exact, spin-exact, transfer, mc, mf, closed-form)"
                ))
            })
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub beta: f64,
    pub fidelity_per_qubit: f64,
    pub log_fidelity: f64,
    pub energy_per_qubit: Option<f64>,
    pub specific_heat_per_qubit: Option<f64>,
    pub err_fidelity: f64,
    pub err_energy: f64,
    pub err_specific_heat: f64,
    pub method: Method,
    pub graph_descriptor: String,
    pub seed: Option<u64>,
}

pub const CSV_HEADER: [&str; 12] = [
    "p",
    "beta",
    "fidelity_per_qubit",
    "log_fidelity",
    "energy_per_qubit",
    "specific_heat_per_qubit",
    "err_fidelity",
    "err_energy",
    "err_specific_heat",
    "method",
    "graph_descriptor",
    "seed",
];

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Ring,
    Regular2d,
    Regular3d,
    Complete,
}

impl GraphKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphKind::Ring => "1d-cluster",
            GraphKind::Regular2d => "2d-regular",
            GraphKind::Regular3d => "3d-regular",
            GraphKind::Complete => "complete",
        }
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [GraphKind::Ring, GraphKind::Regular2d, GraphKind::Regular3d, GraphKind::Complete]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown graph '{s}' (expected one of 1d-cluster, 2d-regular, 3d-regular, complete)"
                ))
            })
    }
}

/// Raw, unvalidated settings. Every field is optional so that flags and a
/// config file can be merged before validation.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct ConfigValues {
    /// Graph family: 1d-cluster, 2d-regular, 3d-regular or complete.
    #[arg(long, value_name = "KIND")]
    pub graph: Option<GraphKind>,
    /// Vertex count (1d-cluster, complete).
    #[arg(long)]
    pub n: Option<usize>,
    /// Lattice width (2d-regular, 3d-regular).
    #[arg(long)]
    pub nx: Option<usize>,
    /// Lattice height (2d-regular, 3d-regular).
    #[arg(long)]
    pub ny: Option<usize>,
    /// Number of layers (3d-regular).
    #[arg(long)]
    pub nz: Option<usize>,
    /// Vertex degree: 3..=8 for 2d-regular, 5..=8 for 3d-regular (layers of degree d-2).
    #[arg(long)]
    pub d: Option<usize>,
    /// Solver: exact, spin-exact, transfer, mc, mf or closed-form.
    #[arg(long, value_name = "METHOD")]
    pub method: Option<Method>,
    /// Smallest depolarizing p of the linear grid [default: 0.05].
    #[arg(long)]
    pub p_min: Option<f64>,
    /// Largest depolarizing p of the linear grid [default: 0.74].
    #[arg(long)]
    pub p_max: Option<f64>,
    /// Number of grid points, endpoints included [default: 70].
    #[arg(long)]
    pub p_steps: Option<usize>,
    /// X error probability; repeat together with --py/--pz for a list of IID channels.
    #[arg(long)]
    pub px: Vec<f64>,
    /// Y error probability, one per --px.
    #[arg(long)]
    pub py: Vec<f64>,
    /// Z error probability, one per --px.
    #[arg(long)]
    pub pz: Vec<f64>,
    /// Monte Carlo measurement sweeps per chain [default: 100000].
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Monte Carlo burn-in sweeps, doubled until converged [default: 20000].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Sweeps between recorded samples [default: 2].
    #[arg(long)]
    pub thin: Option<usize>,
    /// Bins for error analysis [default: 32].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Monte Carlo RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Write the raw Monte Carlo energy series to PATH (binary, see README).
    #[arg(long, value_name = "PATH")]
    pub dump_samples: Option<PathBuf>,
}

/// Command line of the `graphfid` binary.
#[derive(Debug, Parser)]
#[command(
    name = "graphfid",
    version,
    about = "Fidelity of noisy graph states through their classical spin model",
    after_help = "Flags override values read from --config. Config files hold one `key = value` per line, \
                  keys named like the long flags without dashes (p-min, burn-in, ...); `#` starts a comment. \
                  px, py and pz may repeat.\n\nExit codes: 0 success, 2 configuration error, 3 solver or I/O error."
)]
pub struct Cli {
    #[command(flatten)]
    pub values: ConfigValues,
    /// Read settings from a key = value file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "config", no_binary_name = true, disable_help_flag = true, disable_version_flag = true)]
struct FileArgs {
    #[command(flatten)]
    values: ConfigValues,
}

const KEYS: [&str; 20] = [
    "graph",
    "n",
    "nx",
    "ny",
    "nz",
    "d",
    "method",
    "p-min",
    "p-max",
    "p-steps",
    "px",
    "py",
    "pz",
    "sweeps",
    "burn-in",
    "thin",
    "bins",
    "seed",
    "output",
    "dump-samples",
];

/// Parses config-file text: one `key = value` per line, blank lines and
/// `#` comments ignored, `_` accepted for `-` in keys.
pub fn parse_config_text(text: &str) -> Result<ConfigValues> {
    let mut argv = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, found {line:?}")))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if !KEYS.contains(&key.as_str()) {
            return Err(bad(format!("unknown key {key:?}")));
        }
        if value.is_empty() {
            return Err(bad(format!("missing value for {key:?}")));
        }
        argv.push(format!("--{key}"));
        argv.push(value.to_string());
    }
    FileArgs::try_parse_from(argv)
        .map(|a| a.values)
        .map_err(|e| Error::Config(format!("config file: {}", e.kind_message())))
}

trait KindMessage {
    fn kind_message(&self) -> String;
}

impl KindMessage for clap::Error {
    /// First line of the rendered error without the `error: ` prefix.
    fn kind_message(&self) -> String {
        let text = self.to_string();
        let first = text.lines().next().unwrap_or_default();
        first.strip_prefix("error: ").unwrap_or(first).to_string()
    }
}

impl ConfigValues {
    /// Fills every unset field from `base`.
    pub fn or(self, base: ConfigValues) -> ConfigValues {
        let vec_or = |a: Vec<f64>, b: Vec<f64>| if a.is_empty() { b } else { a };
        ConfigValues {
            graph: self.graph.or(base.graph),
            n: self.n.or(base.n),
            nx: self.nx.or(base.nx),
            ny: self.ny.or(base.ny),
            nz: self.nz.or(base.nz),
            d: self.d.or(base.d),
            method: self.method.or(base.method),
            p_min: self.p_min.or(base.p_min),
            p_max: self.p_max.or(base.p_max),
            p_steps: self.p_steps.or(base.p_steps),
            px: vec_or(self.px, base.px),
            py: vec_or(self.py, base.py),
            pz: vec_or(self.pz, base.pz),
            sweeps: self.sweeps.or(base.sweeps),
            burn_in: self.burn_in.or(base.burn_in),
            thin: self.thin.or(base.thin),
            bins: self.bins.or(base.bins),
            seed: self.seed.or(base.seed),
            output: self.output.or(base.output),
            dump_samples: self.dump_samples.or(base.dump_samples),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSpec {
    Ring { n: usize },
    Regular2d { d: usize, nx: usize, ny: usize },
    /// `d` is the total degree; layers have degree `d - 2`.
    Regular3d { d: usize, nx: usize, ny: usize, nz: usize },
    Complete { n: usize },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match *self {
            GraphSpec::Ring { n } => build_ring(n),
            GraphSpec::Regular2d { d, nx, ny } => build_2d_regular(d, nx, ny),
            GraphSpec::Regular3d { d, nx, ny, nz } => {
                if !(5..=8).contains(&d) {
                    return Err(Error::Graph(format!(
                        "3d-regular degree must lie in 5..=8, layers of degree d-2 (got d={d})"
                    )));
                }
                build_3d_stack(d - 2, nx, ny, nz)
            }
            GraphSpec::Complete { n } => build_complete(n),
        }
    }

    pub fn kind(&self) -> GraphKind {
        match self {
            GraphSpec::Ring { .. } => GraphKind::Ring,
            GraphSpec::Regular2d { .. } => GraphKind::Regular2d,
            GraphSpec::Regular3d { .. } => GraphKind::Regular3d,
            GraphSpec::Complete { .. } => GraphKind::Complete,
        }
    }

    /// Edge layout in words, for the metadata preamble.
    pub fn layout_variant(&self) -> String {
        fn layer(d: usize) -> &'static str {
            match d {
                3 => "brick wall, horizontal bonds at even x+y",
                4 => "square lattice",
                5 => "square lattice plus / diagonal on even-x plaquettes",
                6 => "square lattice plus every / diagonal",
                7 => "square lattice plus every / diagonal and \\ diagonal on even-x plaquettes",
                _ => "square lattice plus both diagonals",
            }
        }
        match *self {
            GraphSpec::Ring { .. } => "ring, edges (i, i+1 mod n)".into(),
            GraphSpec::Regular2d { d, .. } => format!("periodic {}", layer(d)),
            GraphSpec::Regular3d { d, .. } => {
                format!("periodic stack of layers ({}) joined to the layers above and below", layer(d - 2))
            }
            GraphSpec::Complete { .. } => "all pairs".into(),
        }
    }

    /// Degree `k` of the hypercubic cluster state, if the graph is one.
    pub fn cluster_degree(&self) -> Option<usize> {
        match *self {
            GraphSpec::Ring { .. } => Some(2),
            GraphSpec::Regular2d { d: 4, .. } => Some(4),
            GraphSpec::Regular3d { d: 6, .. } => Some(6),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// Inclusive linear grid in `p`.
    Depolarizing { p_min: f64, p_max: f64, steps: usize },
    /// Explicit `(px, py, pz)` channels, ascending in total `p`.
    Triples(Vec<(f64, f64, f64)>),
}

impl NoiseSpec {
    pub fn channels(&self) -> Result<Vec<NoiseModel>> {
        match *self {
            NoiseSpec::Depolarizing { p_min, p_max, steps } => linspace(p_min, p_max, steps)
                .into_iter()
                .map(NoiseModel::depolarizing)
                .collect(),
            NoiseSpec::Triples(ref t) => t.iter().map(|&(x, y, z)| NoiseModel::new(x, y, z)).collect(),
        }
    }
}

pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    }
}

/// A validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: GraphSpec,
    pub noise: NoiseSpec,
    pub method: Method,
    /// Present exactly when `method` is `mc`.
    pub mc: Option<MCConfig>,
    pub output: Option<PathBuf>,
    pub dump_samples: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn require<T>(v: Option<T>, flag: &str, graph: GraphKind) -> Result<T> {
    v.ok_or_else(|| config_err(format!("--{flag} is required for --graph {}", graph.as_str())))
}

fn forbid<T>(v: &Option<T>, flag: &str, context: &str) -> Result<()> {
    match v {
        Some(_) => Err(config_err(format!("--{flag} does not apply to {context}"))),
        None => Ok(()),
    }
}

impl RunConfig {
    /// Validates merged settings against every builder and solver
    /// precondition, building the graph once to check it.
    pub fn from_values(v: ConfigValues) -> Result<Self> {
        let kind = v.graph.ok_or_else(|| config_err("--graph is required"))?;
        let method = v.method.ok_or_else(|| config_err("--method is required"))?;
        let ctx = format!("--graph {}", kind.as_str());
        let graph = match kind {
            GraphKind::Ring | GraphKind::Complete => {
                for (val, flag) in [(&v.nx, "nx"), (&v.ny, "ny"), (&v.nz, "nz"), (&v.d, "d")] {
                    forbid(val, flag, &ctx)?;
                }
                let n = require(v.n, "n", kind)?;
                if kind == GraphKind::Ring {
                    GraphSpec::Ring { n }
                } else {
                    GraphSpec::Complete { n }
                }
            }
            GraphKind::Regular2d => {
                forbid(&v.n, "n", &ctx)?;
                forbid(&v.nz, "nz", &ctx)?;
                GraphSpec::Regular2d {
                    d: require(v.d, "d", kind)?,
                    nx: require(v.nx, "nx", kind)?,
                    ny: require(v.ny, "ny", kind)?,
                }
            }
            GraphKind::Regular3d => {
                forbid(&v.n, "n", &ctx)?;
                GraphSpec::Regular3d {
                    d: require(v.d, "d", kind)?,
                    nx: require(v.nx, "nx", kind)?,
                    ny: require(v.ny, "ny", kind)?,
                    nz: require(v.nz, "nz", kind)?,
                }
            }
        };
        let g = graph.build().map_err(|e| config_err(e.to_string()))?;

        match method {
            Method::Transfer if kind != GraphKind::Ring => {
                return Err(config_err(format!(
                    "--method transfer requires --graph 1d-cluster (got {})",
                    kind.as_str()
                )))
            }
            Method::Mf if graph.cluster_degree().is_none() => {
                return Err(config_err(
                    "--method mf requires a cluster state: 1d-cluster, 2d-regular with d=4 or 3d-regular with d=6",
                ))
            }
            Method::ClosedForm if kind != GraphKind::Complete => {
                return Err(config_err(format!(
                    "--method closed-form requires --graph complete (got {})",
                    kind.as_str()
                )))
            }
            Method::Exact | Method::SpinExact if g.n() > DEFAULT_ENUMERATION_CAP => {
                return Err(config_err(
                    Error::EnumerationCap {
                        n: g.n(),
                        cap: DEFAULT_ENUMERATION_CAP,
                    }
                    .to_string(),
                ))
            }
            _ => {}
        }

        let triples = !(v.px.is_empty() && v.py.is_empty() && v.pz.is_empty());
        let noise = if triples {
            for (val, flag) in [(&v.p_min, "p-min"), (&v.p_max, "p-max")] {
                forbid(val, flag, "--px/--py/--pz noise lists")?;
            }
            forbid(&v.p_steps, "p-steps", "--px/--py/--pz noise lists")?;
            if !matches!(method, Method::Exact | Method::SpinExact | Method::Mc) {
                return Err(config_err(format!(
                    "--px/--py/--pz require --method exact, spin-exact or mc (got {method})"
                )));
            }
            if v.px.len() != v.py.len() || v.px.len() != v.pz.len() {
                return Err(config_err(format!(
                    "--px, --py and --pz must be given the same number of times (got {}, {}, {})",
                    v.px.len(),
                    v.py.len(),
                    v.pz.len()
                )));
            }
            let t: Vec<(f64, f64, f64)> = (0..v.px.len()).map(|i| (v.px[i], v.py[i], v.pz[i])).collect();
            NoiseSpec::Triples(t)
        } else {
            let spec = NoiseSpec::Depolarizing {
                p_min: v.p_min.unwrap_or(0.05),
                p_max: v.p_max.unwrap_or(0.74),
                steps: v.p_steps.unwrap_or(70),
            };
            if let NoiseSpec::Depolarizing { p_min, p_max, steps } = spec {
                if steps == 0 {
                    return Err(config_err("--p-steps must be >= 1"));
                }
                if !(0.0..=0.75).contains(&p_min) || !(0.0..=0.75).contains(&p_max) {
                    return Err(config_err(format!(
                        "depolarizing p must lie in [0, 0.75] (got p-min={p_min}, p-max={p_max})"
                    )));
                }
                if steps > 1 && p_min >= p_max {
                    return Err(config_err(format!(
                        "--p-min must be below --p-max when --p-steps > 1 (got {p_min} >= {p_max})"
                    )));
                }
            }
            spec
        };
        let channels = noise.channels().map_err(|e| config_err(e.to_string()))?;
        if channels.windows(2).any(|w| w[1].p() < w[0].p()) {
            return Err(config_err("noise channels must be listed in ascending total p"));
        }
        if matches!(method, Method::SpinExact | Method::Mc) {
            for ch in channels.iter().filter(|c| c.p() > 0.0) {
                coupling_from_noise(ch, g.n()).map_err(|e| config_err(format!("--method {method}: {e}")))?;
            }
        }

        let mc_flags = [
            (v.sweeps.is_some(), "sweeps"),
            (v.burn_in.is_some(), "burn-in"),
            (v.thin.is_some(), "thin"),
            (v.bins.is_some(), "bins"),
            (v.seed.is_some(), "seed"),
            (v.dump_samples.is_some(), "dump-samples"),
        ];
        let mc = if method == Method::Mc {
            let d = MCConfig::default();
            let mc = MCConfig {
                sweeps: v.sweeps.unwrap_or(d.sweeps),
                burn_in: v.burn_in.unwrap_or(d.burn_in),
                thin: v.thin.unwrap_or(d.thin),
                seed: v.seed.unwrap_or(d.seed),
                bins: v.bins.unwrap_or(d.bins),
            };
            mc.validate()?;
            Some(mc)
        } else {
            if let Some((_, flag)) = mc_flags.iter().find(|(set, _)| *set) {
                return Err(config_err(format!("--{flag} only applies to --method mc")));
            }
            None
        };
        Ok(RunConfig {
            graph,
            noise,
            method,
            mc,
            output: v.output,
            dump_samples: v.dump_samples,
        })
    }

    /// The settings that determine the computed rows, in config-file syntax.
    pub fn to_config_text(&self) -> String {
        let mut lines = vec![format!("graph = {}", self.graph.kind().as_str())];
        match self.graph {
            GraphSpec::Ring { n } | GraphSpec::Complete { n } => lines.push(format!("n = {n}")),
            GraphSpec::Regular2d { d, nx, ny } => {
                lines.extend([format!("d = {d}"), format!("nx = {nx}"), format!("ny = {ny}")])
            }
            GraphSpec::Regular3d { d, nx, ny, nz } => lines.extend([
                format!("d = {d}"),
                format!("nx = {nx}"),
                format!("ny = {ny}"),
                format!("nz = {nz}"),
            ]),
        }
        lines.push(format!("method = {}", self.method));
        match &self.noise {
            NoiseSpec::Depolarizing { p_min, p_max, steps } => lines.extend([
                format!("p-min = {p_min:?}"),
                format!("p-max = {p_max:?}"),
                format!("p-steps = {steps}"),
            ]),
            NoiseSpec::Triples(t) => {
                for &(x, y, z) in t {
                    lines.extend([format!("px = {x:?}"), format!("py = {y:?}"), format!("pz = {z:?}")]);
                }
            }
        }
        if let Some(mc) = &self.mc {
            lines.extend([
                format!("sweeps = {}", mc.sweeps),
                format!("burn-in = {}", mc.burn_in),
                format!("thin = {}", mc.thin),
                format!("bins = {}", mc.bins),
                format!("seed = {}", mc.seed),
            ]);
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

/// Parses command-line arguments (including the program name) and an
/// optional `--config` file. Help and version requests come back as
/// [`Error::Config`] carrying the rendered text.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| config_err(e.to_string()))?;
    config_from_cli(cli)
}

pub fn config_from_cli(cli: Cli) -> Result<RunConfig> {
    let values = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let file = parse_config_text(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            cli.values.or(file)
        }
        None => cli.values,
    };
    RunConfig::from_values(values)
}

// ---------------------------------------------------------------------------
// Running

/// Rows, preamble entries and optional raw samples of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// `(key, value)` preamble entries; repeated `config` keys carry the
    /// configuration one line at a time.
    pub metadata: Vec<(String, String)>,
    /// Encoded energy series when `dump_samples` was requested.
    pub samples: Option<Vec<u8>>,
    /// Not part of the CSV, so reruns stay byte-identical.
    pub wall_time: Duration,
}

/// Inverse temperature column: `ln((1-p)/px)` with `J_x = 1`.
fn beta_column(noise: &NoiseModel) -> f64 {
    if noise.is_depolarizing() {
        depolarizing_beta(noise.p())
    } else {
        ((1.0 - noise.p()) / noise.px()).ln()
    }
}

struct Point {
    log_fidelity: f64,
    energy: Option<f64>,
    specific_heat: Option<f64>,
}

fn exact_row(cfg: &RunConfig, g: &Graph, noise: &NoiseModel, pt: Point) -> Result<SweepRow> {
    let n = g.n() as f64;
    let per = (pt.log_fidelity / n).exp();
    if !(per > 0.0 && per <= 1.0 + 1e-12) {
        return Err(Error::Numerical(format!("fidelity per qubit {per} outside (0, 1]")));
    }
    Ok(SweepRow {
        p: noise.p(),
        beta: beta_column(noise),
        fidelity_per_qubit: per.min(1.0),
        log_fidelity: pt.log_fidelity.min(0.0),
        energy_per_qubit: pt.energy,
        specific_heat_per_qubit: pt.specific_heat,
        err_fidelity: 0.0,
        err_energy: 0.0,
        err_specific_heat: 0.0,
        method: cfg.method,
        graph_descriptor: g.descriptor().to_string(),
        seed: None,
    })
}

/// Energy and specific heat per qubit from a histogram: Boltzmann weights
/// are proportional to the pattern probabilities, energies come from the
/// couplings. `None` where the mapping is undefined.
fn histogram_thermal(hist: &WeightHistogram, noise: &NoiseModel) -> Option<(f64, f64)> {
    if noise.p() == 0.0 {
        return Some((0.0, 0.0));
    }
    let n = hist.n();
    let cp = coupling_from_noise(noise, n).ok()?;
    let entries: Vec<(f64, f64)> = hist
        .iter()
        .map(|(w, c)| ((c as f64).ln() + noise.log_pattern_probability(w, n), cp.energy_of(w)))
        .collect();
    let logs: Vec<f64> = entries.iter().map(|e| e.0).collect();
    let lz = log_sum_exp(&logs);
    let weights: Vec<f64> = logs.iter().map(|l| (l - lz).exp()).collect();
    let mean: f64 = weights.iter().zip(&entries).map(|(w, e)| w * e.1).sum();
    let var: f64 = weights.iter().zip(&entries).map(|(w, e)| w * (e.1 - mean).powi(2)).sum();
    let nf = n as f64;
    Some((mean / nf, cp.beta * cp.beta * var / nf))
}

fn with_context(method: Method, at: String) -> impl Fn(Error) -> Error {
    move |e| Error::Solver {
        method: method.to_string(),
        at: at.clone(),
        source: Box::new(e),
    }
}

fn at_p(noise: &NoiseModel) -> String {
    format!("p={}", noise.p())
}

/// Runs the configured solver over the noise grid.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutput> {
    let start = Instant::now();
    let g = cfg.graph.build()?;
    let channels = cfg.noise.channels()?;
    let n = g.n();
    let mut samples = None;
    let mut metastable = Vec::new();
    let rows: Vec<SweepRow> = match cfg.method {
        Method::Exact | Method::SpinExact => {
            let ctx = with_context(cfg.method, "enumeration".into());
            let hist = if cfg.method == Method::Exact {
                enumerate_weights(&g)
            } else {
                spin_histogram(&g)
            }
            .map_err(&ctx)?;
            channels
                .iter()
                .map(|noise| {
                    let log_fidelity = if noise.p() == 0.0 {
                        0.0
                    } else if cfg.method == Method::Exact {
                        hist.log_fidelity(noise)
                    } else {
                        let cp = coupling_from_noise(noise, n).map_err(with_context(cfg.method, at_p(noise)))?;
                        log_partition_function(&hist, &cp)
                    };
                    let thermal = histogram_thermal(&hist, noise);
                    let pt = Point {
                        log_fidelity,
                        energy: thermal.map(|t| t.0),
                        specific_heat: thermal.map(|t| t.1),
                    };
                    exact_row(cfg, &g, noise, pt).map_err(with_context(cfg.method, at_p(noise)))
                })
                .collect::<Result<_>>()?
        }
        Method::Transfer => channels
            .iter()
            .map(|noise| {
                let ctx = with_context(cfg.method, at_p(noise));
                let f = fidelity_1d(ChainSize::Finite(n), noise.p()).map_err(&ctx)?;
                let o = observables_1d(ChainSize::Finite(n), noise.p()).map_err(&ctx)?;
                let pt = Point {
                    log_fidelity: f.log_fidelity.expect("finite chain"),
                    energy: Some(o.energy_per_qubit),
                    specific_heat: Some(o.specific_heat_per_qubit),
                };
                exact_row(cfg, &g, noise, pt).map_err(&ctx)
            })
            .collect::<Result<_>>()?,
        Method::Mf => {
            let k = cfg.graph.cluster_degree().expect("validated cluster state");
            channels
                .iter()
                .map(|noise| {
                    let ctx = with_context(cfg.method, at_p(noise));
                    let p = noise.p();
                    let (per, energy) = if p == 0.0 {
                        (1.0, 0.0)
                    } else if p == 0.75 {
                        (0.5, 0.75)
                    } else {
                        let s = solve_self_consistent(k, depolarizing_beta(p)).map_err(&ctx)?;
                        (s.fidelity_per_qubit, s.b * s.magnetization + s.d_per_qubit)
                    };
                    let pt = Point {
                        log_fidelity: n as f64 * per.ln(),
                        energy: Some(energy),
                        specific_heat: None,
                    };
                    exact_row(cfg, &g, noise, pt).map_err(&ctx)
                })
                .collect::<Result<_>>()?
        }
        Method::ClosedForm => channels
            .iter()
            .map(|noise| {
                let ctx = with_context(cfg.method, at_p(noise));
                let f = fidelity_complete_closed_form(n, noise.p()).map_err(&ctx)?;
                let pt = Point {
                    log_fidelity: f.ln(),
                    energy: None,
                    specific_heat: None,
                };
                exact_row(cfg, &g, noise, pt).map_err(&ctx)
            })
            .collect::<Result<_>>()?,
        Method::Mc => {
            let mc = cfg.mc.expect("validated mc config");
            let keep = cfg.dump_samples.is_some();
            let sweep: McSweep = match &cfg.noise {
                NoiseSpec::Depolarizing { p_min, p_max, steps } => {
                    let ps: Vec<f64> = channels.iter().map(NoiseModel::p).collect();
                    sweep_depolarizing(&g, &ps, &mc, keep)
                        .map_err(with_context(cfg.method, format!("p grid {p_min}..{p_max} ({steps} points)")))?
                }
                NoiseSpec::Triples(_) => {
                    sweep_noise(&g, &channels, &mc, keep).map_err(with_context(cfg.method, "noise list".into()))?
                }
            };
            if keep {
                let series: Vec<&[f64]> = sweep
                    .grids
                    .iter()
                    .flat_map(|grid| grid.nodes.iter())
                    .filter_map(|node| node.samples.as_ref())
                    .flat_map(|s| [s[0].as_slice(), s[1].as_slice()])
                    .collect();
                samples = Some(encode_samples(&series));
            }
            metastable = sweep.metastable;
            sweep.rows
        }
    };
    let mut metadata = metadata(cfg, &g);
    if matches!(cfg.noise, NoiseSpec::Triples(_)) {
        let negative = row_list(channels.iter().map(|ch| {
            ch.p() > 0.0 && coupling_from_noise(ch, n).is_ok_and(|cp| cp.has_negative_coupling())
        }));
        metadata.push(("negative-coupling".to_string(), negative));
    }
    if cfg.method == Method::Mc {
        metadata.push(("metastable".to_string(), row_list(metastable.into_iter())));
    }
    Ok(SweepOutput {
        metadata,
        rows,
        samples,
        wall_time: start.elapsed(),
    })
}

/// Zero-based data row indices where `flags` is set, or `none`.
fn row_list(flags: impl Iterator<Item = bool>) -> String {
    let rows: Vec<String> = flags.enumerate().filter(|(_, f)| *f).map(|(i, _)| i.to_string()).collect();
    if rows.is_empty() {
        "none".into()
    } else {
        format!("rows {}", rows.join(" "))
    }
}

fn metadata(cfg: &RunConfig, g: &Graph) -> Vec<(String, String)> {
    let mut meta = vec![
        ("program".to_string(), format!("graphfid {}", env!("CARGO_PKG_VERSION"))),
        ("graph".to_string(), g.descriptor().to_string()),
        ("layout".to_string(), cfg.graph.layout_variant()),
        ("energy".to_string(), "E = -d ln Z'/d beta (Pauli letters weighted by couplings, J_x = 1), offset excluded".to_string()),
    ];
    if let Some(mc) = &cfg.mc {
        let d = MCConfig::default();
        meta.push((
            "mc".to_string(),
            format!(
                "sweeps={} burn_in={} thin={} bins={} seed={} (defaults sweeps={} burn_in={} thin={} bins={} seed={})",
                mc.sweeps, mc.burn_in, mc.thin, mc.bins, mc.seed, d.sweeps, d.burn_in, d.thin, d.bins, d.seed
            ),
        ));
        meta.push(("mc-scheme".to_string(), scheme_description()));
    }
    meta.extend(cfg.to_config_text().lines().map(|l| ("config".to_string(), l.to_string())));
    meta
}

// ---------------------------------------------------------------------------
// CSV

/// `x` with 12 significant digits, fixed notation for moderate exponents
/// and scientific otherwise, trailing zeros removed.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig12).unwrap_or_default()
}

/// Writes the preamble, header and rows to `out`.
pub fn write_csv_to<W: Write>(out: W, rows: &[SweepRow], metadata: &[(String, String)]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: "<output>".into(),
        msg: e.to_string(),
    };
    let mut out = out;
    for (k, v) in metadata {
        writeln!(out, "# {k}: {v}").map_err(io)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Io {
        path: "<output>".into(),
        msg: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            format_sig12(r.p),
            format_sig12(r.beta),
            format_sig12(r.fidelity_per_qubit),
            format_sig12(r.log_fidelity),
            opt(r.energy_per_qubit),
            opt(r.specific_heat_per_qubit),
            format_sig12(r.err_fidelity),
            format_sig12(r.err_energy),
            format_sig12(r.err_specific_heat),
            r.method.to_string(),
            r.graph_descriptor.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

/// Writes the CSV to `path`.
pub fn write_csv(rows: &[SweepRow], metadata: &[(String, String)], path: &Path) -> Result<()> {
    let with_path = |e: Error| match e {
        Error::Io { msg, .. } => Error::Io {
            path: path.display().to_string(),
            msg,
        },
        other => other,
    };
    let file = fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    write_csv_to(std::io::BufWriter::new(file), rows, metadata).map_err(with_path)
}

/// Parsed CSV: preamble entries and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<SweepRow>,
}

impl CsvTable {
    /// Reassembles the `config` preamble lines into config-file text.
    pub fn config_text(&self) -> String {
        self.metadata
            .iter()
            .filter(|(k, _)| k == "config")
            .map(|(_, v)| format!("{v}\n"))
            .collect()
    }
}

/// Parses text produced by [`write_csv_to`].
pub fn read_csv(text: &str) -> Result<CsvTable> {
    let mut metadata = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix('#') else { break };
        let (k, v) = rest
            .trim_start()
            .split_once(": ")
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "preamble line is not `# key: value`".into(),
            })?;
        metadata.push((k.to_string(), v.to_string()));
    }
    let skipped = metadata.len();
    let body: usize = text.lines().take(skipped).map(|l| l.len() + 1).sum();
    let body = text.get(body.min(text.len())..).unwrap_or("");
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let line_of = |pos: Option<&csv::Position>| pos.map_or(0, |p| p.line() as usize) + skipped;
    let header = reader.headers().map_err(|e| Error::Parse {
        line: line_of(e.position()),
        msg: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: skipped + 1,
            msg: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: line_of(e.position()),
            msg: e.to_string(),
        })?;
        let line = line_of(rec.position());
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {:?}: {e}", CSV_HEADER[i], &rec[i])))
        };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        rows.push(SweepRow {
            p: num(0)?,
            beta: num(1)?,
            fidelity_per_qubit: num(2)?,
            log_fidelity: num(3)?,
            energy_per_qubit: opt_num(4)?,
            specific_heat_per_qubit: opt_num(5)?,
            err_fidelity: num(6)?,
            err_energy: num(7)?,
            err_specific_heat: num(8)?,
            method: rec[9].parse().map_err(|e: Error| bad(e.to_string()))?,
            graph_descriptor: rec[10].to_string(),
            seed: if rec[11].is_empty() {
                None
            } else {
                Some(rec[11].parse().map_err(|e| bad(format!("seed {:?}: {e}", &rec[11])))?)
            },
        });
    }
    Ok(CsvTable { metadata, rows })
}
