//! The `selfsim` command line: a JSON config in, provenance-stamped CSV or
//! JSON files out.
//!
//! Exit codes: 0 on success, 2 on a config error (the message names the JSON
//! path), 3 when a size cap is exceeded, 1 on any other failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::erdos_kahane::{
    brute_force_e, enumerate_sequence_count, fit_h, split_sampled, theta_sequence, thetas_of, uniqueness_sweep,
    EGrid, Growth, MAX_BRUTE_FORCE_M,
};
use crate::error::Error;
use crate::fourier::{decay_exponent, ft_product_many, log_frequencies};
use crate::ifs_core::{Ifs1, PlanarIfs, Point2};
use crate::measure_numerics::{
    density_histogram, l2_curve, l2_exponent, level_n_ssm, sample_ssm, verify_disintegration, DisintegrationMode,
};
use crate::param_family::{parse_expr, Domain, Expr, ParamIfs1};
use crate::projection_app::{angle_scan, carpet, project_family, uniform_angles, ScanConfig};
use crate::random_model::{sample_types, FactorFilter, StreamKey, Truncation};
use crate::transversality::{check_order_k_with, p1_estimate, DEFAULT_PAIR_CAP, PROJECTION_DELTA};
use crate::type_model::{AtomicMeasure, RandomModel, TypeVec, TypedSystem, DEFAULT_WORD_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Similarity dimension of the system.
    Simdim,
    /// Enumerate the types of length-N blocks with q, m and λ.
    Types,
    /// Table of minimal gaps Δ_n.
    Delta,
    /// Grid certificate for transversality of the parameter family.
    Transversality,
    /// Check μ = ∫ η^ω dℙ exactly or by Monte Carlo.
    Disintegrate,
    /// Fourier transforms of sampled η^ω on a frequency grid.
    Fourier,
    /// Erdős–Kahane counting experiments.
    Ek,
    /// Per-angle diagnostics for a planar system.
    ScanAngles,
    /// Histogram and L² indicator of μ_u.
    Density,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simdim => "simdim",
            Command::Types => "types",
            Command::Delta => "delta",
            Command::Transversality => "transversality",
            Command::Disintegrate => "disintegrate",
            Command::Fourier => "fourier",
            Command::Ek => "ek",
            Command::ScanAngles => "scan-angles",
            Command::Density => "density",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "selfsim", version, about = "Numerics for self-similar measures and their projections")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Path to the JSON config.
    pub config: PathBuf,
    /// Block length, overriding the command's `N`.
    #[arg(long = "N")]
    pub block: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write a matplotlib script next to each table.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(Error::CapExceeded { .. }) => 3,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(c) => write!(f, "config error at `{}`: {}", c.path, c.message),
            CliError::Run(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;
type ConfigResult<T> = std::result::Result<T, ConfigError>;

/// A position in the config tree, remembered for error messages.
#[derive(Clone, Copy)]
struct Node<'a> {
    value: &'a Value,
    path: &'a str,
}

struct Owned {
    value: Value,
    path: String,
}

impl Owned {
    fn node(&self) -> Node<'_> {
        Node { value: &self.value, path: &self.path }
    }
}

impl<'a> Node<'a> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError { path: self.path.to_string(), message: message.into() }
    }

    fn child_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<Owned> {
        self.value.get(key).map(|v| Owned { value: v.clone(), path: self.child_path(key) })
    }

    fn req(&self, key: &str) -> ConfigResult<Owned> {
        if !self.value.is_object() {
            return Err(self.err("expected an object"));
        }
        self.get(key).ok_or_else(|| ConfigError { path: self.child_path(key), message: "missing field".into() })
    }

    fn f64(&self) -> ConfigResult<f64> {
        match self.value {
            Value::Number(n) => n.as_f64().ok_or_else(|| self.err("expected a number")),
            Value::String(s) => {
                let e = parse_expr(s).map_err(|e| self.err(format!("bad expression: {e}")))?;
                if e.depends_on_param() {
                    return Err(self.err("expected a constant"));
                }
                e.eval(0.0).map_err(|e| self.err(e.to_string()))
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn usize(&self) -> ConfigResult<usize> {
        self.value
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| self.err("expected a non-negative integer"))
    }

    fn u128(&self) -> ConfigResult<u128> {
        match self.value.as_u64() {
            Some(v) => Ok(v as u128),
            None => match self.value.as_f64() {
                Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as u128),
                _ => Err(self.err("expected a non-negative integer")),
            },
        }
    }

    fn bool(&self) -> ConfigResult<bool> {
        self.value.as_bool().ok_or_else(|| self.err("expected true or false"))
    }

    fn str(&self) -> ConfigResult<&'a str> {
        self.value.as_str().ok_or_else(|| self.err("expected a string"))
    }

    fn items(&self) -> ConfigResult<Vec<Owned>> {
        let arr = self.value.as_array().ok_or_else(|| self.err("expected an array"))?;
        Ok(arr.iter().enumerate().map(|(i, v)| Owned { value: v.clone(), path: format!("{}[{i}]", self.path) }).collect())
    }

    fn f64_list(&self) -> ConfigResult<Vec<f64>> {
        self.items()?.iter().map(|o| o.node().f64()).collect()
    }

    fn usize_list(&self) -> ConfigResult<Vec<usize>> {
        self.items()?.iter().map(|o| o.node().usize()).collect()
    }

    fn f64_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        self.get(key).map_or(Ok(default), |o| o.node().f64())
    }

    fn usize_or(&self, key: &str, default: usize) -> ConfigResult<usize> {
        self.get(key).map_or(Ok(default), |o| o.node().usize())
    }

    fn opt_f64(&self, key: &str) -> ConfigResult<Option<f64>> {
        self.get(key).map(|o| o.node().f64()).transpose()
    }
}

/// The system described by the config.
pub struct System {
    family: ParamIfs1,
    planar: Option<PlanarIfs>,
}

fn parse_system(root: Node<'_>) -> ConfigResult<System> {
    let sys = root.req("system")?;
    let sys = sys.node();
    if let Some(preset) = sys.get("preset") {
        let node = preset.node();
        return match node.str()? {
            "carpet" => {
                let planar = carpet();
                let family = project_family(&planar).map_err(|e| node.err(e.to_string()))?;
                Ok(System { family, planar: Some(planar) })
            }
            other => Err(node.err(format!("unknown preset `{other}`"))),
        };
    }
    let dim_node = sys.req("dim")?;
    let dim = dim_node.node().usize()?;
    if dim != 1 && dim != 2 {
        return Err(dim_node.node().err("dim must be 1 or 2"));
    }
    let maps_node = sys.req("maps")?;
    let maps = maps_node.node().items()?;
    if maps.is_empty() {
        return Err(maps_node.node().err("at least one map is required"));
    }
    let mut ratios = Vec::with_capacity(maps.len());
    let mut line_t = Vec::new();
    let mut plane_t = Vec::new();
    for m in &maps {
        let m = m.node();
        let lam = m.req("lambda")?;
        let r = lam.node().f64()?;
        if !(r > 0.0 && r < 1.0) {
            return Err(lam.node().err(format!("ratio {r} must lie in (0, 1)")));
        }
        ratios.push(r);
        let t = m.req("t")?;
        let t = t.node();
        if dim == 1 {
            line_t.push(expr_of(t)?);
        } else {
            let parts = t.items()?;
            if parts.len() != 2 {
                return Err(t.err("planar translations need two coordinates"));
            }
            let p: Point2 = [parts[0].node().f64()?, parts[1].node().f64()?];
            plane_t.push(p);
        }
    }
    let p_node = sys.req("p")?;
    let p = p_node.node().f64_list()?;
    if p.len() != ratios.len() {
        return Err(p_node.node().err(format!("{} weights for {} maps", p.len(), ratios.len())));
    }
    if p.iter().any(|&w| !(w > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(p_node.node().err("weights must be positive and sum to 1"));
    }
    let total: f64 = p.iter().sum();
    let p: Vec<f64> = p.iter().map(|w| w / total).collect();

    if dim == 2 {
        let planar = PlanarIfs::from_parts(&ratios, &plane_t, p).map_err(|e| sys.err(e.to_string()))?;
        let family = project_family(&planar).map_err(|e| sys.err(e.to_string()))?;
        return Ok(System { family, planar: Some(planar) });
    }
    let (lo, hi) = match root.get("domain") {
        Some(d) => {
            let v = d.node().f64_list()?;
            if v.len() != 2 {
                return Err(d.node().err("domain must be [a, b]"));
            }
            (v[0], v[1])
        }
        None => (0.0, 1.0),
    };
    let periodic = root.get("periodic").map(|o| o.node().bool()).transpose()?.unwrap_or(false);
    let domain = Domain::new(lo, hi, periodic).map_err(|e| ConfigError { path: "domain".into(), message: e.to_string() })?;
    let family = ParamIfs1::new(ratios, line_t, p, domain).map_err(|e| sys.err(e.to_string()))?;
    Ok(System { family, planar: None })
}

fn expr_of(node: Node<'_>) -> ConfigResult<Expr> {
    match node.value {
        Value::Number(n) => Ok(Expr::Num(n.as_f64().ok_or_else(|| node.err("expected a number"))?)),
        Value::String(s) => parse_expr(s).map_err(|e| node.err(format!("bad expression: {e}"))),
        _ => Err(node.err("expected a number or an expression string")),
    }
}

impl System {
    fn depends_on_param(&self) -> bool {
        self.family.translations().iter().any(Expr::depends_on_param)
    }

    /// The line system at `u`; `u` is required when translations depend on it.
    fn frozen(&self, block: Node<'_>) -> ConfigResult<(Ifs1, Option<f64>)> {
        let u = block.opt_f64("u")?;
        if u.is_none() && self.depends_on_param() {
            return Err(ConfigError { path: block.child_path("u"), message: "missing field".into() });
        }
        let at = u.unwrap_or(self.family.domain().lo);
        let ifs = self.family.freeze(at).map_err(|e| block.err(format!("cannot freeze at u = {at}: {e}")))?;
        Ok((ifs, u))
    }

    fn simdim(&self) -> crate::error::Result<f64> {
        crate::ifs_core::similarity_dimension(self.family.lambdas(), self.family.weights())
    }
}

/// A cell of an output table.
#[derive(Debug, Clone)]
enum Cell {
    F(f64),
    I(i128),
    S(String),
    B(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(v) => v.to_string(),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.replace(',', ";"),
            Cell::B(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::I(v) => json!(*v as i64),
            Cell::S(s) => json!(s),
            Cell::B(b) => json!(b),
            Cell::Empty => Value::Null,
        }
    }
}

fn opt_cell(v: Option<f64>) -> Cell {
    v.map_or(Cell::Empty, Cell::F)
}

struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
    /// Columns and log axes for the optional plot script.
    plot: Option<(&'static str, &'static str, bool, bool)>,
}

impl Table {
    fn new(columns: Vec<&'static str>) -> Self {
        Table { columns, rows: Vec::new(), plot: None }
    }

    fn with_plot(mut self, x: &'static str, y: &'static str, logx: bool, logy: bool) -> Self {
        self.plot = Some((x, y, logx, logy));
        self
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    fn json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut obj = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    obj.insert(c.to_string(), v.json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("table serialises");
        s.push('\n');
        s
    }
}

struct Output {
    dir: PathBuf,
    format: Format,
    plot: bool,
    header: String,
    written: Vec<PathBuf>,
}

impl Output {
    fn write(&mut self, file: &str, extra_header: &[String], body: &str) -> CliResult<()> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::Io(format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(file);
        let mut text = self.header.clone();
        for h in extra_header {
            let _ = writeln!(text, "# {h}");
        }
        text.push_str(body);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn table(&mut self, name: &str, table: &Table, extra_header: &[String]) -> CliResult<()> {
        let (ext, body) = match self.format {
            Format::Csv => ("csv", table.csv()),
            Format::Json => ("json", table.json()),
        };
        let file = format!("{name}.{ext}");
        self.write(&file, extra_header, &body)?;
        if self.plot {
            if let Some(axes) = table.plot {
                let script = plot_script(&file, self.format, axes);
                self.write(&format!("{name}.plot.py"), &[], &script)?;
            }
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        body.push('\n');
        self.write(&format!("{name}.json"), &[], &body)
    }
}

fn plot_script(data: &str, format: Format, (x, y, logx, logy): (&str, &str, bool, bool)) -> String {
    let loader = match format {
        Format::Csv => "rows = list(csv.DictReader(l for l in f if not l.startswith(\"#\")))",
        Format::Json => "rows = json.loads(\"\".join(l for l in f if not l.startswith(\"#\")))",
    };
    let stem = data.rsplit_once('.').map_or(data, |s| s.0);
    format!(
        "import csv\nimport json\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n\
         with open(\"{data}\") as f:\n    {loader}\n\
         pts = [(float(r[\"{x}\"]), float(r[\"{y}\"])) for r in rows if r[\"{x}\"] not in (None, \"\") and r[\"{y}\"] not in (None, \"\")]\n\
         plt.plot([p[0] for p in pts], [p[1] for p in pts], \".-\")\n\
         plt.xlabel(\"{x}\")\nplt.ylabel(\"{y}\")\n{}{}\
         plt.savefig(\"{stem}.png\", dpi=150)\n",
        if logx { "plt.xscale(\"log\")\n" } else { "" },
        if logy { "plt.yscale(\"log\")\n" } else { "" },
    )
}

/// Block settings for a command, `{}` when absent.
fn block<'a>(root: Node<'a>, name: &str) -> Owned {
    root.get(name).unwrap_or(Owned { value: json!({}), path: name.to_string() })
}

fn block_len(cli: &Cli, b: Node<'_>, default: usize) -> ConfigResult<usize> {
    let n = match cli.block {
        Some(n) => n,
        None => b.usize_or("N", default)?,
    };
    if n == 0 {
        return Err(ConfigError { path: b.child_path("N"), message: "N must be at least 1".into() });
    }
    Ok(n)
}

fn frequencies(b: Node<'_>, lo: f64, hi: f64, count: usize) -> ConfigResult<Vec<f64>> {
    match b.get("xi") {
        Some(x) if x.value.is_array() => x.node().f64_list(),
        Some(x) => {
            let n = x.node();
            let (lo, hi, count) = (n.f64_or("lo", lo)?, n.f64_or("hi", hi)?, n.usize_or("count", count)?);
            if !(lo > 0.0 && hi > lo) || count == 0 {
                return Err(n.err("need 0 < lo < hi and count ≥ 1"));
            }
            Ok(log_frequencies(lo, hi, count))
        }
        None => Ok(log_frequencies(lo, hi, count)),
    }
}

fn filter_of(b: Node<'_>) -> ConfigResult<FactorFilter> {
    let s = b.usize_or("s", 2)?;
    let choice = b.get("filter");
    let name = match &choice {
        Some(o) => o.node().str()?,
        None => "all",
    };
    let f = match name {
        "all" => FactorFilter::All,
        "small" => FactorFilter::Small(s),
        "big" => FactorFilter::Big(s),
        other => {
            return Err(ConfigError { path: b.child_path("filter"), message: format!("unknown filter `{other}`") })
        }
    };
    f.validate().map_err(|e| ConfigError { path: b.child_path("s"), message: e.to_string() })?;
    Ok(f)
}

fn tau_counts(t: &TypeVec) -> String {
    t.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_simdim(sys: &System, out: &mut Output) -> CliResult<()> {
    let s = match &sys.planar {
        Some(p) => p.similarity_dimension()?,
        None => sys.simdim()?,
    };
    let mut t = Table::new(vec!["similarity_dimension"]);
    t.push(vec![Cell::F(s)]);
    out.table("simdim", &t, &[])?;
    println!("{s}");
    Ok(())
}

fn cmd_types(cli: &Cli, sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "types");
    let b = b.node();
    let n = block_len(cli, b, 1)?;
    let ifs = sys.family.freeze(sys.family.domain().lo)?;
    let typed = TypedSystem::with_caps(&ifs, n, cap(b, "type_cap", crate::type_model::DEFAULT_TYPE_CAP)?, DEFAULT_WORD_CAP)?;
    let mut t = Table::new(vec!["index", "tau", "q", "m", "lambda", "underflow"]).with_plot("index", "q", false, true);
    let mut total = 0.0;
    for (i, info) in typed.infos().iter().enumerate() {
        total += info.q;
        t.push(vec![
            Cell::I(i as i128),
            Cell::S(tau_counts(&info.tau)),
            Cell::F(info.q),
            Cell::S(info.multiplicity.to_string()),
            Cell::F(info.lambda),
            Cell::B(info.underflow),
        ]);
    }
    out.table("types", &t, &[])?;
    println!("{} types, sum of q = {total}", typed.infos().len());
    Ok(())
}

fn cap(b: Node<'_>, key: &str, default: u128) -> ConfigResult<u128> {
    b.get(key).map_or(Ok(default), |o| o.node().u128())
}

fn cmd_delta(sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "delta");
    let b = b.node();
    let (ifs, _) = sys.frozen(b)?;
    let n_max = b.usize_or("n_max", 8)?;
    let word_cap = cap(b, "word_cap", DEFAULT_WORD_CAP)?;
    let gaps = p1_estimate(&ifs, n_max, word_cap)?;
    let mut t = Table::new(vec!["n", "delta", "log_delta_over_n"]).with_plot("n", "delta", false, true);
    for &(n, d, rate) in &gaps.rates {
        t.push(vec![Cell::I(n as i128), Cell::F(d), opt_cell(rate)]);
    }
    out.table("delta", &t, &[])?;
    match gaps.first_overlap {
        Some(n) => println!("exact overlap at n = {n}"),
        None => println!("no exact overlap up to n = {n_max}; best rate {:?}", gaps.best_rate),
    }
    Ok(())
}

fn cmd_transversality(sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "transversality");
    let b = b.node();
    let n = b.usize_or("n", 1)?;
    let order = b.usize_or("order", 1)?;
    let step = b.f64_or("grid_step", 1e-3)?;
    let pair_cap = cap(b, "pair_cap", DEFAULT_PAIR_CAP)?;
    if n == 0 {
        return Err(ConfigError { path: b.child_path("n"), message: "n must be at least 1".into() }.into());
    }
    let c = match b.opt_f64("c")? {
        Some(c) => c,
        None => {
            let Some(planar) = &sys.planar else {
                return Err(ConfigError {
                    path: b.child_path("c"),
                    message: "missing field (automatic c needs a planar system)".into(),
                }
                .into());
            };
            PROJECTION_DELTA * min_planar_gap(planar, n)?.powf(1.0 / n as f64)
        }
    };
    let cert = check_order_k_with(&sys.family, n, order, c, step, pair_cap)?;
    out.json("transversality", &cert)?;
    println!("{}", serde_json::to_string(&cert.verdict).map_err(|e| CliError::Io(e.to_string()))?);
    Ok(())
}

/// Smallest distance between composition points of distinct words of length `n`.
fn min_planar_gap(planar: &PlanarIfs, n: usize) -> crate::error::Result<f64> {
    let pts = planar.level_points(n, 1 << 16)?;
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.min(((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
        }
    }
    Ok(best)
}

fn cmd_disintegrate(cli: &Cli, sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "disintegrate");
    let b = b.node();
    let (ifs, _) = sys.frozen(b)?;
    let n = block_len(cli, b, 2)?;
    let k = b.usize_or("k", 2)?;
    let typed = TypedSystem::new(&ifs, n)?;
    let mode_name = match b.get("mode") {
        Some(o) => o.node().str()?.to_string(),
        None => "exact".into(),
    };
    let mode = match mode_name.as_str() {
        "exact" => DisintegrationMode::Exact,
        "monte_carlo" => DisintegrationMode::MonteCarlo {
            samples: b.usize_or("samples", 20_000)?,
            frequencies: frequencies(b, 1.0, 100.0, 10)?,
            seed: cli.seed,
        },
        other => {
            return Err(ConfigError { path: b.child_path("mode"), message: format!("unknown mode `{other}`") }.into())
        }
    };
    let report = verify_disintegration(&typed, k, &mode)?;
    out.json("disintegrate", &json!({ "mode": mode, "report": report }))?;
    println!("max error {} over {} sequences", report.max_error, report.sequences);
    Ok(())
}

fn cmd_fourier(cli: &Cli, sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "fourier");
    let b = b.node();
    let (ifs, _) = sys.frozen(b)?;
    let n = block_len(cli, b, 2)?;
    let typed = TypedSystem::new(&ifs, n)?;
    let xis = frequencies(b, 1.0, 1e4, 48)?;
    let tol = b.f64_or("tol", 1e-6)?;
    let filter = filter_of(b)?;
    let ensemble = b.usize_or("ensemble", 4)?;
    let mut t = Table::new(vec!["omega", "xi", "re", "im", "abs", "tail_error"]).with_plot("xi", "abs", true, true);
    let mut d = Table::new(vec!["omega", "exponent", "constant", "slope", "bins"]);
    for e in 0..ensemble {
        let omega = sample_types(&typed, StreamKey::new(cli.seed, "omega", e as u64), 1)?;
        let samples = ft_product_many(&typed, &omega, &xis, Truncation::Tail(tol), filter)?;
        for s in &samples {
            t.push(vec![
                Cell::I(e as i128),
                Cell::F(s.xi),
                Cell::F(s.value.re),
                Cell::F(s.value.im),
                Cell::F(s.value.norm()),
                Cell::F(s.tail_error),
            ]);
        }
        match decay_exponent(&samples) {
            Ok(est) => d.push(vec![
                Cell::I(e as i128),
                Cell::F(est.exponent),
                Cell::F(est.constant),
                Cell::F(est.slope),
                Cell::I(est.bins as i128),
            ]),
            Err(err) => {
                eprintln!("omega {e}: {err}");
                d.push(vec![Cell::I(e as i128), Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty]);
            }
        }
    }
    out.table("fourier", &t, &[])?;
    out.table("fourier_decay", &d, &[])?;
    println!("{} samples over {ensemble} sequences", t.rows.len());
    Ok(())
}

fn cmd_ek(cli: &Cli, sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "ek");
    let b = b.node();
    let (ifs, _) = sys.frozen(b)?;
    let n = block_len(cli, b, 1)?;
    let typed = TypedSystem::new(&ifs, n)?;
    let tau0 = match b.get("tau0") {
        None => 0,
        Some(o) if o.value.is_array() => {
            let counts = o.node().usize_list()?;
            typed.index_of(&TypeVec::new(counts)).ok_or_else(|| o.node().err("not a type of this system"))?
        }
        Some(o) => o.node().usize()?,
    };
    if tau0 >= typed.type_count() {
        return Err(ConfigError { path: b.child_path("tau0"), message: format!("only {} types", typed.type_count()) }.into());
    }
    let depths = match b.get("M") {
        Some(o) => o.node().usize_list()?,
        None => vec![3, 4, 5, 6],
    };
    let deltas = match b.get("delta") {
        Some(o) => o.node().f64_list()?,
        None => vec![0.1, 0.2],
    };
    let rhos = match b.get("rho") {
        Some(o) => o.node().f64_list()?,
        None => vec![0.05, 0.2],
    };
    let c = b.f64_or("c", 1.0)?;
    let grid = EGrid { z_steps: b.usize_or("z_steps", 400)?, nu_steps: b.usize_or("nu_steps", 8)? };
    let max_depth = depths.iter().copied().max().unwrap_or(1);
    let blocks = split_sampled(&typed, StreamKey::new(cli.seed, "ek-omega", 0), tau0, max_depth + 1)?;
    let thetas = thetas_of(&typed);

    let mut rows = Vec::new();
    let mut fit_rows = Vec::new();
    let mut sweep = Table::new(vec!["M", "instances", "checks", "violations", "max_residual"]);
    let do_sweep = b.get("sweep").map(|o| o.node().bool()).transpose()?.unwrap_or(false);
    for &m in &depths {
        let th = theta_sequence(&blocks, &thetas, m)?;
        let growth = Growth::new(&th);
        if do_sweep {
            let r = uniqueness_sweep(&th, &growth, c, grid)?;
            sweep.push(vec![
                Cell::I(m as i128),
                Cell::I(r.instances as i128),
                Cell::I(r.checks as i128),
                Cell::I(r.violations as i128),
                Cell::F(r.max_residual),
            ]);
        }
        for &delta in &deltas {
            for &rho in &rhos {
                let count = enumerate_sequence_count(&th, &growth, delta, rho, c)?;
                let brute = if m <= MAX_BRUTE_FORCE_M { Some(brute_force_e(&th, delta, rho, c, grid)?) } else { None };
                fit_rows.push((delta, m, count.log_max_bound - count.log_a0()));
                rows.push((m, delta, rho, count, brute));
            }
        }
    }
    let h = fit_h(&fit_rows)?;
    let mut t = Table::new(vec![
        "M",
        "delta",
        "rho",
        "brute_force_intervals",
        "brute_force_members",
        "log_branching_bound",
        "log_total_bound",
        "log_a0",
        "a0_over_b0_pow4",
        "index_sets",
        "sparse_forced",
        "fitted_h",
    ]);
    for (m, delta, rho, count, brute) in &rows {
        t.push(vec![
            Cell::I(*m as i128),
            Cell::F(*delta),
            Cell::F(*rho),
            brute.as_ref().map_or(Cell::Empty, |e| Cell::I(e.intervals.len() as i128)),
            brute.as_ref().map_or(Cell::Empty, |e| Cell::I(e.members as i128)),
            Cell::F(count.log_max_bound),
            Cell::F(count.log_total),
            Cell::F(count.log_a0()),
            Cell::F(count.a0_over_b0_pow4),
            Cell::I(count.index_sets as i128),
            Cell::B(count.sparse_forced),
            Cell::F(h),
        ]);
    }
    out.table("ek", &t, &[])?;
    if do_sweep {
        out.table("ek_sweep", &sweep, &[])?;
    }
    println!("{} configurations, fitted H = {h}", rows.len());
    Ok(())
}

fn cmd_scan(cli: &Cli, sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "scan-angles");
    let b = b.node();
    let Some(planar) = &sys.planar else {
        return Err(ConfigError { path: "system.dim".into(), message: "scan-angles needs a planar system".into() }.into());
    };
    let d = ScanConfig::default();
    let xi = frequencies(b, d.xi_lo, d.xi_hi, d.xi_count)?;
    let cfg = ScanConfig {
        block: block_len(cli, b, d.block)?,
        split: b.usize_or("s", d.split)?,
        n_max: b.usize_or("n_max", d.n_max)?,
        ensemble: b.usize_or("ensemble", d.ensemble)?,
        xi_lo: xi[0],
        xi_hi: xi[xi.len() - 1],
        xi_count: xi.len(),
        points: b.usize_or("points", d.points)?,
        seed: cli.seed,
        fourier_threshold: b.f64_or("fourier_threshold", d.fourier_threshold)?,
        dim_tol: b.f64_or("dim_tol", d.dim_tol)?,
        l2_threshold: b.f64_or("l2_threshold", d.l2_threshold)?,
    };
    if cfg.split < 2 {
        return Err(ConfigError { path: b.child_path("s"), message: "s must be at least 2".into() }.into());
    }
    let angles = match b.get("angles") {
        Some(o) if o.value.is_array() => o.node().f64_list()?,
        Some(o) => uniform_angles(o.node().usize()?),
        None => uniform_angles(64),
    };
    let rows = angle_scan(planar, &angles, &cfg)?;
    let mut t = Table::new(vec![
        "u",
        "simdim",
        "delta_rate",
        "overlap_flag",
        "fourier_exponent",
        "bigdim",
        "l2_exponent",
        "verdict",
        "error",
    ])
    .with_plot("u", "fourier_exponent", false, false);
    for r in &rows {
        t.push(vec![
            Cell::F(r.u),
            Cell::F(r.simdim),
            opt_cell(r.delta_rate),
            Cell::B(r.overlap_flag),
            opt_cell(r.fourier_exponent),
            opt_cell(r.bigdim),
            opt_cell(r.l2_exponent),
            Cell::S(r.verdict.to_string()),
            r.error.clone().map_or(Cell::Empty, Cell::S),
        ]);
    }
    let echo = format!("config {}", serde_json::to_string(&cfg).map_err(|e| CliError::Io(e.to_string()))?);
    out.table("scan-angles", &t, &[echo])?;
    let ac = rows.iter().filter(|r| r.verdict == crate::projection_app::ScanVerdict::AcConsistent).count();
    println!("{} angles, {ac} a.c.-consistent", rows.len());
    Ok(())
}

fn cmd_density(cli: &Cli, sys: &System, root: Node<'_>, out: &mut Output) -> CliResult<()> {
    let b = block(root, "density");
    let b = b.node();
    let (ifs, _) = sys.frozen(b)?;
    let mu = match b.get("level") {
        Some(o) => level_n_ssm(&ifs, o.node().usize()?)?,
        None => {
            let depth = b.usize_or("depth", (1e-12f64.ln() / ifs.ratio_max().ln()).ceil() as usize)?;
            let pts = sample_ssm(&ifs, depth, 0.0, b.usize_or("points", 100_000)?, cli.seed);
            AtomicMeasure::uniform(&pts)?
        }
    };
    let bins = match b.get("bins") {
        Some(o) => o.node().usize_list()?,
        None => (4..=10).map(|j| 1usize << j).collect(),
    };
    if bins.iter().any(|&k| k < 2) || bins.is_empty() {
        return Err(ConfigError { path: b.child_path("bins"), message: "every bin count must be at least 2".into() }.into());
    }
    let (lo, hi) = match b.get("range") {
        Some(o) => {
            let v = o.node().f64_list()?;
            if v.len() != 2 || !(v[0] < v[1]) {
                return Err(o.node().err("range must be [lo, hi] with lo < hi").into());
            }
            (v[0], v[1])
        }
        None if mu.diameter() > 0.0 => (mu.min(), mu.max()),
        None => (mu.min() - 0.5, mu.max() + 0.5),
    };
    let finest = *bins.iter().max().expect("nonempty");
    let h = density_histogram(&mu, lo, hi, finest)?;
    let mut t = Table::new(vec!["edge", "mass", "density"]).with_plot("edge", "density", false, false);
    for i in 0..h.bins() {
        t.push(vec![Cell::F(h.edge(i)), Cell::F(h.masses[i]), Cell::F(h.density(i))]);
    }
    out.table("density", &t, &[])?;
    let curve = l2_curve(&mu, lo, hi, &bins)?;
    let mut l = Table::new(vec!["width", "l2_indicator"]).with_plot("width", "l2_indicator", true, true);
    for &(w, v) in &curve {
        l.push(vec![Cell::F(w), Cell::F(v)]);
    }
    out.table("l2", &l, &[])?;
    match l2_exponent(&curve) {
        Ok(a) => println!("l2 exponent {a}"),
        Err(e) => println!("l2 exponent unavailable: {e}"),
    }
    Ok(())
}

fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let raw = fs::read(&cli.config).map_err(|e| CliError::Config(ConfigError {
        path: String::new(),
        message: format!("cannot read {}: {e}", cli.config.display()),
    }))?;
    let hash: String = Sha256::digest(&raw).iter().map(|b| format!("{b:02x}")).collect();
    let value: Value = serde_json::from_slice(&raw).map_err(|e| CliError::Config(ConfigError {
        path: String::new(),
        message: format!("invalid JSON: {e}"),
    }))?;
    let root = Node { value: &value, path: "" };
    let sys = parse_system(root)?;
    let mut out = Output {
        dir: cli.out.clone(),
        format: cli.format,
        plot: cli.plot,
        header: format!(
            "# selfsim {} command={} config_sha256={hash} seed={}\n",
            env!("CARGO_PKG_VERSION"),
            cli.command.name(),
            cli.seed
        ),
        written: Vec::new(),
    };
    match cli.command {
        Command::Simdim => cmd_simdim(&sys, &mut out)?,
        Command::Types => cmd_types(cli, &sys, root, &mut out)?,
        Command::Delta => cmd_delta(&sys, root, &mut out)?,
        Command::Transversality => cmd_transversality(&sys, root, &mut out)?,
        Command::Disintegrate => cmd_disintegrate(cli, &sys, root, &mut out)?,
        Command::Fourier => cmd_fourier(cli, &sys, root, &mut out)?,
        Command::Ek => cmd_ek(cli, &sys, root, &mut out)?,
        Command::ScanAngles => cmd_scan(cli, &sys, root, &mut out)?,
        Command::Density => cmd_density(cli, &sys, root, &mut out)?,
    }
    Ok(out.written)
}

/// Runs the parsed command, with `--jobs` bounding the worker pool.
pub fn run_cli(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    match cli.jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            pool.install(|| execute(cli))
        }
        None => execute(cli),
    }
}

/// Entry point: parses `args` (including the program name) and returns the
/// process exit code.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Whether the file at `path` starts with a provenance line.
pub fn has_provenance(path: &Path) -> bool {
    fs::read_to_string(path).is_ok_and(|s| s.starts_with("# selfsim "))
}
