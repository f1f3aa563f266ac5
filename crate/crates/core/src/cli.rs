//! The `lapmap` command line.
//!
//! ```text
//! lapmap decolorize in.png -o out.png --report r.json
//! lapmap daltonize in.png -o out.png --cvd deutan
//! lapmap gamutmap in.png -o out.png --gamut 0.3,0.3,0.45,0.35,0.25,0.45
//! lapmap fuse rgb.png nir.png -o out.png
//! lapmap eval --src in.png --dst out.png
//! ```
//!
//! Every option can also come from `--config FILE`, one `key = value` per
//! line using the long flag names; flags given on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::apps::{solve_application, AppConfig, AppResult, Application, FamilyChoice, Weights};
use crate::cost::Anchor;
use crate::error::{Error, Result};
use crate::gamut::parse_gamut_polygon;
use crate::graph::{Connectivity, GraphParams, VertexSelection};
use crate::imageio::{load_image, save_image, CvdKind, Image};
use crate::metrics::{rwms_auto, RWMS_SCALE};
use crate::optimize::SolveOptions;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lapmap", version, about = "Structure-preserving color mappings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// RGB to a single gray channel.
    Decolorize {
        input: PathBuf,
        #[command(flatten)]
        opts: SolveArgs,
    },
    /// Recolor for a color-vision-deficient observer.
    Daltonize {
        input: PathBuf,
        #[command(flatten)]
        opts: SolveArgs,
    },
    /// Map chromaticities into a gamut triangle.
    Gamutmap {
        input: PathBuf,
        #[command(flatten)]
        opts: SolveArgs,
    },
    /// Fuse RGB with extra bands into RGB. Either one multi-channel
    /// `.lmch` file or several rasters whose channels are stacked in order.
    Fuse {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        opts: SolveArgs,
    },
    /// RWMS of an existing mapping, no optimization.
    Eval {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        rwms_image: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// `key = value` file with defaults for any of the options below.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(short, long, value_name = "FILE")]
    output: Option<String>,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    report: Option<String>,
    /// Per-pixel RWMS image (default: `<output>_rwms.png`).
    #[arg(long, value_name = "FILE")]
    rwms_image: Option<String>,
    #[arg(long)]
    sigma_r: Option<String>,
    #[arg(long)]
    sigma_s: Option<String>,
    /// 4, 8 or knnK.
    #[arg(long)]
    connectivity: Option<String>,
    /// Graph vertex stride; 1 uses every pixel.
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    max_side: Option<String>,
    #[arg(long)]
    max_vertices: Option<String>,
    /// default, linear or localQ.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    region_sigma_c: Option<String>,
    #[arg(long)]
    region_sigma_p: Option<String>,
    /// Commutator weights, one per Laplacian pair, comma separated.
    #[arg(long)]
    mu0: Option<String>,
    /// Difference weights, one per Laplacian pair, comma separated.
    #[arg(long)]
    mu1: Option<String>,
    #[arg(long)]
    mu2: Option<String>,
    #[arg(long)]
    mu3: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    rel_tol: Option<String>,
    #[arg(long)]
    penalty_weight: Option<String>,
    #[arg(long)]
    penalty_growth: Option<String>,
    #[arg(long)]
    penalty_rounds: Option<String>,
    /// protan, deutan or tritan.
    #[arg(long)]
    cvd: Option<String>,
    /// x0,y0,x1,y1,x2,y2 in xy chromaticity.
    #[arg(long)]
    gamut: Option<String>,
    /// Lines of `x1 .. xd -> y1 .. yd'`.
    #[arg(long, value_name = "FILE")]
    anchors: Option<String>,
    /// Scale Laplacians to unit Frobenius norm inside the cost (true/false).
    #[arg(long)]
    prescale: Option<String>,
    /// Compute eigen-based structure metrics for the report (true/false).
    #[arg(long)]
    structure_metrics: Option<String>,
}

impl SolveArgs {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("output", &self.output),
            ("report", &self.report),
            ("rwms-image", &self.rwms_image),
            ("sigma-r", &self.sigma_r),
            ("sigma-s", &self.sigma_s),
            ("connectivity", &self.connectivity),
            ("stride", &self.stride),
            ("max-side", &self.max_side),
            ("max-vertices", &self.max_vertices),
            ("family", &self.family),
            ("region-sigma-c", &self.region_sigma_c),
            ("region-sigma-p", &self.region_sigma_p),
            ("mu0", &self.mu0),
            ("mu1", &self.mu1),
            ("mu2", &self.mu2),
            ("mu3", &self.mu3),
            ("seed", &self.seed),
            ("restarts", &self.restarts),
            ("max-iters", &self.max_iters),
            ("rel-tol", &self.rel_tol),
            ("penalty-weight", &self.penalty_weight),
            ("penalty-growth", &self.penalty_growth),
            ("penalty-rounds", &self.penalty_rounds),
            ("cvd", &self.cvd),
            ("gamut", &self.gamut),
            ("anchors", &self.anchors),
            ("prescale", &self.prescale),
            ("structure-metrics", &self.structure_metrics),
        ]
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Parses an anchors file: `x1 .. xd -> y1 .. yd'` per line, values in [0, 1].
pub fn parse_anchors(text: &str) -> Result<Vec<Anchor>> {
    let nums = |s: &str, n: usize| -> Result<Vec<f64>> {
        let v = s
            .split_whitespace()
            .map(f64::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("anchors line {n}: {e}")))?;
        if v.is_empty() {
            return Err(Error::Config(format!("anchors line {n}: empty side")));
        }
        if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("anchors line {n}: values must lie in [0, 1]")));
        }
        Ok(v)
    };
    let mut out: Vec<Anchor> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (x, y) = line
            .split_once("->")
            .ok_or_else(|| Error::Config(format!("anchors line {}: missing '->'", i + 1)))?;
        let a = Anchor {
            x: nums(x, i + 1)?,
            y: nums(y, i + 1)?,
        };
        if let Some(first) = out.first() {
            if first.x.len() != a.x.len() || first.y.len() != a.y.len() {
                return Err(Error::Config(format!("anchors line {}: inconsistent lengths", i + 1)));
            }
        }
        out.push(a);
    }
    Ok(out)
}

/// Fully resolved settings of one run; embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Application,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
    pub rwms_image: PathBuf,
    pub graph: GraphParams,
    pub max_side: usize,
    pub max_vertices: usize,
    pub family: String,
    pub region_sigma_c: f64,
    pub region_sigma_p: f64,
    pub weights: Weights,
    pub solve: SolveOptions,
    pub cvd: CvdKind,
    pub gamut: Vec<[f64; 2]>,
    pub anchors_file: Option<PathBuf>,
    pub anchors: Option<Vec<AnchorRecord>>,
    pub prescale: bool,
    pub structure_metrics: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnchorRecord {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

struct Settings(BTreeMap<String, String>);

impl Settings {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("--{key} '{v}': {e}"))))
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.0
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("--{key} '{v}': {e}")))
            })
            .transpose()
    }
}

const KNOWN_KEYS: &[&str] = &[
    "output",
    "report",
    "rwms-image",
    "sigma-r",
    "sigma-s",
    "connectivity",
    "stride",
    "max-side",
    "max-vertices",
    "family",
    "region-sigma-c",
    "region-sigma-p",
    "mu0",
    "mu1",
    "mu2",
    "mu3",
    "seed",
    "restarts",
    "max-iters",
    "rel-tol",
    "penalty-weight",
    "penalty-growth",
    "penalty-rounds",
    "cvd",
    "gamut",
    "anchors",
    "prescale",
    "structure-metrics",
];

fn set_pairs(dst: &mut [f64; 2], src: Option<Vec<f64>>, key: &str) -> Result<()> {
    if let Some(v) = src {
        if v.is_empty() || v.len() > 2 {
            return Err(Error::Config(format!("--{key} takes one or two values")));
        }
        dst[..v.len()].copy_from_slice(&v);
    }
    Ok(())
}

fn default_rwms_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    output.with_file_name(format!("{stem}_rwms.png"))
}

/// Merges the config file and flags into a [`RunConfig`] and the matching
/// [`AppConfig`].
fn resolve(app: Application, inputs: Vec<PathBuf>, args: &SolveArgs) -> Result<(RunConfig, AppConfig)> {
    let mut map = match &args.config {
        Some(p) => parse_config_file(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => BTreeMap::new(),
    };
    if let Some(bad) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config key '{bad}'")));
    }
    for (k, v) in args.flags() {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
    let s = Settings(map);

    let mut cfg = AppConfig::new(app);
    let output: PathBuf = s
        .get::<PathBuf>("output")?
        .ok_or_else(|| Error::Config("no output path (-o/--output)".into()))?;
    let report = s.get::<PathBuf>("report")?;
    let rwms_image = s.get::<PathBuf>("rwms-image")?.unwrap_or_else(|| default_rwms_path(&output));

    cfg.graph = GraphParams {
        sigma_r: s.get("sigma-r")?.unwrap_or(cfg.graph.sigma_r),
        sigma_s: s.get("sigma-s")?.unwrap_or(cfg.graph.sigma_s),
        connectivity: s.get::<Connectivity>("connectivity")?.unwrap_or(cfg.graph.connectivity),
        vertex_selection: match s.get::<usize>("stride")? {
            None | Some(1) => VertexSelection::AllPixels,
            Some(0) => return Err(Error::Config("--stride must be >= 1".into())),
            Some(k) => VertexSelection::Stride(k),
        },
    };
    cfg.graph.validate().map_err(|e| Error::Config(e.to_string()))?;
    cfg.max_side = s.get("max-side")?.unwrap_or(cfg.max_side);
    cfg.max_vertices = s.get("max-vertices")?.unwrap_or(cfg.max_vertices);
    if cfg.max_side == 0 || cfg.max_vertices == 0 {
        return Err(Error::Config("--max-side and --max-vertices must be >= 1".into()));
    }
    cfg.family = s.get::<FamilyChoice>("family")?.unwrap_or(cfg.family);
    cfg.region_sigma_c = s.get("region-sigma-c")?.unwrap_or(cfg.region_sigma_c);
    cfg.region_sigma_p = s.get("region-sigma-p")?.unwrap_or(cfg.region_sigma_p);
    set_pairs(&mut cfg.weights.mu0, s.list("mu0")?, "mu0")?;
    set_pairs(&mut cfg.weights.mu1, s.list("mu1")?, "mu1")?;
    cfg.weights.mu2 = s.get("mu2")?.unwrap_or(cfg.weights.mu2);
    cfg.weights.mu3 = s.get("mu3")?.unwrap_or(cfg.weights.mu3);
    let w = &cfg.weights;
    if w.mu0.iter().chain(&w.mu1).chain([&w.mu2, &w.mu3]).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config("mu weights must be finite and >= 0".into()));
    }
    let o = &mut cfg.solve;
    o.seed = s.get("seed")?.unwrap_or(o.seed);
    o.restarts = s.get("restarts")?.unwrap_or(o.restarts);
    o.max_iters = s.get("max-iters")?.unwrap_or(o.max_iters);
    o.rel_tol = s.get("rel-tol")?.unwrap_or(o.rel_tol);
    o.penalty_weight = s.get("penalty-weight")?.unwrap_or(o.penalty_weight);
    o.penalty_growth = s.get("penalty-growth")?.unwrap_or(o.penalty_growth);
    o.penalty_rounds = s.get("penalty-rounds")?.unwrap_or(o.penalty_rounds);
    o.validate().map_err(|e| Error::Config(e.to_string()))?;
    cfg.cvd = s.get::<CvdKind>("cvd")?.unwrap_or(cfg.cvd);
    if let Some(g) = s.0.get("gamut") {
        cfg.gamut = parse_gamut_polygon(g).map_err(|e| Error::Config(e.to_string()))?;
    }
    let anchors_file = s.get::<PathBuf>("anchors")?;
    if let Some(p) = &anchors_file {
        cfg.anchors = Some(parse_anchors(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?);
    }
    cfg.prescale = s.get("prescale")?.unwrap_or(cfg.prescale);
    cfg.structure_metrics = s.get("structure-metrics")?.unwrap_or(cfg.structure_metrics);

    let run = RunConfig {
        command: app,
        inputs,
        output,
        report,
        rwms_image,
        graph: cfg.graph,
        max_side: cfg.max_side,
        max_vertices: cfg.max_vertices,
        family: cfg.family.to_string(),
        region_sigma_c: cfg.region_sigma_c,
        region_sigma_p: cfg.region_sigma_p,
        weights: cfg.weights.clone(),
        solve: cfg.solve,
        cvd: cfg.cvd,
        gamut: cfg.gamut.vertices().to_vec(),
        anchors_file,
        anchors: cfg.anchors.as_ref().map(|v| {
            v.iter()
                .map(|a| AnchorRecord {
                    x: a.x.clone(),
                    y: a.y.clone(),
                })
                .collect()
        }),
        prescale: cfg.prescale,
        structure_metrics: cfg.structure_metrics,
    };
    Ok((run, cfg))
}

/// Exit code for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::UnsupportedFormat(..) | Error::Malformed(..) | Error::EmptyImage => EXIT_IO,
        Error::NonFinite { .. } | Error::Eigen(_) | Error::Infeasible(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

fn load_inputs(app: Application, inputs: &[PathBuf]) -> Result<Image> {
    let images = inputs.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    match (app, images.len()) {
        (_, 1) => Ok(images.into_iter().next().expect("one image")),
        (Application::Fuse, _) => Image::stack(&images),
        _ => Err(Error::Config(format!("{app} takes exactly one input"))),
    }
}

fn save_rwms(img: &Image, path: &Path) -> Result<()> {
    let raw = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("lmch"));
    if raw {
        save_image(img, path)
    } else {
        // rasters hold the unscaled ratio, clipped to [0, 1]
        save_image(&img.map_pixels(1, |s, d| d[0] = (s[0] / RWMS_SCALE).clamp(0.0, 1.0)), path)
    }
}

fn trace_json(r: &AppResult) -> Value {
    json!({
        "iterations": r.trace.iterations,
        "final_cost": r.trace.final_cost,
        "converged": r.trace.converged,
        "stalled": r.trace.stalled,
        "restart_costs": r.trace.restart_costs,
        "best_restart": r.trace.best_restart,
        "graph_vertices": r.graph_vertices,
        "graph_stride": r.graph_stride,
    })
}

fn versions() -> Value {
    json!({ "lapmap": env!("CARGO_PKG_VERSION"), "report_schema": 1 })
}

fn emit(report: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report is valid JSON") + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs one optimization command and returns its report.
fn run_solve(app: Application, inputs: Vec<PathBuf>, args: &SolveArgs) -> Result<Value> {
    let start = Instant::now();
    let (run, cfg) = resolve(app, inputs, args)?;
    let img = load_inputs(app, &run.inputs)?;
    let load_s = start.elapsed().as_secs_f64();
    let result = solve_application(app, &img, &cfg)?;
    let solve_s = start.elapsed().as_secs_f64() - load_s;
    save_image(&result.output, &run.output)?;
    if let Some(e) = &result.metrics.rwms_image {
        save_rwms(e, &run.rwms_image)?;
    }
    let report = json!({
        "config": run,
        "theta_star": {
            "family": result.params.family.name(),
            "values": result.params.theta,
            "text": result.params.to_text(),
        },
        "cost_trace": trace_json(&result),
        "metrics": result.metrics,
        "timings": {
            "load_s": load_s,
            "solve_s": solve_s,
            "optimizer_s": result.trace.wall_time_s,
            "total_s": start.elapsed().as_secs_f64(),
        },
        "versions": versions(),
    });
    emit(&report, run.report.as_deref())?;
    Ok(report)
}

fn run_eval(src: &Path, dst: &Path, report: Option<&Path>, rwms_image: Option<&Path>) -> Result<Value> {
    let start = Instant::now();
    let x = load_image(src)?;
    let y = load_image(dst)?;
    let (err, mean) = rwms_auto(&x, &y)?;
    if let Some(p) = rwms_image {
        save_rwms(&err, p)?;
    }
    let out = json!({
        "config": { "command": "eval", "src": src, "dst": dst },
        "theta_star": Value::Null,
        "cost_trace": Value::Null,
        "metrics": { "rwms_mean": mean, "rwms_scale": RWMS_SCALE },
        "timings": { "total_s": start.elapsed().as_secs_f64() },
        "versions": versions(),
    });
    emit(&out, report)?;
    Ok(out)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Decolorize { input, opts } => run_solve(Application::Decolorize, vec![input], &opts),
        Command::Daltonize { input, opts } => run_solve(Application::Daltonize, vec![input], &opts),
        Command::Gamutmap { input, opts } => run_solve(Application::GamutMap, vec![input], &opts),
        Command::Fuse { inputs, opts } => run_solve(Application::Fuse, inputs, &opts),
        Command::Eval {
            src,
            dst,
            report,
            rwms_image,
        } => run_eval(&src, &dst, report.as_deref(), rwms_image.as_deref()),
    };
    match outcome {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("lapmap: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let m = parse_config_file("# c\nsigma_r = 0.5\n  max-side=100 # trailing\n\n").unwrap();
        assert_eq!(m["sigma-r"], "0.5");
        assert_eq!(m["max-side"], "100");
        assert!(parse_config_file("novalue").is_err());
    }

    #[test]
    fn anchors_lines() {
        let a = parse_anchors("0 0 0 -> 0\n1 1 1 -> 1\n").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].x, vec![1.0; 3]);
        assert!(parse_anchors("0 0 -> 2").is_err());
        assert!(parse_anchors("0 0 -> 1\n0 -> 1").is_err());
        assert!(parse_anchors("0 0 1").is_err());
    }

    #[test]
    fn defaults_are_the_reference_setup() {
        let args = Cli::try_parse_from(["lapmap", "decolorize", "in.png", "-o", "o.png"]).unwrap();
        let Command::Decolorize { opts, .. } = args.command else { panic!() };
        let (run, _) = resolve(Application::Decolorize, vec!["in.png".into()], &opts).unwrap();
        assert_eq!(run.graph, GraphParams::default());
        assert_eq!(run.max_side, 300);
        assert_eq!(run.solve.seed, 0);
        assert_eq!(run.solve.restarts, 3);
        assert_eq!((run.weights.mu0[0], run.weights.mu1[0], run.weights.mu2, run.weights.mu3), (1.0, 1.0, 1.0, 0.0));
        assert_eq!(run.rwms_image, PathBuf::from("o_rwms.png"));
    }

    #[test]
    fn bad_flags_are_config_errors() {
        assert_eq!(run(["lapmap", "decolorize", "in.png", "-o", "o.png", "--sigma-r", "x"]), EXIT_CONFIG);
        assert_eq!(run(["lapmap", "decolorize", "in.png", "-o", "o.png", "--gamut", "0,0,1,1"]), EXIT_CONFIG);
        assert_eq!(run(["lapmap", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["lapmap", "decolorize", "/nonexistent/in.png", "-o", "o.png"]), EXIT_IO);
    }
}
