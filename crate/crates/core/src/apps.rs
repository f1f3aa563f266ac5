//! The four applications: decolorization, daltonization, gamut mapping and
//! multispectral fusion.
//!
//! Each one builds a [`ProblemSpec`] on a (possibly resized and subsampled)
//! graph image, optimizes, then applies the optimal map to the
//! full-resolution input.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colormap::{ColormapParams, LinearTransform, MapFamily, SoftRegions};
use crate::cost::{Anchor, ProblemSpec, Target, View};
use crate::error::{Error, Result};
use crate::gamut::{default_gamut, Gamut};
use crate::graph::{build_support, select_vertices, vertex_image, EdgeSupport, GraphParams, VertexSelection};
use crate::imageio::{
    cvd_simulate, normalize_channels, resize_longside, rgb_to_luma, rgb_to_xy_chroma, xy_luminance_to_rgb, CvdKind,
    CvdTransform, Image,
};
use crate::metrics::{out_of_gamut_fraction, rwms_auto, structure_metrics, MetricsReport};
use crate::optimize::{minimize, SolveOptions, SolveTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Application {
    Decolorize,
    Daltonize,
    GamutMap,
    Fuse,
}

impl fmt::Display for Application {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Application::Decolorize => "decolorize",
            Application::Daltonize => "daltonize",
            Application::GamutMap => "gamutmap",
            Application::Fuse => "fuse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    /// Gamma map for decolorization, affine map elsewhere.
    Default,
    /// Linear (simplex rows for decolorization, affine elsewhere).
    Linear,
    /// `q` soft regions over the default family.
    Local(usize),
}

impl fmt::Display for FamilyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyChoice::Default => f.write_str("default"),
            FamilyChoice::Linear => f.write_str("linear"),
            FamilyChoice::Local(q) => write!(f, "local{q}"),
        }
    }
}

impl FromStr for FamilyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "gamma" | "affine" => Ok(FamilyChoice::Default),
            "linear" => Ok(FamilyChoice::Linear),
            _ => s
                .strip_prefix("local")
                .and_then(|q| q.trim_start_matches([':', '=']).parse().ok())
                .filter(|&q| q >= 1)
                .map(FamilyChoice::Local)
                .ok_or_else(|| Error::Config(format!("unknown map family '{s}'"))),
        }
    }
}

/// Cost weights; `mu0[k]`, `mu1[k]` belong to the k-th Laplacian pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub mu0: [f64; 2],
    pub mu1: [f64; 2],
    pub mu2: f64,
    pub mu3: f64,
}

impl Weights {
    pub fn defaults(app: Application) -> Self {
        match app {
            Application::Decolorize => Weights {
                mu0: [1.0, 0.0],
                mu1: [1.0, 0.0],
                mu2: 1.0,
                mu3: 0.0,
            },
            Application::Daltonize => Weights {
                mu0: [1.0, 1.0],
                mu1: [1.0, 1.0],
                mu2: 1.0,
                mu3: 0.0,
            },
            Application::GamutMap => Weights {
                mu0: [1.0, 0.0],
                mu1: [0.25, 0.0],
                mu2: 0.1,
                mu3: 0.0,
            },
            Application::Fuse => Weights {
                mu0: [1.0, 1.0],
                mu1: [1.0, 1.0],
                mu2: 1.0,
                mu3: 10.0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AppConfig {
    pub graph: GraphParams,
    pub max_side: usize,
    /// Stride subsampling kicks in above this many graph vertices.
    pub max_vertices: usize,
    pub family: FamilyChoice,
    pub region_sigma_c: f64,
    pub region_sigma_p: f64,
    pub weights: Weights,
    pub solve: SolveOptions,
    pub cvd: CvdKind,
    pub gamut: Gamut,
    /// Replaces the application's default anchors when set.
    pub anchors: Option<Vec<Anchor>>,
    pub prescale: bool,
    /// Compute eigen-based structure metrics for the report.
    pub structure_metrics: bool,
}

impl AppConfig {
    pub fn new(app: Application) -> Self {
        AppConfig {
            graph: GraphParams::default(),
            max_side: 300,
            max_vertices: 10_000,
            family: FamilyChoice::Default,
            region_sigma_c: 0.2,
            region_sigma_p: 0.5,
            weights: Weights::defaults(app),
            solve: SolveOptions::default(),
            cvd: CvdKind::Protanopia,
            gamut: default_gamut(),
            anchors: None,
            prescale: false,
            structure_metrics: true,
        }
    }
}

/// Vertex pixels of the optimization graph and their edge structure.
#[derive(Debug, Clone)]
pub struct GraphImage {
    pub vertices: Image,
    pub support: Arc<EdgeSupport>,
    pub stride: usize,
    /// Size of the resized image the vertices were taken from.
    pub resized: (usize, usize),
}

fn graph_selection(cfg: &AppConfig, pixels: usize) -> GraphParams {
    let mut g = cfg.graph;
    if g.vertex_selection == VertexSelection::AllPixels && pixels > cfg.max_vertices {
        let s = (pixels as f64 / cfg.max_vertices as f64).sqrt().ceil() as usize;
        g.vertex_selection = VertexSelection::Stride(s.max(2));
    }
    g
}

/// Resizes to `cfg.max_side` and picks graph vertices. `companions` are
/// images of the same size resized and subsampled identically.
pub fn prepare_graph(img: &Image, cfg: &AppConfig, companions: &[&Image]) -> Result<(GraphImage, Vec<Image>)> {
    let resized = resize_longside(img, cfg.max_side)?;
    let g = graph_selection(cfg, resized.pixel_count());
    let grid = select_vertices(&resized, &g)?;
    let vertices = vertex_image(&resized, &grid)?;
    let support = Arc::new(build_support(&vertices, &g, grid.stride)?);
    let others = companions
        .iter()
        .map(|c| {
            if c.width() != img.width() || c.height() != img.height() {
                return Err(Error::DimensionMismatch("companion image differs in size".into()));
            }
            vertex_image(&resize_longside(c, cfg.max_side)?, &grid)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GraphImage {
            vertices,
            support,
            stride: grid.stride,
            resized: (resized.width(), resized.height()),
        },
        others,
    ))
}

#[derive(Debug, Clone)]
pub struct AppResult {
    pub params: ColormapParams,
    pub trace: SolveTrace,
    /// The map applied to the full-resolution input, before normalization
    /// or gamut projection.
    pub raw: Image,
    /// The final output image.
    pub output: Image,
    /// Extra named images (CVD simulations, gamut chroma, ...).
    pub extras: Vec<(String, Image)>,
    pub metrics: MetricsReport,
    pub graph_vertices: usize,
    pub graph_stride: usize,
}

fn family_for(app: Application, cfg: &AppConfig, d_in: usize, vertices: &Image) -> Result<MapFamily> {
    let base = match (app, cfg.family) {
        (Application::Decolorize, FamilyChoice::Linear) => MapFamily::linear(3, 1, false, true),
        (Application::Decolorize, _) => MapFamily::GammaGlobal,
        (Application::Daltonize, _) => MapFamily::linear(3, 3, true, false),
        (Application::GamutMap, _) => MapFamily::linear(2, 2, true, false),
        (Application::Fuse, _) => MapFamily::linear(d_in, 3, true, false),
    };
    match cfg.family {
        FamilyChoice::Local(q) => {
            let regions = SoftRegions::fit(vertices, q, cfg.region_sigma_c, cfg.region_sigma_p, cfg.solve.seed)?;
            MapFamily::local(base, regions)
        }
        _ => Ok(base),
    }
}

fn solve(spec: &ProblemSpec, cfg: &AppConfig) -> Result<(ColormapParams, SolveTrace)> {
    minimize(spec, &cfg.solve)
}

fn base_report(src: &Image, out: &Image, cfg: &AppConfig) -> Result<MetricsReport> {
    if cfg.structure_metrics {
        MetricsReport::compute(src, out, &cfg.graph)
    } else {
        MetricsReport::rwms_only(src, out)
    }
}

fn check_rgb(img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::channels("3 (RGB)", img.channels()));
    }
    Ok(())
}

/// Problem for RGB to gray conversion.
pub fn decolorize_spec(img: &Image, cfg: &AppConfig) -> Result<ProblemSpec> {
    check_rgb(img)?;
    let (g, _) = prepare_graph(img, cfg, &[])?;
    let family = family_for(Application::Decolorize, cfg, 3, &g.vertices)?;
    let mut spec = ProblemSpec::new(g.vertices, g.support, cfg.graph, family)?;
    let lx = spec.source_laplacian()?;
    let w = &cfg.weights;
    spec.views = vec![View {
        observer: None,
        targets: vec![Target::new(lx, w.mu0[0], w.mu1[0])?],
    }];
    spec.mu2 = w.mu2;
    spec.mu3 = w.mu3;
    spec.anchors = cfg.anchors.clone().unwrap_or_default();
    spec.prescale = cfg.prescale;
    spec.validate()?;
    Ok(spec)
}

pub fn decolorize(img: &Image, cfg: &AppConfig) -> Result<AppResult> {
    let spec = decolorize_spec(img, cfg)?;
    let (params, trace) = solve(&spec, cfg)?;
    let raw = params.apply(img)?;
    let output = normalize_channels(&raw);
    let mut metrics = base_report(img, &output, cfg)?;
    let luma = rgb_to_luma(img)?;
    metrics.baseline.insert("luma_rwms_mean".into(), rwms_auto(img, &luma)?.1);
    if cfg.structure_metrics {
        let s = structure_metrics(img, &luma, &cfg.graph, 10)?;
        metrics.baseline.insert("luma_commutator_norm_normalized".into(), s.commutator_norm_normalized);
        metrics.baseline.insert("luma_jd_residual".into(), s.jd_residual);
    }
    Ok(AppResult {
        graph_vertices: spec.source().pixel_count(),
        graph_stride: stride_of(img, cfg),
        params,
        trace,
        raw,
        output,
        extras: Vec::new(),
        metrics,
    })
}

fn stride_of(img: &Image, cfg: &AppConfig) -> usize {
    let resized = resize_longside(img, cfg.max_side).map(|r| r.pixel_count()).unwrap_or(0);
    match graph_selection(cfg, resized).vertex_selection {
        VertexSelection::Stride(s) => s,
        VertexSelection::AllPixels => 1,
    }
}

/// Problem for recoloring so that a CVD observer keeps the structure,
/// while a regular observer sees little change.
pub fn daltonize_spec(img: &Image, cfg: &AppConfig) -> Result<ProblemSpec> {
    check_rgb(img)?;
    let (g, _) = prepare_graph(img, cfg, &[])?;
    let family = family_for(Application::Daltonize, cfg, 3, &g.vertices)?;
    let mut spec = ProblemSpec::new(g.vertices, g.support, cfg.graph, family)?;
    let lx = spec.source_laplacian()?;
    let w = &cfg.weights;
    let psi = LinearTransform::from_mat3(&CvdTransform::new(cfg.cvd).matrix);
    spec.views = vec![
        View {
            observer: Some(psi),
            targets: vec![Target::new(lx.clone(), w.mu0[0], w.mu1[0])?],
        },
        View {
            observer: None,
            targets: vec![Target::new(lx, w.mu0[1], w.mu1[1])?],
        },
    ];
    spec.theta0 = spec.family().nominal();
    spec.mu2 = w.mu2;
    spec.mu3 = w.mu3;
    spec.anchors = cfg.anchors.clone().unwrap_or_default();
    spec.prescale = cfg.prescale;
    spec.validate()?;
    Ok(spec)
}

pub fn daltonize(img: &Image, cfg: &AppConfig) -> Result<AppResult> {
    let spec = daltonize_spec(img, cfg)?;
    let (params, trace) = solve(&spec, cfg)?;
    let raw = params.apply(img)?;
    let output = normalize_channels(&raw);
    let psi = CvdTransform::new(cfg.cvd);
    let seen_out = cvd_simulate(&output, &psi)?;
    let seen_src = cvd_simulate(img, &psi)?;
    let mut metrics = base_report(img, &output, cfg)?;
    metrics.baseline.insert("simulated_source_rwms_mean".into(), rwms_auto(img, &seen_src)?.1);
    metrics.baseline.insert("simulated_output_rwms_mean".into(), rwms_auto(img, &seen_out)?.1);
    if cfg.structure_metrics {
        let s = structure_metrics(img, &seen_src, &cfg.graph, 10)?;
        metrics.baseline.insert("simulated_source_commutator_norm_normalized".into(), s.commutator_norm_normalized);
        let s = structure_metrics(img, &seen_out, &cfg.graph, 10)?;
        metrics.baseline.insert("simulated_output_commutator_norm_normalized".into(), s.commutator_norm_normalized);
    }
    Ok(AppResult {
        graph_vertices: spec.source().pixel_count(),
        graph_stride: stride_of(img, cfg),
        params,
        trace,
        raw,
        output,
        extras: vec![("simulated".into(), seen_out), ("simulated_source".into(), seen_src)],
        metrics,
    })
}

/// Problem for mapping xy chromaticities into `cfg.gamut`, keeping the
/// structure of the RGB image.
pub fn gamut_spec(img: &Image, cfg: &AppConfig) -> Result<ProblemSpec> {
    check_rgb(img)?;
    let xy = rgb_to_xy_chroma(img)?;
    let (g, rgb) = prepare_graph(&xy, cfg, &[img])?;
    let family = family_for(Application::GamutMap, cfg, 2, &g.vertices)?;
    let mut spec = ProblemSpec::new(g.vertices, g.support, cfg.graph, family)?;
    let lx = spec.laplacian_of(&rgb[0])?;
    let w = &cfg.weights;
    spec.views = vec![View {
        observer: None,
        targets: vec![Target::new(lx, w.mu0[0], w.mu1[0])?],
    }];
    spec.theta0 = spec.family().nominal();
    spec.mu2 = w.mu2;
    spec.mu3 = w.mu3;
    spec.anchors = cfg.anchors.clone().unwrap_or_default();
    spec.halfspaces = cfg.gamut.halfspaces().to_vec();
    spec.prescale = cfg.prescale;
    spec.validate()?;
    Ok(spec)
}

/// Projects every pixel onto the gamut polygon.
pub fn project_to_gamut(xy: &Image, gamut: &Gamut) -> Result<Image> {
    if xy.channels() != 2 {
        return Err(Error::channels("2 (xy)", xy.channels()));
    }
    Ok(xy.map_pixels(2, |s, d| d.copy_from_slice(&gamut.project([s[0], s[1]]))))
}

pub fn gamut_map(img: &Image, cfg: &AppConfig) -> Result<AppResult> {
    let spec = gamut_spec(img, cfg)?;
    let (params, trace) = solve(&spec, cfg)?;
    let xy = rgb_to_xy_chroma(img)?;
    let raw = params.apply(&xy)?;
    let mapped = project_to_gamut(&raw, &cfg.gamut)?;
    let clipped = project_to_gamut(&xy, &cfg.gamut)?;
    let luminance = rgb_to_luma(img)?;
    let output = xy_luminance_to_rgb(&mapped, &luminance)?;
    let mut metrics = if cfg.structure_metrics {
        MetricsReport::compute(&xy, &mapped, &cfg.graph)?
    } else {
        MetricsReport::rwms_only(&xy, &mapped)?
    };
    metrics.out_of_gamut_fraction = Some(out_of_gamut_fraction(&mapped, cfg.gamut.halfspaces())?);
    metrics.baseline.insert("source_out_of_gamut_fraction".into(), out_of_gamut_fraction(&xy, cfg.gamut.halfspaces())?);
    metrics.baseline.insert("clip_rwms_mean".into(), rwms_auto(&xy, &clipped)?.1);
    Ok(AppResult {
        graph_vertices: spec.source().pixel_count(),
        graph_stride: stride_of(&xy, cfg),
        params,
        trace,
        raw,
        output,
        extras: vec![("chroma".into(), mapped), ("clipped_chroma".into(), clipped)],
        metrics,
    })
}

/// Black to black, white to white, mean input color to mid-gray.
pub fn default_fusion_anchors(img: &Image) -> Vec<Anchor> {
    let d = img.channels();
    let n = img.pixel_count() as f64;
    let mut mean = vec![0.0; d];
    for p in img.pixels() {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / n);
    }
    vec![
        Anchor {
            x: vec![0.0; d],
            y: vec![0.0; 3],
        },
        Anchor {
            x: vec![1.0; d],
            y: vec![1.0; 3],
        },
        Anchor {
            x: mean,
            y: vec![0.5; 3],
        },
    ]
}

/// Problem for fusing a `d > 3` channel image (RGB first, extra bands
/// after) into RGB with the structure of both the RGB and the extra bands.
pub fn fuse_spec(img: &Image, cfg: &AppConfig) -> Result<ProblemSpec> {
    if img.channels() < 4 {
        return Err(Error::channels(">= 4 (RGB + extra bands)", img.channels()));
    }
    let (g, _) = prepare_graph(img, cfg, &[])?;
    let family = family_for(Application::Fuse, cfg, img.channels(), &g.vertices)?;
    let mut spec = ProblemSpec::new(g.vertices, g.support, cfg.graph, family)?;
    let rgb = spec.source().channel_range(0..3)?;
    let extra = spec.source().channel_range(3..img.channels())?;
    let w = &cfg.weights;
    let mut targets = vec![Target::new(spec.laplacian_of(&rgb)?, w.mu0[0], w.mu1[0])?];
    if w.mu0[1] > 0.0 || w.mu1[1] > 0.0 {
        targets.push(Target::new(spec.laplacian_of(&extra)?, w.mu0[1], w.mu1[1])?);
    }
    spec.views = vec![View { observer: None, targets }];
    spec.theta0 = spec.family().nominal();
    spec.mu2 = w.mu2;
    spec.mu3 = w.mu3;
    spec.anchors = cfg.anchors.clone().unwrap_or_else(|| default_fusion_anchors(img));
    spec.prescale = cfg.prescale;
    spec.validate()?;
    Ok(spec)
}

pub fn fuse(img: &Image, cfg: &AppConfig) -> Result<AppResult> {
    let spec = fuse_spec(img, cfg)?;
    let (params, trace) = solve(&spec, cfg)?;
    let raw = params.apply(img)?;
    let output = normalize_channels(&raw);
    let metrics = base_report(img, &output, cfg)?;
    Ok(AppResult {
        graph_vertices: spec.source().pixel_count(),
        graph_stride: stride_of(img, cfg),
        params,
        trace,
        raw,
        output,
        extras: Vec::new(),
        metrics,
    })
}

pub fn solve_application(app: Application, img: &Image, cfg: &AppConfig) -> Result<AppResult> {
    match app {
        Application::Decolorize => decolorize(img, cfg),
        Application::Daltonize => daltonize(img, cfg),
        Application::GamutMap => gamut_map(img, cfg),
        Application::Fuse => fuse(img, cfg),
    }
}
