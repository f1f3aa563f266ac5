//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use lapmap::apps::{daltonize, decolorize, fuse, gamut_map, AppConfig, AppResult, Application};
use lapmap::colormap::{LinearTransform, MapFamily, SoftRegions};
use lapmap::cost::{commutator, cost_total, Anchor, ProblemSpec, Target, View};
use lapmap::gamut::{default_gamut, Halfspace};
use lapmap::graph::{build_adjacency, build_laplacian, build_support, GraphParams};
use lapmap::imageio::{cvd_simulate, rgb_to_luma, CvdKind, CvdTransform, Image};
use lapmap::metrics::{
    label_agreement, out_of_gamut_fraction, paired_laplacians, region_contrast, rwms, rwms_auto, spectral_clusters,
    structure_metrics,
};
use lapmap::optimize::{check_gradient, Objective};
use lapmap::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs kept for the descent and determinism checks.
#[derive(Default)]
struct Runs {
    traces: Vec<(String, AppResult)>,
}

// ---- 1 --------------------------------------------------------------------

/// A problem's objective with a fixed penalty weight, so the penalty term is
/// differentiated too.
struct Penalized<'a>(&'a ProblemSpec, f64);

impl Objective for Penalized<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn evaluate(&self, t: &[f64], _: f64, g: bool) -> Result<(f64, Vec<f64>, f64)> {
        self.0.evaluate(t, self.1, g)
    }
    fn project(&self, t: &mut [f64]) {
        self.0.project(t)
    }
}

fn random_image(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(w, h, c, |_, _| (0..c).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

/// Interior point: nominal plus jitter, simplex groups renormalized.
fn interior_theta(family: &MapFamily, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut t: Vec<f64> = family.nominal().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    for g in family.simplex_groups() {
        let vals: Vec<f64> = g.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = vals.iter().sum();
        for (&k, v) in g.iter().zip(vals) {
            t[k] = v / s;
        }
    }
    t
}

fn gradient_instance(kind: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = random_image(12, 12, 3, &mut rng);
    let graph = GraphParams::default();
    let support = Arc::new(build_support(&img, &graph, 1)?);
    let family = match kind {
        0 => MapFamily::GammaGlobal,
        1 if seed.is_multiple_of(2) => MapFamily::linear(3, 1, false, true),
        1 => MapFamily::linear(3, 3, true, false),
        2 => MapFamily::local(MapFamily::GammaGlobal, SoftRegions::fit(&img, 2, 0.2, 0.5, seed)?)?,
        _ => MapFamily::composed(
            LinearTransform::from_mat3(&CvdTransform::new(CvdKind::Deuteranopia).matrix),
            MapFamily::linear(3, 3, true, false),
        )?,
    };
    let d = family.d_out();
    let theta = interior_theta(&family, &mut rng);
    let base = ProblemSpec::new(img.clone(), support, graph, family.clone())?;
    let lx = base.source_laplacian()?;
    let anchors = vec![
        Anchor {
            x: vec![0.1, 0.2, 0.3],
            y: vec![0.2; d],
        },
        Anchor {
            x: vec![0.9, 0.8, 0.7],
            y: vec![0.7; d],
        },
    ];
    let theta0 = interior_theta(&family, &mut rng);
    let make = |mu0: f64, mu1: f64, mu2: f64, mu3: f64| -> Result<ProblemSpec> {
        let mut s = base.clone();
        if mu0 > 0.0 || mu1 > 0.0 {
            s.views = vec![View {
                observer: None,
                targets: vec![Target::new(lx.clone(), mu0, mu1)?],
            }];
        }
        s.theta0 = theta0.clone();
        s.mu2 = mu2;
        s.mu3 = mu3;
        s.anchors = anchors.clone();
        Ok(s)
    };
    let h = 1e-5;
    let mut out = Vec::new();
    for (name, w) in [
        ("mu0", [1.0, 0.0, 0.0, 0.0]),
        ("mu1", [0.0, 1.0, 0.0, 0.0]),
        ("mu2", [0.0, 0.0, 1.0, 0.0]),
        ("mu3", [0.0, 0.0, 0.0, 1.0]),
        ("full", [1.0, 0.7, 0.3, 2.0]),
    ] {
        let s = make(w[0], w[1], w[2], w[3])?;
        out.push((name.to_string(), check_gradient(&s, &theta, h)?));
    }
    // penalty, with a halfspace that cuts through the mapped colors
    let mut s = make(1.0, 1.0, 1.0, 1.0)?;
    let mut a = vec![0.0; d];
    a[0] = 1.0;
    s.halfspaces = vec![Halfspace { a, b: 0.3 }];
    out.push(("penalty".into(), check_gradient(&Penalized(&s, 10.0), &theta, h)?));
    Ok(out)
}

fn criterion_gradients() -> Result<Outcome> {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for i in 0..20u64 {
        let kind = (i % 4) as usize;
        for (term, err) in gradient_instance(kind, 100 + i)? {
            checks += 1;
            if err > worst.0 || !err.is_finite() {
                worst = (err, format!("instance {i} family {kind} term {term}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        worst.0 < 1e-4 && secs < 60.0,
        format!("max rel err {:.2e} ({}) over {checks} checks, {secs:.1} s", worst.0, worst.1),
    ))
}

// ---- 2 and 5 --------------------------------------------------------------

struct Metamer {
    img: Image,
    mask: Vec<bool>,
    result: AppResult,
    luma: Image,
    secs: f64,
}

fn metamer_run() -> Result<Metamer> {
    let (img, mask) = metamer_image(SIDE, SIDE, 7);
    let t = Instant::now();
    let result = decolorize(&img, &AppConfig::new(Application::Decolorize))?;
    let secs = t.elapsed().as_secs_f64();
    Ok(Metamer {
        luma: rgb_to_luma(&img)?,
        img,
        mask,
        result,
        secs,
    })
}

fn criterion_metamer(m: &Metamer) -> Result<Outcome> {
    let g = GraphParams::default();
    let c_luma = region_contrast(&m.luma, &m.mask)?;
    let c_opt = region_contrast(&m.result.output, &m.mask)?;
    let s_luma = structure_metrics(&m.img, &m.luma, &g, 10)?;
    let s_opt = structure_metrics(&m.img, &m.result.output, &g, 10)?;
    let r_luma = rwms_auto(&m.img, &m.luma)?.1;
    let r_opt = rwms_auto(&m.img, &m.result.output)?.1;
    let pass = c_luma < 0.02
        && c_opt > 0.15
        && s_opt.commutator_norm_normalized <= 0.5 * s_luma.commutator_norm_normalized
        && r_opt < r_luma
        && m.secs < 120.0;
    Ok(outcome(
        pass,
        format!(
            "contrast luma {c_luma:.4} (<0.02) opt {c_opt:.3} (>0.15); comm opt {:.4} vs luma {:.4} (<=0.5x); \
             rwms opt {r_opt:.3} < luma {r_luma:.3}; {:.1} s",
            s_opt.commutator_norm_normalized, s_luma.commutator_norm_normalized, m.secs
        ),
    ))
}

fn criterion_joint_diag(m: &Metamer) -> Result<Outcome> {
    let g = GraphParams::default();
    let jd_luma = structure_metrics(&m.img, &m.luma, &g, 10)?.jd_residual;
    let jd_opt = structure_metrics(&m.img, &m.result.output, &g, 10)?.jd_residual;
    let (lx, lo) = paired_laplacians(&m.img, &m.result.output, &g)?;
    let agree = label_agreement(&spectral_clusters(&lx, 2, 0)?, &spectral_clusters(&lo, 2, 0)?);
    Ok(outcome(
        jd_opt <= 0.5 * jd_luma && agree >= 0.9,
        format!("jd residual opt {jd_opt:.3e} vs luma {jd_luma:.3e} (<=0.5x); k=2 cluster agreement {:.1}% (>=90%)", 100.0 * agree),
    ))
}

// ---- 3 --------------------------------------------------------------------

fn criterion_exactness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_row: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut worst_comm: f64 = 0.0;
    let mut worst_rwms: f64 = 0.0;
    let mut worst_cost: f64 = 0.0;
    for (w, h) in [(5, 4), (12, 12), (20, 20), (17, 9)] {
        let img = random_image(w, h, 3, &mut rng);
        let g = GraphParams::default();
        let l = build_laplacian(&build_adjacency(&img, &g)?)?;
        worst_row = l.row_sums().iter().fold(worst_row, |m, r| m.max(r.abs()));
        let dense = l.to_dense();
        min_eig = min_eig.min(nalgebra::SymmetricEigen::new(dense.clone()).eigenvalues.min());
        worst_comm = worst_comm.max(commutator(&l, &l)?.abs().max());
        worst_rwms = worst_rwms.max(rwms(&img, &img, 1)?.1);

        // identity map on its own image
        let support = Arc::new(build_support(&img, &g, 1)?);
        let family = MapFamily::linear(3, 3, true, false);
        let mut spec = ProblemSpec::new(img.clone(), support, g, family.clone())?;
        spec.views = vec![View {
            observer: None,
            targets: vec![Target::new(spec.source_laplacian()?, 1.0, 1.0)?],
        }];
        spec.theta0 = family.nominal();
        spec.mu2 = 1.0;
        worst_cost = worst_cost.max(cost_total(&family.nominal(), &spec)?.abs());
    }
    Ok(outcome(
        worst_cost == 0.0 && worst_rwms == 0.0 && worst_comm == 0.0 && worst_row < 1e-12 && min_eig >= -1e-10,
        format!(
            "identity cost {worst_cost:e}; rwms(X,X) {worst_rwms:e}; [L,L] {worst_comm:e}; \
             row sums {worst_row:.1e}; min eigenvalue {min_eig:.2e}"
        ),
    ))
}

// ---- 4 --------------------------------------------------------------------

fn criterion_descent(runs: &Runs) -> Result<Outcome> {
    let mut bad = Vec::new();
    for (name, r) in &runs.traces {
        let v = descent_violations(&r.trace);
        if v > 0 {
            bad.push(format!("{name}: {v}"));
        }
    }
    let (img, _) = metamer_image(SIDE, SIDE, 7);
    let cfg = AppConfig::new(Application::Decolorize);
    let a = decolorize(&img, &cfg)?;
    let b = decolorize(&img, &cfg)?;
    let bits = |r: &AppResult| -> (Vec<u64>, Vec<u64>) {
        (
            r.params.theta.iter().map(|v| v.to_bits()).collect(),
            r.trace.iterations.iter().map(|it| it.cost.to_bits()).collect(),
        )
    };
    let same = bits(&a) == bits(&b) && a.output == b.output;
    Ok(outcome(
        bad.is_empty() && same,
        format!(
            "{} runs, {} with cost increases within a round{}; repeat run identical: {same}",
            runs.traces.len(),
            bad.len(),
            if bad.is_empty() { String::new() } else { format!(" ({})", bad.join(", ")) }
        ),
    ))
}

// ---- 6 --------------------------------------------------------------------

/// Hue varies down the image, saturation across it.
fn saturated_image(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 3, |x, y| {
        let hue = 6.0 * y as f64 / h as f64;
        let sat = 0.15 + 0.85 * x as f64 / (w - 1) as f64;
        let (i, f) = (hue.floor() as usize % 6, hue.fract());
        let full = match i {
            0 => [1.0, f, 0.0],
            1 => [1.0 - f, 1.0, 0.0],
            2 => [0.0, 1.0, f],
            3 => [0.0, 1.0 - f, 1.0],
            4 => [f, 0.0, 1.0],
            _ => [1.0, 0.0, 1.0 - f],
        };
        full.iter().map(|c| 0.6 * (1.0 - sat) + 0.9 * sat * c + 0.05).map(|v: f64| v.min(1.0)).collect()
    })
    .unwrap()
}

fn criterion_gamut(runs: &mut Runs) -> Result<Outcome> {
    let img = saturated_image(SIDE, SIDE);
    let cfg = AppConfig::new(Application::GamutMap);
    let gamut = default_gamut();
    let xy = lapmap::imageio::rgb_to_xy_chroma(&img)?;
    let src_out = out_of_gamut_fraction(&xy, gamut.halfspaces())?;
    let t = Instant::now();
    let r = gamut_map(&img, &cfg)?;
    let secs = t.elapsed().as_secs_f64();
    let out_frac = r.metrics.out_of_gamut_fraction.unwrap_or(f64::NAN);
    let clip = r.metrics.baseline["clip_rwms_mean"];
    let opt = r.metrics.rwms_mean;
    let pass = src_out >= 0.3 && out_frac == 0.0 && opt <= 1.25 * clip && secs < 120.0;
    runs.traces.push(("gamut".into(), r));
    Ok(outcome(
        pass,
        format!(
            "source out-of-gamut {:.1}% (>=30%); output {out_frac} (=0); rwms opt {opt:.3} vs clip {clip:.3} (<=1.25x); {secs:.1} s",
            100.0 * src_out
        ),
    ))
}

// ---- 7 --------------------------------------------------------------------

/// Rotates each pixel's chroma about the gray axis by a random angle.
fn chroma_randomized(img: &Image, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 1.0 / 3f64.sqrt();
    img.map_pixels(3, |s, d| {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (sn, cs) = a.sin_cos();
        let dot = k * (s[0] + s[1] + s[2]);
        let cr = [k * (s[2] - s[1]), k * (s[0] - s[2]), k * (s[1] - s[0])];
        for i in 0..3 {
            d[i] = (s[i] * cs + cr[i] * sn + k * dot * (1.0 - cs)).clamp(0.0, 1.0);
        }
    })
}

fn criterion_cvd(runs: &mut Runs) -> Result<Outcome> {
    let kind = CvdKind::Protanopia;
    let mask = island_mask(SIDE, SIDE);
    let (a, b) = confusable_colors(kind);
    let img = paint(SIDE, SIDE, &mask, a, b, 0.004, 11);
    let psi = CvdTransform::new(kind);
    let mut cfg = AppConfig::new(Application::Daltonize);
    cfg.cvd = kind;
    let r = daltonize(&img, &cfg)?;
    let seen_src = region_contrast(&cvd_simulate(&img, &psi)?, &mask)?;
    let seen_out = region_contrast(&cvd_simulate(&r.output, &psi)?, &mask)?;
    let r_out = rwms_auto(&img, &r.output)?.1;
    let r_ctl = rwms_auto(&img, &chroma_randomized(&img, 5))?.1;
    let pass = seen_src < 0.02 && seen_out > 0.1 && r_out < r_ctl;
    runs.traces.push(("daltonize".into(), r));
    Ok(outcome(
        pass,
        format!(
            "simulated contrast source {seen_src:.4} (<0.02) output {seen_out:.3} (>0.1); \
             rwms output {r_out:.3} < chroma-randomized {r_ctl:.3}"
        ),
    ))
}

// ---- 8 --------------------------------------------------------------------

fn criterion_fusion(runs: &mut Runs) -> Result<Outcome> {
    let (w, h) = (SIDE, SIDE);
    let hidden: Vec<bool> = (0..w * h).map(|i| (8..20).contains(&(i % w)) && (10..24).contains(&(i / w))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let img = Image::from_fn(w, h, 4, |x, y| {
        let (u, v) = (x as f64 / (w - 1) as f64, y as f64 / (h - 1) as f64);
        let nir = if hidden[y * w + x] { 0.8 } else { 0.2 } + 0.01 * rng.random::<f64>();
        vec![0.2 + 0.6 * u, 0.3 + 0.4 * v, 0.5 - 0.3 * u * v, nir]
    })?;
    let r = fuse(&img, &AppConfig::new(Application::Fuse))?;
    let contrast = region_contrast(&r.output, &hidden)?;
    let black = r.params.apply(&Image::filled(1, 1, &[0.0; 4])?)?;
    let white = r.params.apply(&Image::filled(1, 1, &[1.0; 4])?)?;
    let err_black = black.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err_white = white.data().iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    let rgb_only = region_contrast(&img.channel_range(0..3)?, &hidden)?;
    let pass = contrast > 0.1 && err_black <= 0.05 && err_white <= 0.05;
    runs.traces.push(("fuse".into(), r));
    Ok(outcome(
        pass,
        format!(
            "hidden-square contrast {contrast:.3} (>0.1, RGB alone {rgb_only:.3}); anchor error black {err_black:.4} \
             white {err_white:.4} (<=0.05)"
        ),
    ))
}

// ---- 9 --------------------------------------------------------------------

fn criterion_performance(runs: &mut Runs) -> Result<Outcome> {
    let (img, _) = metamer_image(64, 64, 9);
    let cfg = AppConfig::new(Application::Decolorize);
    let t = Instant::now();
    let r = decolorize(&img, &cfg)?;
    let secs = t.elapsed().as_secs_f64();
    let pass = secs < 60.0 && r.graph_vertices == 64 * 64;
    let detail = format!(
        "64x64, {} vertices, {} restarts, {} iterations in best run, {secs:.1} s (<60 s)",
        r.graph_vertices,
        cfg.solve.restarts,
        r.trace.iterations.len()
    );
    runs.traces.push(("decolorize 64x64".into(), r));
    Ok(outcome(pass, detail))
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    let mut failed = 0;
    let mut report = |id: &str, name: &str, r: Result<Outcome>| {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    report("1", "gradient correctness", criterion_gradients());
    let metamer = metamer_run();
    match metamer {
        Ok(m) => {
            report("2", "metamer recovery", criterion_metamer(&m));
            report("3", "trivial exactness", criterion_exactness());
            report("5", "joint diagonalizability", criterion_joint_diag(&m));
            runs.traces.push(("metamer".into(), m.result));
        }
        Err(e) => {
            report("2", "metamer recovery", Err(lapmap::Error::Config(e.to_string())));
            report("3", "trivial exactness", criterion_exactness());
            report("5", "joint diagonalizability", Err(lapmap::Error::Config(e.to_string())));
        }
    }
    report("6", "gamut mapping", criterion_gamut(&mut runs));
    report("7", "color-vision deficiency", criterion_cvd(&mut runs));
    report("8", "fusion", criterion_fusion(&mut runs));
    report("9", "performance envelope", criterion_performance(&mut runs));
    report("4", "descent and determinism", criterion_descent(&runs));
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
