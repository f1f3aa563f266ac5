//! The Laplacian-colormap objective and its analytic gradient.
//!
//! For every *view* `v` of the mapped image (the map output itself, or the
//! output seen through a fixed observer) and each of its target Laplacians
//! `A_t`, the objective adds
//!
//! ```text
//! mu0 |[A_t, B_v]|_F^2 + mu1 |A_t - B_v|_F^2
//! ```
//!
//! where `B_v` is the Laplacian of the view on the source's edge support.
//! On top come `mu2 |theta - theta0|^2`, the anchor term
//! `mu3 |phi(X_c) - Y_c|^2` and, during penalty rounds, the quadratic gamut
//! penalty `rho sum max(0, a.y - b)^2` over output pixels.
//!
//! The gradient runs through the edge weights. With `G = dJ/dB`,
//!
//! ```text
//! G = sum_t 2 mu0 [A_t, [A_t, B]] - 2 mu1 (A_t - B)
//! dJ/dw_ij = G_ii + G_jj - 2 G_ij
//! dw_ij/dtheta = -(w_ij / sigma_r^2) sum_k (y_i^k - y_j^k)(J_i^k - J_j^k)
//! ```
//!
//! Only the diagonal and stored-edge entries of `G` are ever formed.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::colormap::{LinearTransform, MapFamily};
use crate::error::{Error, Result};
use crate::gamut::Halfspace;
use crate::graph::{laplacian_on_support, EdgeSupport, GraphParams, SparseSymMatrix};
use crate::imageio::Image;
use crate::sparse::Csr;

/// One target Laplacian with its commutator and difference weights.
#[derive(Debug, Clone)]
pub struct Target {
    laplacian: SparseSymMatrix,
    csr: Csr,
    pub mu0: f64,
    pub mu1: f64,
}

impl Target {
    pub fn new(laplacian: SparseSymMatrix, mu0: f64, mu1: f64) -> Result<Self> {
        check_weight("mu0", mu0)?;
        check_weight("mu1", mu1)?;
        let csr = laplacian.to_csr();
        Ok(Target {
            laplacian,
            csr,
            mu0,
            mu1,
        })
    }

    pub fn laplacian(&self) -> &SparseSymMatrix {
        &self.laplacian
    }
}

/// The mapped image as seen by one observer, compared against targets.
#[derive(Debug, Clone)]
pub struct View {
    pub observer: Option<LinearTransform>,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anchor {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn check_weight(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be a finite value >= 0, got {v}")))
    }
}

/// One optimization instance on a fixed graph.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    source: Image,
    support: Arc<EdgeSupport>,
    graph: GraphParams,
    family: MapFamily,
    region_weights: Vec<f64>,
    spatial: Vec<f64>,
    pub theta0: Vec<f64>,
    pub views: Vec<View>,
    pub mu2: f64,
    pub mu3: f64,
    pub anchors: Vec<Anchor>,
    pub halfspaces: Vec<Halfspace>,
    /// Scale every Laplacian to unit Frobenius norm inside the cost.
    pub prescale: bool,
}

impl ProblemSpec {
    /// `source` holds the graph's vertex pixels, in `support` order.
    pub fn new(source: Image, support: Arc<EdgeSupport>, graph: GraphParams, family: MapFamily) -> Result<Self> {
        graph.validate()?;
        if source.channels() != family.d_in() {
            return Err(Error::channels(family.d_in().to_string(), source.channels()));
        }
        if source.pixel_count() != support.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} source pixels for a graph of {} vertices",
                source.pixel_count(),
                support.dim()
            )));
        }
        let region_weights = family.pixel_weights(&source)?;
        let spatial = support.distances().iter().map(|&d| graph.spatial_factor(d)).collect();
        let theta0 = vec![0.0; family.n_params()];
        Ok(ProblemSpec {
            source,
            support,
            graph,
            family,
            region_weights,
            spatial,
            theta0,
            views: Vec::new(),
            mu2: 0.0,
            mu3: 0.0,
            anchors: Vec::new(),
            halfspaces: Vec::new(),
            prescale: false,
        })
    }

    pub fn source(&self) -> &Image {
        &self.source
    }

    pub fn support(&self) -> &Arc<EdgeSupport> {
        &self.support
    }

    pub fn graph(&self) -> &GraphParams {
        &self.graph
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    /// Laplacian of the source image itself.
    pub fn source_laplacian(&self) -> Result<SparseSymMatrix> {
        laplacian_on_support(&self.source, &self.support, &self.graph)
    }

    /// Laplacian of any image sharing the source's vertex layout.
    pub fn laplacian_of(&self, vertices: &Image) -> Result<SparseSymMatrix> {
        laplacian_on_support(vertices, &self.support, &self.graph)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_params();
        let d = self.family.d_out();
        if self.theta0.len() != n {
            return Err(Error::DimensionMismatch(format!("theta0 has {} entries, expected {n}", self.theta0.len())));
        }
        check_weight("mu2", self.mu2)?;
        check_weight("mu3", self.mu3)?;
        for v in &self.views {
            if let Some(o) = &v.observer {
                if o.cols() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "observer takes {} channels, map produces {d}",
                        o.cols()
                    )));
                }
            }
            for t in &v.targets {
                if t.laplacian.dim() != self.support.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "target Laplacian of dimension {} on a graph of {} vertices",
                        t.laplacian.dim(),
                        self.support.dim()
                    )));
                }
            }
        }
        for a in &self.anchors {
            if a.x.len() != self.family.d_in() || a.y.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "anchor {} -> {} channels, map is {} -> {d}",
                    a.x.len(),
                    a.y.len(),
                    self.family.d_in()
                )));
            }
        }
        for h in &self.halfspaces {
            if h.a.len() != d {
                return Err(Error::DimensionMismatch(format!("halfspace of dimension {} on {d} output channels", h.a.len())));
            }
        }
        Ok(())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.n_params()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                what: "theta",
                theta: theta.to_vec(),
            });
        }
        Ok(())
    }

    /// Mapped vertex colors (`N x d_out`) and, optionally, per-vertex
    /// Jacobians (`N x d_out x n`).
    fn map_vertices(&self, theta: &[f64], with_jac: bool) -> (Vec<f64>, Vec<f64>) {
        let (d, n) = (self.family.d_out(), self.n_params());
        let q = self.family.regions().map_or(0, |r| r.q());
        let npx = self.source.pixel_count();
        let mut vals = vec![0.0; npx * d];
        let mut jacs = if with_jac { vec![0.0; npx * d * n] } else { Vec::new() };
        for (i, x) in self.source.pixels().enumerate() {
            let w = &self.region_weights[i * q..(i + 1) * q];
            self.family.eval(theta, x, w, &mut vals[i * d..(i + 1) * d]);
            if with_jac {
                self.family.jacobian(theta, x, w, &mut jacs[i * d * n..(i + 1) * d * n]);
            }
        }
        (vals, jacs)
    }

    /// The mapped colors seen through `view`.
    fn view_colors(&self, view: &View, vals: &[f64]) -> (Vec<f64>, usize) {
        let d = self.family.d_out();
        match &view.observer {
            None => (vals.to_vec(), d),
            Some(o) => {
                let dv = o.rows();
                let mut y = vec![0.0; vals.len() / d * dv];
                for (src, dst) in vals.chunks_exact(d).zip(y.chunks_exact_mut(dv)) {
                    o.apply(src, dst);
                }
                (y, dv)
            }
        }
    }

    fn laplacian_from_colors(&self, y: &[f64], dv: usize) -> Result<(SparseSymMatrix, Vec<f64>)> {
        let inv = 1.0 / (2.0 * self.graph.sigma_r * self.graph.sigma_r);
        let mut degree = vec![0.0; self.support.dim()];
        let w: Vec<f64> = self
            .support
            .edges()
            .iter()
            .zip(&self.spatial)
            .map(|(&(i, j), &s)| {
                let d2: f64 = y[i * dv..(i + 1) * dv]
                    .iter()
                    .zip(&y[j * dv..(j + 1) * dv])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let wij = s * (-d2 * inv).exp();
                degree[i] += wij;
                degree[j] += wij;
                wij
            })
            .collect();
        let l = SparseSymMatrix::new(self.support.clone(), w.iter().map(|v| -v).collect(), degree)?;
        Ok((l, w))
    }
}

/// Individual contributions to the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostTerms {
    pub commutator: f64,
    pub difference: f64,
    pub regularizer: f64,
    pub anchor: f64,
    pub penalty: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.commutator + self.difference + self.regularizer + self.anchor + self.penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub terms: CostTerms,
    /// Empty unless requested.
    pub gradient: Vec<f64>,
    /// Largest halfspace violation over vertex pixels.
    pub max_violation: f64,
}

/// `AB - BA`.
pub fn commutator_csr(a: &Csr, b: &Csr) -> Result<Csr> {
    let ab = a.matmul(b)?;
    let ba = b.matmul(a)?;
    ab.axpby(1.0, &ba, -1.0)
}

/// Dense `[A, B]`.
pub fn commutator(a: &SparseSymMatrix, b: &SparseSymMatrix) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.dim(), b.dim())));
    }
    Ok(commutator_csr(&a.to_csr(), &b.to_csr())?.to_dense())
}

/// Sum of squared off-diagonal entries.
pub fn off_diagonal_energy(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s
}

/// `[A, C]_ij` for symmetric `A` and antisymmetric `C`.
fn nested_entry(a: &Csr, c: &Csr, i: usize, j: usize) -> f64 {
    let s1: f64 = a.row(i).map(|(k, v)| v * c.get(j, k)).sum();
    let s2: f64 = a.row(j).map(|(k, v)| v * c.get(i, k)).sum();
    -s1 - s2
}

/// Per-target terms and `dJ/dw` of one view's Laplacian.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeGradient {
    pub commutator: f64,
    pub difference: f64,
    /// `dJ/dw_e` per stored edge; empty unless requested.
    pub dw: Vec<f64>,
}

/// Commutator and difference terms of `targets` against `b`, with the
/// derivative with respect to each edge weight of `b`.
pub fn view_terms(targets: &[Target], b: &SparseSymMatrix, prescale: bool, want_grad: bool) -> Result<EdgeGradient> {
    let n = b.dim();
    let nb = if prescale { b.frobenius_norm() } else { 1.0 };
    let nb = if nb > 0.0 { nb } else { 1.0 };
    let bh = if prescale { b.scaled(1.0 / nb) } else { b.clone() };
    let b_csr = bh.to_csr();
    let edges = b.support().edges();
    let mut out = EdgeGradient::default();
    let mut gdiag = vec![0.0; if want_grad { n } else { 0 }];
    let mut gedge = vec![0.0; if want_grad { edges.len() } else { 0 }];
    for t in targets {
        if t.laplacian.dim() != n {
            return Err(Error::DimensionMismatch(format!("target {} vs mapped {}", t.laplacian.dim(), n)));
        }
        let sa = if prescale {
            let na = t.laplacian.frobenius_norm();
            if na > 0.0 {
                1.0 / na
            } else {
                1.0
            }
        } else {
            1.0
        };
        if t.mu0 > 0.0 {
            let c = commutator_csr(&t.csr, &b_csr)?;
            out.commutator += t.mu0 * sa * sa * c.frobenius_sq();
            if want_grad {
                let f = 2.0 * t.mu0 * sa * sa;
                for (i, g) in gdiag.iter_mut().enumerate() {
                    *g += f * nested_entry(&t.csr, &c, i, i);
                }
                for (g, &(i, j)) in gedge.iter_mut().zip(edges) {
                    *g += f * nested_entry(&t.csr, &c, i, j);
                }
            }
        }
        if t.mu1 > 0.0 {
            let same = t.laplacian.same_support(b);
            out.difference += t.mu1
                * if same {
                    let dd: f64 = t.laplacian.diag().iter().zip(bh.diag()).map(|(a, b)| (sa * a - b).powi(2)).sum();
                    let de: f64 = t.laplacian.offdiag().iter().zip(bh.offdiag()).map(|(a, b)| (sa * a - b).powi(2)).sum();
                    dd + 2.0 * de
                } else {
                    t.csr.axpby(sa, &b_csr, -1.0)?.frobenius_sq()
                };
            if want_grad {
                let f = -2.0 * t.mu1;
                for (i, g) in gdiag.iter_mut().enumerate() {
                    *g += f * (sa * t.laplacian.diag()[i] - bh.diag()[i]);
                }
                for (k, (g, &(i, j))) in gedge.iter_mut().zip(edges).enumerate() {
                    let a = if same { t.laplacian.offdiag()[k] } else { t.laplacian.get(i, j) };
                    *g += f * (sa * a - bh.offdiag()[k]);
                }
            }
        }
    }
    if want_grad {
        if prescale {
            let ip = gdiag.iter().zip(bh.diag()).map(|(g, b)| g * b).sum::<f64>()
                + 2.0 * gedge.iter().zip(bh.offdiag()).map(|(g, b)| g * b).sum::<f64>();
            for (g, b) in gdiag.iter_mut().zip(bh.diag()) {
                *g = (*g - ip * b) / nb;
            }
            for (g, b) in gedge.iter_mut().zip(bh.offdiag()) {
                *g = (*g - ip * b) / nb;
            }
        }
        out.dw = edges
            .iter()
            .zip(&gedge)
            .map(|(&(i, j), &ge)| gdiag[i] + gdiag[j] - 2.0 * ge)
            .collect();
    }
    Ok(out)
}

/// `dJ/dw_ij` for every stored edge of `l_mapped`, the Laplacian of view
/// `view` of `spec`.
pub fn grad_wij(spec: &ProblemSpec, view: usize, l_mapped: &SparseSymMatrix) -> Result<Vec<f64>> {
    let v = spec
        .views
        .get(view)
        .ok_or_else(|| Error::InvalidParameter(format!("no view {view}")))?;
    if !l_mapped.same_support(&SparseSymMatrix::new(spec.support.clone(), vec![0.0; spec.support.num_edges()], vec![0.0; spec.support.dim()])?) {
        return Err(Error::DimensionMismatch("mapped Laplacian is not on the problem's edge support".into()));
    }
    Ok(view_terms(&v.targets, l_mapped, spec.prescale, true)?.dw)
}

/// Laplacian of view `view` of the image mapped by `theta`.
pub fn mapped_laplacian(theta: &[f64], spec: &ProblemSpec, view: usize) -> Result<SparseSymMatrix> {
    spec.check_theta(theta)?;
    let v = spec
        .views
        .get(view)
        .ok_or_else(|| Error::InvalidParameter(format!("no view {view}")))?;
    let (vals, _) = spec.map_vertices(theta, false);
    let (y, dv) = spec.view_colors(v, &vals);
    Ok(spec.laplacian_from_colors(&y, dv)?.0)
}

/// `d w_ij / d theta` for one stored edge as seen through view `view`.
pub fn grad_theta_w(theta: &[f64], spec: &ProblemSpec, view: usize, edge: (usize, usize)) -> Result<Vec<f64>> {
    spec.check_theta(theta)?;
    let v = spec
        .views
        .get(view)
        .ok_or_else(|| Error::InvalidParameter(format!("no view {view}")))?;
    let (i, j) = edge;
    let e = spec
        .support
        .edge_index(i, j)
        .ok_or_else(|| Error::InvalidParameter(format!("({i}, {j}) is not an edge")))?;
    let (d, n) = (spec.family.d_out(), spec.n_params());
    let (vals, jacs) = spec.map_vertices(theta, true);
    let (y, dv) = spec.view_colors(v, &vals);
    let (_, w) = spec.laplacian_from_colors(&y, dv)?;
    let inv = 1.0 / (spec.graph.sigma_r * spec.graph.sigma_r);
    let mut diff = vec![0.0; dv];
    for (k, dk) in diff.iter_mut().enumerate() {
        *dk = y[i * dv + k] - y[j * dv + k];
    }
    let mut g = vec![0.0; d];
    match &v.observer {
        Some(o) => o.apply_transpose(&diff, &mut g),
        None => g.copy_from_slice(&diff),
    }
    let mut out = vec![0.0; n];
    for r in 0..d {
        for (k, o) in out.iter_mut().enumerate() {
            *o += -w[e] * inv * g[r] * (jacs[(i * d + r) * n + k] - jacs[(j * d + r) * n + k]);
        }
    }
    Ok(out)
}

/// Full objective at `theta`, with the gamut penalty weighted by
/// `penalty_weight` (0 disables it).
pub fn evaluate(theta: &[f64], spec: &ProblemSpec, penalty_weight: f64, want_grad: bool) -> Result<Evaluation> {
    spec.check_theta(theta)?;
    let (d, n) = (spec.family.d_out(), spec.n_params());
    let npx = spec.source.pixel_count();
    let (vals, jacs) = spec.map_vertices(theta, want_grad);
    let mut terms = CostTerms::default();
    // dJ/dy per vertex in map-output space
    let mut gy = vec![0.0; if want_grad { npx * d } else { 0 }];
    let inv = 1.0 / (spec.graph.sigma_r * spec.graph.sigma_r);

    for view in &spec.views {
        if view.targets.is_empty() {
            continue;
        }
        let (y, dv) = spec.view_colors(view, &vals);
        let (b, w) = spec.laplacian_from_colors(&y, dv)?;
        let eg = view_terms(&view.targets, &b, spec.prescale, want_grad)?;
        terms.commutator += eg.commutator;
        terms.difference += eg.difference;
        if want_grad {
            let mut gv = vec![0.0; npx * dv];
            for (e, &(i, j)) in spec.support.edges().iter().enumerate() {
                let c = eg.dw[e] * (-w[e] * inv);
                if c == 0.0 {
                    continue;
                }
                for k in 0..dv {
                    let t = c * (y[i * dv + k] - y[j * dv + k]);
                    gv[i * dv + k] += t;
                    gv[j * dv + k] -= t;
                }
            }
            match &view.observer {
                None => gy.iter_mut().zip(&gv).for_each(|(a, b)| *a += b),
                Some(o) => {
                    let mut tmp = vec![0.0; d];
                    for (src, dst) in gv.chunks_exact(dv).zip(gy.chunks_exact_mut(d)) {
                        o.apply_transpose(src, &mut tmp);
                        dst.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }

    let mut max_violation: f64 = 0.0;
    if !spec.halfspaces.is_empty() {
        for (i, yi) in vals.chunks_exact(d).enumerate() {
            for h in &spec.halfspaces {
                let v = h.violation(yi);
                max_violation = max_violation.max(v);
                if penalty_weight > 0.0 && v > 0.0 {
                    terms.penalty += penalty_weight * v * v;
                    if want_grad {
                        for (k, a) in h.a.iter().enumerate() {
                            gy[i * d + k] += 2.0 * penalty_weight * v * a;
                        }
                    }
                }
            }
        }
    }

    let mut grad = vec![0.0; if want_grad { n } else { 0 }];
    if want_grad {
        for i in 0..npx {
            for r in 0..d {
                let g = gy[i * d + r];
                if g == 0.0 {
                    continue;
                }
                let row = &jacs[(i * d + r) * n..(i * d + r + 1) * n];
                grad.iter_mut().zip(row).for_each(|(o, j)| *o += g * j);
            }
        }
    }

    if spec.mu2 > 0.0 {
        for (k, (t, t0)) in theta.iter().zip(&spec.theta0).enumerate() {
            terms.regularizer += spec.mu2 * (t - t0) * (t - t0);
            if want_grad {
                grad[k] += 2.0 * spec.mu2 * (t - t0);
            }
        }
    }

    if spec.mu3 > 0.0 && !spec.anchors.is_empty() {
        let uw = spec.family.uniform_weights();
        let mut y = vec![0.0; d];
        let mut jac = vec![0.0; d * n];
        for a in &spec.anchors {
            spec.family.eval(theta, &a.x, &uw, &mut y);
            if want_grad {
                spec.family.jacobian(theta, &a.x, &uw, &mut jac);
            }
            for r in 0..d {
                let res = y[r] - a.y[r];
                terms.anchor += spec.mu3 * res * res;
                if want_grad {
                    for k in 0..n {
                        grad[k] += 2.0 * spec.mu3 * res * jac[r * n + k];
                    }
                }
            }
        }
    }

    let value = terms.total();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "cost",
            theta: theta.to_vec(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            theta: theta.to_vec(),
        });
    }
    Ok(Evaluation {
        value,
        terms,
        gradient: grad,
        max_violation,
    })
}

fn check_feasible(theta: &[f64], spec: &ProblemSpec) -> Result<()> {
    spec.check_theta(theta)?;
    for (k, (t, (lo, hi))) in theta.iter().zip(spec.family.bounds()).enumerate() {
        if *t < lo - 1e-9 || *t > hi + 1e-9 {
            return Err(Error::Infeasible(format!("theta[{k}] = {t} outside [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Objective without the gamut penalty.
pub fn cost_total(theta: &[f64], spec: &ProblemSpec) -> Result<f64> {
    check_feasible(theta, spec)?;
    Ok(evaluate(theta, spec, 0.0, false)?.value)
}

/// Gradient of [`cost_total`].
pub fn grad_total(theta: &[f64], spec: &ProblemSpec) -> Result<Vec<f64>> {
    check_feasible(theta, spec)?;
    Ok(evaluate(theta, spec, 0.0, true)?.gradient)
}
