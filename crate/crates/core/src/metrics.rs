//! Quality measures for color mappings.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::cluster::kmeans;
use crate::cost::{commutator_csr, off_diagonal_energy};
use crate::error::{Error, Result};
use crate::gamut::{Halfspace, GAMUT_TOL};
use crate::graph::{build_support, laplacian_on_support, GraphParams, SparseSymMatrix};
use crate::imageio::{resize_longside, Image};

/// RWMS values are reported multiplied by this factor.
pub const RWMS_SCALE: f64 = 100.0;
/// Color distances below this are excluded from the RWMS sums.
pub const RWMS_MIN_DIST: f64 = 1e-9;
/// Images up to this many pixels get the exact all-pairs RWMS.
pub const RWMS_EXACT_LIMIT: usize = 4096;
pub const RWMS_SAMPLES: usize = 2000;
/// Largest Laplacian handed to the dense eigensolver.
pub const EIGEN_MAX_DIM: usize = 3000;
/// Long side of the copy used for eigen-based report metrics.
pub const REPORT_SIDE: usize = 40;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-pixel relative-distance distortion between `x` and its mapping `y`,
/// with the inner sum over every `stride`-th pixel. Returns the error image
/// and its mean, both scaled by [`RWMS_SCALE`].
pub fn rwms(x: &Image, y: &Image, stride: usize) -> Result<(Image, f64)> {
    if x.pixel_count() != y.pixel_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} pixels",
            x.pixel_count(),
            y.pixel_count()
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("rwms stride must be >= 1".into()));
    }
    let n = x.pixel_count();
    let sample: Vec<usize> = (0..n).step_by(stride).collect();
    let (mut rx, mut ry): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        for &j in &sample {
            rx = rx.max(dist(x.pixel(i), x.pixel(j)));
            ry = ry.max(dist(y.pixel(i), y.pixel(j)));
        }
    }
    let mut eps = vec![0.0; n];
    if rx > 0.0 {
        for (i, e) in eps.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &j in &sample {
                let dx = dist(x.pixel(i), x.pixel(j));
                if dx < RWMS_MIN_DIST {
                    continue;
                }
                let dy = dist(y.pixel(i), y.pixel(j));
                // (R_Y dx - R_X dy)^2 / (R_Y dx)^2; a constant Y counts as total loss
                let ratio = if ry > 0.0 { rx * dy / (ry * dx) } else { 0.0 };
                sum += (1.0 - ratio) * (1.0 - ratio);
                count += 1;
            }
            if count > 0 {
                *e = RWMS_SCALE * (sum / count as f64).sqrt();
            }
        }
    }
    let mean = eps.iter().sum::<f64>() / n as f64;
    Ok((Image::new(x.width(), x.height(), 1, eps)?, mean))
}

/// Exact RWMS for small images, about [`RWMS_SAMPLES`] sampled partners
/// per pixel otherwise.
pub fn rwms_auto(x: &Image, y: &Image) -> Result<(Image, f64)> {
    let n = x.pixel_count();
    let stride = if n <= RWMS_EXACT_LIMIT { 1 } else { n.div_ceil(RWMS_SAMPLES) };
    rwms(x, y, stride)
}

/// `|[A, B]|_F`, optionally with both scaled to unit Frobenius norm.
pub fn commutator_norm(lx: &SparseSymMatrix, ly: &SparseSymMatrix, normalize: bool) -> Result<f64> {
    if lx.dim() != ly.dim() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", lx.dim(), ly.dim())));
    }
    let c = commutator_csr(&lx.to_csr(), &ly.to_csr())?.frobenius_sq().sqrt();
    if !normalize {
        return Ok(c);
    }
    let s = lx.frobenius_norm() * ly.frobenius_norm();
    Ok(if s > 0.0 { c / s } else { 0.0 })
}

/// Eigenvectors of `l` for its `k` smallest eigenvalues, as columns.
pub fn smallest_eigenvectors(l: &SparseSymMatrix, k: usize) -> Result<DMatrix<f64>> {
    let n = l.dim();
    if n > EIGEN_MAX_DIM {
        return Err(Error::Eigen(format!("dimension {n} exceeds the dense limit {EIGEN_MAX_DIM}")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={n}")));
    }
    let eig = SymmetricEigen::try_new(l.to_dense(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let cols: Vec<_> = order[..k].iter().map(|&c| eig.eigenvectors.column(c).into_owned()).collect();
    Ok(DMatrix::from_columns(&cols))
}

/// `off(U^T L_Y U) / |U^T L_Y U|_F^2` for the first `k` eigenvectors `U`
/// of `L_X`.
pub fn joint_diag_residual(lx: &SparseSymMatrix, ly: &SparseSymMatrix, k: usize) -> Result<f64> {
    if lx.dim() != ly.dim() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", lx.dim(), ly.dim())));
    }
    let u = smallest_eigenvectors(lx, k)?;
    let m = u.transpose() * ly.to_dense() * &u;
    let total = m.norm_squared();
    Ok(if total > 0.0 { off_diagonal_energy(&m) / total } else { 0.0 })
}

/// Seeded k-means on the rows of the first `k` eigenvectors of `l`.
pub fn spectral_clusters(l: &SparseSymMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 1 {
        return Ok(vec![0; l.dim()]);
    }
    let u = smallest_eigenvectors(l, k)?;
    let mut pts = Vec::with_capacity(l.dim() * k);
    for i in 0..l.dim() {
        pts.extend(u.row(i).iter());
    }
    Ok(kmeans(&pts, k, k, seed, 300)?.labels)
}

/// Fraction of positions where two labelings agree, maximized over
/// relabelings of `b`.
pub fn label_agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || a.len() != b.len() {
        return 0.0;
    }
    let k = a.iter().chain(b).max().map_or(1, |m| m + 1);
    let mut counts = vec![vec![0usize; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        counts[x][y] += 1;
    }
    fn best(counts: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == counts.len() {
            return 0;
        }
        let mut top = 0;
        for c in 0..counts.len() {
            if !used[c] {
                used[c] = true;
                top = top.max(counts[row][c] + best(counts, row + 1, used));
                used[c] = false;
            }
        }
        top
    }
    let matched = if k <= 8 {
        best(&counts, 0, &mut vec![false; k])
    } else {
        let mut used = vec![false; k];
        counts
            .iter()
            .map(|row| {
                let (c, v) = row.iter().enumerate().filter(|(c, _)| !used[*c]).max_by_key(|(_, v)| **v).unwrap();
                used[c] = true;
                *v
            })
            .sum()
    };
    matched as f64 / a.len() as f64
}

/// Fraction of pixels violating any halfspace by more than [`GAMUT_TOL`].
pub fn out_of_gamut_fraction(img: &Image, halfspaces: &[Halfspace]) -> Result<f64> {
    if let Some(h) = halfspaces.iter().find(|h| h.a.len() != img.channels()) {
        return Err(Error::channels(h.a.len().to_string(), img.channels()));
    }
    let out = img
        .pixels()
        .filter(|p| halfspaces.iter().any(|h| h.violation(p) > GAMUT_TOL))
        .count();
    Ok(out as f64 / img.pixel_count() as f64)
}

/// Euclidean distance between the mean colors of the pixels inside and
/// outside `mask`.
pub fn region_contrast(img: &Image, mask: &[bool]) -> Result<f64> {
    if mask.len() != img.pixel_count() {
        return Err(Error::DimensionMismatch(format!("mask of {} for {} pixels", mask.len(), img.pixel_count())));
    }
    let c = img.channels();
    let (mut ma, mut mb) = (vec![0.0; c], vec![0.0; c]);
    let (mut na, mut nb) = (0usize, 0usize);
    for (p, &m) in img.pixels().zip(mask) {
        let (acc, n) = if m { (&mut ma, &mut na) } else { (&mut mb, &mut nb) };
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
        *n += 1;
    }
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    Ok(ma.iter().zip(&mb).map(|(a, b)| (a / na as f64 - b / nb as f64).powi(2)).sum::<f64>().sqrt())
}

/// Laplacians of two images on a shared support built from `src`.
pub fn paired_laplacians(src: &Image, out: &Image, graph: &GraphParams) -> Result<(SparseSymMatrix, SparseSymMatrix)> {
    if src.width() != out.width() || src.height() != out.height() {
        return Err(Error::DimensionMismatch("images differ in size".into()));
    }
    let support = std::sync::Arc::new(build_support(src, graph, 1)?);
    Ok((laplacian_on_support(src, &support, graph)?, laplacian_on_support(out, &support, graph)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rwms_mean: f64,
    #[serde(skip)]
    pub rwms_image: Option<Image>,
    pub rwms_scale: f64,
    pub commutator_norm_normalized: f64,
    pub jd_residual: Option<f64>,
    pub out_of_gamut_fraction: Option<f64>,
    pub baseline: BTreeMap<String, f64>,
}

/// Structure metrics of `out` against `src` on copies downsampled to a
/// long side of [`REPORT_SIDE`].
pub struct StructureMetrics {
    pub commutator_norm_normalized: f64,
    pub jd_residual: f64,
}

pub fn structure_metrics(src: &Image, out: &Image, graph: &GraphParams, k: usize) -> Result<StructureMetrics> {
    let s = resize_longside(src, REPORT_SIDE)?;
    let o = resize_longside(out, REPORT_SIDE)?;
    let g = GraphParams {
        vertex_selection: crate::graph::VertexSelection::AllPixels,
        ..*graph
    };
    let (lx, ly) = paired_laplacians(&s, &o, &g)?;
    Ok(StructureMetrics {
        commutator_norm_normalized: commutator_norm(&lx, &ly, true)?,
        jd_residual: joint_diag_residual(&lx, &ly, k.min(lx.dim()))?,
    })
}

impl MetricsReport {
    /// RWMS at full resolution plus structure metrics on a small copy.
    pub fn compute(src: &Image, out: &Image, graph: &GraphParams) -> Result<Self> {
        let (img, mean) = rwms_auto(src, out)?;
        let s = structure_metrics(src, out, graph, 10)?;
        Ok(MetricsReport {
            rwms_mean: mean,
            rwms_image: Some(img),
            rwms_scale: RWMS_SCALE,
            commutator_norm_normalized: s.commutator_norm_normalized,
            jd_residual: Some(s.jd_residual),
            out_of_gamut_fraction: None,
            baseline: BTreeMap::new(),
        })
    }

    pub fn rwms_only(src: &Image, out: &Image) -> Result<Self> {
        let (img, mean) = rwms_auto(src, out)?;
        Ok(MetricsReport {
            rwms_mean: mean,
            rwms_image: Some(img),
            rwms_scale: RWMS_SCALE,
            commutator_norm_normalized: f64::NAN,
            jd_residual: None,
            out_of_gamut_fraction: None,
            baseline: BTreeMap::new(),
        })
    }
}
