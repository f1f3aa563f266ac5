//! Pixel graphs and their unnormalized Laplacians.
//!
//! A graph is built over a set of vertex pixels (all pixels, or a regular
//! subgrid) with a fixed neighbor relation. The neighbor relation, i.e. the
//! edge *support*, is decided once from the source image and shared by every
//! Laplacian derived from a mapped version of that image: only the weights
//!
//! ```text
//! w_ij = exp(-d_ij^2 / 2 sigma_s^2) * exp(-|x_i - x_j|^2 / 2 sigma_r^2)
//! ```
//!
//! change, never the structure. `sigma_s = 0` disables the spatial factor.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    FourNeighbors,
    EightNeighbors,
    /// The `k` most similar colors within a 5x5 window, symmetrized.
    Knn(usize),
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Connectivity::FourNeighbors => f.write_str("4"),
            Connectivity::EightNeighbors => f.write_str("8"),
            Connectivity::Knn(k) => write!(f, "knn{k}"),
        }
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" | "four" | "four_neighbors" => Ok(Connectivity::FourNeighbors),
            "8" | "eight" | "eight_neighbors" => Ok(Connectivity::EightNeighbors),
            _ => s
                .strip_prefix("knn")
                .and_then(|k| k.trim_start_matches([':', '=']).parse().ok())
                .map(Connectivity::Knn)
                .ok_or_else(|| Error::Config(format!("unknown connectivity '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexSelection {
    AllPixels,
    Stride(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub connectivity: Connectivity,
    pub vertex_selection: VertexSelection,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            sigma_r: 1.0,
            sigma_s: 0.0,
            connectivity: Connectivity::FourNeighbors,
            vertex_selection: VertexSelection::AllPixels,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma_r must be > 0, got {}", self.sigma_r)));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_s.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma_s must be >= 0, got {}", self.sigma_s)));
        }
        match self.connectivity {
            Connectivity::Knn(k) if k == 0 || k > 24 => {
                return Err(Error::InvalidParameter(format!("knn k must be in 1..=24, got {k}")))
            }
            _ => {}
        }
        if self.vertex_selection == VertexSelection::Stride(0) {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn spatial_factor(&self, dist: f64) -> f64 {
        if self.sigma_s == 0.0 {
            1.0
        } else {
            (-dist * dist / (2.0 * self.sigma_s * self.sigma_s)).exp()
        }
    }
}

/// Vertex pixels of a graph: a regular `width x height` subgrid of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexGrid {
    pub indices: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub stride: usize,
}

pub fn select_vertices(img: &Image, p: &GraphParams) -> Result<VertexGrid> {
    let stride = match p.vertex_selection {
        VertexSelection::AllPixels => 1,
        VertexSelection::Stride(0) => return Err(Error::InvalidParameter("stride must be >= 1".into())),
        VertexSelection::Stride(s) => s,
    };
    if stride > img.width() || stride > img.height() {
        return Err(Error::InvalidParameter(format!(
            "stride {stride} exceeds image side ({}x{})",
            img.width(),
            img.height()
        )));
    }
    let xs: Vec<usize> = (0..img.width()).step_by(stride).collect();
    let ys: Vec<usize> = (0..img.height()).step_by(stride).collect();
    let indices = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| y * img.width() + x))
        .collect();
    Ok(VertexGrid {
        indices,
        width: xs.len(),
        height: ys.len(),
        stride,
    })
}

/// Gathers the vertex pixels of `img` into a compact image.
pub fn vertex_image(img: &Image, grid: &VertexGrid) -> Result<Image> {
    img.gather(&grid.indices, grid.width, grid.height)
}

/// The fixed edge structure of a pixel graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSupport {
    dim: usize,
    edges: Vec<(usize, usize)>,
    /// Spatial distance of each edge in source-pixel units.
    distances: Vec<f64>,
    /// `(neighbor, edge index)` per vertex, sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl EdgeSupport {
    /// Builds from `(i, j, distance)` triples; pairs are canonicalized to
    /// `i < j` and deduplicated.
    pub fn from_edges(dim: usize, mut raw: Vec<(usize, usize, f64)>) -> Result<Self> {
        for e in raw.iter_mut() {
            if e.0 == e.1 || e.0 >= dim || e.1 >= dim {
                return Err(Error::InvalidParameter(format!("bad edge ({}, {})", e.0, e.1)));
            }
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        raw.sort_by_key(|e| (e.0, e.1));
        raw.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let mut adjacency = vec![Vec::new(); dim];
        for (k, &(i, j, _)) in raw.iter().enumerate() {
            adjacency[i].push((j, k));
            adjacency[j].push((i, k));
        }
        for row in adjacency.iter_mut() {
            row.sort_unstable();
        }
        Ok(EdgeSupport {
            dim,
            edges: raw.iter().map(|&(i, j, _)| (i, j)).collect(),
            distances: raw.iter().map(|e| e.2).collect(),
            adjacency,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.adjacency[i];
        row.binary_search_by_key(&j, |&(n, _)| n).ok().map(|k| row[k].1)
    }
}

fn color_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the neighbor structure over every pixel of `vertices`, a compact
/// vertex image whose grid spacing is `stride` source pixels.
pub fn build_support(vertices: &Image, p: &GraphParams, stride: usize) -> Result<EdgeSupport> {
    p.validate()?;
    let (w, h) = (vertices.width(), vertices.height());
    let s = stride as f64;
    let mut raw = Vec::new();
    let idx = |x: usize, y: usize| y * w + x;
    match p.connectivity {
        Connectivity::FourNeighbors | Connectivity::EightNeighbors => {
            let eight = p.connectivity == Connectivity::EightNeighbors;
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        raw.push((idx(x, y), idx(x + 1, y), s));
                    }
                    if y + 1 < h {
                        raw.push((idx(x, y), idx(x, y + 1), s));
                    }
                    if eight && y + 1 < h {
                        if x + 1 < w {
                            raw.push((idx(x, y), idx(x + 1, y + 1), s * std::f64::consts::SQRT_2));
                        }
                        if x > 0 {
                            raw.push((idx(x, y), idx(x - 1, y + 1), s * std::f64::consts::SQRT_2));
                        }
                    }
                }
            }
        }
        Connectivity::Knn(k) => {
            for y in 0..h {
                for x in 0..w {
                    let me = vertices.at(x, y);
                    let mut cand = Vec::new();
                    for dy in -2i64..=2 {
                        for dx in -2i64..=2 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            let spatial = ((dx * dx + dy * dy) as f64).sqrt();
                            cand.push((color_dist_sq(me, vertices.at(nx, ny)), spatial, idx(nx, ny)));
                        }
                    }
                    cand.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                    for &(_, spatial, j) in cand.iter().take(k) {
                        raw.push((idx(x, y), j, spatial * s));
                    }
                }
            }
        }
    }
    EdgeSupport::from_edges(w * h, raw)
}

/// A symmetric sparse matrix over a fixed [`EdgeSupport`]: one value per
/// edge (stored once) plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    support: Arc<EdgeSupport>,
    offdiag: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn new(support: Arc<EdgeSupport>, offdiag: Vec<f64>, diag: Vec<f64>) -> Result<Self> {
        if offdiag.len() != support.num_edges() || diag.len() != support.dim() {
            return Err(Error::DimensionMismatch("values do not match the edge support".into()));
        }
        Ok(SparseSymMatrix {
            support,
            offdiag,
            diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn support(&self) -> &Arc<EdgeSupport> {
        &self.support
    }

    pub fn same_support(&self, other: &SparseSymMatrix) -> bool {
        Arc::ptr_eq(&self.support, &other.support) || self.support.edges == other.support.edges
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `(i, j, value)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.support.edges().iter().zip(&self.offdiag).map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.support.edge_index(i, j).map_or(0.0, |k| self.offdiag[k])
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.diag.iter().map(|v| v * v).sum::<f64>() + 2.0 * self.offdiag.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> SparseSymMatrix {
        SparseSymMatrix {
            support: self.support.clone(),
            offdiag: self.offdiag.iter().map(|v| v * factor).collect(),
            diag: self.diag.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = self.diag.clone();
        for (i, j, v) in self.edges() {
            sums[i] += v;
            sums[j] += v;
        }
        sums
    }

    /// `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let d: f64 = self.diag.iter().zip(x).map(|(m, v)| m * v * v).sum();
        d + 2.0 * self.edges().map(|(i, j, v)| v * x[i] * x[j]).sum::<f64>()
    }

    pub fn to_csr(&self) -> Csr {
        let n = self.dim();
        let rows = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self
                    .support
                    .neighbors(i)
                    .iter()
                    .map(|&(j, k)| (j, self.offdiag[k]))
                    .collect();
                row.push((i, self.diag[i]));
                row
            })
            .collect();
        Csr::from_rows(n, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag));
        for (i, j, v) in self.edges() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Writes the stored entries as `i j value` lines (17 significant
    /// digits), diagonal included, sorted by `(i, j)` with `i <= j`.
    pub fn write_coordinates(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut entries: Vec<(usize, usize, f64)> = self.edges().collect();
        entries.extend(self.diag.iter().enumerate().map(|(i, &v)| (i, i, v)));
        entries.sort_by_key(|e| (e.0, e.1));
        for (i, j, v) in entries {
            writeln!(out, "{i} {j} {v:.16e}")?;
        }
        Ok(())
    }
}

/// Edge weights of `vertices` (a vertex image matching `support`).
pub fn weights_on_support(vertices: &Image, support: &EdgeSupport, p: &GraphParams) -> Result<Vec<f64>> {
    if vertices.pixel_count() != support.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} vertex pixels for a support of dimension {}",
            vertices.pixel_count(),
            support.dim()
        )));
    }
    let inv = 1.0 / (2.0 * p.sigma_r * p.sigma_r);
    Ok(support
        .edges()
        .iter()
        .zip(support.distances())
        .map(|(&(i, j), &dist)| {
            p.spatial_factor(dist) * (-color_dist_sq(vertices.pixel(i), vertices.pixel(j)) * inv).exp()
        })
        .collect())
}

/// Adjacency over an existing support, for a mapped version of the image
/// the support was built from.
pub fn adjacency_on_support(vertices: &Image, support: &Arc<EdgeSupport>, p: &GraphParams) -> Result<SparseSymMatrix> {
    p.validate()?;
    let w = weights_on_support(vertices, support, p)?;
    SparseSymMatrix::new(support.clone(), w, vec![0.0; support.dim()])
}

/// Weighted adjacency of `img` under `p`; the diagonal is zero.
pub fn build_adjacency(img: &Image, p: &GraphParams) -> Result<SparseSymMatrix> {
    p.validate()?;
    let grid = select_vertices(img, p)?;
    let vertices = vertex_image(img, &grid)?;
    let support = Arc::new(build_support(&vertices, p, grid.stride)?);
    adjacency_on_support(&vertices, &support, p)
}

/// `L = D - W` on the same support.
pub fn build_laplacian(adj: &SparseSymMatrix) -> Result<SparseSymMatrix> {
    let mut degree = vec![0.0; adj.dim()];
    for (i, j, w) in adj.edges() {
        if w < 0.0 {
            return Err(Error::NegativeWeight { i, j, weight: w });
        }
        degree[i] += w;
        degree[j] += w;
    }
    SparseSymMatrix::new(adj.support.clone(), adj.offdiag.iter().map(|w| -w).collect(), degree)
}

/// Laplacian of a vertex image over a fixed support.
pub fn laplacian_on_support(vertices: &Image, support: &Arc<EdgeSupport>, p: &GraphParams) -> Result<SparseSymMatrix> {
    build_laplacian(&adjacency_on_support(vertices, support, p)?)
}
