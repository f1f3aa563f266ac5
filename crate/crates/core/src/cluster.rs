//! Seeded k-means (k-means++ seeding, Lloyd iterations).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k` centers of dimension `dim`, row-major.
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl KMeans {
    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim.max(1)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &[f64], dim: usize, limit: usize) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for p in points.chunks_exact(dim) {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= limit {
                break;
            }
        }
    }
    seen.len()
}

/// Clusters `points` (row-major, `dim` columns) into `k` groups.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::InvalidParameter("k-means needs a nonempty point set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let n = points.len() / dim;
    if count_distinct(points, dim, k) < k {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds the number of distinct points")));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(pt(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| dist_sq(pt(i), &centers[0..dim])).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let mut pick = n - 1;
        if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
        }
        centers.extend_from_slice(pt(pick));
        let new = &centers[c * dim..(c + 1) * dim];
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist_sq(pt(i), new));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let p = pt(i);
            let best = (0..k)
                .map(|c| (dist_sq(p, &centers[c * dim..(c + 1) * dim]), c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, c)| c)
                .unwrap_or(0);
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(pt(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for t in 0..dim {
                    centers[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeans { centers, labels, dim })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let pts = [0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 5.0, 5.0, 5.1, 5.0, 5.0, 5.1];
        let km = kmeans(&pts, 2, 2, 7, 100).unwrap();
        assert_eq!(km.labels[0], km.labels[1]);
        assert_eq!(km.labels[1], km.labels[2]);
        assert_eq!(km.labels[3], km.labels[4]);
        assert_ne!(km.labels[0], km.labels[3]);
        assert_eq!(km.k(), 2);
    }

    #[test]
    fn too_many_clusters() {
        let pts = [1.0, 1.0, 1.0];
        assert!(kmeans(&pts, 1, 2, 0, 10).is_err());
        assert!(kmeans(&pts, 1, 1, 0, 10).is_ok());
    }

    #[test]
    fn deterministic() {
        let pts: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let a = kmeans(&pts, 2, 4, 3, 100).unwrap();
        let b = kmeans(&pts, 2, 4, 3, 100).unwrap();
        assert_eq!(a, b);
    }
}
