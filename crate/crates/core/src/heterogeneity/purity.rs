//! k-means++ clustering and cluster purity against known labels.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding;

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite coordinate in clustering input".into()));
    }
    Ok(dim)
}

fn plus_plus_seeds<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            // Every point coincides with a centroid already.
            rng.gen_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds until no centroid moves more than
/// [`TOLERANCE`] or [`MAX_ITERATIONS`] is reached. An empty cluster is
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let dim = check_points(points, k)?;
    let mut rng = seeding::rng(seed, "kmeans++", &[]);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            (assignments[i], dists[i]) = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut taken = vec![false; points.len()];
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                    .expect("k <= points");
                taken[far] = true;
                dists[far] = 0.0;
                points[far].clone()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    Ok(KMeans {
        centroids,
        assignments,
        iterations,
    })
}

/// Share of points whose label equals the majority label of their cluster.
pub fn purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: assignments.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Precondition("purity of an empty clustering".into()));
    }
    let mut tables: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in assignments.iter().zip(labels) {
        *tables.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority_total: usize = tables
        .values()
        .map(|counts| {
            // Ascending label order, so the smaller label wins a tie.
            counts.values().fold(0, |best, &n| best.max(n))
        })
        .sum();
    Ok(majority_total as f64 / labels.len() as f64)
}

pub fn clustering_purity(points: &[Vec<f64>], labels: &[usize], k: usize, seed: u64) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: labels.len(),
        });
    }
    purity(&kmeans(points, k, seed)?.assignments, labels)
}

/// Standardises each column to zero mean and unit population variance;
/// constant columns become zero.
pub fn zscore_columns(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(dim) = points.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = points.len() as f64;
    let stats: Vec<(f64, f64)> = (0..dim)
        .map(|j| {
            let m = points.iter().map(|p| p[j]).sum::<f64>() / n;
            let s = (points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, s)
        })
        .collect();
    points
        .iter()
        .map(|p| {
            p.iter()
                .zip(&stats)
                .map(|(v, &(m, s))| if s > 0.0 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect()
}
