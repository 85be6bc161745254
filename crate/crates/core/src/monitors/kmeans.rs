//! Deterministic Lloyd's k-means used to split a class before boxing it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(center, x);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Farthest-point initialisation from a seeded first pick. Ties go to the
/// lowest sample index.
fn init_centers(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..points.len());
    let mut centers = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let mut pick = 0;
        for i in 1..points.len() {
            if min_d[i] > min_d[pick] {
                pick = i;
            }
        }
        let c = points[pick].clone();
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Cluster assignment for each point. At most `k` clusters; fewer when
/// there are fewer points. Empty clusters keep their previous center.
pub fn assign(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(points.len());
    if k <= 1 {
        return vec![0; points.len()];
    }
    let dim = points[0].len();
    let mut centers = init_centers(points, k, seed);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}
