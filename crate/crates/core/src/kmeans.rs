//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Iteration cap for Lloyd's algorithm.
pub const MAX_ITERS: usize = 300;

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub sse: f64,
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(data: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a chosen center
            Err(_) => (0..n).find(|i| !chosen.contains(i)).expect("k <= n"),
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select(ndarray::Axis(0), &chosen)
}

/// Cluster the rows of `data` into `k` groups. Deterministic given `seed`.
///
/// Panics if `k == 0` or `k > data.nrows()`.
pub fn fit(data: ArrayView2<f64>, k: usize, seed: u64, max_iters: usize) -> KMeansFit {
    let n = data.nrows();
    assert!(k >= 1 && k <= n, "k must lie in 1..=n (k = {k}, n = {n})");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(data, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (c, _) = nearest(row, &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assignment[i]);
            s += &row;
            counts[assignment[i]] += 1;
        }
        for (c, count) in counts.iter().enumerate() {
            // empty clusters keep their previous centroid
            if *count > 0 {
                let mean = sums.row(c).mapv(|v| v / *count as f64);
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    let sse = data
        .rows()
        .into_iter()
        .zip(&assignment)
        .map(|(row, &c)| sq_dist(row, centroids.row(c)))
        .sum();
    KMeansFit {
        centroids,
        assignment,
        iterations,
        sse,
    }
}
