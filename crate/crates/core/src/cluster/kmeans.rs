use rand::Rng;

use crate::cluster::ClusterAssignment;
use crate::error::{contract_err, Result};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self { k, restarts: 10, max_iters: 300, tol: 1e-9 }
    }
}

/// Result of one Lloyd run from fixed initial centroids.
#[derive(Clone, Debug)]
pub struct LloydRun<T> {
    pub ids: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
    /// Inertia after every assignment step.
    pub trace: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn assign<T: Scalar>(points: &Matrix<T>, centroids: &Matrix<T>, ids: &mut [usize], dists: &mut [T]) -> T {
    let mut total = T::zero();
    for (i, p) in points.row_iter().enumerate() {
        let mut best = (T::infinity(), 0);
        for c in 0..centroids.rows() {
            let d = sq_dist(p, centroids.row(c));
            if d < best.0 {
                best = (d, c);
            }
        }
        ids[i] = best.1;
        dists[i] = best.0;
        total = total + best.0;
    }
    total
}

/// k-means++ seeding: first centroid uniform, then proportional to squared distance.
pub fn kmeans_plus_plus<T: Scalar, R: Rng + ?Sized>(points: &Matrix<T>, k: usize, rng: &mut R) -> Matrix<T> {
    let m = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..m);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points.row_iter().map(|p| sq_dist(p, points.row(first)).as_f64()).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)).as_f64());
        }
    }
    centroids
}

/// Lloyd iterations from `init`. Empty clusters are reseeded at the point
/// farthest from its current centroid.
pub fn lloyd<T: Scalar>(points: &Matrix<T>, init: Matrix<T>, max_iters: usize, tol: f64) -> LloydRun<T> {
    let (m, dim) = points.shape();
    let k = init.rows();
    let mut centroids = init;
    let mut ids = vec![0; m];
    let mut dists = vec![T::zero(); m];
    let mut trace = Vec::new();

    for _ in 0..max_iters {
        let mut inertia = assign(points, &centroids, &mut ids, &mut dists);
        let mut counts = vec![0usize; k];
        for &c in &ids {
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..m)
                .filter(|&i| counts[ids[i]] > 1)
                .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap_or(std::cmp::Ordering::Equal));
            let Some(far) = far else { break };
            counts[ids[far]] -= 1;
            counts[c] = 1;
            ids[far] = c;
            inertia = inertia - dists[far];
            dists[far] = T::zero();
            centroids.row_mut(c).copy_from_slice(points.row(far));
        }
        trace.push(inertia);

        let mut sums = Matrix::<T>::zeros(k, dim);
        for (i, p) in points.row_iter().enumerate() {
            for (s, &x) in sums.row_mut(ids[i]).iter_mut().zip(p) {
                *s = *s + x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let n = T::from_count(counts[c]);
            let mut moved = T::zero();
            for (old, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                let new = s / n;
                moved = moved + (new - *old) * (new - *old);
                *old = new;
            }
            shift = shift.max(moved.as_f64().sqrt());
        }
        if shift <= tol {
            break;
        }
    }
    let inertia = assign(points, &centroids, &mut ids, &mut dists);
    trace.push(inertia);
    LloydRun { ids, centroids, inertia, trace }
}

/// Best-of-`restarts` k-means with k-means++ seeding. Ties in inertia go to
/// the earliest restart.
pub fn kmeans<T: Scalar, R: Rng + ?Sized>(
    points: &Matrix<T>,
    cfg: &KMeansConfig,
    rng: &mut R,
) -> Result<ClusterAssignment<T>> {
    if cfg.k == 0 || points.rows() < cfg.k {
        return contract_err(format!("k-means with k = {} on {} points", cfg.k, points.rows()));
    }
    let mut best: Option<LloydRun<T>> = None;
    for _ in 0..cfg.restarts.max(1) {
        let init = kmeans_plus_plus(points, cfg.k, rng);
        let run = lloyd(points, init, cfg.max_iters, cfg.tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterAssignment { ids: best.ids, num_clusters: cfg.k, inertia: Some(best.inertia) })
}
