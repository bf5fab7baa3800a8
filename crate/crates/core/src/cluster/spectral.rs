use rand::Rng;

use crate::cluster::{kmeans, ClusterAssignment, KMeansConfig};
use crate::error::{contract_err, Result, UccError};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralConfig {
    pub k: usize,
    /// Gaussian affinity width `s` in `exp(-‖x-y‖² / 2s²)`.
    pub affinity_scale: f64,
    /// Largest point count accepted by the dense eigensolver.
    pub cap: usize,
    pub kmeans: KMeansConfig,
}

impl SpectralConfig {
    pub fn new(k: usize, affinity_scale: f64) -> Self {
        Self { k, affinity_scale, cap: 4000, kmeans: KMeansConfig::new(k) }
    }
}

/// `I - D^{-1/2} W D^{-1/2}` for the Gaussian affinity `W` with zero diagonal.
/// Points with no affinity mass get an identity row.
pub fn normalized_laplacian<T: Scalar>(points: &Matrix<T>, scale: T) -> Matrix<T> {
    let m = points.rows();
    let two_s2 = T::lit(2.0) * scale * scale;
    let mut w = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let d2: T = points.row(i).iter().zip(points.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let a = (-d2 / two_s2).exp();
            w[(i, j)] = a;
            w[(j, i)] = a;
        }
    }
    let inv_sqrt: Vec<T> = (0..m)
        .map(|i| {
            let d: T = w.row(i).iter().copied().sum();
            if d > T::min_positive_value() {
                T::one() / d.sqrt()
            } else {
                T::zero()
            }
        })
        .collect();
    let mut l = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let off = inv_sqrt[i] * w[(i, j)] * inv_sqrt[j];
            l[(i, j)] = if i == j { T::one() - off } else { -off };
        }
    }
    l
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching eigenvectors as columns.
pub fn jacobi_eigen<T: Scalar>(sym: &Matrix<T>, max_sweeps: usize) -> Result<(Vec<T>, Matrix<T>)> {
    let n = sym.rows();
    if sym.cols() != n {
        return Err(UccError::Shape(format!("{}x{} matrix is not square", n, sym.cols())));
    }
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let frob: T = a.as_slice().iter().map(|&x| x * x).sum::<T>().sqrt();
    let tol = T::epsilon() * T::from_count(n.max(1)) * frob.max(T::min_positive_value());
    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<T>()
            .sqrt();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                // negligible next to both diagonal entries
                let small = T::lit(100.0) * apq.abs();
                if a[(p, p)].abs() + small == a[(p, p)].abs() && a[(q, q)].abs() + small == a[(q, q)].abs() {
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(UccError::Numeric(format!("Jacobi did not converge in {max_sweeps} sweeps")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].partial_cmp(&a[(y, y)]).unwrap_or(std::cmp::Ordering::Equal).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    Ok((values, vectors))
}

/// Rows of the bottom-`k` eigenvectors of the normalized Laplacian, each row scaled to unit length.
pub fn spectral_embedding<T: Scalar>(points: &Matrix<T>, k: usize, scale: T) -> Result<Matrix<T>> {
    let l = normalized_laplacian(points, scale);
    let (_, vecs) = jacobi_eigen(&l, 100)?;
    let m = points.rows();
    let mut emb = Matrix::zeros(m, k);
    for i in 0..m {
        for c in 0..k {
            emb[(i, c)] = vecs[(i, c)];
        }
        let norm: T = emb.row(i).iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::min_positive_value() {
            for x in emb.row_mut(i) {
                *x = *x / norm;
            }
        }
    }
    Ok(emb)
}

/// Normalized spectral clustering: Laplacian embedding followed by k-means.
pub fn spectral<T: Scalar, R: Rng + ?Sized>(
    points: &Matrix<T>,
    cfg: &SpectralConfig,
    rng: &mut R,
) -> Result<ClusterAssignment<T>> {
    let m = points.rows();
    if m > cfg.cap {
        return Err(UccError::Size { size: m, cap: cfg.cap });
    }
    if cfg.k == 0 || m < cfg.k {
        return contract_err(format!("spectral clustering with k = {} on {m} points", cfg.k));
    }
    if !(cfg.affinity_scale > 0.0) {
        return contract_err("affinity scale must be positive");
    }
    let emb = spectral_embedding(points, cfg.k, T::lit(cfg.affinity_scale))?;
    let km = KMeansConfig { k: cfg.k, ..cfg.kmeans };
    let a = kmeans(&emb, &km, rng)?;
    Ok(ClusterAssignment { ids: a.ids, num_clusters: cfg.k, inertia: None })
}
