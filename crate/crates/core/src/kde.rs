//! Gaussian kernel density estimation as a permutation-invariant MIL pooling layer.
//!
//! For a bag of `n` instances with `J` features each, feature `j` is turned into
//! a density estimate `h_j(v) = 1/n Σ_i N(v; f_ij, σ²)` sampled at `B` evenly
//! spaced points of a fixed interval. Each instance's sampled kernel is
//! normalized to unit mass, so every histogram row sums to one and the pooled
//! histogram is an exact size-weighted average over instances. The backward
//! pass differentiates through that normalization.

use std::f64::consts::PI;

use crate::error::{contract_err, shape_err, Result, UccError};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeConfig<T> {
    num_bins: usize,
    bandwidth: T,
    range_lo: T,
    range_hi: T,
}

impl<T: Scalar> KdeConfig<T> {
    pub fn new(num_bins: usize, bandwidth: T, range_lo: T, range_hi: T) -> Result<Self> {
        if num_bins < 2 {
            return contract_err(format!("KDE needs at least 2 bins, got {num_bins}"));
        }
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return contract_err(format!("KDE bandwidth must be positive, got {bandwidth}"));
        }
        if !(range_lo < range_hi) || !range_lo.is_finite() || !range_hi.is_finite() {
            return contract_err(format!("KDE range [{range_lo}, {range_hi}] is empty"));
        }
        Ok(Self { num_bins, bandwidth, range_lo, range_hi })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn range(&self) -> (T, T) {
        (self.range_lo, self.range_hi)
    }

    /// `v_b = lo + b (hi - lo) / (B - 1)`.
    pub fn sample_point(&self, b: usize) -> T {
        let step = (self.range_hi - self.range_lo) / T::from_count(self.num_bins - 1);
        self.range_lo + T::from_count(b) * step
    }

    pub fn sample_points(&self) -> Vec<T> {
        (0..self.num_bins).map(|b| self.sample_point(b)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> KdeConfig<U> {
        KdeConfig {
            num_bins: self.num_bins,
            bandwidth: U::lit(self.bandwidth.as_f64()),
            range_lo: U::lit(self.range_lo.as_f64()),
            range_hi: U::lit(self.range_hi.as_f64()),
        }
    }
}

impl<T: Scalar> Default for KdeConfig<T> {
    /// 11 bins, bandwidth 0.1, range [0, 1].
    fn default() -> Self {
        Self { num_bins: 11, bandwidth: T::lit(0.1), range_lo: T::zero(), range_hi: T::one() }
    }
}

/// `J` per-feature histograms over `B` sample points, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDistribution<T> {
    features: usize,
    bins: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureDistribution<T> {
    /// Checks shape, non-negativity and that every row sums to one.
    pub fn from_values(features: usize, bins: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != features * bins {
            return shape_err(format!("{} values for {features}x{bins} histograms", values.len()));
        }
        if values.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return contract_err("histogram entries must be finite and non-negative");
        }
        let tol = T::epsilon() * T::from_count(64 * bins.max(1));
        for (j, row) in values.chunks(bins.max(1)).enumerate() {
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return contract_err(format!("histogram row {j} sums to {s}"));
            }
        }
        Ok(Self { features, bins, values })
    }

    pub fn num_features(&self) -> usize {
        self.features
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.values[j * self.bins..(j + 1) * self.bins]
    }

    /// Row-major `J·B` vector, the input layout of the distribution regression network.
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        if self.features != other.features || self.bins != other.bins {
            return shape_err("L1 distance between histograms of different shape");
        }
        Ok(self.values.iter().zip(&other.values).map(|(&a, &b)| (a - b).abs()).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

/// State kept by [`kde_forward`] for [`kde_backward`].
#[derive(Clone, Debug)]
pub struct KdeCache<T> {
    features: Matrix<T>,
    /// Unnormalized sampled density `1/n Σ_i N(v_b; f_ij)`, `J × B`.
    raw: Vec<T>,
    /// Kernel values `N(v_b; f_ij)` laid out `[i][j][b]`.
    kernels: Vec<T>,
    /// Per-instance kernel mass `Σ_b N(v_b; f_ij)`, laid out `[i][j]`.
    mass: Vec<T>,
}

impl<T: Scalar> KdeCache<T> {
    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn raw(&self) -> &[T] {
        &self.raw
    }
}

/// Sampled Gaussian KDE of each feature column of `features` (`n × J`).
///
/// Each instance's kernel is normalized over the sample points before
/// averaging, so rows sum to one and the histogram stays linear in the
/// instances: the histogram of a union is the size-weighted mixture of the
/// histograms of its parts.
pub fn kde_forward<T: Scalar>(
    features: &Matrix<T>,
    cfg: &KdeConfig<T>,
) -> Result<(FeatureDistribution<T>, KdeCache<T>)> {
    let (n, j_count) = features.shape();
    if n == 0 {
        return Err(UccError::EmptyBag);
    }
    if !features.is_finite() {
        return Err(UccError::Numeric("non-finite feature value".into()));
    }
    let b_count = cfg.num_bins;
    let sigma = cfg.bandwidth;
    let two_var = T::lit(2.0) * sigma * sigma;
    let norm = T::one() / (T::lit(2.0 * PI) * sigma * sigma).sqrt();
    let inv_n = T::one() / T::from_count(n);
    let points = cfg.sample_points();

    let mut kernels = vec![T::zero(); n * j_count * b_count];
    let mut mass = vec![T::zero(); n * j_count];
    let mut raw = vec![T::zero(); j_count * b_count];
    let mut values = vec![T::zero(); j_count * b_count];
    for i in 0..n {
        for (j, &f) in features.row(i).iter().enumerate() {
            let base = (i * j_count + j) * b_count;
            let kern = &mut kernels[base..base + b_count];
            let mut s = T::zero();
            for (k, &v) in kern.iter_mut().zip(&points) {
                let d = v - f;
                *k = norm * (-(d * d) / two_var).exp();
                s = s + *k;
            }
            if !(s > T::min_positive_value()) {
                return Err(UccError::Numeric(format!(
                    "instance {i} feature {j} = {f} puts no kernel mass on the sample range"
                )));
            }
            mass[i * j_count + j] = s;
            let scale = inv_n / s;
            for (b, &k) in kern.iter().enumerate() {
                raw[j * b_count + b] = raw[j * b_count + b] + k * inv_n;
                values[j * b_count + b] = values[j * b_count + b] + k * scale;
            }
        }
    }

    let dist = FeatureDistribution { features: j_count, bins: b_count, values };
    Ok((dist, KdeCache { features: features.clone(), raw, kernels, mass }))
}

/// Gradient of `Σ upstream ⊙ h` with respect to the `n × J` input features.
pub fn kde_backward<T: Scalar>(cache: &KdeCache<T>, cfg: &KdeConfig<T>, upstream: &[T]) -> Result<Matrix<T>> {
    let (n, j_count) = cache.features.shape();
    let b_count = cfg.num_bins;
    if upstream.len() != j_count * b_count || cache.raw.len() != j_count * b_count {
        return shape_err(format!(
            "upstream has {} entries, histograms are {j_count}x{b_count}",
            upstream.len()
        ));
    }
    let sigma = cfg.bandwidth;
    let inv_var = T::one() / (sigma * sigma);
    let inv_n = T::one() / T::from_count(n);
    let points = cfg.sample_points();

    // q_b = k_b / S with dk_b/df = (v_b - f) / σ² · k_b, so
    // dq_b/df = (k'_b - q_b Σ k') / S.
    let mut grad = Matrix::zeros(n, j_count);
    for i in 0..n {
        for j in 0..j_count {
            let f = cache.features[(i, j)];
            let s = cache.mass[i * j_count + j];
            let base = (i * j_count + j) * b_count;
            let g = &upstream[j * b_count..(j + 1) * b_count];
            let mut g_dk = T::zero();
            let mut g_q = T::zero();
            let mut dk_total = T::zero();
            for b in 0..b_count {
                let k = cache.kernels[base + b];
                let dk = (points[b] - f) * inv_var * k;
                g_dk = g_dk + g[b] * dk;
                g_q = g_q + g[b] * k / s;
                dk_total = dk_total + dk;
            }
            grad[(i, j)] = inv_n * (g_dk - g_q * dk_total) / s;
        }
    }
    Ok(grad)
}

/// Column means of an `n × J` bag (the averaging-layer alternative to KDE pooling).
pub fn mean_pool<T: Scalar>(features: &Matrix<T>) -> Result<Vec<T>> {
    if features.rows() == 0 {
        return Err(UccError::EmptyBag);
    }
    Ok(features.column_means())
}

/// Spreads `upstream / n` to every instance.
pub fn mean_pool_backward<T: Scalar>(n: usize, upstream: &[T]) -> Result<Matrix<T>> {
    if n == 0 {
        return Err(UccError::EmptyBag);
    }
    let inv_n = T::one() / T::from_count(n);
    let row: Vec<T> = upstream.iter().map(|&g| g * inv_n).collect();
    let mut out = Matrix::zeros(n, upstream.len());
    for i in 0..n {
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Weighted sum of histograms with weights summing to one.
pub fn mix_distributions<T: Scalar>(parts: &[(&FeatureDistribution<T>, T)]) -> Result<FeatureDistribution<T>> {
    let Some((first, _)) = parts.first() else {
        return contract_err("nothing to mix");
    };
    let (features, bins) = (first.features, first.bins);
    let mut total = T::zero();
    let mut values = vec![T::zero(); features * bins];
    for (k, (dist, w)) in parts.iter().enumerate() {
        if dist.features != features || dist.bins != bins {
            return shape_err(format!("part {k} has a different histogram shape"));
        }
        if !(*w > T::zero()) {
            return contract_err(format!("part {k} has non-positive weight {w}"));
        }
        total = total + *w;
        for (v, &x) in values.iter_mut().zip(&dist.values) {
            *v = *v + *w * x;
        }
    }
    if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(8.0)) {
        return contract_err(format!("mixture weights sum to {total}"));
    }
    FeatureDistribution::from_values(features, bins, values)
}
