//! Synthetic data: Gaussian-blob instance pools and two-texture images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bags::InstancePool;
use crate::error::{contract_err, Result};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;
use crate::segmentation::LabeledImage;

/// Isotropic Gaussian blobs in `[0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Per-coordinate standard deviation of every blob.
    pub scale: f64,
    /// Minimum distance between blob means, in multiples of `scale`.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { num_classes: 4, dim: 8, per_class: 500, scale: 0.1, separation: 4.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.per_class == 0 {
            return contract_err("synthetic pool needs positive class count, dimension and class size");
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return contract_err(format!("scale {} must be positive", self.scale));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return contract_err(format!("separation {} must be non-negative", self.separation));
        }
        Ok(())
    }
}

/// Blob means drawn uniformly from `[0.2, 0.8]^d`, rejected until pairwise
/// distances reach `separation · scale`.
pub fn blob_means<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let min_dist = spec.separation * spec.scale;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    let mut attempts = 0;
    while means.len() < spec.num_classes {
        attempts += 1;
        if attempts > 100_000 {
            return contract_err(format!(
                "could not place {} means {min_dist} apart in {} dimensions",
                spec.num_classes, spec.dim
            ));
        }
        let cand: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(0.2..0.8)).collect();
        let ok = means.iter().all(|m| {
            let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= min_dist && d2 > 0.0
        });
        if ok {
            means.push(cand);
        }
    }
    Ok(means)
}

/// Labels run `1..=K` in blocks of `per_class`.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<InstancePool<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = blob_means(spec, &mut rng)?;
    let noise = Normal::new(0.0, spec.scale).expect("validated scale");
    let m = spec.num_classes * spec.per_class;
    let mut data = Vec::with_capacity(m * spec.dim);
    let mut labels = Vec::with_capacity(m);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &mu in mean {
                data.push(T::lit((mu + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            }
            labels.push(c + 1);
        }
    }
    InstancePool::new(Matrix::from_vec(m, spec.dim, data)?, labels, spec.num_classes)
}

/// Two Gaussian-noise textures separated by a smooth wavy boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Mean and standard deviation of the negative texture.
    pub negative: (f64, f64),
    /// Mean and standard deviation of the positive texture.
    pub positive: (f64, f64),
    /// Amplitude of the boundary wave in pixels.
    pub wave_amplitude: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            channels: 1,
            negative: (0.40, 0.15),
            positive: (0.60, 0.05),
            wave_amplitude: 6.0,
        }
    }
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return contract_err("texture images need positive dimensions");
        }
        for (name, (mu, sd)) in [("negative", self.negative), ("positive", self.positive)] {
            if !(0.0..=1.0).contains(&mu) || !(sd >= 0.0) || !sd.is_finite() {
                return contract_err(format!("{name} texture ({mu}, {sd}) is invalid"));
            }
        }
        if self.negative == self.positive {
            return contract_err("the two textures are identical");
        }
        Ok(())
    }
}

/// Image whose mask covers (as nearly as the pixel grid allows) `positive_fraction`
/// of the pixels. The mask is the upper set of a tilted plane plus a sine wave.
pub fn texture_image<T: Scalar, R: Rng + ?Sized>(
    spec: &TextureSpec,
    positive_fraction: f64,
    rng: &mut R,
) -> Result<LabeledImage<T>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&positive_fraction) {
        return contract_err(format!("positive fraction {positive_fraction} outside [0, 1]"));
    }
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let n = h * w;
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let freq = rng.random_range(1.0..3.0) * std::f64::consts::TAU / w.max(h) as f64;
    let (s, co) = theta.sin_cos();
    let field: Vec<f64> = (0..n)
        .map(|p| {
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            x * co + y * s + spec.wave_amplitude * (freq * (-x * s + y * co) + phase).sin()
        })
        .collect();
    let positives = (positive_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut mask = vec![0u8; n];
    for &p in &order[..positives] {
        mask[p] = 1;
    }

    let neg = Normal::new(spec.negative.0, spec.negative.1).expect("validated");
    let pos = Normal::new(spec.positive.0, spec.positive.1).expect("validated");
    let mut pixels = Vec::with_capacity(n * c);
    for &m in &mask {
        let dist = if m == 1 { &pos } else { &neg };
        for _ in 0..c {
            pixels.push(T::lit(dist.sample(rng).clamp(0.0, 1.0)));
        }
    }
    LabeledImage::new(h, w, c, pixels, mask)
}

/// Images for ucc training: positive fractions cycle through pure negative
/// (`[0, 0.15)`), pure positive (`(0.85, 1]`) and mixed (`[0.35, 0.65]`).
pub fn texture_training_set<T: Scalar, R: Rng + ?Sized>(
    spec: &TextureSpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<LabeledImage<T>>> {
    (0..count)
        .map(|i| {
            let p = match i % 3 {
                0 => rng.random_range(0.0..0.15),
                1 => 1.0 - rng.random_range(0.0..0.15),
                _ => rng.random_range(0.35..=0.65),
            };
            texture_image(spec, p, rng)
        })
        .collect()
}

/// Images with positive fractions uniform in `[0, 1]`.
pub fn texture_test_set<T: Scalar, R: Rng + ?Sized>(
    spec: &TextureSpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<LabeledImage<T>>> {
    (0..count).map(|_| texture_image(spec, rng.random_range(0.0..=1.0), rng)).collect()
}

/// Concentric rings in the plane: `per_ring` points on each radius, label `k+1` for ring `k`.
pub fn concentric_rings<T: Scalar, R: Rng + ?Sized>(
    radii: &[f64],
    per_ring: usize,
    noise: f64,
    rng: &mut R,
) -> Result<InstancePool<T>> {
    if radii.is_empty() || per_ring == 0 {
        return contract_err("rings need at least one radius and one point per ring");
    }
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| crate::UccError::Contract(e.to_string()))?;
    let mut data = Vec::with_capacity(radii.len() * per_ring * 2);
    let mut labels = Vec::with_capacity(radii.len() * per_ring);
    for (k, &r) in radii.iter().enumerate() {
        for _ in 0..per_ring {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let rr = r + jitter.sample(rng);
            data.push(T::lit(rr * a.cos()));
            data.push(T::lit(rr * a.sin()));
            labels.push(k + 1);
        }
    }
    InstancePool::new(Matrix::from_vec(labels.len(), 2, data)?, labels, radii.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_shape_and_labels() {
        let spec = SyntheticSpec { per_class: 10, ..Default::default() };
        let pool: InstancePool<f64> = gen_synthetic(&spec).unwrap();
        assert_eq!(pool.len(), 40);
        assert_eq!(pool.dim(), 8);
        assert!(pool.instances().as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for c in 1..=4 {
            assert_eq!(pool.class_members(c).len(), 10);
        }
    }

    #[test]
    fn single_class_pool() {
        let spec = SyntheticSpec { num_classes: 1, per_class: 5, ..Default::default() };
        let pool: InstancePool<f64> = gen_synthetic(&spec).unwrap();
        assert!(pool.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        let spec = SyntheticSpec { per_class: 7, seed: 11, ..Default::default() };
        let a: InstancePool<f64> = gen_synthetic(&spec).unwrap();
        let b: InstancePool<f64> = gen_synthetic(&spec).unwrap();
        assert_eq!(a.instances(), b.instances());
    }

    #[test]
    fn means_respect_separation() {
        let spec = SyntheticSpec { num_classes: 6, ..Default::default() };
        let means = blob_means(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for a in 0..6 {
            for b in a + 1..6 {
                let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 0.4);
            }
        }
    }

    #[test]
    fn impossible_separation_is_rejected() {
        let spec = SyntheticSpec { num_classes: 50, dim: 1, separation: 40.0, ..Default::default() };
        assert!(gen_synthetic::<f64>(&spec).is_err());
    }

    #[test]
    fn texture_mask_fraction() {
        let spec = TextureSpec { height: 32, width: 32, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let img: LabeledImage<f64> = texture_image(&spec, p, &mut rng).unwrap();
            let ones = img.mask().iter().filter(|&&m| m == 1).count();
            assert_eq!(ones, (p * 1024.0).round() as usize);
        }
    }
}
