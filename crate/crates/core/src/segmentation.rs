//! Patch-based segmentation: ucc-labeled patch bags from images with binary
//! masks, clustering of patch features into predicted masks, and pixel metrics.

use rand::seq::index;
use rand::Rng;

use crate::bags::BagSample;
use crate::cluster::{kmeans, spectral, KMeansConfig, SpectralConfig};
use crate::error::{contract_err, shape_err, Result};
use crate::kde::{kde_forward, FeatureDistribution};
use crate::model::UccModel;
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

/// `H × W × C` pixels in `[0,1]` (HWC order) with an `H × W` mask, 1 = positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<T>,
    mask: Vec<u8>,
}

impl<T: Scalar> LabeledImage<T> {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<T>, mask: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return shape_err(format!("image dimensions {height}x{width}x{channels} must be positive"));
        }
        if pixels.len() != height * width * channels {
            return shape_err(format!("{} pixel values for a {height}x{width}x{channels} image", pixels.len()));
        }
        if mask.len() != height * width {
            return shape_err(format!("mask has {} entries for a {height}x{width} image", mask.len()));
        }
        if mask.iter().any(|&m| m > 1) {
            return contract_err("mask values must be 0 or 1");
        }
        if pixels.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return contract_err("pixel values must lie in [0, 1]");
        }
        Ok(Self { height, width, channels, pixels, mask })
    }

    /// `(H, W, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn positive_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m == 1).count() as f64 / self.mask.len() as f64
    }
}

/// Image-level labeling bands on the positive fraction `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegThresholds {
    pub ucc1_low: f64,
    pub ucc1_high: f64,
    pub ucc2_low: f64,
    pub ucc2_high: f64,
}

impl Default for SegThresholds {
    fn default() -> Self {
        Self { ucc1_low: 0.20, ucc1_high: 0.80, ucc2_low: 0.30, ucc2_high: 0.70 }
    }
}

impl SegThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ucc1_low < self.ucc2_low && self.ucc2_low <= self.ucc2_high && self.ucc2_high < self.ucc1_high;
        if !ok {
            return contract_err(format!("thresholds {self:?} are not ordered ucc1_low < ucc2_low <= ucc2_high < ucc1_high"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageLabel {
    /// ucc 1, (almost) no positive pixels.
    PureNegative,
    /// ucc 1, (almost) all pixels positive.
    PurePositive,
    /// ucc 2.
    Mixed,
    /// In a gap band; not used for training.
    Discard,
}

impl ImageLabel {
    pub fn ucc(self) -> Option<usize> {
        match self {
            Self::PureNegative | Self::PurePositive => Some(1),
            Self::Mixed => Some(2),
            Self::Discard => None,
        }
    }
}

pub fn label_image<T: Scalar>(img: &LabeledImage<T>, t: &SegThresholds) -> ImageLabel {
    let p = img.positive_fraction();
    if p < t.ucc1_low {
        ImageLabel::PureNegative
    } else if p > t.ucc1_high {
        ImageLabel::PurePositive
    } else if p > t.ucc2_low && p < t.ucc2_high {
        ImageLabel::Mixed
    } else {
        ImageLabel::Discard
    }
}

/// Reflection about the edge without repeating it: `-1 → 1`, `n → n-2`.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Non-overlapping tiles of an image, one flattened patch per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches<T> {
    /// `grid_h · grid_w` rows of `patch² · C` values, tiles in row-major order.
    pub rows: Matrix<T>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch: usize,
    pub channels: usize,
}

/// Tiles the image into `patch × patch` squares, padding the bottom and right
/// edges by reflection when the size is not a multiple of `patch`.
pub fn patchify<T: Scalar>(img: &LabeledImage<T>, patch: usize) -> Result<Patches<T>> {
    if patch == 0 {
        return contract_err("patch size must be positive");
    }
    let (h, w, c) = img.dims();
    let (gh, gw) = (h.div_ceil(patch), w.div_ceil(patch));
    let width = patch * patch * c;
    let mut data = Vec::with_capacity(gh * gw * width);
    for ty in 0..gh {
        for tx in 0..gw {
            for py in 0..patch {
                let y = reflect(ty * patch + py, h);
                for px in 0..patch {
                    let x = reflect(tx * patch + px, w);
                    let at = (y * w + x) * c;
                    data.extend_from_slice(&img.pixels[at..at + c]);
                }
            }
        }
    }
    Ok(Patches { rows: Matrix::from_vec(gh * gw, width, data)?, grid_h: gh, grid_w: gw, patch, channels: c })
}

/// Inverse of [`patchify`]: HWC pixels of the padded `grid_h·patch × grid_w·patch` image.
pub fn reassemble<T: Scalar>(p: &Patches<T>) -> Result<Vec<T>> {
    let (s, c) = (p.patch, p.channels);
    if p.rows.shape() != (p.grid_h * p.grid_w, s * s * c) {
        return shape_err("patch matrix does not match its grid");
    }
    let w = p.grid_w * s;
    let mut out = vec![T::zero(); p.grid_h * s * w * c];
    for ty in 0..p.grid_h {
        for tx in 0..p.grid_w {
            let row = p.rows.row(ty * p.grid_w + tx);
            for py in 0..s {
                for px in 0..s {
                    let src = (py * s + px) * c;
                    let dst = ((ty * s + py) * w + tx * s + px) * c;
                    out[dst..dst + c].copy_from_slice(&row[src..src + c]);
                }
            }
        }
    }
    Ok(out)
}

/// Paints one label per tile onto an `h × w` mask (padding is cropped).
pub fn paint_tiles(labels: &[u8], grid_w: usize, patch: usize, h: usize, w: usize) -> Vec<u8> {
    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = labels[(y / patch) * grid_w + x / patch];
        }
    }
    mask
}

/// `bags_per_image` bags of `bag_size` distinct patches from every labeled
/// image; each bag carries its image's ucc. Discard-band images are skipped.
pub fn patch_bags<T: Scalar, R: Rng + ?Sized>(
    images: &[LabeledImage<T>],
    thresholds: &SegThresholds,
    patch: usize,
    bag_size: usize,
    bags_per_image: usize,
    rng: &mut R,
) -> Result<Vec<BagSample<T>>> {
    thresholds.validate()?;
    let mut bags = Vec::new();
    for img in images {
        let Some(ucc) = label_image(img, thresholds).ucc() else { continue };
        let tiles = patchify(img, patch)?;
        let n = tiles.rows.rows();
        if bag_size == 0 || bag_size > n {
            return contract_err(format!("bag size {bag_size} with {n} patches per image"));
        }
        for _ in 0..bags_per_image {
            let pick: Vec<usize> = index::sample(rng, n, bag_size).into_iter().collect();
            bags.push(BagSample { instances: tiles.rows.select_rows(&pick), ucc });
        }
    }
    Ok(bags)
}

/// Feature distributions of pure-positive and pure-negative training images.
#[derive(Clone, Debug, PartialEq)]
pub struct SegReferences<T> {
    pub positive: FeatureDistribution<T>,
    pub negative: Option<FeatureDistribution<T>>,
}

/// Pools the patch features of all pure ucc-1 images of each kind.
pub fn build_references<T: Scalar>(
    model: &UccModel<T>,
    images: &[LabeledImage<T>],
    thresholds: &SegThresholds,
    patch: usize,
) -> Result<SegReferences<T>> {
    thresholds.validate()?;
    let mut pos: Option<Matrix<T>> = None;
    let mut neg: Option<Matrix<T>> = None;
    for img in images {
        let slot = match label_image(img, thresholds) {
            ImageLabel::PurePositive => &mut pos,
            ImageLabel::PureNegative => &mut neg,
            _ => continue,
        };
        let f = model.extract_features(&patchify(img, patch)?.rows)?;
        *slot = Some(match slot.take() {
            Some(acc) => acc.vstack(&f)?,
            None => f,
        });
    }
    let Some(pos) = pos else {
        return contract_err("no pure-positive image to build a reference distribution from");
    };
    Ok(SegReferences {
        positive: kde_forward(&pos, model.kde())?.0,
        negative: neg.map(|n| kde_forward(&n, model.kde()).map(|d| d.0)).transpose()?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Clusterer {
    KMeans(KMeansConfig),
    Spectral(SpectralConfig),
}

impl Clusterer {
    fn run<T: Scalar, R: Rng + ?Sized>(&self, points: &Matrix<T>, rng: &mut R) -> Result<Vec<usize>> {
        Ok(match self {
            Self::KMeans(cfg) => kmeans(points, &KMeansConfig { k: 2, ..*cfg }, rng)?.ids,
            Self::Spectral(cfg) => spectral(points, &SpectralConfig { k: 2, ..*cfg }, rng)?.ids,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegMode {
    /// One clustering over the patches of all images.
    Pooled,
    /// A separate clustering per image.
    PerImage,
}

/// Decides which feature clusters are positive.
///
/// With a negative reference, each cluster independently goes to the nearer
/// reference in L1, so a single-texture input yields a constant mask. With
/// only a positive reference, the cluster nearer to it is positive.
fn anchor<T: Scalar>(features: &Matrix<T>, ids: &[usize], refs: &SegReferences<T>, model: &UccModel<T>) -> Result<[u8; 2]> {
    let mut dist = [None, None];
    for (c, slot) in dist.iter_mut().enumerate() {
        let members: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == c).collect();
        if !members.is_empty() {
            let d = kde_forward(&features.select_rows(&members), model.kde())?.0;
            let to_pos = d.l1_distance(&refs.positive)?;
            let to_neg = refs.negative.as_ref().map(|n| d.l1_distance(n)).transpose()?;
            *slot = Some((to_pos, to_neg));
        }
    }
    let mut out = [0u8; 2];
    match (dist[0], dist[1]) {
        (Some((p0, Some(n0))), Some((p1, Some(n1)))) => {
            out[0] = u8::from(p0 < n0);
            out[1] = u8::from(p1 < n1);
        }
        (Some((p0, _)), Some((p1, _))) => {
            // ties go to cluster 0 being negative
            out[usize::from(p0 < p1)] = 0;
            out[usize::from(p1 <= p0)] = 1;
        }
        (Some((p, n)), None) | (None, Some((p, n))) => {
            let positive = match n {
                Some(n) => p < n,
                None => p < T::one(),
            };
            out = [u8::from(positive); 2];
        }
        (None, None) => {}
    }
    Ok(out)
}

/// Predicted masks for `images` using the model's patch features.
pub fn segment<T: Scalar, R: Rng + ?Sized>(
    model: &UccModel<T>,
    images: &[&LabeledImage<T>],
    refs: &SegReferences<T>,
    patch: usize,
    clusterer: &Clusterer,
    mode: SegMode,
    rng: &mut R,
) -> Result<Vec<Vec<u8>>> {
    let mut tiles = Vec::with_capacity(images.len());
    for img in images {
        let t = patchify(img, patch)?;
        if t.rows.cols() != model.input_dim() {
            return shape_err(format!(
                "patches have {} values, model expects {}",
                t.rows.cols(),
                model.input_dim()
            ));
        }
        let f = model.extract_features(&t.rows)?;
        tiles.push((t, f));
    }
    let label_group = |feats: &Matrix<T>, rng: &mut R| -> Result<Vec<u8>> {
        let ids = if feats.rows() >= 2 { clusterer.run(feats, rng)? } else { vec![0; feats.rows()] };
        let map = anchor(feats, &ids, refs, model)?;
        Ok(ids.iter().map(|&c| map[c]).collect())
    };

    let per_tile: Vec<Vec<u8>> = match mode {
        SegMode::PerImage => tiles.iter().map(|(_, f)| label_group(f, rng)).collect::<Result<_>>()?,
        SegMode::Pooled => {
            let Some(((_, first), rest)) = tiles.split_first() else { return Ok(Vec::new()) };
            let mut all = first.clone();
            for (_, f) in rest {
                all = all.vstack(f)?;
            }
            let labels = label_group(&all, rng)?;
            let mut out = Vec::with_capacity(tiles.len());
            let mut at = 0;
            for (_, f) in &tiles {
                out.push(labels[at..at + f.rows()].to_vec());
                at += f.rows();
            }
            out
        }
    };
    Ok(images
        .iter()
        .zip(&tiles)
        .zip(&per_tile)
        .map(|((img, (t, _)), labels)| {
            let (h, w, _) = img.dims();
            paint_tiles(labels, t.grid_w, patch, h, w)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl PixelConfusion {
    pub fn from_masks(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return shape_err(format!("predicted mask has {} pixels, truth has {}", pred.len(), truth.len()));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> PixelMetrics {
        // With no pixels of a class, its success rate is 1 (no errors are possible)
        // and the matching error rate is 0.
        let rate = |hits: usize, misses: usize| -> (f64, f64) {
            if hits + misses == 0 {
                if misses == 0 { (1.0, 0.0) } else { (0.0, 1.0) }
            } else {
                let d = (hits + misses) as f64;
                (hits as f64 / d, misses as f64 / d)
            }
        };
        let (tpr, fnr) = rate(self.tp, self.fn_);
        let (tnr, fpr) = rate(self.tn, self.fp);
        let pa = if self.total() == 0 { 1.0 } else { (self.tp + self.tn) as f64 / self.total() as f64 };
        PixelMetrics { tpr, fpr, tnr, fnr, pa }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
    pub pa: f64,
}

impl PixelMetrics {
    /// Entrywise mean.
    pub fn mean(all: &[PixelMetrics]) -> PixelMetrics {
        if all.is_empty() {
            return PixelMetrics::default();
        }
        let n = all.len() as f64;
        let s = |f: fn(&PixelMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        PixelMetrics { tpr: s(|m| m.tpr), fpr: s(|m| m.fpr), tnr: s(|m| m.tnr), fnr: s(|m| m.fnr), pa: s(|m| m.pa) }
    }
}

pub fn pixel_metrics(pred: &[u8], truth: &[u8]) -> Result<PixelMetrics> {
    Ok(PixelConfusion::from_masks(pred, truth)?.metrics())
}
