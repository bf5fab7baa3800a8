//! End-to-end runs shared by the CLI and the test suites: train a ucc model on
//! bags drawn from an instance pool, then cluster held-out instances by their
//! extracted features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bags::{make_mil_dataset, InstancePool};
use crate::cluster::{clustering_accuracy, interclass_js, kmeans, spectral, JsMatrix, KMeansConfig, SpectralConfig};
use crate::error::{contract_err, Result};
use crate::segmentation::{
    build_references, patch_bags, pixel_metrics, segment, Clusterer, LabeledImage, PixelMetrics, SegMode, SegThresholds,
};
use crate::model::{ModelSpec, UccModel};
use crate::scalar::Scalar;
use crate::train::{evaluate, train, train_with_refresh, TrainConfig, TrainReport};

/// Bag construction and training settings for one run.
#[derive(Clone, Debug)]
pub struct RunSpec<T> {
    pub model: ModelSpec<T>,
    pub train: TrainConfig<T>,
    pub bag_size: usize,
    pub bags_per_label: usize,
    pub val_bags_per_label: usize,
    /// Draw a fresh training bag set at every epoch boundary.
    pub resample_bags: bool,
}

#[derive(Clone, Debug)]
pub struct TrainedRun<T> {
    pub model: UccModel<T>,
    pub report: TrainReport,
    pub val_accuracy: f64,
}

/// Trains on bags from `train_pool`, validating on bags from `val_pool`.
pub fn train_on_pool<T: Scalar>(
    train_pool: &InstancePool<T>,
    val_pool: &InstancePool<T>,
    spec: &RunSpec<T>,
) -> Result<TrainedRun<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
    let model = UccModel::init(&spec.model, &mut rng)?;
    let (lo, hi) = (spec.model.ucc_lo, spec.model.ucc_hi);
    let train_bags = make_mil_dataset(train_pool, lo, hi, spec.bags_per_label, spec.bag_size, &mut rng)?.materialize();
    let val_bags = make_mil_dataset(val_pool, lo, hi, spec.val_bags_per_label, spec.bag_size, &mut rng)?.materialize();
    let (model, report) = if spec.resample_bags {
        let mut refresh_rng = ChaCha8Rng::seed_from_u64(spec.train.seed ^ 0x5eed);
        let mut refresh = || {
            Ok(make_mil_dataset(train_pool, lo, hi, spec.bags_per_label, spec.bag_size, &mut refresh_rng)?.materialize())
        };
        train_with_refresh(&model, &train_bags, &val_bags, &spec.train, Some(&mut refresh))?
    } else {
        train(&model, &train_bags, &val_bags, &spec.train)?
    };
    let (_, val_accuracy) = evaluate(&model, &val_bags)?;
    Ok(TrainedRun { model, report, val_accuracy })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClusterMethod {
    KMeans,
    Spectral { affinity_scale: f64 },
}

/// Clustering of a labeled pool by the model's features.
#[derive(Clone, Debug)]
pub struct ClusterOutcome<T> {
    pub ids: Vec<usize>,
    pub accuracy: f64,
    pub js: JsMatrix<T>,
}

/// Clusters every instance of `pool` into `K` groups and scores against the hidden labels.
pub fn cluster_pool<T: Scalar>(
    model: &UccModel<T>,
    pool: &InstancePool<T>,
    method: ClusterMethod,
    seed: u64,
) -> Result<ClusterOutcome<T>> {
    let k = pool.num_classes();
    let features = model.extract_features(pool.instances())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = match method {
        ClusterMethod::KMeans => kmeans(&features, &KMeansConfig::new(k), &mut rng)?,
        ClusterMethod::Spectral { affinity_scale } => {
            spectral(&features, &SpectralConfig::new(k, affinity_scale), &mut rng)?
        }
    };
    let accuracy = clustering_accuracy(&assignment, pool.labels())?;
    let js = interclass_js(&features, pool.labels(), k, model.kde())?;
    Ok(ClusterOutcome { ids: assignment.ids, accuracy, js })
}

/// Patch-bag construction and training settings for segmentation.
#[derive(Clone, Debug)]
pub struct SegRunSpec<T> {
    pub model: ModelSpec<T>,
    pub train: TrainConfig<T>,
    pub patch: usize,
    pub bag_size: usize,
    pub bags_per_image: usize,
    pub val_bags_per_image: usize,
    pub thresholds: SegThresholds,
}

/// Trains a ucc model on patch bags labeled only by image-level ucc.
pub fn train_on_images<T: Scalar>(
    train_images: &[LabeledImage<T>],
    val_images: &[LabeledImage<T>],
    spec: &SegRunSpec<T>,
) -> Result<TrainedRun<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
    let model = UccModel::init(&spec.model, &mut rng)?;
    let train_bags = patch_bags(train_images, &spec.thresholds, spec.patch, spec.bag_size, spec.bags_per_image, &mut rng)?;
    let val_bags = patch_bags(val_images, &spec.thresholds, spec.patch, spec.bag_size, spec.val_bags_per_image, &mut rng)?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return contract_err("no image falls in a ucc band; nothing to train on");
    }
    let (model, report) = train(&model, &train_bags, &val_bags, &spec.train)?;
    let (_, val_accuracy) = evaluate(&model, &val_bags)?;
    Ok(TrainedRun { model, report, val_accuracy })
}

#[derive(Clone, Debug)]
pub struct SegOutcome {
    pub masks: Vec<Vec<u8>>,
    pub metrics: Vec<PixelMetrics>,
    pub mean: PixelMetrics,
}

/// Segments `images` and scores each predicted mask against its ground truth.
/// Reference distributions come from the pure ucc-1 images in `reference_images`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_segmentation<T: Scalar>(
    model: &UccModel<T>,
    reference_images: &[LabeledImage<T>],
    images: &[LabeledImage<T>],
    thresholds: &SegThresholds,
    patch: usize,
    clusterer: &Clusterer,
    mode: SegMode,
    seed: u64,
) -> Result<SegOutcome> {
    let refs = build_references(model, reference_images, thresholds, patch)?;
    let views: Vec<&LabeledImage<T>> = images.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = segment(model, &views, &refs, patch, clusterer, mode, &mut rng)?;
    let metrics = masks
        .iter()
        .zip(images)
        .map(|(m, img)| pixel_metrics(m, img.mask()))
        .collect::<Result<Vec<_>>>()?;
    let mean = PixelMetrics::mean(&metrics);
    Ok(SegOutcome { masks, metrics, mean })
}
