//! `key = value` run configuration with a dotted namespace per module.
//!
//! Every key has a default. A config file and `--set` overrides are layered on
//! top, unknown keys are rejected and the merged table is parsed into a typed
//! [`RunConfig`] that is checked against the library contracts before any
//! command starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ucc_core::cluster::{KMeansConfig, SpectralConfig};
use ucc_core::kde::KdeConfig;
use ucc_core::model::{ModelSpec, Pooling};
use ucc_core::pipeline::{RunSpec, SegRunSpec};
use ucc_core::segmentation::{Clusterer, SegMode, SegThresholds};
use ucc_core::synth::{SyntheticSpec, TextureSpec};
use ucc_core::train::TrainConfig;

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "global RNG seed"),
    ("checkpoint", "", "model checkpoint read by cluster, eval-ucc, eval-seg and verify-props"),
    ("data.train", "", "training pool file, or image directory when data.format = images"),
    ("data.val", "", "validation pool file or image directory; empty splits data.val_fraction off the training data"),
    ("data.eval", "", "pool file or image directory evaluated by cluster, eval-ucc, eval-seg and verify-props"),
    ("data.format", "pool", "pool | idx | images"),
    ("data.val_fraction", "0.2", "held-out share when data.val is empty"),
    ("data.idx_labels", "", "IDX label file paired with the IDX image file given as data.train or data.eval"),
    ("data.idx_digits", "", "comma-separated raw IDX labels to keep; empty keeps all"),
    ("data.idx_limit", "0", "maximum IDX images to read; 0 reads all"),
    ("model.features", "8", "feature count J"),
    ("model.feature_hidden", "32", "hidden widths of the feature network"),
    ("model.drn_hidden", "32", "hidden widths of the distribution regression network"),
    ("model.decoder_hidden", "32", "hidden widths of the decoder"),
    ("model.alpha", "0.5", "weight of the ucc loss against the reconstruction loss"),
    ("model.ucc_lo", "1", "smallest ucc label"),
    ("model.ucc_hi", "4", "largest ucc label"),
    ("model.pooling", "kde", "kde | mean"),
    ("kde.bins", "11", "sample points per feature"),
    ("kde.bandwidth", "0.1", "Gaussian kernel width"),
    ("kde.range_lo", "0", "first sample point"),
    ("kde.range_hi", "1", "last sample point"),
    ("bags.size", "16", "instances per bag"),
    ("bags.per_label", "300", "training bags per ucc label"),
    ("bags.val_per_label", "100", "validation bags per ucc label"),
    ("bags.resample", "false", "draw a fresh training bag set every epoch"),
    ("train.lr", "0.5", "SGD learning rate"),
    ("train.batch", "8", "bags per SGD step"),
    ("train.max_iters", "10000", "SGD steps"),
    ("train.patience", "1500", "steps without validation improvement before stopping"),
    ("train.val_period", "100", "steps between validations"),
    ("cluster.method", "kmeans", "kmeans | spectral"),
    ("cluster.k", "0", "cluster count; 0 uses the class count of the pool"),
    ("cluster.restarts", "10", "k-means restarts"),
    ("cluster.max_iters", "300", "Lloyd iterations per restart"),
    ("cluster.tol", "1e-9", "Lloyd stopping tolerance on centroid movement"),
    ("cluster.affinity_scale", "0.5", "spectral Gaussian affinity width"),
    ("cluster.cap", "4000", "largest point count accepted by spectral clustering"),
    ("eval.bags_per_label", "100", "bags per ucc label sampled by eval-ucc"),
    ("seg.patch", "16", "square patch side in pixels"),
    ("seg.bag_size", "32", "patches per bag"),
    ("seg.bags_per_image", "10", "training bags per labeled image"),
    ("seg.val_bags_per_image", "4", "validation bags per labeled image"),
    ("seg.ucc1_low", "0.2", "images with a positive fraction below this are pure negative"),
    ("seg.ucc1_high", "0.8", "images with a positive fraction above this are pure positive"),
    ("seg.ucc2_low", "0.3", "lower bound of the mixed band"),
    ("seg.ucc2_high", "0.7", "upper bound of the mixed band"),
    ("seg.mode", "pooled", "pooled | per-image clustering of test patches"),
    ("seg.references", "", "image directory supplying the pure reference images; empty uses data.train"),
    ("props.universe", "200", "instances clustered by the pair-and-merge check"),
    ("props.trials", "1000", "random trials per property check"),
    ("props.set_size", "16", "instances per pure set"),
    ("props.bag_size", "16", "largest bag drawn by the count-invariance checks"),
    ("props.threshold", "0.001", "minimum L1 distance between distinct-class distributions"),
    ("props.tolerance", "1e-9", "allowed gap between equal distributions"),
    ("gen.kind", "blobs", "blobs | textures"),
    ("gen.classes", "4", "blob count K"),
    ("gen.dim", "8", "blob dimension"),
    ("gen.per_class", "500", "instances per blob"),
    ("gen.scale", "0.1", "blob standard deviation"),
    ("gen.separation", "4", "minimum mean distance in multiples of gen.scale"),
    ("gen.val_fraction", "0.2", "share of the blob pool written to val.txt"),
    ("gen.test_fraction", "0.2", "share of the blob pool written to test.txt"),
    ("gen.height", "128", "texture image height"),
    ("gen.width", "128", "texture image width"),
    ("gen.channels", "1", "texture image channels"),
    ("gen.negative_mean", "0.4", "negative texture mean"),
    ("gen.negative_sd", "0.15", "negative texture standard deviation"),
    ("gen.positive_mean", "0.6", "positive texture mean"),
    ("gen.positive_sd", "0.05", "positive texture standard deviation"),
    ("gen.wave", "6", "boundary wave amplitude in pixels"),
    ("gen.train_images", "60", "training images"),
    ("gen.val_images", "15", "validation images"),
    ("gen.test_images", "50", "test images with uniform positive fraction"),
];

/// Field diagnostics collected while reading or checking a configuration.
#[derive(Debug, Default)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(msg: String) -> Self {
        Self { problems: vec![msg] }
    }
}

/// The merged key table.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(ConfigError::single(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let mut err = ConfigError::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        err.problems.extend(e.problems.into_iter().map(|p| format!("{origin}:{}: {p}", n + 1)));
                    }
                }
                None => err.problems.push(format!("{origin}:{}: expected `key = value`", n + 1)),
            }
        }
        if err.problems.is_empty() {
            Ok(())
        } else {
            Err(err)
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::single(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::single(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Sorted `key = value` lines.
    pub fn snapshot(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Pool,
    Idx,
    Images,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenKind {
    Blobs,
    Textures,
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub format: DataFormat,
    pub val_fraction: f64,
    pub idx_labels: Option<PathBuf>,
    pub idx_digits: Option<Vec<u8>>,
    pub idx_limit: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PropsConfig {
    pub universe: usize,
    pub trials: usize,
    pub set_size: usize,
    pub bag_size: usize,
    pub threshold: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub kind: GenKind,
    pub blobs: SyntheticSpec,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub textures: TextureSpec,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
}

/// Typed view of [`Settings`].
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub run: RunSpec<f64>,
    pub cluster_method: String,
    pub cluster_k: usize,
    pub kmeans: KMeansConfig,
    pub affinity_scale: f64,
    pub spectral_cap: usize,
    pub eval_bags_per_label: usize,
    pub seg: SegRunSpec<f64>,
    pub seg_mode: SegMode,
    pub seg_references: Option<PathBuf>,
    pub props: PropsConfig,
    pub gen: GenConfig,
}

struct Reader<'a> {
    s: &'a Settings,
    err: ConfigError,
}

impl Reader<'_> {
    fn num<V: FromStr + Default>(&mut self, key: &str) -> V {
        let raw = self.s.get(key);
        raw.parse().unwrap_or_else(|_| {
            self.err.problems.push(format!("{key}: cannot parse `{raw}`"));
            V::default()
        })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.s.get(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    fn list<V: FromStr>(&mut self, key: &str) -> Vec<V> {
        let raw = self.s.get(key);
        let mut out = Vec::new();
        for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse() {
                Ok(v) => out.push(v),
                Err(_) => self.err.problems.push(format!("{key}: cannot parse `{part}`")),
            }
        }
        out
    }

    fn choice<V: Copy>(&mut self, key: &str, options: &[(&str, V)]) -> V {
        let raw = self.s.get(key);
        match options.iter().find(|(name, _)| *name == raw) {
            Some(&(_, v)) => v,
            None => {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                self.err.problems.push(format!("{key}: `{raw}` is not one of {}", names.join(", ")));
                options[0].1
            }
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.err.problems.push(msg());
        }
    }

    fn lib<V>(&mut self, scope: &str, r: ucc_core::Result<V>) -> Option<V> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.err.problems.push(format!("{scope}: {e}"));
                None
            }
        }
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, ConfigError> {
        let mut r = Reader { s, err: ConfigError::default() };
        let seed: u64 = r.num("seed");

        let format = r.choice("data.format", &[("pool", DataFormat::Pool), ("idx", DataFormat::Idx), ("images", DataFormat::Images)]);
        let val_fraction: f64 = r.num("data.val_fraction");
        r.check((0.0..1.0).contains(&val_fraction), || format!("data.val_fraction: {val_fraction} outside [0, 1)"));
        let digits: Vec<u8> = r.list("data.idx_digits");
        let limit: usize = r.num("data.idx_limit");
        let data = DataConfig {
            train: r.path("data.train"),
            val: r.path("data.val"),
            eval: r.path("data.eval"),
            format,
            val_fraction,
            idx_labels: r.path("data.idx_labels"),
            idx_digits: (!digits.is_empty()).then_some(digits),
            idx_limit: (limit > 0).then_some(limit),
        };

        let kde = {
            let (bins, bw, lo, hi) = (r.num("kde.bins"), r.num("kde.bandwidth"), r.num("kde.range_lo"), r.num("kde.range_hi"));
            r.lib("kde", KdeConfig::new(bins, bw, lo, hi)).unwrap_or_default()
        };
        let mut model = ModelSpec::new(1);
        model.num_features = r.num("model.features");
        model.feature_hidden = r.list("model.feature_hidden");
        model.drn_hidden = r.list("model.drn_hidden");
        model.decoder_hidden = r.list("model.decoder_hidden");
        model.alpha = r.num("model.alpha");
        model.ucc_lo = r.num("model.ucc_lo");
        model.ucc_hi = r.num("model.ucc_hi");
        model.pooling = r.choice("model.pooling", &[("kde", Pooling::Kde), ("mean", Pooling::Mean)]);
        model.kde = kde;
        r.check(model.num_features > 0, || "model.features: must be positive".into());
        r.check((0.0..=1.0).contains(&model.alpha), || format!("model.alpha: {} outside [0, 1]", model.alpha));
        r.check(model.ucc_lo >= 1 && model.ucc_lo <= model.ucc_hi, || {
            format!("model.ucc_lo..model.ucc_hi: {}..={} is not a valid ucc range", model.ucc_lo, model.ucc_hi)
        });
        r.check(!model.drn_hidden.is_empty(), || "model.drn_hidden: the regression network needs a hidden layer".into());
        for key in ["model.feature_hidden", "model.drn_hidden", "model.decoder_hidden"] {
            let widths: Vec<usize> = r.list(key);
            r.check(widths.iter().all(|&w| w > 0), || format!("{key}: widths must be positive"));
        }

        let train = TrainConfig {
            learning_rate: r.num("train.lr"),
            batch_size: r.num("train.batch"),
            max_iterations: r.num("train.max_iters"),
            patience: r.num("train.patience"),
            validation_period: r.num("train.val_period"),
            seed,
        };
        r.lib("train", train.validate());

        let bag_size: usize = r.num("bags.size");
        let run = RunSpec {
            model: model.clone(),
            train: train.clone(),
            bag_size,
            bags_per_label: r.num("bags.per_label"),
            val_bags_per_label: r.num("bags.val_per_label"),
            resample_bags: r.num("bags.resample"),
        };
        r.check(run.bag_size >= model.ucc_hi, || {
            format!("bags.size: {} cannot hold {} classes", run.bag_size, model.ucc_hi)
        });
        r.check(run.bags_per_label > 0 && run.val_bags_per_label > 0, || "bags: per-label counts must be positive".into());

        let cluster_method = r.s.get("cluster.method").to_string();
        r.check(matches!(cluster_method.as_str(), "kmeans" | "spectral"), || {
            format!("cluster.method: `{cluster_method}` is not one of kmeans, spectral")
        });
        let kmeans = KMeansConfig {
            k: 0,
            restarts: r.num("cluster.restarts"),
            max_iters: r.num("cluster.max_iters"),
            tol: r.num("cluster.tol"),
        };
        r.check(kmeans.restarts > 0, || "cluster.restarts: must be positive".into());
        let affinity_scale: f64 = r.num("cluster.affinity_scale");
        r.check(affinity_scale > 0.0, || "cluster.affinity_scale: must be positive".into());

        let thresholds = SegThresholds {
            ucc1_low: r.num("seg.ucc1_low"),
            ucc1_high: r.num("seg.ucc1_high"),
            ucc2_low: r.num("seg.ucc2_low"),
            ucc2_high: r.num("seg.ucc2_high"),
        };
        r.lib("seg", thresholds.validate());
        let patch: usize = r.num("seg.patch");
        r.check(patch > 0, || "seg.patch: must be positive".into());
        let mut seg_model = model;
        seg_model.ucc_lo = 1;
        seg_model.ucc_hi = 2;
        let seg = SegRunSpec {
            model: seg_model,
            train,
            patch,
            bag_size: r.num("seg.bag_size"),
            bags_per_image: r.num("seg.bags_per_image"),
            val_bags_per_image: r.num("seg.val_bags_per_image"),
            thresholds,
        };
        r.check(seg.bag_size >= 2, || "seg.bag_size: mixed bags need at least two patches".into());
        let seg_mode = r.choice("seg.mode", &[("pooled", SegMode::Pooled), ("per-image", SegMode::PerImage)]);

        let props = PropsConfig {
            universe: r.num("props.universe"),
            trials: r.num("props.trials"),
            set_size: r.num("props.set_size"),
            bag_size: r.num("props.bag_size"),
            threshold: r.num("props.threshold"),
            tolerance: r.num("props.tolerance"),
        };

        let kind = r.choice("gen.kind", &[("blobs", GenKind::Blobs), ("textures", GenKind::Textures)]);
        let blobs = SyntheticSpec {
            num_classes: r.num("gen.classes"),
            dim: r.num("gen.dim"),
            per_class: r.num("gen.per_class"),
            scale: r.num("gen.scale"),
            separation: r.num("gen.separation"),
            seed,
        };
        let textures = TextureSpec {
            height: r.num("gen.height"),
            width: r.num("gen.width"),
            channels: r.num("gen.channels"),
            negative: (r.num("gen.negative_mean"), r.num("gen.negative_sd")),
            positive: (r.num("gen.positive_mean"), r.num("gen.positive_sd")),
            wave_amplitude: r.num("gen.wave"),
        };
        let gen = GenConfig {
            kind,
            val_fraction: r.num("gen.val_fraction"),
            test_fraction: r.num("gen.test_fraction"),
            train_images: r.num("gen.train_images"),
            val_images: r.num("gen.val_images"),
            test_images: r.num("gen.test_images"),
            blobs,
            textures,
        };
        match gen.kind {
            GenKind::Blobs => {
                r.lib("gen", gen.blobs.validate());
                let (v, t) = (gen.val_fraction, gen.test_fraction);
                r.check(v >= 0.0 && t >= 0.0 && v + t < 1.0, || format!("gen: split fractions {v} + {t} must stay below 1"));
            }
            GenKind::Textures => {
                r.lib("gen", gen.textures.validate());
            }
        }

        let cfg = RunConfig {
            seed,
            checkpoint: r.path("checkpoint"),
            data,
            run,
            cluster_method,
            cluster_k: r.num("cluster.k"),
            kmeans,
            affinity_scale,
            spectral_cap: r.num("cluster.cap"),
            eval_bags_per_label: r.num("eval.bags_per_label"),
            seg,
            seg_mode,
            seg_references: r.path("seg.references"),
            props,
            gen,
        };
        if r.err.problems.is_empty() {
            Ok(cfg)
        } else {
            Err(r.err)
        }
    }

    /// Clusterer for `k` clusters as configured.
    pub fn clusterer(&self, k: usize) -> Clusterer {
        if self.cluster_method == "spectral" {
            let mut sc = SpectralConfig::new(k, self.affinity_scale);
            sc.cap = self.spectral_cap;
            sc.kmeans = KMeansConfig { k, ..self.kmeans };
            Clusterer::Spectral(sc)
        } else {
            Clusterer::KMeans(KMeansConfig { k, ..self.kmeans })
        }
    }
}
