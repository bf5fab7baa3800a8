use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ucc_core::bags::{make_mil_dataset, InstancePool};
use ucc_core::checkpoint;
use ucc_core::cluster::{interclass_js, kmeans, matched_accuracy, spectral, ClusterAssignment};
use ucc_core::io::{self, PoolFile};
use ucc_core::ndcore::Matrix;
use ucc_core::oracle::{check_prop1, check_prop3, check_prop_b1, check_prop_b3, cluster_by_ucc, UccOracle};
use ucc_core::pipeline::{evaluate_segmentation, train_on_images, train_on_pool};
use ucc_core::segmentation::{Clusterer, LabeledImage};
use ucc_core::synth::{gen_synthetic, texture_test_set, texture_training_set};
use ucc_core::UccModel64;

use crate::config::{DataFormat, GenKind, RunConfig};
use crate::Failure;

type Outcome = Result<(), Failure>;

pub fn write_text(path: &Path, text: &str) -> Outcome {
    io::write_atomic(path, text.as_bytes()).map_err(|e| Failure::from(e).context(path.display()))
}

/// `metrics.txt` as `key=value` lines and `metrics.tsv` as a header row plus one value row.
fn write_metrics(out: &Path, metrics: &[(&str, String)]) -> Outcome {
    let mut kv = String::new();
    for (k, v) in metrics {
        let _ = writeln!(kv, "{k}={v}");
    }
    print!("{kv}");
    let header: Vec<&str> = metrics.iter().map(|m| m.0).collect();
    let values: Vec<&str> = metrics.iter().map(|m| m.1.as_str()).collect();
    write_text(&out.join("metrics.txt"), &kv)?;
    write_text(&out.join("metrics.tsv"), &format!("{}\n{}\n", header.join("\t"), values.join("\t")))
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| Failure::Input(format!("{key} is not set")))
}

fn load_model(cfg: &RunConfig) -> Result<UccModel64, Failure> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    checkpoint::load(path).map_err(|e| Failure::from(e).context(path.display()))
}

fn load_pool(cfg: &RunConfig, path: &Path) -> Result<PoolFile<f64>, Failure> {
    let ctx = |e: ucc_core::UccError| Failure::from(e).context(path.display());
    match cfg.data.format {
        DataFormat::Pool => io::read_pool(path).map_err(ctx),
        DataFormat::Idx => {
            let labels = required(&cfg.data.idx_labels, "data.idx_labels")?;
            let p = io::load_idx(path, labels, cfg.data.idx_digits.as_deref(), cfg.data.idx_limit).map_err(ctx)?;
            let (instances, labels, k) = (p.pool.instances().clone(), p.pool.labels().to_vec(), p.pool.num_classes());
            Ok(PoolFile { instances, labels: Some(labels), num_classes: k })
        }
        DataFormat::Images => Err(Failure::Input(format!(
            "{}: data.format = images has no instance pool for this command",
            path.display()
        ))),
    }
}

fn labeled_pool(cfg: &RunConfig, path: &Path) -> Result<InstancePool<f64>, Failure> {
    load_pool(cfg, path)?.into_pool().map_err(|e| Failure::from(e).context(path.display()))
}

fn load_images(path: &Path) -> Result<Vec<(String, LabeledImage<f64>)>, Failure> {
    io::read_image_dir(path).map_err(|e| Failure::from(e).context(path.display()))
}

pub fn train(cfg: &RunConfig, out: &Path) -> Outcome {
    let train_path = required(&cfg.data.train, "data.train")?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a1);
    let run = if cfg.data.format == DataFormat::Images {
        let mut train_imgs: Vec<LabeledImage<f64>> = load_images(train_path)?.into_iter().map(|p| p.1).collect();
        let val_imgs = match &cfg.data.val {
            Some(v) => load_images(v)?.into_iter().map(|p| p.1).collect(),
            None => {
                let n_val = ((train_imgs.len() as f64) * cfg.data.val_fraction).round() as usize;
                train_imgs.split_off(train_imgs.len() - n_val.min(train_imgs.len()))
            }
        };
        let first = train_imgs.first().ok_or_else(|| Failure::Input(format!("{}: no images", train_path.display())))?;
        let mut spec = cfg.seg.clone();
        spec.model.input_dim = spec.patch * spec.patch * first.dims().2;
        train_on_images(&train_imgs, &val_imgs, &spec)?
    } else {
        let pool = labeled_pool(cfg, train_path)?;
        let (train_pool, val_pool) = match &cfg.data.val {
            Some(v) => (pool, labeled_pool(cfg, v)?),
            None => pool.split(cfg.data.val_fraction, &mut split_rng)?,
        };
        let mut spec = cfg.run.clone();
        spec.model.input_dim = train_pool.dim();
        train_on_pool(&train_pool, &val_pool, &spec)?
    };
    checkpoint::save(&run.model, &out.join("model.ucc"))?;
    write_text(&out.join("train_report.tsv"), &run.report.to_tsv())?;
    let best = run.report.best();
    write_metrics(
        out,
        &[
            ("val_accuracy", format!("{:.6}", run.val_accuracy)),
            ("best_iteration", run.report.best_iteration.to_string()),
            ("best_val_loss", best.map_or("nan".into(), |b| format!("{:.6}", b.val_loss))),
            ("stopped_at", run.report.stopped_at.to_string()),
            ("parameters", run.model.num_params().to_string()),
        ],
    )
}

fn cluster_features(cfg: &RunConfig, features: &Matrix<f64>, k: usize) -> Result<ClusterAssignment<f64>, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc1);
    Ok(match cfg.clusterer(k) {
        Clusterer::KMeans(c) => kmeans(features, &c, &mut rng)?,
        Clusterer::Spectral(c) => spectral(features, &c, &mut rng)?,
    })
}

pub fn cluster(cfg: &RunConfig, out: &Path) -> Outcome {
    let model = load_model(cfg)?;
    let path = required(&cfg.data.eval, "data.eval")?;
    let pool = load_pool(cfg, path)?;
    let features = model.extract_features(&pool.instances).map_err(|e| Failure::from(e).context(path.display()))?;
    let k = match cfg.cluster_k {
        0 if pool.num_classes > 0 => pool.num_classes,
        0 => return Err(Failure::Input("cluster.k must be set for an unlabeled pool".into())),
        k => k,
    };
    let assignment = cluster_features(cfg, &features, k)?;
    let ids: String = assignment.ids.iter().map(|i| format!("{}\n", i + 1)).collect();
    write_text(&out.join("assignments.txt"), &ids)?;

    let mut metrics = vec![
        ("method", cfg.cluster_method.clone()),
        ("clusters", k.to_string()),
        ("instances", assignment.ids.len().to_string()),
    ];
    if let Some(inertia) = assignment.inertia {
        metrics.push(("inertia", format!("{inertia:.6}")));
    }
    if let Some(labels) = &pool.labels {
        metrics.push(("accuracy", format!("{:.6}", matched_accuracy(&assignment.ids, labels)?)));
        let js = interclass_js(&features, labels, pool.num_classes, model.kde())?;
        write_text(&out.join("js.tsv"), &js.to_tsv())?;
        if let Some(min) = js.min_off_diagonal {
            metrics.push(("min_js", format!("{min:.6}")));
        }
    }
    write_metrics(out, &metrics)
}

pub fn eval_ucc(cfg: &RunConfig, out: &Path) -> Outcome {
    let model = load_model(cfg)?;
    let path = required(&cfg.data.eval, "data.eval")?;
    let pool = labeled_pool(cfg, path)?;
    let (lo, hi) = model.ucc_range();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7);
    let bags = make_mil_dataset(&pool, lo, hi, cfg.eval_bags_per_label, cfg.run.bag_size, &mut rng)?;
    let labels = hi - lo + 1;
    let mut confusion = vec![vec![0usize; labels]; labels];
    for bag in bags.bags() {
        let x = pool.instances().select_rows(bag.indices());
        let predicted = model.predict_label(&x).map_err(|e| Failure::from(e).context(path.display()))?;
        confusion[bag.ucc() - lo][predicted - lo] += 1;
    }
    let correct: usize = (0..labels).map(|i| confusion[i][i]).sum();
    let mut table = String::from("true\\predicted");
    for l in lo..=hi {
        let _ = write!(table, "\t{l}");
    }
    table.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        let _ = write!(table, "{}", lo + i);
        for c in row {
            let _ = write!(table, "\t{c}");
        }
        table.push('\n');
    }
    write_text(&out.join("confusion.tsv"), &table)?;
    write_metrics(
        out,
        &[
            ("accuracy", format!("{:.6}", correct as f64 / bags.len() as f64)),
            ("bags", bags.len().to_string()),
            ("ucc_lo", lo.to_string()),
            ("ucc_hi", hi.to_string()),
        ],
    )
}

pub fn eval_seg(cfg: &RunConfig, out: &Path) -> Outcome {
    let model = load_model(cfg)?;
    let path = required(&cfg.data.eval, "data.eval")?;
    let named = load_images(path)?;
    if named.is_empty() {
        return Err(Failure::Input(format!("{}: no images", path.display())));
    }
    let ref_dir = match &cfg.seg_references {
        Some(r) => r.as_path(),
        None => required(&cfg.data.train, "seg.references or data.train")?,
    };
    let refs: Vec<LabeledImage<f64>> = load_images(ref_dir)?.into_iter().map(|p| p.1).collect();
    let (names, images): (Vec<String>, Vec<LabeledImage<f64>>) = named.into_iter().unzip();
    let outcome = evaluate_segmentation(
        &model,
        &refs,
        &images,
        &cfg.seg.thresholds,
        cfg.seg.patch,
        &cfg.clusterer(2),
        cfg.seg_mode,
        cfg.seed ^ 0x5e,
    )?;
    let mask_dir = out.join("masks");
    std::fs::create_dir_all(&mask_dir).map_err(|e| Failure::Input(format!("{}: {e}", mask_dir.display())))?;
    let mut table = String::from("image\tTPR\tFPR\tTNR\tFNR\tPA\n");
    for ((name, img), (mask, m)) in names.iter().zip(&images).zip(outcome.masks.iter().zip(&outcome.metrics)) {
        let (h, w, _) = img.dims();
        io::write_atomic(&mask_dir.join(format!("{name}.ucck")), &io::encode_mask(mask, h, w))?;
        let _ = writeln!(table, "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", m.tpr, m.fpr, m.tnr, m.fnr, m.pa);
    }
    let mean = outcome.mean;
    let _ = writeln!(table, "mean\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", mean.tpr, mean.fpr, mean.tnr, mean.fnr, mean.pa);
    write_text(&out.join("segmentation.tsv"), &table)?;
    write_metrics(
        out,
        &[
            ("images", images.len().to_string()),
            ("tpr", format!("{:.6}", mean.tpr)),
            ("fpr", format!("{:.6}", mean.fpr)),
            ("tnr", format!("{:.6}", mean.tnr)),
            ("fnr", format!("{:.6}", mean.fnr)),
            ("pa", format!("{:.6}", mean.pa)),
        ],
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn verify_props(cfg: &RunConfig, out: &Path) -> Outcome {
    let path = required(&cfg.data.eval, "data.eval")?;
    let pool = labeled_pool(cfg, path)?;
    let model = match &cfg.checkpoint {
        Some(_) => Some(load_model(cfg)?),
        None => None,
    };
    let kde = model.as_ref().map_or(cfg.run.model.kde, |m| *m.kde());
    let identity = |x: &Matrix<f64>| Ok(x.clone());
    let extract = |x: &Matrix<f64>| model.as_ref().expect("model present").extract_features(x);
    let features: &dyn Fn(&Matrix<f64>) -> ucc_core::Result<Matrix<f64>> =
        if model.is_some() { &extract } else { &identity };
    if model.is_none() && pool.instances().as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Failure::Input(format!(
            "{}: raw instances leave [0, 1]; pass a checkpoint to compare feature distributions",
            path.display()
        )));
    }
    let p = &cfg.props;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9a0);

    let m = p.universe.min(pool.len());
    let universe: Vec<usize> = {
        let mut u: Vec<usize> = index::sample(&mut rng, pool.len(), m).into_iter().collect();
        u.sort_unstable();
        u
    };
    let oracle = UccOracle::new(&pool);
    let (partition, stats) = cluster_by_ucc(&universe, &oracle, &mut rng)?;
    let truth: Vec<usize> = universe.iter().map(|&i| pool.labels()[i]).collect();
    let present = {
        let mut t = truth.clone();
        t.sort_unstable();
        t.dedup();
        t.len()
    };
    let merge_acc = matched_accuracy(&partition.assignment(&universe), &truth)?;
    let merge_ok = partition.len() == present && merge_acc == 1.0;

    let p1 = check_prop1(&pool, &kde, features, p.trials, p.set_size, p.threshold, &mut rng)?;
    let p3 = check_prop3(&pool, &kde, features, usize::MAX, p.threshold, &mut rng)?;
    let b1 = check_prop_b1(&pool, p.trials, p.bag_size, &mut rng)?;
    let predict = |x: &Matrix<f64>| model.as_ref().expect("model present").predict_label(x);
    let predictor: Option<&dyn Fn(&Matrix<f64>) -> ucc_core::Result<usize>> =
        if model.is_some() { Some(&predict) } else { None };
    let b3 = check_prop_b3(&pool, &kde, features, predictor, p.trials, p.bag_size, p.tolerance, &mut rng)?;

    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.6}"));
    let mut report = String::new();
    let _ = writeln!(
        report,
        "{} pair-and-merge: {} blocks for {present} classes, accuracy {merge_acc:.6}, {} queries, {} passes",
        verdict(merge_ok),
        partition.len(),
        stats.queries,
        stats.passes
    );
    let _ = writeln!(
        report,
        "{} distinct-class pure sets: {} violations in {} pairs ({} same-class excluded), min L1 {}",
        verdict(p1.passed()),
        p1.violations,
        p1.evaluated,
        p1.excluded,
        opt(p1.min_l1)
    );
    let _ = writeln!(report, "{} class distributions pairwise distinct: min L1 {}", verdict(p3.passed()), opt(p3.min_l1));
    let _ = writeln!(
        report,
        "{} count invariant under class proportions: {} violations in {} trials",
        verdict(b1.passed()),
        b1.violations,
        b1.trials
    );
    let _ = writeln!(
        report,
        "{} equal distributions mix to the same distribution: max gap {:.3e}, weight error {:.3e}{}",
        verdict(b3.passed()),
        b3.max_distribution_gap,
        b3.max_weight_error,
        b3.prediction_disagreements.map_or(String::new(), |d| format!(", {d} prediction disagreements"))
    );
    print!("{report}");
    write_text(&out.join("report.txt"), &report)?;
    let all = merge_ok && p1.passed() && p3.passed() && b1.passed() && b3.passed();
    let mut kv = String::new();
    for (k, v) in [
        ("merge_blocks", partition.len().to_string()),
        ("merge_accuracy", format!("{merge_acc:.6}")),
        ("prop1_violations", p1.violations.to_string()),
        ("prop1_min_l1", opt(p1.min_l1)),
        ("prop3_min_l1", opt(p3.min_l1)),
        ("b1_violations", b1.violations.to_string()),
        ("b3_max_gap", format!("{:.3e}", b3.max_distribution_gap)),
        ("all_passed", all.to_string()),
    ] {
        let _ = writeln!(kv, "{k}={v}");
    }
    write_text(&out.join("metrics.txt"), &kv)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Outcome {
    let g = &cfg.gen;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match g.kind {
        GenKind::Blobs => {
            let pool: InstancePool<f64> = gen_synthetic(&g.blobs)?;
            io::write_pool(&pool, &out.join("pool.txt"))?;
            let (rest, test) = pool.split(g.test_fraction, &mut rng)?;
            let (train, val) = rest.split(g.val_fraction / (1.0 - g.test_fraction), &mut rng)?;
            for (name, part) in [("train.txt", &train), ("val.txt", &val), ("test.txt", &test)] {
                io::write_pool(part, &out.join(name))?;
            }
            write_metrics(
                out,
                &[
                    ("kind", "blobs".into()),
                    ("instances", pool.len().to_string()),
                    ("train", train.len().to_string()),
                    ("val", val.len().to_string()),
                    ("test", test.len().to_string()),
                ],
            )
        }
        GenKind::Textures => {
            let sets = [
                ("train", texture_training_set::<f64, _>(&g.textures, g.train_images, &mut rng)?),
                ("val", texture_training_set::<f64, _>(&g.textures, g.val_images, &mut rng)?),
                ("test", texture_test_set::<f64, _>(&g.textures, g.test_images, &mut rng)?),
            ];
            for (dir, images) in &sets {
                let d = out.join(dir);
                std::fs::create_dir_all(&d).map_err(|e| Failure::Input(format!("{}: {e}", d.display())))?;
                for (i, img) in images.iter().enumerate() {
                    io::write_labeled_image(&d, &format!("img{i:04}"), img)?;
                }
            }
            write_metrics(
                out,
                &[
                    ("kind", "textures".into()),
                    ("train", sets[0].1.len().to_string()),
                    ("val", sets[1].1.len().to_string()),
                    ("test", sets[2].1.len().to_string()),
                ],
            )
        }
    }
}
