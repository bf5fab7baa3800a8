use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ucc_core::bags::{make_mil_dataset, sample_bag, ucc_of, InstancePool};
use ucc_core::cluster::{jacobi_eigen, js_divergence, kmeans_plus_plus, lloyd, matched_accuracy};
use ucc_core::kde::{kde_forward, mix_distributions, KdeConfig};
use ucc_core::model::{ModelSpec, UccModel};
use ucc_core::ndcore::{grad_check, mlp_backward, mlp_forward, Activation, Matrix, MlpParams};
use ucc_core::oracle::{cluster_by_ucc, UccOracle};
use ucc_core::segmentation::{label_image, patchify, pixel_metrics, reassemble, LabeledImage, SegThresholds};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(0.0f64..1.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn bag() -> impl Strategy<Value = Matrix<f64>> {
    (1usize..10, 1usize..5).prop_flat_map(|(n, j)| matrix(n, j))
}

fn pool(max_k: usize) -> impl Strategy<Value = InstancePool<f64>> {
    (1..=max_k, 1usize..6).prop_flat_map(|(k, per)| {
        (matrix(k * per, 2), Just(k), Just(per), any::<u64>())
    })
    .prop_map(|(x, k, per, seed)| {
        let mut labels: Vec<usize> = (0..k * per).map(|i| i / per + 1).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        InstancePool::new(x, labels, k).unwrap()
    })
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kde_rows_are_distributions(f in bag()) {
        let (d, _) = kde_forward(&f, &KdeConfig::default()).unwrap();
        for j in 0..d.num_features() {
            let row = d.row(j);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kde_permutation_and_duplication(f in bag(), seed in any::<u64>(), copies in 2usize..5) {
        let cfg = KdeConfig::default();
        let base = kde_forward(&f, &cfg).unwrap().0;
        let mut perm: Vec<usize> = (0..f.rows()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = kde_forward(&f.select_rows(&perm), &cfg).unwrap().0;
        let dup: Vec<usize> = (0..f.rows() * copies).map(|i| i % f.rows()).collect();
        let duplicated = kde_forward(&f.select_rows(&dup), &cfg).unwrap().0;
        prop_assert!(max_gap(base.as_slice(), permuted.as_slice()) <= 1e-9);
        prop_assert!(max_gap(base.as_slice(), duplicated.as_slice()) <= 1e-9);
    }

    #[test]
    fn kde_union_is_weighted_mixture(a in matrix(3, 2), b in matrix(5, 2)) {
        let cfg = KdeConfig::default();
        let union = Matrix::from_rows(&a.row_iter().chain(b.row_iter()).map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let da = kde_forward(&a, &cfg).unwrap().0;
        let db = kde_forward(&b, &cfg).unwrap().0;
        let mixed = mix_distributions(&[(&da, 3.0 / 8.0), (&db, 5.0 / 8.0)]).unwrap();
        let whole = kde_forward(&union, &cfg).unwrap().0;
        prop_assert!(max_gap(whole.as_slice(), mixed.as_slice()) <= 1e-9);
    }

    #[test]
    fn mlp_backward_matches_finite_differences(
        seed in any::<u64>(),
        widths in prop::collection::vec(1usize..32, 1..4),
        batch in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec: Vec<(usize, Activation)> = widths.iter().map(|&w| (w, Activation::Sigmoid)).collect();
        spec.push((3, Activation::Softmax));
        let net = MlpParams::<f64>::xavier(4, &spec, &mut rng).unwrap();
        let x = Matrix::from_vec(batch, 4, (0..batch * 4).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0).collect()).unwrap();
        let w: Vec<f64> = (0..batch * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, cache) = mlp_forward(&net, &x).unwrap();
        let up = Matrix::from_vec(batch, 3, w.clone()).unwrap();
        let grads = mlp_backward(&net, &cache, &up).unwrap();
        let analytic: Vec<f64> = grads.to_flat();
        let objective = |p: &[f64]| {
            let mut n = net.clone();
            n.set_flat(p)?;
            let (out, _) = mlp_forward(&n, &x)?;
            Ok(out.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum())
        };
        let err = grad_check(objective, &net.to_flat(), &analytic, 1e-6).unwrap();
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn mlp_forward_is_deterministic(seed in any::<u64>(), x in matrix(3, 5)) {
        let net = MlpParams::<f64>::xavier(5, &[(8, Activation::Relu), (2, Activation::Linear)], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = mlp_forward(&net, &x).unwrap().0;
        let b = mlp_forward(&net, &x).unwrap().0;
        prop_assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn loss_is_convex_combination_of_branches(seed in any::<u64>(), x in matrix(4, 3), alpha in 0.0f64..=1.0, label in 1usize..=3) {
        let mut spec = ModelSpec::<f64>::new(3);
        spec.num_features = 2;
        spec.ucc_hi = 3;
        let model = UccModel::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let t = model.onehot(label).unwrap();
        let l = model.bag_loss(&x, &t, alpha).unwrap();
        prop_assert!((l.total - (alpha * l.ucc + (1.0 - alpha) * l.reconstruction)).abs() < 1e-12);
        let p = model.predict_ucc(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_bags_have_target_count(p in pool(5), seed in any::<u64>(), size in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for target in 1..=p.num_classes().min(size) {
            match sample_bag(&p, target, size, &mut rng) {
                Ok(bag) => {
                    prop_assert_eq!(bag.len(), size);
                    prop_assert_eq!(ucc_of(&p, bag.indices()).unwrap(), target);
                }
                // classes are equal-sized, so this only fails when they cannot fill the bag
                Err(_) => prop_assert!(target * p.class_members(1).len() < size),
            }
        }
    }

    #[test]
    fn dataset_sampling_is_seeded(p in pool(3), seed in any::<u64>()) {
        let hi = p.num_classes();
        prop_assume!(p.class_members(1).len() >= hi);
        let a = make_mil_dataset(&p, 1, hi, 3, hi, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = make_mil_dataset(&p, 1, hi, 3, hi, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.bags(), b.bags());
        prop_assert!(a.label_histogram().values().all(|&c| c == 3));
    }

    #[test]
    fn accuracy_ignores_relabeling(
        pred in prop::collection::vec(0usize..5, 1..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = pred.iter().map(|&p| (p * 3 + 1) % 5).collect();
        let mut noisy = truth.clone();
        noisy.shuffle(&mut rng);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p] + 10).collect();
        prop_assert_eq!(matched_accuracy(&pred, &truth).unwrap(), 1.0);
        prop_assert_eq!(matched_accuracy(&pred, &noisy).unwrap(), matched_accuracy(&relabeled, &noisy).unwrap());
        let acc = matched_accuracy(&pred, &noisy).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn js_is_symmetric_and_bounded(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12)) {
        let (sp, sq) = raw.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        prop_assume!(sp > 0.0 && sq > 0.0);
        let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
        let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
        let pq = js_divergence(&p, &q).unwrap();
        prop_assert!((pq - js_divergence(&q, &p).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&pq));
    }

    #[test]
    fn lloyd_inertia_never_increases(x in matrix(30, 3), k in 1usize..6, seed in any::<u64>()) {
        let init = kmeans_plus_plus(&x, k, &mut ChaCha8Rng::seed_from_u64(seed));
        let run = lloyd(&x, init, 100, 0.0);
        for w in run.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0), "{:?}", run.trace);
        }
    }

    #[test]
    fn merge_blocks_are_pure_classes(p in pool(5), seed in any::<u64>()) {
        let universe: Vec<usize> = (0..p.len()).collect();
        let oracle = UccOracle::new(&p);
        let (partition, _) = cluster_by_ucc(&universe, &oracle, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(partition.len(), p.num_classes());
        for block in partition.blocks() {
            prop_assert_eq!(ucc_of(&p, block).unwrap(), 1);
        }
    }

    #[test]
    fn rate_identities_and_flip_invariance(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let pred: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let m = pixel_metrics(&pred, &truth).unwrap();
        if truth.contains(&1) {
            prop_assert_eq!(m.tpr + m.fnr, 1.0);
        }
        if truth.contains(&0) {
            prop_assert_eq!(m.tnr + m.fpr, 1.0);
        }
        let flip = |v: &[u8]| v.iter().map(|&b| 1 - b).collect::<Vec<u8>>();
        prop_assert_eq!(pixel_metrics(&flip(&pred), &flip(&truth)).unwrap().pa, m.pa);
    }

    #[test]
    fn reassemble_inverts_patchify(gh in 1usize..4, gw in 1usize..4, s in 1usize..5, c in 1usize..3, seed in any::<u64>()) {
        let (h, w) = (gh * s, gw * s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<f64> = (0..h * w * c).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let img = LabeledImage::new(h, w, c, pixels.clone(), vec![0; h * w]).unwrap();
        prop_assert_eq!(reassemble(&patchify(&img, s).unwrap()).unwrap(), pixels);
    }

    #[test]
    fn image_labels_are_monotone(a in 0usize..=100, b in 0usize..=100) {
        let (lo, hi) = (a.min(b), a.max(b));
        let img = |ones: usize| {
            let mask: Vec<u8> = (0..100).map(|i| u8::from(i < ones)).collect();
            LabeledImage::new(10, 10, 1, vec![0.5f64; 100], mask).unwrap()
        };
        let t = SegThresholds::default();
        let (l_lo, l_hi) = (label_image(&img(lo), &t), label_image(&img(hi), &t));
        use ucc_core::segmentation::ImageLabel::*;
        prop_assert!(!(l_lo == Mixed && l_hi == PureNegative));
        prop_assert!(!(l_lo == PurePositive && l_hi != PurePositive));
    }

    #[test]
    fn jacobi_pairs_satisfy_eigen_equation(n in 1usize..12, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let (vals, vecs) = jacobi_eigen(&a, 100).unwrap();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        for c in 0..n {
            for r in 0..n {
                let av: f64 = (0..n).map(|k| a[(r, k)] * vecs[(k, c)]).sum();
                prop_assert!((av - vals[c] * vecs[(r, c)]).abs() < 1e-9);
            }
        }
    }
}
