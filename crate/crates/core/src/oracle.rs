//! A perfect ucc classifier backed by hidden labels, the pair-and-merge
//! clustering it enables, and executable checks of the distribution-level
//! properties the ucc model relies on.

use std::cell::Cell;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::bags::{ucc_of, InstancePool};
use crate::error::{contract_err, Result, UccError};
use crate::kde::{kde_forward, mix_distributions, FeatureDistribution, KdeConfig};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

/// Maps a block of instances to their `n × J` features.
pub type FeatureMap<'a, T> = &'a dyn Fn(&Matrix<T>) -> Result<Matrix<T>>;

/// Maps a block of instances to a predicted ucc label.
pub type UccPredictor<'a, T> = &'a dyn Fn(&Matrix<T>) -> Result<usize>;

/// Answers the true unique class count of any subset of a pool.
#[derive(Debug)]
pub struct UccOracle<'p, T> {
    pool: &'p InstancePool<T>,
    queries: Cell<usize>,
}

impl<'p, T: Scalar> UccOracle<'p, T> {
    pub fn new(pool: &'p InstancePool<T>) -> Self {
        Self { pool, queries: Cell::new(0) }
    }

    pub fn query(&self, indices: &[usize]) -> Result<usize> {
        self.queries.set(self.queries.get() + 1);
        ucc_of(self.pool, indices)
    }

    pub fn queries(&self) -> usize {
        self.queries.get()
    }

    pub fn pool(&self) -> &'p InstancePool<T> {
        self.pool
    }
}

/// Disjoint non-empty blocks covering a universe of indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(universe: &[usize], blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen: Vec<usize> = blocks.iter().flatten().copied().collect();
        if blocks.iter().any(Vec::is_empty) {
            return contract_err("partition has an empty block");
        }
        seen.sort_unstable();
        let before = seen.len();
        seen.dedup();
        if seen.len() != before {
            return contract_err("partition blocks overlap");
        }
        let mut u = universe.to_vec();
        u.sort_unstable();
        u.dedup();
        if u != seen {
            return contract_err("partition blocks do not cover the universe");
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block id for each universe element, in the order given.
    pub fn assignment(&self, universe: &[usize]) -> Vec<usize> {
        let mut id = std::collections::HashMap::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in block {
                id.insert(i, b);
            }
        }
        universe.iter().map(|i| id[i]).collect()
    }
}

/// Statistics of one [`cluster_by_ucc`] run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeStats {
    pub passes: usize,
    pub merges: usize,
    pub queries: usize,
}

/// Pair-and-merge clustering driven by a perfect ucc oracle.
///
/// Starting from singletons, blocks are paired at random and a pair is merged
/// when the oracle says its union is pure. When a random round merges nothing,
/// every remaining pair is tried; the loop ends after such a full pass finds no
/// merge. Runs are capped at `m²` passes.
pub fn cluster_by_ucc<T: Scalar, R: Rng + ?Sized>(
    universe: &[usize],
    oracle: &UccOracle<'_, T>,
    rng: &mut R,
) -> Result<(Partition, MergeStats)> {
    if universe.is_empty() {
        return Err(UccError::EmptyBag);
    }
    let start_queries = oracle.queries();
    let mut blocks: Vec<Vec<usize>> = universe.iter().map(|&i| vec![i]).collect();
    let cap = universe.len().saturating_mul(universe.len()).max(1);
    let mut stats = MergeStats { passes: 0, merges: 0, queries: 0 };
    let mut union = Vec::new();
    let mut pure = |a: &[usize], b: &[usize]| -> Result<bool> {
        union.clear();
        union.extend_from_slice(a);
        union.extend_from_slice(b);
        Ok(oracle.query(&union)? == 1)
    };

    loop {
        if stats.passes >= cap {
            return Err(UccError::Numeric(format!("pair-and-merge did not converge in {cap} passes")));
        }
        stats.passes += 1;
        blocks.shuffle(rng);
        let mut next = Vec::with_capacity(blocks.len());
        let mut merged_any = false;
        let mut it = blocks.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) if pure(&a, &b)? => {
                    let mut m = a;
                    m.extend(b);
                    next.push(m);
                    stats.merges += 1;
                    merged_any = true;
                }
                Some(b) => {
                    next.push(a);
                    next.push(b);
                }
                None => next.push(a),
            }
        }
        blocks = next;
        if merged_any {
            continue;
        }

        stats.passes += 1;
        let mut found = None;
        'full: for i in 0..blocks.len() {
            for j in i + 1..blocks.len() {
                if pure(&blocks[i], &blocks[j])? {
                    found = Some((i, j));
                    break 'full;
                }
            }
        }
        match found {
            Some((i, j)) => {
                let b = blocks.swap_remove(j);
                blocks[i].extend(b);
                stats.merges += 1;
            }
            None => break,
        }
    }
    stats.queries = oracle.queries() - start_queries;
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks.sort();
    Ok((Partition::new(universe, blocks)?, stats))
}

fn distribution_of<T: Scalar>(
    pool: &InstancePool<T>,
    indices: &[usize],
    features: FeatureMap<'_, T>,
    kde: &KdeConfig<T>,
) -> Result<FeatureDistribution<T>> {
    let f = features(&pool.instances().select_rows(indices))?;
    Ok(kde_forward(&f, kde)?.0)
}

/// Outcome of the cross-class distinctness check on random pure pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Report {
    pub trials: usize,
    /// Pairs whose union has two classes; only these are asserted on.
    pub evaluated: usize,
    /// Same-class pairs, which do not meet the hypothesis.
    pub excluded: usize,
    pub violations: usize,
    pub min_l1: Option<f64>,
    pub threshold: f64,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Draws disjoint pure sets of `set_size` instances from two random classes
/// (possibly the same). When the oracle sees two classes in their union, the
/// two feature distributions must be more than `threshold` apart in L1.
pub fn check_prop1<T: Scalar, R: Rng + ?Sized>(
    pool: &InstancePool<T>,
    kde: &KdeConfig<T>,
    features: FeatureMap<'_, T>,
    trials: usize,
    set_size: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Prop1Report> {
    if set_size == 0 {
        return contract_err("pure sets need at least one instance");
    }
    let oracle = UccOracle::new(pool);
    let k = pool.num_classes();
    let mut report =
        Prop1Report { trials, evaluated: 0, excluded: 0, violations: 0, min_l1: None, threshold };
    for _ in 0..trials {
        let (a, b) = (rng.random_range(1..=k), rng.random_range(1..=k));
        let (sa, sb) = if a == b {
            let members = pool.class_members(a);
            if members.len() < 2 * set_size {
                return contract_err(format!("class {a} is too small for two disjoint sets of {set_size}"));
            }
            let pick: Vec<usize> = index::sample(rng, members.len(), 2 * set_size).into_iter().map(|p| members[p]).collect();
            (pick[..set_size].to_vec(), pick[set_size..].to_vec())
        } else {
            (sample_from(pool.class_members(a), set_size, rng)?, sample_from(pool.class_members(b), set_size, rng)?)
        };
        let union: Vec<usize> = sa.iter().chain(&sb).copied().collect();
        if oracle.query(&union)? != 2 {
            report.excluded += 1;
            continue;
        }
        report.evaluated += 1;
        let da = distribution_of(pool, &sa, features, kde)?;
        let db = distribution_of(pool, &sb, features, kde)?;
        let l1 = da.l1_distance(&db)?.as_f64();
        report.min_l1 = Some(report.min_l1.map_or(l1, |m| m.min(l1)));
        if !(l1 > threshold) {
            report.violations += 1;
        }
    }
    Ok(report)
}

fn sample_from<R: Rng + ?Sized>(members: &[usize], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if members.len() < n {
        return contract_err(format!("class has {} instances, need {n}", members.len()));
    }
    Ok(index::sample(rng, members.len(), n).into_iter().map(|p| members[p]).collect())
}

/// Pairwise L1 distances between the feature distributions of each class.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop3Report {
    /// `(class_a, class_b, l1)` for every unordered pair.
    pub pairs: Vec<(usize, usize, f64)>,
    pub min_l1: Option<f64>,
    pub threshold: f64,
}

impl Prop3Report {
    pub fn passed(&self) -> bool {
        self.pairs.iter().all(|&(_, _, d)| d > self.threshold)
    }
}

/// Every pair of pure per-class distributions must be more than `threshold`
/// apart. Each class is represented by up to `max_per_class` of its instances.
pub fn check_prop3<T: Scalar, R: Rng + ?Sized>(
    pool: &InstancePool<T>,
    kde: &KdeConfig<T>,
    features: FeatureMap<'_, T>,
    max_per_class: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Prop3Report> {
    let k = pool.num_classes();
    let dists = (1..=k)
        .map(|c| {
            let members = pool.class_members(c);
            let n = members.len().min(max_per_class.max(1));
            distribution_of(pool, &sample_from(members, n, rng)?, features, kde)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            pairs.push((a + 1, b + 1, dists[a].l1_distance(&dists[b])?.as_f64()));
        }
    }
    let min_l1 = pairs.iter().map(|p| p.2).reduce(f64::min);
    Ok(Prop3Report { pairs, min_l1, threshold })
}

/// Count invariance under changes of class proportions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PropB1Report {
    pub trials: usize,
    pub violations: usize,
}

impl PropB1Report {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn random_composition<R: Rng + ?Sized>(parts: usize, total: usize, caps: &[usize], rng: &mut R) -> Vec<usize> {
    let mut counts = vec![1; parts];
    for _ in parts..total {
        let open: Vec<usize> = (0..parts).filter(|&k| counts[k] < caps[k]).collect();
        counts[open[rng.random_range(0..open.len())]] += 1;
    }
    counts
}

/// Fixes a random class support, draws two bags of `bag_size` with
/// independently random class proportions over it and checks that both have
/// the support's size as their unique class count.
pub fn check_prop_b1<T: Scalar, R: Rng + ?Sized>(
    pool: &InstancePool<T>,
    trials: usize,
    bag_size: usize,
    rng: &mut R,
) -> Result<PropB1Report> {
    let k = pool.num_classes();
    let mut violations = 0;
    for _ in 0..trials {
        let u = rng.random_range(1..=k.min(bag_size.max(1)));
        let classes: Vec<usize> = index::sample(rng, k, u).into_iter().map(|c| c + 1).collect();
        let caps: Vec<usize> = classes.iter().map(|&c| pool.class_members(c).len()).collect();
        if caps.iter().sum::<usize>() < bag_size {
            return contract_err("pool too small for the requested bag size");
        }
        for _ in 0..2 {
            let counts = random_composition(u, bag_size, &caps, rng);
            let mut bag = Vec::with_capacity(bag_size);
            for (&c, &n) in classes.iter().zip(&counts) {
                bag.extend(sample_from(pool.class_members(c), n, rng)?);
            }
            if ucc_of(pool, &bag)? != u {
                violations += 1;
            }
        }
    }
    Ok(PropB1Report { trials, violations })
}

/// Equal-distribution sets and their union.
#[derive(Clone, Debug, PartialEq)]
pub struct PropB3Report {
    pub trials: usize,
    /// Largest entrywise gap between the union's distribution, the mixture and the parts.
    pub max_distribution_gap: f64,
    /// Largest `|w_ζ + w_ξ − 1|` over the mixing weights.
    pub max_weight_error: f64,
    /// Trials whose three predicted labels were not all equal.
    pub prediction_disagreements: Option<usize>,
    pub tolerance: f64,
}

impl PropB3Report {
    pub fn passed(&self) -> bool {
        self.max_distribution_gap <= self.tolerance
            && self.max_weight_error == 0.0
            && self.prediction_disagreements.is_none_or(|d| d == 0)
    }
}

/// Builds `σ_ζ` as a random bag of up to `bag_size` instances and `σ_ξ` as
/// 1 to 3 copies of the same rows, so both share one feature distribution.
/// The union's distribution, the cardinality-weighted mixture and both parts
/// must agree within `tolerance`; with a predictor, all three must get the
/// same label.
pub fn check_prop_b3<T: Scalar, R: Rng + ?Sized>(
    pool: &InstancePool<T>,
    kde: &KdeConfig<T>,
    features: FeatureMap<'_, T>,
    predict: Option<UccPredictor<'_, T>>,
    trials: usize,
    bag_size: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<PropB3Report> {
    if bag_size == 0 || bag_size > pool.len() {
        return contract_err(format!("bag size {bag_size} is not in 1..={}", pool.len()));
    }
    let mut report = PropB3Report {
        trials,
        max_distribution_gap: 0.0,
        max_weight_error: 0.0,
        prediction_disagreements: predict.map(|_| 0),
        tolerance,
    };
    for _ in 0..trials {
        let n = rng.random_range(1..=bag_size);
        let idx: Vec<usize> = index::sample(rng, pool.len(), n).into_iter().collect();
        let zeta = pool.instances().select_rows(&idx);
        let copies = rng.random_range(1..=3usize);
        let mut xi = zeta.clone();
        for _ in 1..copies {
            xi = xi.vstack(&zeta)?;
        }
        let union = zeta.vstack(&xi)?;

        let dz = kde_forward(&features(&zeta)?, kde)?.0;
        let dx = kde_forward(&features(&xi)?, kde)?.0;
        let du = kde_forward(&features(&union)?, kde)?.0;
        let total = T::from_count(union.rows());
        let wz = T::from_count(zeta.rows()) / total;
        let wx = T::from_count(xi.rows()) / total;
        report.max_weight_error = report.max_weight_error.max((wz + wx - T::one()).abs().as_f64());
        let mixed = mix_distributions(&[(&dz, wz), (&dx, wx)])?;
        let gap = [mixed.max_abs_diff(&du), mixed.max_abs_diff(&dz), dz.max_abs_diff(&dx)]
            .into_iter()
            .fold(T::zero(), |a, b| a.max(b));
        report.max_distribution_gap = report.max_distribution_gap.max(gap.as_f64());

        if let (Some(p), Some(d)) = (predict, report.prediction_disagreements.as_mut()) {
            let (a, b, c) = (p(&zeta)?, p(&xi)?, p(&union)?);
            if a != b || b != c {
                *d += 1;
            }
        }
    }
    Ok(report)
}
