//! Labeled instance pools and bags sampled with a prescribed unique class count.
//!
//! Instance labels are hidden from the model: they are only used here to
//! build bags and later to score clusterings.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{contract_err, shape_err, Result, UccError};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

/// Instances (`m × d`) with hidden class labels in `1..=K`.
#[derive(Clone, Debug)]
pub struct InstancePool<T> {
    instances: Matrix<T>,
    labels: Vec<usize>,
    num_classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl<T: Scalar> InstancePool<T> {
    pub fn new(instances: Matrix<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != instances.rows() {
            return shape_err(format!("{} labels for {} instances", labels.len(), instances.rows()));
        }
        if num_classes == 0 {
            return contract_err("a pool needs at least one class");
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 || l > num_classes {
                return contract_err(format!("instance {i} has label {l}, expected 1..={num_classes}"));
            }
            by_class[l - 1].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return contract_err(format!("class {} has no instances", c + 1));
        }
        Ok(Self { instances, labels, num_classes, by_class })
    }

    pub fn instances(&self) -> &Matrix<T> {
        &self.instances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances.cols()
    }

    /// Indices of the instances of class `label` (1-based).
    pub fn class_members(&self, label: usize) -> &[usize] {
        &self.by_class[label - 1]
    }

    /// Stratified split; every class keeps at least one instance on each side.
    pub fn split<R: Rng + ?Sized>(&self, holdout_fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout_fraction) || holdout_fraction == 0.0 {
            return contract_err(format!("holdout fraction {holdout_fraction} not in (0, 1)"));
        }
        let mut keep = Vec::new();
        let mut hold = Vec::new();
        for members in &self.by_class {
            if members.len() < 2 {
                return contract_err("cannot split a class with a single instance");
            }
            let mut shuffled = members.clone();
            shuffled.shuffle(rng);
            let h = ((members.len() as f64 * holdout_fraction).round() as usize).clamp(1, members.len() - 1);
            hold.extend_from_slice(&shuffled[..h]);
            keep.extend_from_slice(&shuffled[h..]);
        }
        keep.sort_unstable();
        hold.sort_unstable();
        Ok((self.subset(&keep)?, self.subset(&hold)?))
    }

    fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.instances.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }
}

/// Number of distinct labels among `indices`.
pub fn ucc_of<T: Scalar>(pool: &InstancePool<T>, indices: &[usize]) -> Result<usize> {
    if indices.is_empty() {
        return Err(UccError::EmptyBag);
    }
    let mut seen = BTreeSet::new();
    for &i in indices {
        let Some(&l) = pool.labels.get(i) else {
            return contract_err(format!("index {i} out of range for a pool of {}", pool.len()));
        };
        seen.insert(l);
    }
    Ok(seen.len())
}

/// Indices into a pool together with their unique class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bag {
    indices: Vec<usize>,
    ucc: usize,
}

impl Bag {
    /// Checks the stated count against the pool's labels.
    pub fn new<T: Scalar>(pool: &InstancePool<T>, indices: Vec<usize>, ucc: usize) -> Result<Self> {
        let actual = ucc_of(pool, &indices)?;
        if actual != ucc {
            return contract_err(format!("bag claims ucc {ucc} but holds {actual} classes"));
        }
        Ok(Self { indices, ucc })
    }

    pub fn from_indices<T: Scalar>(pool: &InstancePool<T>, indices: Vec<usize>) -> Result<Self> {
        let ucc = ucc_of(pool, &indices)?;
        Ok(Self { indices, ucc })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ucc(&self) -> usize {
        self.ucc
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Materialized bag contents as seen by the model.
#[derive(Clone, Debug)]
pub struct BagSample<T> {
    pub instances: Matrix<T>,
    pub ucc: usize,
}

/// Draws `bag_size` distinct instances covering exactly `target_ucc` classes.
///
/// Classes are chosen uniformly; each chosen class gets one slot and the rest
/// are assigned uniformly among chosen classes that still have instances left.
pub fn sample_bag<T: Scalar, R: Rng + ?Sized>(
    pool: &InstancePool<T>,
    target_ucc: usize,
    bag_size: usize,
    rng: &mut R,
) -> Result<Bag> {
    if target_ucc == 0 || target_ucc > pool.num_classes || target_ucc > bag_size {
        return contract_err(format!(
            "cannot sample ucc {target_ucc} with {} classes and bag size {bag_size}",
            pool.num_classes
        ));
    }
    let classes: Vec<usize> = index::sample(rng, pool.num_classes, target_ucc).into_iter().collect();
    let capacity: Vec<usize> = classes.iter().map(|&c| pool.by_class[c].len()).collect();
    if capacity.iter().sum::<usize>() < bag_size {
        return contract_err(format!(
            "chosen classes hold {} instances, bag needs {bag_size}",
            capacity.iter().sum::<usize>()
        ));
    }
    let mut counts = vec![1usize; target_ucc];
    for _ in target_ucc..bag_size {
        let open: Vec<usize> = (0..target_ucc).filter(|&k| counts[k] < capacity[k]).collect();
        let k = open[rng.random_range(0..open.len())];
        counts[k] += 1;
    }
    let mut indices = Vec::with_capacity(bag_size);
    for (&c, &count) in classes.iter().zip(&counts) {
        let members = &pool.by_class[c];
        indices.extend(index::sample(rng, members.len(), count).into_iter().map(|p| members[p]));
    }
    indices.shuffle(rng);
    Ok(Bag { indices, ucc: target_ucc })
}

/// The bag-level training set: bags over one pool.
#[derive(Clone, Debug)]
pub struct MilDataset<'p, T> {
    pool: &'p InstancePool<T>,
    bags: Vec<Bag>,
}

impl<'p, T: Scalar> MilDataset<'p, T> {
    pub fn new(pool: &'p InstancePool<T>, bags: Vec<Bag>) -> Result<Self> {
        for (k, bag) in bags.iter().enumerate() {
            if bag.indices.iter().any(|&i| i >= pool.len()) {
                return contract_err(format!("bag {k} indexes outside the pool"));
            }
        }
        Ok(Self { pool, bags })
    }

    pub fn pool(&self) -> &'p InstancePool<T> {
        self.pool
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn label_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut h = std::collections::BTreeMap::new();
        for b in &self.bags {
            *h.entry(b.ucc).or_insert(0) += 1;
        }
        h
    }

    /// Copies each bag's instance rows out of the pool.
    pub fn materialize(&self) -> Vec<BagSample<T>> {
        self.bags
            .iter()
            .map(|b| BagSample { instances: self.pool.instances.select_rows(&b.indices), ucc: b.ucc })
            .collect()
    }
}

/// `bags_per_label` bags for every label in `ucc_lo..=ucc_hi`, grouped by label.
pub fn make_mil_dataset<'p, T: Scalar, R: Rng + ?Sized>(
    pool: &'p InstancePool<T>,
    ucc_lo: usize,
    ucc_hi: usize,
    bags_per_label: usize,
    bag_size: usize,
    rng: &mut R,
) -> Result<MilDataset<'p, T>> {
    if ucc_lo == 0 || ucc_lo > ucc_hi {
        return contract_err(format!("ucc range {ucc_lo}..={ucc_hi} is empty"));
    }
    if ucc_hi > pool.num_classes || ucc_hi > bag_size {
        return contract_err(format!(
            "ucc {ucc_hi} is infeasible with {} classes and bag size {bag_size}",
            pool.num_classes
        ));
    }
    let mut bags = Vec::with_capacity((ucc_hi - ucc_lo + 1) * bags_per_label);
    for label in ucc_lo..=ucc_hi {
        for _ in 0..bags_per_label {
            bags.push(sample_bag(pool, label, bag_size, rng)?);
        }
    }
    MilDataset::new(pool, bags)
}
