//! The unique-class-count model: feature network, KDE (or mean) pooling,
//! distribution regression network and the autoencoder decoder branch.
//!
//! Loss for one bag is `α·CE(η̃, η) + (1-α)·MSE(x̃, x)`. The feature network
//! receives the α-weighted gradient that flows back through the pooling layer
//! plus the (1-α)-weighted gradient from the decoder.

use rand::Rng;

use crate::error::{contract_err, shape_err, Result, UccError};
use crate::kde::{kde_backward, kde_forward, mean_pool, mean_pool_backward, FeatureDistribution, KdeCache, KdeConfig};
use crate::ndcore::{mlp_backward, mlp_forward, Activation, GradBundle, Matrix, MlpParams};
use crate::scalar::Scalar;

/// Floor applied inside the cross-entropy logarithm.
pub const LOG_CLIP: f64 = 1e-12;

/// MIL pooling layer between the feature and distribution regression networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Kde,
    /// Averaging layer ablation.
    Mean,
}

impl Pooling {
    pub fn tag(self) -> u8 {
        match self {
            Pooling::Kde => 0,
            Pooling::Mean => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Pooling::Kde),
            1 => Some(Pooling::Mean),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kde" => Some(Pooling::Kde),
            "mean" => Some(Pooling::Mean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Kde => "kde",
            Pooling::Mean => "mean",
        }
    }
}

/// Architecture of a freshly initialized model.
#[derive(Clone, Debug)]
pub struct ModelSpec<T> {
    pub input_dim: usize,
    pub num_features: usize,
    pub feature_hidden: Vec<usize>,
    pub drn_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub kde: KdeConfig<T>,
    pub alpha: T,
    pub ucc_lo: usize,
    pub ucc_hi: usize,
    pub pooling: Pooling,
}

impl<T: Scalar> ModelSpec<T> {
    /// Desk-scale defaults for `input_dim`-dimensional instances.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            num_features: 10,
            feature_hidden: vec![32],
            drn_hidden: vec![64, 32],
            decoder_hidden: vec![32],
            kde: KdeConfig::default(),
            alpha: T::lit(0.5),
            ucc_lo: 1,
            ucc_hi: 4,
            pooling: Pooling::Kde,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UccModel<T> {
    feature_net: MlpParams<T>,
    drn_net: MlpParams<T>,
    decoder_net: MlpParams<T>,
    kde: KdeConfig<T>,
    alpha: T,
    ucc_lo: usize,
    ucc_hi: usize,
    pooling: Pooling,
}

/// Gradients for the three networks of a [`UccModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    pub feature: GradBundle<T>,
    pub drn: GradBundle<T>,
    pub decoder: GradBundle<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &UccModel<T>) -> Self {
        Self {
            feature: GradBundle::zeros_like(&model.feature_net, 0),
            drn: GradBundle::zeros_like(&model.drn_net, 0),
            decoder: GradBundle::zeros_like(&model.decoder_net, 0),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        self.feature.add_scaled(&other.feature, scale);
        self.drn.add_scaled(&other.drn, scale);
        self.decoder.add_scaled(&other.decoder, scale);
    }

    /// Flattened in the order of [`UccModel::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.feature.to_flat();
        v.extend(self.drn.to_flat());
        v.extend(self.decoder.to_flat());
        v
    }
}

/// Loss of one bag split into its two branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BagLoss<T> {
    pub total: T,
    pub ucc: T,
    pub reconstruction: T,
}

enum PoolCache<T> {
    Kde(KdeCache<T>),
    Mean(usize),
}

impl<T: Scalar> UccModel<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        feature_net: MlpParams<T>,
        drn_net: MlpParams<T>,
        decoder_net: MlpParams<T>,
        kde: KdeConfig<T>,
        alpha: T,
        ucc_lo: usize,
        ucc_hi: usize,
        pooling: Pooling,
    ) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return contract_err(format!("alpha {alpha} outside [0, 1]"));
        }
        if ucc_lo == 0 || ucc_lo > ucc_hi {
            return contract_err(format!("ucc range {ucc_lo}..={ucc_hi} is empty"));
        }
        if feature_net.output_activation() != Activation::Sigmoid {
            return contract_err("feature network must end in a sigmoid");
        }
        let j = feature_net.output_dim();
        let pooled = match pooling {
            Pooling::Kde => j * kde.num_bins(),
            Pooling::Mean => j,
        };
        if drn_net.input_dim() != pooled {
            return shape_err(format!(
                "distribution regression network takes {} inputs, pooling yields {pooled}",
                drn_net.input_dim()
            ));
        }
        if drn_net.output_dim() != ucc_hi - ucc_lo + 1 {
            return shape_err(format!(
                "distribution regression network has {} outputs for {} ucc labels",
                drn_net.output_dim(),
                ucc_hi - ucc_lo + 1
            ));
        }
        if drn_net.output_activation() != Activation::Softmax {
            return contract_err("distribution regression network must end in a softmax");
        }
        let layers = drn_net.layers();
        if !layers[..layers.len() - 1].iter().any(|l| l.activation == Activation::Relu) {
            return contract_err("distribution regression network needs a hidden relu layer");
        }
        if decoder_net.input_dim() != j || decoder_net.output_dim() != feature_net.input_dim() {
            return shape_err(format!(
                "decoder maps {} -> {}, expected {j} -> {}",
                decoder_net.input_dim(),
                decoder_net.output_dim(),
                feature_net.input_dim()
            ));
        }
        Ok(Self { feature_net, drn_net, decoder_net, kde, alpha, ucc_lo, ucc_hi, pooling })
    }

    /// Xavier-initialized model. Hidden layers use relu; the decoder output is linear.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec<T>, rng: &mut R) -> Result<Self> {
        let j = spec.num_features;
        if j == 0 || spec.input_dim == 0 {
            return contract_err("model needs at least one input and one feature");
        }
        let relu = |w: &[usize]| w.iter().map(|&n| (n, Activation::Relu)).collect::<Vec<_>>();

        let mut f = relu(&spec.feature_hidden);
        f.push((j, Activation::Sigmoid));
        let feature_net = MlpParams::xavier(spec.input_dim, &f, rng)?;

        let pooled = match spec.pooling {
            Pooling::Kde => j * spec.kde.num_bins(),
            Pooling::Mean => j,
        };
        let mut d = relu(&spec.drn_hidden);
        d.push((spec.ucc_hi.saturating_sub(spec.ucc_lo) + 1, Activation::Softmax));
        let drn_net = MlpParams::xavier(pooled, &d, rng)?;

        let mut dec = relu(&spec.decoder_hidden);
        dec.push((spec.input_dim, Activation::Linear));
        let decoder_net = MlpParams::xavier(j, &dec, rng)?;

        Self::new(feature_net, drn_net, decoder_net, spec.kde, spec.alpha, spec.ucc_lo, spec.ucc_hi, spec.pooling)
    }

    pub fn feature_net(&self) -> &MlpParams<T> {
        &self.feature_net
    }

    pub fn drn_net(&self) -> &MlpParams<T> {
        &self.drn_net
    }

    pub fn decoder_net(&self) -> &MlpParams<T> {
        &self.decoder_net
    }

    pub fn decoder_net_mut(&mut self) -> &mut MlpParams<T> {
        &mut self.decoder_net
    }

    pub fn kde(&self) -> &KdeConfig<T> {
        &self.kde
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: T) -> Result<()> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return contract_err(format!("alpha {alpha} outside [0, 1]"));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn ucc_range(&self) -> (usize, usize) {
        (self.ucc_lo, self.ucc_hi)
    }

    pub fn num_labels(&self) -> usize {
        self.ucc_hi - self.ucc_lo + 1
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn input_dim(&self) -> usize {
        self.feature_net.input_dim()
    }

    pub fn num_features(&self) -> usize {
        self.feature_net.output_dim()
    }

    /// One-hot target for `label`, indexed as `label - ucc_lo`.
    pub fn onehot(&self, label: usize) -> Result<Vec<T>> {
        if label < self.ucc_lo || label > self.ucc_hi {
            return contract_err(format!("label {label} outside {}..={}", self.ucc_lo, self.ucc_hi));
        }
        let mut v = vec![T::zero(); self.num_labels()];
        v[label - self.ucc_lo] = T::one();
        Ok(v)
    }

    fn check_instances(&self, instances: &Matrix<T>) -> Result<()> {
        if instances.rows() == 0 {
            return Err(UccError::EmptyBag);
        }
        if instances.cols() != self.input_dim() {
            return shape_err(format!(
                "instances have {} columns, model expects {}",
                instances.cols(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    /// Rows are the sigmoid features of each instance.
    pub fn extract_features(&self, instances: &Matrix<T>) -> Result<Matrix<T>> {
        if instances.cols() != self.input_dim() {
            return shape_err(format!(
                "instances have {} columns, model expects {}",
                instances.cols(),
                self.input_dim()
            ));
        }
        if instances.rows() == 0 {
            return Ok(Matrix::zeros(0, self.num_features()));
        }
        Ok(mlp_forward(&self.feature_net, instances)?.0)
    }

    /// KDE histograms of a bag's features. Defined for either pooling mode.
    pub fn feature_distribution(&self, instances: &Matrix<T>) -> Result<FeatureDistribution<T>> {
        self.check_instances(instances)?;
        let f = self.extract_features(instances)?;
        Ok(kde_forward(&f, &self.kde)?.0)
    }

    fn pool(&self, features: &Matrix<T>) -> Result<(Vec<T>, PoolCache<T>)> {
        match self.pooling {
            Pooling::Kde => {
                let (dist, cache) = kde_forward(features, &self.kde)?;
                Ok((dist.as_slice().to_vec(), PoolCache::Kde(cache)))
            }
            Pooling::Mean => Ok((mean_pool(features)?, PoolCache::Mean(features.rows()))),
        }
    }

    fn unpool(&self, cache: &PoolCache<T>, upstream: &[T]) -> Result<Matrix<T>> {
        match cache {
            PoolCache::Kde(c) => kde_backward(c, &self.kde, upstream),
            PoolCache::Mean(n) => mean_pool_backward(*n, upstream),
        }
    }

    /// Softmax over `ucc_lo..=ucc_hi` for one bag.
    pub fn predict_ucc(&self, instances: &Matrix<T>) -> Result<Vec<T>> {
        self.check_instances(instances)?;
        let features = mlp_forward(&self.feature_net, instances)?.0;
        let (pooled, _) = self.pool(&features)?;
        let input = Matrix::from_vec(1, pooled.len(), pooled)?;
        Ok(mlp_forward(&self.drn_net, &input)?.0.into_vec())
    }

    /// Arg-max label of [`Self::predict_ucc`]; ties resolve to the smaller label.
    pub fn predict_label(&self, instances: &Matrix<T>) -> Result<usize> {
        let p = self.predict_ucc(instances)?;
        let mut best = 0;
        for (k, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = k;
            }
        }
        Ok(self.ucc_lo + best)
    }

    pub fn reconstruct(&self, instances: &Matrix<T>) -> Result<Matrix<T>> {
        if instances.cols() != self.input_dim() {
            return shape_err(format!(
                "instances have {} columns, model expects {}",
                instances.cols(),
                self.input_dim()
            ));
        }
        if instances.rows() == 0 {
            return Ok(Matrix::zeros(0, self.input_dim()));
        }
        let f = mlp_forward(&self.feature_net, instances)?.0;
        Ok(mlp_forward(&self.decoder_net, &f)?.0)
    }

    fn check_target(&self, onehot: &[T], alpha: T) -> Result<()> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return contract_err(format!("alpha {alpha} outside [0, 1]"));
        }
        let ones = onehot.iter().filter(|&&v| v == T::one()).count();
        let zeros = onehot.iter().filter(|&&v| v == T::zero()).count();
        if onehot.len() != self.num_labels() || ones != 1 || ones + zeros != onehot.len() {
            return contract_err("target is not a one-hot vector over the model's ucc labels");
        }
        Ok(())
    }

    /// Loss of one bag without gradients.
    pub fn bag_loss(&self, instances: &Matrix<T>, onehot: &[T], alpha: T) -> Result<BagLoss<T>> {
        self.check_instances(instances)?;
        self.check_target(onehot, alpha)?;
        let (features, _) = mlp_forward(&self.feature_net, instances)?;
        let (pooled, _) = self.pool(&features)?;
        let (probs, _) = mlp_forward(&self.drn_net, &Matrix::from_vec(1, pooled.len(), pooled)?)?;
        let ucc = cross_entropy(probs.as_slice(), onehot);
        let (recon, _) = mlp_forward(&self.decoder_net, &features)?;
        let reconstruction = mse(&recon, instances);
        Ok(BagLoss { total: alpha * ucc + (T::one() - alpha) * reconstruction, ucc, reconstruction })
    }

    /// Loss of one bag and exact gradients for all three networks.
    pub fn bag_loss_and_grads(
        &self,
        instances: &Matrix<T>,
        onehot: &[T],
        alpha: T,
    ) -> Result<(BagLoss<T>, ModelGrads<T>)> {
        self.check_instances(instances)?;
        self.check_target(onehot, alpha)?;
        let (n, d) = instances.shape();
        let (features, feature_cache) = mlp_forward(&self.feature_net, instances)?;

        // ucc branch
        let (pooled, pool_cache) = self.pool(&features)?;
        let drn_in = Matrix::from_vec(1, pooled.len(), pooled)?;
        let (probs, drn_cache) = mlp_forward(&self.drn_net, &drn_in)?;
        let ucc = cross_entropy(probs.as_slice(), onehot);
        let clip = T::lit(LOG_CLIP);
        let d_probs: Vec<T> = probs
            .as_slice()
            .iter()
            .zip(onehot)
            .map(|(&p, &y)| if p > clip && y != T::zero() { -alpha * y / p } else { T::zero() })
            .collect();
        let drn_grads = mlp_backward(&self.drn_net, &drn_cache, &Matrix::from_vec(1, d_probs.len(), d_probs)?)?;
        let d_features_ucc = self.unpool(&pool_cache, drn_grads.input.as_slice())?;

        // autoencoder branch
        let (recon, decoder_cache) = mlp_forward(&self.decoder_net, &features)?;
        let reconstruction = mse(&recon, instances);
        let scale = (T::one() - alpha) * T::lit(2.0) / T::from_count(n);
        let mut d_recon = Matrix::zeros(n, d);
        for ((g, &r), &x) in d_recon.as_mut_slice().iter_mut().zip(recon.as_slice()).zip(instances.as_slice()) {
            *g = scale * (r - x);
        }
        let decoder_grads = mlp_backward(&self.decoder_net, &decoder_cache, &d_recon)?;

        let mut d_features = d_features_ucc;
        for (a, &b) in d_features.as_mut_slice().iter_mut().zip(decoder_grads.input.as_slice()) {
            *a = *a + b;
        }
        let feature_grads = mlp_backward(&self.feature_net, &feature_cache, &d_features)?;

        let loss = BagLoss { total: alpha * ucc + (T::one() - alpha) * reconstruction, ucc, reconstruction };
        Ok((loss, ModelGrads { feature: feature_grads, drn: drn_grads, decoder: decoder_grads }))
    }

    pub fn sgd_step(&mut self, grads: &ModelGrads<T>, lr: T) {
        self.feature_net.sgd_step(&grads.feature, lr);
        self.drn_net.sgd_step(&grads.drn, lr);
        self.decoder_net.sgd_step(&grads.decoder, lr);
    }

    pub fn num_params(&self) -> usize {
        self.feature_net.num_params() + self.drn_net.num_params() + self.decoder_net.num_params()
    }

    /// Feature, then distribution regression, then decoder parameters.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.feature_net.to_flat();
        v.extend(self.drn_net.to_flat());
        v.extend(self.decoder_net.to_flat());
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return shape_err(format!("{} values for {} parameters", flat.len(), self.num_params()));
        }
        let a = self.feature_net.num_params();
        let b = a + self.drn_net.num_params();
        self.feature_net.set_flat(&flat[..a])?;
        self.drn_net.set_flat(&flat[a..b])?;
        self.decoder_net.set_flat(&flat[b..])
    }

    pub fn cast<U: Scalar>(&self) -> UccModel<U> {
        UccModel {
            feature_net: self.feature_net.cast(),
            drn_net: self.drn_net.cast(),
            decoder_net: self.decoder_net.cast(),
            kde: self.kde.cast(),
            alpha: U::lit(self.alpha.as_f64()),
            ucc_lo: self.ucc_lo,
            ucc_hi: self.ucc_hi,
            pooling: self.pooling,
        }
    }
}

/// `-Σ y_k ln(max(p_k, 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &[T], onehot: &[T]) -> T {
    let clip = T::lit(LOG_CLIP);
    probs
        .iter()
        .zip(onehot)
        .filter(|(_, &y)| y != T::zero())
        .map(|(&p, &y)| -y * p.max(clip).ln())
        .sum()
}

/// Squared reconstruction error per instance: `1/n Σ_i ‖a_i − b_i‖²`.
pub fn mse<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let n = a.rows().max(1);
    let s: T = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    s / T::from_count(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(pooling: Pooling) -> ModelSpec<f64> {
        ModelSpec {
            input_dim: 5,
            num_features: 3,
            feature_hidden: vec![6],
            drn_hidden: vec![7],
            decoder_hidden: vec![4],
            kde: KdeConfig::default(),
            alpha: 0.5,
            ucc_lo: 1,
            ucc_hi: 3,
            pooling,
        }
    }

    fn bag(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<f64> {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn construction_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = UccModel::init(&small_spec(Pooling::Kde), &mut rng).unwrap();
        let (f, d, dec) = (m.feature_net.clone(), m.drn_net.clone(), m.decoder_net.clone());
        assert!(UccModel::new(f.clone(), d.clone(), dec.clone(), m.kde, 1.5, 1, 3, Pooling::Kde).is_err());
        assert!(UccModel::new(f.clone(), d.clone(), dec.clone(), m.kde, 0.5, 1, 4, Pooling::Kde).is_err());
        assert!(UccModel::new(f.clone(), d.clone(), dec.clone(), m.kde, 0.5, 1, 3, Pooling::Mean).is_err());
        assert!(UccModel::new(f.clone(), d, dec, m.kde, 0.5, 1, 3, Pooling::Kde).is_ok());

        let linear_drn = MlpParams::xavier(33, &[(3, Activation::Softmax)], &mut rng).unwrap();
        let r = UccModel::new(f, linear_drn, m.decoder_net.clone(), m.kde, 0.5, 1, 3, Pooling::Kde);
        assert!(matches!(r, Err(UccError::Contract(_))), "drn must be non-linear");
    }

    #[test]
    fn prediction_is_a_distribution_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = UccModel::init(&small_spec(Pooling::Kde), &mut rng).unwrap();
        let x = bag(&mut rng, 6, 5);
        let p = m.predict_ucc(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let perm = x.select_rows(&[3, 0, 5, 1, 4, 2]);
        let q = m.predict_ucc(&perm).unwrap();
        let dup = m.predict_ucc(&x.vstack(&x).unwrap()).unwrap();
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-9);
            assert!((p[k] - dup[k]).abs() < 1e-9);
        }
        assert!(matches!(m.predict_ucc(&Matrix::zeros(0, 5)), Err(UccError::EmptyBag)));
    }

    #[test]
    fn reconstruct_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = UccModel::init(&small_spec(Pooling::Kde), &mut rng).unwrap();
        let x = bag(&mut rng, 4, 5);
        let r = m.reconstruct(&x).unwrap();
        assert_eq!(r.shape(), (4, 5));
        assert!(r.is_finite());
        assert!(m.reconstruct(&Matrix::zeros(4, 6)).is_err());
        let zeros = vec![0.0; m.decoder_net.num_params()];
        m.decoder_net_mut().set_flat(&zeros).unwrap();
        assert!(m.reconstruct(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn features_are_in_unit_interval_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = UccModel::init(&small_spec(Pooling::Kde), &mut rng).unwrap();
        let x = bag(&mut rng, 20, 5).map(|v| v * 10.0 - 5.0);
        let f = m.extract_features(&x).unwrap();
        assert!(f.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(f, m.extract_features(&x).unwrap());
    }

    #[test]
    fn alpha_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = UccModel::init(&small_spec(Pooling::Kde), &mut rng).unwrap();
        let x = bag(&mut rng, 5, 5);
        let y = m.onehot(2).unwrap();

        let (l1, g1) = m.bag_loss_and_grads(&x, &y, 1.0).unwrap();
        assert_eq!(l1.total, l1.ucc);
        assert!(g1.decoder.to_flat().iter().all(|&v| v == 0.0));

        let (l0, g0) = m.bag_loss_and_grads(&x, &y, 0.0).unwrap();
        assert_eq!(l0.total, l0.reconstruction);
        assert!(g0.drn.to_flat().iter().all(|&v| v == 0.0));

        let (lh, _) = m.bag_loss_and_grads(&x, &y, 0.5).unwrap();
        assert!((lh.total - (0.5 * l1.ucc + 0.5 * l0.reconstruction)).abs() < 1e-12);

        assert!(matches!(m.bag_loss_and_grads(&x, &y, 1.2), Err(UccError::Contract(_))));
        assert!(m.bag_loss_and_grads(&x, &[1.0, 1.0, 0.0], 0.5).is_err());
        assert!(m.onehot(4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for pooling in [Pooling::Kde, Pooling::Mean] {
            for (seed, alpha) in [(5, 0.0), (6, 0.5), (7, 1.0)] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = UccModel::init(&small_spec(pooling), &mut rng).unwrap();
                let x = bag(&mut rng, 4, 5);
                let y = m.onehot(3).unwrap();
                let (_, g) = m.bag_loss_and_grads(&x, &y, alpha).unwrap();
                let err = grad_check(
                    |p: &[f64]| {
                        let mut q = m.clone();
                        q.set_flat(p)?;
                        Ok(q.bag_loss(&x, &y, alpha)?.total)
                    },
                    &m.to_flat(),
                    &g.to_flat(),
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{pooling:?} alpha {alpha}: {err}");
            }
        }
    }

    #[test]
    fn feature_gradient_is_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = UccModel::init(&small_spec(Pooling::Kde), &mut rng).unwrap();
        let x = bag(&mut rng, 6, 5);
        let y = m.onehot(1).unwrap();
        let g1 = m.bag_loss_and_grads(&x, &y, 1.0).unwrap().1.feature.to_flat();
        let g0 = m.bag_loss_and_grads(&x, &y, 0.0).unwrap().1.feature.to_flat();
        for alpha in [0.2, 0.5, 0.9] {
            let ga = m.bag_loss_and_grads(&x, &y, alpha).unwrap().1.feature.to_flat();
            for k in 0..ga.len() {
                assert!((ga[k] - (alpha * g1[k] + (1.0 - alpha) * g0[k])).abs() < 1e-9);
            }
        }
    }
}
