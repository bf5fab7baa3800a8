use rand::Rng;

use crate::error::{contract_err, shape_err, Result, UccError};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Linear,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "linear" => Activation::Linear,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }
}

/// One dense layer: `activation(input · weight + bias)`, `weight` is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> MlpParams<T> {
    /// Validates that layer dimensions chain and that softmax only appears last.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return contract_err("an MLP needs at least one layer");
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return shape_err(format!(
                    "layer {k}: bias length {} but {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                ));
            }
            if layer.activation == Activation::Softmax && k + 1 != layers.len() {
                return contract_err(format!("layer {k}: softmax is only allowed as the final activation"));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.in_dim() != layer.out_dim() {
                    return shape_err(format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        layer.out_dim(),
                        k + 1,
                        next.in_dim()
                    ));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Xavier-uniform weights, zero biases. `spec` lists `(width, activation)` per layer.
    pub fn xavier<R: Rng + ?Sized>(input_dim: usize, spec: &[(usize, Activation)], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for &(fan_out, activation) in spec {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-bound..=bound)))
                .collect();
            layers.push(Layer {
                weight: Matrix::from_vec(fan_in, fan_out, data)?,
                bias: vec![T::zero(); fan_out],
                activation,
            });
            fan_in = fan_out;
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return shape_err(format!("{} values for {} parameters", flat.len(), self.num_params()));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `self -= lr * grads`.
    pub fn sgd_step(&mut self, grads: &GradBundle<T>, lr: T) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in l.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                *w = *w - lr * gw;
            }
            for (b, &gb) in l.bias.iter_mut().zip(&g.bias) {
                *b = *b - lr * gb;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|&b| U::lit(b.as_f64())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    input: Matrix<T>,
    output: Matrix<T>,
}

/// Per-layer inputs and post-activation outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> MlpCache<T> {
    pub fn input(&self) -> &Matrix<T> {
        &self.layers[0].input
    }

    pub fn output(&self) -> &Matrix<T> {
        &self.layers[self.layers.len() - 1].output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Gradients for every layer of an [`MlpParams`] plus the gradient with respect to its input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle<T> {
    pub layers: Vec<LayerGrad<T>>,
    pub input: Matrix<T>,
}

impl<T: Scalar> GradBundle<T> {
    pub fn zeros_like(params: &MlpParams<T>, batch: usize) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![T::zero(); l.out_dim()],
                })
                .collect(),
            input: Matrix::zeros(batch, params.input_dim()),
        }
    }

    /// Parameter gradients flattened in the order of [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// `self += scale * other` over the parameter gradients. The input gradient is left alone.
    pub fn add_scaled(&mut self, other: &GradBundle<T>, scale: T) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x = *x + scale * y;
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + scale * y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_zero()) && self.input.as_slice().iter().all(|x| x.is_zero())
    }

    pub fn is_congruent(&self, params: &MlpParams<T>) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len()
            })
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn apply_activation<T: Scalar>(z: &mut Matrix<T>, act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => {
            for x in z.as_mut_slice() {
                if *x < T::zero() {
                    *x = T::zero();
                }
            }
        }
        Activation::Sigmoid => {
            for x in z.as_mut_slice() {
                *x = sigmoid(*x);
            }
        }
        Activation::Softmax => {
            for i in 0..z.rows() {
                let row = z.row_mut(i);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total = total + *x;
                }
                for x in row.iter_mut() {
                    *x = *x / total;
                }
            }
        }
    }
}

/// Runs the network on a `batch × d_in` input, keeping what the backward pass needs.
pub fn mlp_forward<T: Scalar>(params: &MlpParams<T>, input: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
    if input.cols() != params.input_dim() {
        return shape_err(format!(
            "input has {} columns, network expects {}",
            input.cols(),
            params.input_dim()
        ));
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut current = input.clone();
    for layer in &params.layers {
        let mut z = current.matmul(&layer.weight)?;
        for i in 0..z.rows() {
            for (x, &b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *x = *x + b;
            }
        }
        apply_activation(&mut z, layer.activation);
        caches.push(LayerCache { input: current, output: z.clone() });
        current = z;
    }
    if !current.is_finite() {
        return Err(UccError::Numeric("non-finite network output".into()));
    }
    Ok((current, MlpCache { layers: caches }))
}

/// Reverse-mode gradients of `sum(upstream ⊙ output)` with respect to every parameter and the input.
pub fn mlp_backward<T: Scalar>(
    params: &MlpParams<T>,
    cache: &MlpCache<T>,
    upstream: &Matrix<T>,
) -> Result<GradBundle<T>> {
    if cache.layers.len() != params.layers.len() {
        return shape_err(format!(
            "cache has {} layers, network has {}",
            cache.layers.len(),
            params.layers.len()
        ));
    }
    for (k, (c, l)) in cache.layers.iter().zip(&params.layers).enumerate() {
        if c.input.cols() != l.in_dim() || c.output.cols() != l.out_dim() {
            return shape_err(format!("cache for layer {k} does not match the network"));
        }
    }
    let batch = cache.layers[0].input.rows();
    if upstream.shape() != (batch, params.output_dim()) {
        return shape_err(format!(
            "upstream is {}x{}, output is {}x{}",
            upstream.rows(),
            upstream.cols(),
            batch,
            params.output_dim()
        ));
    }

    let mut layer_grads = Vec::with_capacity(params.layers.len());
    let mut delta = upstream.clone();
    for (layer, c) in params.layers.iter().zip(&cache.layers).rev() {
        let y = &c.output;
        match layer.activation {
            Activation::Linear => {}
            Activation::Relu => {
                for (d, &o) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (d, &o) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *d = *d * o * (T::one() - o);
                }
            }
            Activation::Softmax => {
                for i in 0..delta.rows() {
                    let yr = y.row(i);
                    let dot: T = delta.row(i).iter().zip(yr).map(|(&d, &p)| d * p).sum();
                    for (d, &p) in delta.row_mut(i).iter_mut().zip(yr) {
                        *d = p * (*d - dot);
                    }
                }
            }
        }
        // dW = inputᵀ · delta, db = column sums of delta, dX = delta · Wᵀ
        let (in_dim, out_dim) = layer.weight.shape();
        let mut dw = Matrix::zeros(in_dim, out_dim);
        let mut db = vec![T::zero(); out_dim];
        let mut dx = Matrix::zeros(batch, in_dim);
        for i in 0..batch {
            let d = delta.row(i);
            for (b, &g) in db.iter_mut().zip(d) {
                *b = *b + g;
            }
            let xi = c.input.row(i);
            for (k, &xk) in xi.iter().enumerate() {
                let wrow = layer.weight.row(k);
                let mut acc = T::zero();
                for (o, &g) in d.iter().enumerate() {
                    acc = acc + g * wrow[o];
                }
                dx[(i, k)] = acc;
                if xk != T::zero() {
                    for (gw, &g) in dw.row_mut(k).iter_mut().zip(d) {
                        *gw = *gw + xk * g;
                    }
                }
            }
        }
        layer_grads.push(LayerGrad { weight: dw, bias: db });
        delta = dx;
    }
    layer_grads.reverse();
    Ok(GradBundle { layers: layer_grads, input: delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{central_difference, grad_check};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_identity() -> MlpParams<f64> {
        MlpParams::new(vec![Layer {
            weight: Matrix::identity(2),
            bias: vec![0.0; 2],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let (y, _) = mlp_forward(&linear_identity(), &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_input_relu_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::<f64>::xavier(3, &[(5, Activation::Relu), (4, Activation::Relu)], &mut rng).unwrap();
        let (y, _) = mlp_forward(&p, &Matrix::zeros(2, 3)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_forward_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MlpParams::<f64>::xavier(2, &[(3, Activation::Relu), (2, Activation::Linear)], &mut rng).unwrap();
        let x = [0.3, -0.7];
        let (y, _) = mlp_forward(&p, &Matrix::from_vec(1, 2, x.to_vec()).unwrap()).unwrap();

        let l0 = &p.layers()[0];
        let l1 = &p.layers()[1];
        let mut hidden = [0.0; 3];
        for o in 0..3 {
            let mut z = l0.bias[o];
            for k in 0..2 {
                z += x[k] * l0.weight[(k, o)];
            }
            hidden[o] = if z > 0.0 { z } else { 0.0 };
        }
        for o in 0..2 {
            let mut z = l1.bias[o];
            for k in 0..3 {
                z += hidden[k] * l1.weight[(k, o)];
            }
            assert!((y[(0, o)] - z).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = linear_identity();
        assert!(matches!(mlp_forward(&p, &Matrix::zeros(1, 3)), Err(UccError::Shape(_))));
        let (_, cache) = mlp_forward(&p, &Matrix::zeros(2, 2)).unwrap();
        assert!(mlp_backward(&p, &cache, &Matrix::zeros(1, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let other = MlpParams::<f64>::xavier(2, &[(3, Activation::Relu), (2, Activation::Linear)], &mut rng).unwrap();
        assert!(mlp_backward(&other, &cache, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn softmax_must_be_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = MlpParams::<f64>::xavier(2, &[(3, Activation::Softmax), (2, Activation::Linear)], &mut rng);
        assert!(matches!(r, Err(UccError::Contract(_))));
    }

    #[test]
    fn scalar_chain_rule() {
        let p = MlpParams::new(vec![Layer {
            weight: Matrix::from_vec(1, 1, vec![2.5]).unwrap(),
            bias: vec![0.1],
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = Matrix::from_vec(1, 1, vec![-1.5]).unwrap();
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let g = mlp_backward(&p, &cache, &Matrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(g.layers[0].weight[(0, 0)], -1.5);
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(g.input[(0, 0)], 2.5);
    }

    #[test]
    fn zero_upstream_gives_zero_bundle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::<f64>::xavier(4, &[(6, Activation::Sigmoid), (3, Activation::Softmax)], &mut rng).unwrap();
        let x = Matrix::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let g = mlp_backward(&p, &cache, &Matrix::zeros(2, 3)).unwrap();
        assert!(g.is_zero());
        assert!(g.is_congruent(&p));
    }

    #[test]
    fn three_layer_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::<f64>::xavier(
            3,
            &[(5, Activation::Sigmoid), (4, Activation::Relu), (3, Activation::Softmax)],
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.2, -0.4, 0.9, 1.1, 0.3, -0.8]).unwrap();
        let up = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let objective = |q: &MlpParams<f64>, x: &Matrix<f64>| -> f64 {
            let (y, _) = mlp_forward(q, x).unwrap();
            y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let g = mlp_backward(&p, &cache, &up).unwrap();

        let flat = p.to_flat();
        let err = grad_check(
            |v: &[f64]| {
                let mut q = p.clone();
                q.set_flat(v).unwrap();
                Ok(objective(&q, &x))
            },
            &flat,
            &g.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "param grad err {err}");

        let xerr = grad_check(
            |v: &[f64]| Ok(objective(&p, &Matrix::from_vec(2, 3, v.to_vec()).unwrap())),
            x.as_slice(),
            g.input.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(xerr < 1e-6, "input grad err {xerr}");
        let fd = central_difference(|v: &[f64]| Ok(v[0] * v[0]), &[3.0], 1e-4).unwrap();
        assert!((fd[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn xavier_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::<f64>::xavier(17, &[(9, Activation::Relu), (30, Activation::Linear)], &mut rng).unwrap();
        for l in p.layers() {
            let bound = (6.0 / (l.in_dim() + l.out_dim()) as f64).sqrt();
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::<f32>::xavier(3, &[(4, Activation::Relu), (2, Activation::Softmax)], &mut rng).unwrap();
        let (y, cache) = mlp_forward(&p, &Matrix::filled(1, 3, 0.5f32)).unwrap();
        assert!((y.as_slice().iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let g = mlp_backward(&p, &cache, &Matrix::filled(1, 2, 1.0f32)).unwrap();
        assert!(g.is_congruent(&p));
    }
}
