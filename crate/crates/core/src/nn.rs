//! Dense feed-forward layers with hand-written backpropagation.
//!
//! A [`DenseLayer`] computes `f(x · W_effᵀ + b)` for a batch `x` stored one
//! sample per row. `W_eff` is the raw weight matrix, except that monotone
//! layers pass some or all raw weights through an element-wise `exp` first:
//!
//! * [`WeightConstraint::MonotoneInputs`] exponentiates the columns of the
//!   masked input features only (first layer of a monotone network);
//! * [`WeightConstraint::Positive`] exponentiates the whole matrix (every
//!   later layer), so positivity of the effective weights carries the
//!   monotonicity through the network.
//!
//! Biases are never exponentiated. With a nondecreasing activation the
//! network output is then nondecreasing in every masked input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => S::one() / (S::one() + (-z).exp()),
            Activation::Relu => z.max(S::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation `z`. ReLU uses 0 at 0.
    #[inline]
    pub fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                S::one() - t * t
            }
            Activation::Sigmoid => {
                let s = S::one() / (S::one() + (-z).exp());
                s * (S::one() - s)
            }
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }

    pub fn all() -> [Activation; 4] {
        [
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Relu,
            Activation::Identity,
        ]
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "mask")]
pub enum WeightConstraint {
    #[default]
    None,
    /// `exp` on the weight columns of the flagged input features.
    MonotoneInputs(Vec<bool>),
    /// `exp` on every weight.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`, zero biases.
    #[default]
    XavierUniform,
    /// `U(−a, a)` with `a = √(3 / fan_in)`, zero biases.
    LecunUniform,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScheme::LecunUniform => (3.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Raw parameters of one layer: weights `out × in` and a bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
}

/// Draws parameters for consecutive `widths` (input width first).
pub fn init_params<S: Scalar>(widths: &[usize], rng: &mut Rng, scheme: InitScheme) -> Vec<LayerParams<S>> {
    widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = scheme.bound(fan_in, fan_out);
            LayerParams {
                weights: Matrix::from_fn(fan_out, fan_in, |_, _| S::of(rng.uniform(-a, a))),
                bias: vec![S::zero(); fan_out],
            }
        })
        .collect()
}

pub fn parameter_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone)]
struct Cache<S> {
    input: Matrix<S>,
    pre_activation: Matrix<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients<S> {
    pub input: Matrix<S>,
    /// Gradient with respect to the raw (pre-`exp`) weights.
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct DenseLayer<S> {
    weights: Matrix<S>,
    bias: Vec<S>,
    activation: Activation,
    constraint: WeightConstraint,
    effective: Option<Matrix<S>>,
    cache: Option<Cache<S>>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(params: LayerParams<S>, activation: Activation, constraint: WeightConstraint) -> Result<Self> {
        let (out, inp) = params.weights.shape();
        if params.bias.len() != out {
            return Err(Error::shape("DenseLayer::new", (out, inp), (params.bias.len(), 1)));
        }
        if let WeightConstraint::MonotoneInputs(mask) = &constraint {
            if mask.len() != inp {
                return Err(Error::shape("DenseLayer::new mask", (out, inp), (1, mask.len())));
            }
        }
        let mut layer = Self {
            weights: params.weights,
            bias: params.bias,
            activation,
            constraint,
            effective: None,
            cache: None,
        };
        layer.refresh();
        Ok(layer)
    }

    pub fn plain(params: LayerParams<S>, activation: Activation) -> Result<Self> {
        Self::new(params, activation, WeightConstraint::None)
    }

    pub fn input_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn constraint(&self) -> &WeightConstraint {
        &self.constraint
    }

    pub fn weights(&self) -> &Matrix<S> {
        &self.weights
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    /// Weights as used in the affine map, after any `exp`.
    pub fn effective_weights(&self) -> &Matrix<S> {
        self.effective.as_ref().unwrap_or(&self.weights)
    }

    fn is_constrained(&self, col: usize) -> bool {
        match &self.constraint {
            WeightConstraint::None => false,
            WeightConstraint::MonotoneInputs(mask) => mask[col],
            WeightConstraint::Positive => true,
        }
    }

    /// Recomputes the effective weights; must follow any raw weight edit.
    fn refresh(&mut self) {
        if self.constraint == WeightConstraint::None {
            self.effective = None;
            return;
        }
        let cols = self.weights.cols();
        let mut eff = self.weights.clone();
        for (idx, w) in eff.as_mut_slice().iter_mut().enumerate() {
            if self.is_constrained(idx % cols) {
                *w = w.exp();
            }
        }
        self.effective = Some(eff);
    }

    fn affine(&self, batch: &Matrix<S>) -> Result<Matrix<S>> {
        if batch.cols() != self.input_width() {
            return Err(Error::shape("DenseLayer::forward", batch.shape(), self.weights.shape()));
        }
        let mut z = batch.matmul_transposed(self.effective_weights())?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }

    /// Forward pass that keeps what `backward` needs.
    pub fn forward(&mut self, batch: &Matrix<S>) -> Result<Matrix<S>> {
        let z = self.affine(batch)?;
        let act = self.activation;
        let out = z.map(|v| act.apply(v));
        self.cache = Some(Cache {
            input: batch.clone(),
            pre_activation: z,
        });
        Ok(out)
    }

    /// Forward pass without caching; usable on a shared layer.
    pub fn infer(&self, batch: &Matrix<S>) -> Result<Matrix<S>> {
        let act = self.activation;
        Ok(self.affine(batch)?.map(|v| act.apply(v)))
    }

    pub fn backward(&mut self, grad_out: &Matrix<S>) -> Result<LayerGradients<S>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("DenseLayer::backward called before forward".into()))?;
        if grad_out.shape() != cache.pre_activation.shape() {
            return Err(Error::shape(
                "DenseLayer::backward",
                grad_out.shape(),
                cache.pre_activation.shape(),
            ));
        }
        let act = self.activation;
        let grad_z = grad_out.zip_map(&cache.pre_activation, |g, z| g * act.derivative(z))?;
        let mut grad_w = grad_z.transposed_matmul(&cache.input)?;
        let grad_b = grad_z.column_sums();
        let grad_in = grad_z.matmul(self.effective_weights())?;
        if let Some(eff) = &self.effective {
            // d exp(w) / dw = exp(w)
            let cols = grad_w.cols();
            for (idx, (g, &e)) in grad_w.as_mut_slice().iter_mut().zip(eff.as_slice()).enumerate() {
                if self.is_constrained(idx % cols) {
                    *g *= e;
                }
            }
        }
        Ok(LayerGradients {
            input: grad_in,
            weights: grad_w,
            bias: grad_b,
        })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Gradients for every parameter tensor of an [`Mlp`], in
/// [`Mlp::param_tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> Vec<S> {
        self.tensors.iter().flatten().copied().collect()
    }
}

/// Layer widths and activations of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Marks input features that the output must be nondecreasing in. When
    /// present, the first layer exponentiates those columns and every later
    /// layer is fully positive.
    pub monotone_inputs: Option<Vec<bool>>,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {:?}", self.widths)));
        }
        if let Some(mask) = &self.monotone_inputs {
            if mask.len() != self.widths[0] {
                return Err(Error::Config(format!(
                    "monotone mask has {} entries for {} inputs",
                    mask.len(),
                    self.widths[0]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<S> {
    layers: Vec<DenseLayer<S>>,
    architecture: Architecture,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(architecture: Architecture, rng: &mut Rng, scheme: InitScheme) -> Result<Self> {
        architecture.validate()?;
        let params = init_params(&architecture.widths, rng, scheme);
        Self::from_params(architecture, params)
    }

    pub fn from_params(architecture: Architecture, params: Vec<LayerParams<S>>) -> Result<Self> {
        architecture.validate()?;
        if params.len() != architecture.widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} parameter sets for {} layers",
                params.len(),
                architecture.widths.len() - 1
            )));
        }
        let last = params.len() - 1;
        let mut layers = Vec::with_capacity(params.len());
        for (k, p) in params.into_iter().enumerate() {
            let expected = (architecture.widths[k + 1], architecture.widths[k]);
            if p.weights.shape() != expected {
                return Err(Error::shape("Mlp::from_params", p.weights.shape(), expected));
            }
            let activation = if k == last {
                architecture.output_activation
            } else {
                architecture.hidden_activation
            };
            let constraint = match (&architecture.monotone_inputs, k) {
                (None, _) => WeightConstraint::None,
                (Some(mask), 0) => WeightConstraint::MonotoneInputs(mask.clone()),
                (Some(_), _) => WeightConstraint::Positive,
            };
            layers.push(DenseLayer::new(p, activation, constraint)?);
        }
        Ok(Self { layers, architecture })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.architecture.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.architecture.widths.last().expect("validated widths")
    }

    pub fn forward(&mut self, batch: &Matrix<S>) -> Result<Matrix<S>> {
        let mut x = self.layers[0].forward(batch)?;
        for layer in &mut self.layers[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn infer(&self, batch: &Matrix<S>) -> Result<Matrix<S>> {
        let mut x = self.layers[0].infer(batch)?;
        for layer in &self.layers[1..] {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Backpropagates `grad_out` (gradient of the loss w.r.t. the output of
    /// the last `forward`). Returns parameter gradients and the gradient
    /// with respect to the network input.
    pub fn backward(&mut self, grad_out: &Matrix<S>) -> Result<(Gradients<S>, Matrix<S>)> {
        let mut tensors = vec![Vec::new(); 2 * self.layers.len()];
        let mut grad = grad_out.clone();
        for (k, layer) in self.layers.iter_mut().enumerate().rev() {
            let g = layer.backward(&grad)?;
            tensors[2 * k] = g.weights.into_vec();
            tensors[2 * k + 1] = g.bias;
            grad = g.input;
        }
        Ok((Gradients { tensors }, grad))
    }

    pub fn param_count(&self) -> usize {
        parameter_count(&self.architecture.widths)
    }

    /// Parameter tensors in order: weights then bias, layer by layer.
    pub fn param_tensors(&self) -> Vec<&[S]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn flat_params(&self) -> Vec<S> {
        self.param_tensors().into_iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                "Mlp::set_flat_params",
                (flat.len(), 1),
                (self.param_count(), 1),
            ));
        }
        let mut offset = 0;
        self.update(|tensor, _| {
            let n = tensor.len();
            tensor.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::clear_cache);
    }

    /// Visits every mutable parameter tensor with its index, then refreshes
    /// the effective weights.
    pub fn update(&mut self, mut f: impl FnMut(&mut [S], usize)) {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            f(layer.weights.as_mut_slice(), 2 * k);
            f(&mut layer.bias, 2 * k + 1);
            layer.refresh();
            layer.clear_cache();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(out: usize, inp: usize, rng: &mut Rng, scale: f64) -> LayerParams<f64> {
        LayerParams {
            weights: Matrix::from_fn(out, inp, |_, _| rng.uniform(-scale, scale)),
            bias: (0..out).map(|_| rng.uniform(-scale, scale)).collect(),
        }
    }

    /// Per-neuron scalar loop, written independently of the matrix code.
    fn scalar_forward(layer: &DenseLayer<f64>, x: &Matrix<f64>) -> Matrix<f64> {
        let w = layer.weights();
        Matrix::from_fn(x.rows(), layer.output_width(), |n, o| {
            let mut z = layer.bias()[o];
            for i in 0..layer.input_width() {
                let raw = w.get(o, i);
                let eff = match layer.constraint() {
                    WeightConstraint::None => raw,
                    WeightConstraint::MonotoneInputs(mask) if mask[i] => raw.exp(),
                    WeightConstraint::MonotoneInputs(_) => raw,
                    WeightConstraint::Positive => raw.exp(),
                };
                z += eff * x.get(n, i);
            }
            layer.activation().apply(z)
        })
    }

    fn constraints(inp: usize, rng: &mut Rng) -> Vec<WeightConstraint> {
        vec![
            WeightConstraint::None,
            WeightConstraint::MonotoneInputs((0..inp).map(|_| rng.next_f64() < 0.5).collect()),
            WeightConstraint::Positive,
        ]
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let params = LayerParams {
            weights: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        let mut layer = DenseLayer::plain(params, Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_monotone_weights_sum_masked_inputs() {
        let params = LayerParams {
            weights: Matrix::zeros(2, 3),
            bias: vec![0.0; 2],
        };
        let mask = vec![true, false, true];
        let layer = DenseLayer::new(params, Activation::Identity, WeightConstraint::MonotoneInputs(mask)).unwrap();
        let x = Matrix::from_rows(&[[1.0, 5.0, 2.0]]).unwrap();
        let y = layer.infer(&x).unwrap();
        // exp(0) = 1 on masked columns, raw 0 elsewhere.
        assert_eq!(y.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = Rng::new(21);
        for act in Activation::all() {
            for constraint in constraints(4, &mut rng) {
                let mut layer = DenseLayer::new(random_params(3, 4, &mut rng, 1.0), act, constraint).unwrap();
                let x = Matrix::from_fn(5, 4, |_, _| rng.uniform(-2.0, 2.0));
                let fast = layer.forward(&x).unwrap();
                let slow = scalar_forward(&layer, &x);
                assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_neuron_identity_gradient() {
        let params = LayerParams {
            weights: Matrix::from_rows(&[[0.7]]).unwrap(),
            bias: vec![0.1],
        };
        let mut layer = DenseLayer::plain(params, Activation::Identity).unwrap();
        let x: Matrix<f64> = Matrix::from_rows(&[[3.0]]).unwrap();
        layer.forward(&x).unwrap();
        let g = layer.backward(&Matrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(g.weights.as_slice(), &[6.0]);
        assert_eq!(g.bias, vec![2.0]);
        assert!((g.input.get(0, 0) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut rng = Rng::new(1);
        let mut layer = DenseLayer::plain(random_params(2, 2, &mut rng, 1.0), Activation::Tanh).unwrap();
        let err = layer.backward(&Matrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn shape_mismatch_on_forward() {
        let mut rng = Rng::new(1);
        let mut layer = DenseLayer::plain(random_params(2, 3, &mut rng, 1.0), Activation::Tanh).unwrap();
        assert!(matches!(layer.forward(&Matrix::zeros(1, 2)), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_weight_monotone_gradient_equals_plain() {
        let mut rng = Rng::new(4);
        let mut p = random_params(3, 2, &mut rng, 1.0);
        p.weights = Matrix::zeros(3, 2);
        let x = Matrix::from_fn(4, 2, |_, _| rng.uniform(-1.0, 1.0));
        let g_out = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        // A plain layer whose weights are all ones has the same forward map.
        let mut plain = DenseLayer::plain(
            LayerParams {
                weights: Matrix::filled(3, 2, 1.0),
                bias: p.bias.clone(),
            },
            Activation::Tanh,
        )
        .unwrap();
        let mut mono = DenseLayer::new(p, Activation::Tanh, WeightConstraint::Positive).unwrap();
        plain.forward(&x).unwrap();
        mono.forward(&x).unwrap();
        let gp = plain.backward(&g_out).unwrap();
        let gm = mono.backward(&g_out).unwrap();
        assert!(gp.weights.max_abs_diff(&gm.weights).unwrap() < 1e-15);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = Rng::new(99);
        let h = 1e-6;
        for act in Activation::all() {
            for constraint in constraints(3, &mut rng) {
                let params = random_params(4, 3, &mut rng, 0.8);
                let x = Matrix::from_fn(5, 3, |_, _| rng.uniform(-1.5, 1.5));
                let g_out = Matrix::from_fn(5, 4, |_, _| rng.uniform(-1.0, 1.0));
                // Scalar loss L = Σ g_out ⊙ layer(x).
                let loss = |p: &LayerParams<f64>, x: &Matrix<f64>| -> f64 {
                    let l = DenseLayer::new(p.clone(), act, constraint.clone()).unwrap();
                    let y = l.infer(x).unwrap();
                    y.as_slice().iter().zip(g_out.as_slice()).map(|(a, b)| a * b).sum()
                };
                let mut layer = DenseLayer::new(params.clone(), act, constraint.clone()).unwrap();
                layer.forward(&x).unwrap();
                let g = layer.backward(&g_out).unwrap();
                for idx in 0..params.weights.as_slice().len() {
                    let mut plus = params.clone();
                    plus.weights.as_mut_slice()[idx] += h;
                    let mut minus = params.clone();
                    minus.weights.as_mut_slice()[idx] -= h;
                    let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                    let an = g.weights.as_slice()[idx];
                    // ReLU kinks make FD unreliable right at 0; skip those.
                    if act == Activation::Relu && (fd - an).abs() > 1e-3 {
                        continue;
                    }
                    assert!(rel_err(fd, an) < 1e-4, "{act:?} {constraint:?} w{idx}: fd {fd} an {an}");
                }
                for idx in 0..params.bias.len() {
                    let mut plus = params.clone();
                    plus.bias[idx] += h;
                    let mut minus = params.clone();
                    minus.bias[idx] -= h;
                    let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                    assert!(rel_err(fd, g.bias[idx]) < 1e-4 || act == Activation::Relu);
                }
                for idx in 0..x.as_slice().len() {
                    let mut plus = x.clone();
                    plus.as_mut_slice()[idx] += h;
                    let mut minus = x.clone();
                    minus.as_mut_slice()[idx] -= h;
                    let fd = (loss(&params, &plus) - loss(&params, &minus)) / (2.0 * h);
                    assert!(rel_err(fd, g.input.as_slice()[idx]) < 1e-4 || act == Activation::Relu);
                }
            }
        }
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in Activation::all() {
            for z in [-2.3f64, -0.4, 0.3, 1.7] {
                let fd = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                assert!((fd - act.derivative(z)).abs() < 1e-6, "{act:?} at {z}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a: Vec<LayerParams<f64>> = init_params(&[3, 7, 5], &mut Rng::new(42), InitScheme::XavierUniform);
        let b: Vec<LayerParams<f64>> = init_params(&[3, 7, 5], &mut Rng::new(42), InitScheme::XavierUniform);
        for (pa, pb) in a.iter().zip(&b) {
            let bits_a: Vec<u64> = pa.weights.as_slice().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = pb.weights.as_slice().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        for (p, (fi, fo)) in a.iter().zip([(3, 7), (7, 5)]) {
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            assert!(p.weights.as_slice().iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn parameter_count_arithmetic() {
        assert_eq!(parameter_count(&[2, 4, 19]), 107);
        let arch = Architecture {
            widths: vec![2, 4, 19],
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            monotone_inputs: None,
        };
        let mlp: Mlp<f64> = Mlp::new(arch, &mut Rng::new(0), InitScheme::XavierUniform).unwrap();
        assert_eq!(mlp.param_count(), 107);
        assert_eq!(mlp.flat_params().len(), 107);
    }

    #[test]
    fn flat_params_round_trip() {
        let arch = Architecture {
            widths: vec![3, 5, 2],
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Identity,
            monotone_inputs: Some(vec![true, false, false]),
        };
        let mut rng = Rng::new(12);
        let a: Mlp<f64> = Mlp::new(arch.clone(), &mut rng, InitScheme::XavierUniform).unwrap();
        let mut b: Mlp<f64> = Mlp::new(arch, &mut rng, InitScheme::XavierUniform).unwrap();
        b.set_flat_params(&a.flat_params()).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.3 - 1.0);
        assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
        assert!(b.set_flat_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn monotone_network_is_nondecreasing_in_masked_feature() {
        let mut rng = Rng::new(2718);
        for draw in 0..1000 {
            let act = [
                Activation::Tanh,
                Activation::Sigmoid,
                Activation::Relu,
                Activation::Identity,
            ][draw % 4];
            let arch = Architecture {
                widths: vec![3, 4, 3, 2],
                hidden_activation: act,
                output_activation: Activation::Identity,
                monotone_inputs: Some(vec![false, true, false]),
            };
            let params: Vec<LayerParams<f64>> = [(4, 3), (3, 4), (2, 3)]
                .iter()
                .map(|&(o, i)| random_params(o, i, &mut rng, 2.0))
                .collect();
            let mlp = Mlp::from_params(arch, params).unwrap();
            let lo = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let mut hi = lo;
            hi[1] += rng.uniform(0.0, 2.0);
            let y = mlp.infer(&Matrix::from_rows(&[lo, hi]).unwrap()).unwrap();
            for o in 0..2 {
                assert!(
                    y.get(1, o) >= y.get(0, o),
                    "draw {draw}: {} < {}",
                    y.get(1, o),
                    y.get(0, o)
                );
            }
        }
    }
}
