use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at pre-activation `z`; the ReLU kink at 0 takes slope 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Affine map followed by an element-wise activation: `y = act(W x + b)`.
///
/// `weights` is `out × in`. A frozen layer never changes under [`DenseNetwork::sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    frozen: bool,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(format!(
                "bias of length {} for {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            frozen: false,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::arg("layer dimensions must be positive"));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::arg(format!("bad init range: {e}")))?;
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self::new(
            Matrix::from_vec(out_dim, in_dim, data)?,
            vec![0.0; out_dim],
            activation,
        )
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// Output of a forward pass: the input plus pre- and post-activation values of
/// every layer. `outputs().last()` is the network output.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardPass {
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Post-activation values, one matrix per layer.
    pub fn outputs(&self) -> &[Matrix] {
        &self.post
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn into_output(mut self) -> Matrix {
        self.post.pop().unwrap_or(self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients laid out like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients {
    pub layers: Vec<LayerGradient>,
}

impl NetworkGradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient layer counts differ"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            if a.bias.len() != b.bias.len() {
                return Err(Error::shape("gradient bias lengths differ"));
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.scale(factor);
            for b in &mut l.bias {
                *b *= factor;
            }
        }
    }

    /// Flattened in the same order as [`DenseNetwork::parameters`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data().iter().all(|&v| v == 0.0) && l.bias.iter().all(|&v| v == 0.0))
    }
}

/// Per-layer width and activation used to build a [`DenseNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn relu(units: usize) -> Self {
        Self {
            units,
            activation: Activation::Relu,
        }
    }

    pub fn identity(units: usize) -> Self {
        Self {
            units,
            activation: Activation::Identity,
        }
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let mut dim = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != dim {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but receives {dim}",
                    l.in_dim()
                )));
            }
            dim = l.out_dim();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut dim = input_dim;
        for s in specs {
            layers.push(DenseLayer::glorot(dim, s.units, s.activation, rng)?);
            dim = s.units;
        }
        Self::from_layers(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, DenseLayer::out_dim)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardPass> {
        if batch.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(batch);
            let mut z = x.matmul_transposed(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = layer.activation.apply(*v);
            }
            if !a.is_finite() {
                return Err(Error::Numeric("non-finite activation in forward pass".into()));
            }
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardPass {
            input: batch.clone(),
            pre,
            post,
        })
    }

    /// Output of the last layer only.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.into_output())
    }

    /// Backpropagates `output_gradient` (dL/d output) through the pass.
    ///
    /// Returns parameter gradients and dL/d input. Frozen layers report zero
    /// parameter gradients but still pass gradient to their inputs.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        output_gradient: &Matrix,
    ) -> Result<(NetworkGradients, Matrix)> {
        let mut injected: Vec<Option<&Matrix>> = vec![None; self.layers.len()];
        if let Some(last) = injected.last_mut() {
            *last = Some(output_gradient);
        }
        self.backward_injected(pass, &injected)
    }

    /// Backward pass where `injected[i]`, when present, is an extra gradient
    /// with respect to the post-activation output of layer `i`. This is how
    /// losses attached to hidden layers enter the chain.
    pub fn backward_injected(
        &self,
        pass: &ForwardPass,
        injected: &[Option<&Matrix>],
    ) -> Result<(NetworkGradients, Matrix)> {
        if injected.len() != self.layers.len() || pass.post.len() != self.layers.len() {
            return Err(Error::shape("forward pass does not match network depth"));
        }
        let n = pass.input.rows();
        let mut grads = NetworkGradients::zeros_like(self);
        let mut upstream: Option<Matrix> = None;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let expected = (n, layer.out_dim());
            let mut g = match upstream.take() {
                Some(g) => g,
                None => Matrix::zeros(n, layer.out_dim()),
            };
            if let Some(extra) = injected[i] {
                if extra.shape() != expected {
                    return Err(Error::shape(format!(
                        "gradient for layer {i} is {:?}, expected {expected:?}",
                        extra.shape()
                    )));
                }
                g.add_assign(extra)?;
            }
            if pass.pre[i].shape() != expected {
                return Err(Error::shape(format!("activations of layer {i} do not match")));
            }
            // dL/dz
            for (gv, &z) in g.data_mut().iter_mut().zip(pass.pre[i].data()) {
                *gv *= layer.activation.derivative(z);
            }
            let x = if i == 0 { &pass.input } else { &pass.post[i - 1] };
            if !layer.frozen {
                grads.layers[i].weights = g.transposed_matmul(x)?;
                grads.layers[i].bias = g.column_sums();
            }
            upstream = Some(g.matmul(&layer.weights)?);
        }
        let input_grad = upstream.unwrap_or_else(|| Matrix::zeros(n, self.input_dim));
        Ok((grads, input_grad))
    }

    /// `θ ← θ − lr·g` on every trainable layer. Gradients are validated before
    /// any parameter is touched, so a failed step leaves the network as it was.
    pub fn sgd_step(&mut self, grads: &NetworkGradients, learning_rate: f64) -> Result<()> {
        if !learning_rate.is_finite() {
            return Err(Error::arg("learning rate must be finite"));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} gradient layers for a {}-layer network",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (l, g)) in self.layers.iter().zip(&grads.layers).enumerate() {
            if g.weights.shape() != l.weights.shape() || g.bias.len() != l.bias.len() {
                return Err(Error::shape(format!("gradient shape mismatch in layer {i}")));
            }
            if !g.weights.is_finite() || g.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: i });
            }
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            if l.frozen {
                continue;
            }
            for (w, d) in l.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= learning_rate * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * d;
            }
        }
        Ok(())
    }

    /// Freezes layers `0..k` and unfreezes the rest.
    pub fn freeze_prefix(&mut self, k: usize) -> Result<()> {
        if k > self.layers.len() {
            return Err(Error::arg(format!(
                "freeze depth {k} exceeds layer count {}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.frozen = i < k;
        }
        Ok(())
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// All parameters flattened: per layer, weights row-major then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&values[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Mutable access to a single flattened parameter.
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            if index < nw {
                return l.weights.data_mut().get_mut(index);
            }
            index -= nw;
            if index < l.bias.len() {
                return l.bias.get_mut(index);
            }
            index -= l.bias.len();
        }
        None
    }
}
