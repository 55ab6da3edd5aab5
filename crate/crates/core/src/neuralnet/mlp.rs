//! Fully-connected network with leaky-rectifier hidden layers and a linear
//! output, with an explicit reverse-mode backward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LEAKY_SLOPE: f64 = 0.01;

/// One affine layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    /// Glorot-uniform weights in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = T::lit(rng.random_range(-limit..=limit));
        }
        layer
    }

    fn weight_row(&self, o: usize) -> &[T] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
///
/// `inputs[l]` is the input to layer `l`; `pre[l]` its affine output before
/// the activation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }
}

/// Activations retained by [`Mlp::forward_batch`]: one row per sample.
#[derive(Debug, Clone, Default)]
pub struct BatchCache<T> {
    batch: usize,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.values_mut() {
            *v = *v * s;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a = *a + b;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `c ← a·b + beta·c` with row-major `c` (`m × n`). `a` is stored `m × k`,
/// or `k × m` when `a_t`; `b` is stored `k × n`, or `n × k` when `b_t`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n, "gemm shapes");
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: the lengths checked above bound every strided access.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-initialized network with the given layer widths (input first).
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidParameter("layer parameter length mismatch".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::dims("from_layers", (w[0].outputs, 1), (w[1].inputs, 1)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights then biases.
    pub fn params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::dims("set_params", (self.param_count(), 1), (values.len(), 1)));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut y: Vec<T> = (0..layer.outputs)
                .map(|o| layer.biases[o] + dot(layer.weight_row(o), &x))
                .collect();
            if idx < last {
                leaky_inplace(&mut y);
            }
            x = y;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let pre: Vec<T> = (0..layer.outputs)
                .map(|o| layer.biases[o] + dot(layer.weight_row(o), &x))
                .collect();
            let mut out = pre.clone();
            if idx < last {
                leaky_inplace(&mut out);
            }
            cache.inputs.push(std::mem::replace(&mut x, out));
            cache.pre.push(pre);
        }
        Ok((x, cache))
    }

    /// Gradients of `upstream · output` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// As [`Mlp::backward`] but adds into existing gradient buffers.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache<T>,
        upstream: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<Vec<T>> {
        if cache.pre.len() != self.layers.len()
            || cache.pre.iter().zip(&self.layers).any(|(p, l)| p.len() != l.outputs)
        {
            return Err(Error::MissingCache);
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::dims("backward", (self.output_dim(), 1), (upstream.len(), 1)));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            if idx < last {
                for (d, &p) in delta.iter_mut().zip(&cache.pre[idx]) {
                    if p <= T::zero() {
                        *d = *d * slope;
                    }
                }
            }
            let x = &cache.inputs[idx];
            let g = &mut grads.layers[idx];
            let mut dx = vec![T::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                g.biases[o] = g.biases[o] + d;
                axpy(d, x, &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs]);
                axpy(d, layer.weight_row(o), &mut dx);
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Forward pass over `batch` samples stored row-major in `inputs`.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<(Vec<T>, BatchCache<T>)> {
        if batch == 0 || inputs.len() != batch * self.input_dim() {
            return Err(Error::dims("mlp batch input", (batch, self.input_dim()), (inputs.len(), 1)));
        }
        let last = self.layers.len() - 1;
        let mut cache = BatchCache {
            batch,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = inputs.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut pre: Vec<T> = (0..batch).flat_map(|_| layer.biases.iter().copied()).collect();
            gemm(batch, layer.inputs, layer.outputs, &x, false, &layer.weights, true, T::one(), &mut pre);
            let mut out = pre.clone();
            if idx < last {
                leaky_inplace(&mut out);
            }
            cache.inputs.push(std::mem::replace(&mut x, out));
            cache.pre.push(pre);
        }
        Ok((x, cache))
    }

    /// Adds the gradients of `Σ_rows upstream · output` into `grads`; returns
    /// the input gradient, one row per sample.
    pub fn backward_batch_accumulate(
        &self,
        cache: &BatchCache<T>,
        upstream: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<Vec<T>> {
        let batch = cache.batch;
        if cache.pre.len() != self.layers.len()
            || cache.pre.iter().zip(&self.layers).any(|(p, l)| p.len() != batch * l.outputs)
        {
            return Err(Error::MissingCache);
        }
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::dims("backward batch", (batch, self.output_dim()), (upstream.len(), 1)));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            if idx < last {
                for (d, &p) in delta.iter_mut().zip(&cache.pre[idx]) {
                    if p <= T::zero() {
                        *d = *d * slope;
                    }
                }
            }
            let g = &mut grads.layers[idx];
            gemm(layer.outputs, batch, layer.inputs, &delta, true, &cache.inputs[idx], false, T::one(), &mut g.weights);
            for row in delta.chunks_exact(layer.outputs) {
                axpy(T::one(), row, &mut g.biases);
            }
            let mut dx = vec![T::zero(); batch * layer.inputs];
            gemm(batch, layer.outputs, layer.inputs, &delta, false, &layer.weights, false, T::zero(), &mut dx);
            delta = dx;
        }
        Ok(delta)
    }

    /// Plain gradient descent: `θ ← θ − lr · ∇θ`.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.inputs != l.inputs || g.outputs != l.outputs)
        {
            return Err(Error::InvalidParameter("gradient shape does not match network".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            axpy(-lr, &g.weights, &mut l.weights);
            axpy(-lr, &g.biases, &mut l.biases);
        }
        Ok(())
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dims("mlp input", (self.input_dim(), 1), (input.len(), 1)));
        }
        Ok(())
    }
}

fn leaky_inplace<T: Scalar>(v: &mut [T]) {
    let slope = T::lit(LEAKY_SLOPE);
    for x in v {
        if *x <= T::zero() {
            *x = *x * slope;
        }
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidParameter(format!("invalid layer dims {dims:?}")));
    }
    Ok(())
}
