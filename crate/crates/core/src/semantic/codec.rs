//! Semantic and JSCC encoders/decoders, symbol power normalization and the
//! per-class binary cross-entropy loss.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::neuralnet::{ForwardCache, Gradients, Mlp};
use crate::semantic::scene::SegmentationMap;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub symbols: Vec<Complex64>,
    pub power: f64,
}

impl SymbolBlock {
    pub fn energy(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum()
    }
}

/// Per-cell class probabilities, cell-major: `probs[cell * classes + g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub probs: Vec<f64>,
}

impl ProbabilityMap {
    pub fn cell(&self, k: usize) -> &[f64] {
        &self.probs[k * self.classes..(k + 1) * self.classes]
    }

    /// Most probable class per cell; ties go to the lower class index.
    pub fn argmax(&self) -> SegmentationMap {
        let labels = self
            .probs
            .chunks(self.classes)
            .map(|c| {
                let mut best = 0;
                for (g, &p) in c.iter().enumerate() {
                    if p > c[best] {
                        best = g;
                    }
                }
                best as u8
            })
            .collect();
        SegmentationMap::new(self.height, self.width, self.classes, labels).expect("argmax stays in class range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecDims {
    pub users: usize,
    pub grid: usize,
    pub classes: usize,
    pub features: usize,
    pub symbols: usize,
    pub hidden: usize,
}

impl Default for CodecDims {
    fn default() -> Self {
        Self {
            users: 2,
            grid: 16,
            classes: 4,
            features: 64,
            symbols: 128,
            hidden: 128,
        }
    }
}

impl CodecDims {
    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        if [self.users, self.grid, self.features, self.symbols, self.hidden].contains(&0) || self.classes < 2 {
            return Err(Error::InvalidParameter("codec: all dimensions must be >= 1, classes >= 2".into()));
        }
        Ok(())
    }

    pub fn semantic_encoder(&self) -> Vec<usize> {
        vec![self.cells(), self.hidden, self.features]
    }

    pub fn jscc_encoder(&self) -> Vec<usize> {
        vec![self.features, self.hidden, 2 * self.symbols]
    }

    pub fn jscc_decoder(&self) -> Vec<usize> {
        vec![2 * self.users * self.symbols, 2 * self.hidden, self.users * self.features]
    }

    pub fn semantic_decoder(&self) -> Vec<usize> {
        vec![self.users * self.features, 2 * self.hidden, self.cells() * self.classes]
    }
}

/// All learned codec networks of the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Codecs {
    pub dims: CodecDims,
    pub semantic_encoders: Vec<Mlp<f64>>,
    pub jscc_encoders: Vec<Mlp<f64>>,
    pub jscc_decoder: Mlp<f64>,
    pub semantic_decoder: Mlp<f64>,
}

impl Codecs {
    pub fn new<R: Rng + ?Sized>(dims: CodecDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut semantic_encoders = Vec::with_capacity(dims.users);
        let mut jscc_encoders = Vec::with_capacity(dims.users);
        for _ in 0..dims.users {
            semantic_encoders.push(Mlp::new(&dims.semantic_encoder(), rng)?);
            jscc_encoders.push(Mlp::new(&dims.jscc_encoder(), rng)?);
        }
        Ok(Self {
            dims,
            semantic_encoders,
            jscc_encoders,
            jscc_decoder: Mlp::new(&dims.jscc_decoder(), rng)?,
            semantic_decoder: Mlp::new(&dims.semantic_decoder(), rng)?,
        })
    }

    /// Checks every network against `dims`.
    pub fn check(&self) -> Result<()> {
        let d = &self.dims;
        let expect = |net: &Mlp<f64>, dims: Vec<usize>, name: &str| {
            if net.dims() == dims {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name}: network dims {:?}, expected {:?}",
                    net.dims(),
                    dims
                )))
            }
        };
        if self.semantic_encoders.len() != d.users || self.jscc_encoders.len() != d.users {
            return Err(Error::InvalidParameter(format!("codec: expected {} encoder pairs", d.users)));
        }
        for (i, (s, j)) in self.semantic_encoders.iter().zip(&self.jscc_encoders).enumerate() {
            expect(s, d.semantic_encoder(), &format!("semantic_encoder_{i}"))?;
            expect(j, d.jscc_encoder(), &format!("jscc_encoder_{i}"))?;
        }
        expect(&self.jscc_decoder, d.jscc_decoder(), "jscc_decoder")?;
        expect(&self.semantic_decoder, d.semantic_decoder(), "semantic_decoder")
    }

    /// `(name, net)` for every network, in checkpoint order.
    pub fn sections(&self) -> Vec<(String, &Mlp<f64>)> {
        let mut out = Vec::new();
        for (i, (s, j)) in self.semantic_encoders.iter().zip(&self.jscc_encoders).enumerate() {
            out.push((format!("semantic_encoder_{i}"), s));
            out.push((format!("jscc_encoder_{i}"), j));
        }
        out.push(("jscc_decoder".into(), &self.jscc_decoder));
        out.push(("semantic_decoder".into(), &self.semantic_decoder));
        out
    }

    pub fn from_sections(dims: CodecDims, mut sections: Vec<(String, Mlp<f64>)>) -> Result<Self> {
        let mut take = |name: String| -> Result<Mlp<f64>> {
            let pos = sections
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing section {name}")))?;
            Ok(sections.swap_remove(pos).1)
        };
        let mut semantic_encoders = Vec::new();
        let mut jscc_encoders = Vec::new();
        for i in 0..dims.users {
            semantic_encoders.push(take(format!("semantic_encoder_{i}"))?);
            jscc_encoders.push(take(format!("jscc_encoder_{i}"))?);
        }
        let codecs = Self {
            dims,
            semantic_encoders,
            jscc_encoders,
            jscc_decoder: take("jscc_decoder".into())?,
            semantic_decoder: take("semantic_decoder".into())?,
        };
        codecs.check()?;
        Ok(codecs)
    }

    /// Transmit side for all users: the `N × K` symbol matrix `X`.
    pub fn encode(&self, modalities: &[Vec<f64>], power: f64) -> Result<ComplexMatrix<f64>> {
        if modalities.len() != self.dims.users {
            return Err(Error::dims("encode", (self.dims.users, 1), (modalities.len(), 1)));
        }
        let k = self.dims.symbols;
        let mut data = Vec::with_capacity(self.dims.users * k);
        for (i, m) in modalities.iter().enumerate() {
            let f = semantic_encode(&self.semantic_encoders[i], m)?;
            data.extend(jscc_encode(&self.jscc_encoders[i], &f, power, k)?.symbols);
        }
        ComplexMatrix::from_vec(self.dims.users, k, data)
    }

    /// Receive side: equalized `X̂` to class probabilities.
    pub fn decode(&self, x_hat: &ComplexMatrix<f64>) -> Result<ProbabilityMap> {
        let f = jscc_decode(&self.jscc_decoder, x_hat)?;
        semantic_decode(&self.semantic_decoder, &f, self.dims.grid, self.dims.grid, self.dims.classes)
    }
}

pub fn semantic_encode(enc: &Mlp<f64>, m: &[f64]) -> Result<FeatureVector> {
    Ok(FeatureVector(enc.predict(m)?))
}

/// Pairs `raw[2k], raw[2k+1]` into symbol `k`.
pub fn pair_symbols(raw: &[f64]) -> Vec<Complex64> {
    raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Scales `raw` to squared norm `P·K`.
pub fn power_normalize(raw: &[f64], power: f64, symbols: usize) -> Result<Vec<f64>> {
    if raw.len() != 2 * symbols {
        return Err(Error::dims("power_normalize", (2 * symbols, 1), (raw.len(), 1)));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let s = (power * symbols as f64).sqrt() / norm;
    Ok(raw.iter().map(|v| v * s).collect())
}

/// Vector-Jacobian product of [`power_normalize`]:
/// `∂L/∂x̃ = (√(PK)/‖x̃‖) (g − u (u·g))`, `u = x̃/‖x̃‖`.
pub fn power_normalize_backward(raw: &[f64], upstream: &[f64], power: f64, symbols: usize) -> Result<Vec<f64>> {
    if raw.len() != upstream.len() {
        return Err(Error::dims("power_normalize_backward", (raw.len(), 1), (upstream.len(), 1)));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let s = (power * symbols as f64).sqrt() / norm;
    let proj = raw.iter().zip(upstream).map(|(x, g)| x * g).sum::<f64>() / (norm * norm);
    Ok(raw.iter().zip(upstream).map(|(x, g)| s * (g - x * proj)).collect())
}

pub fn jscc_encode(enc: &Mlp<f64>, f: &FeatureVector, power: f64, symbols: usize) -> Result<SymbolBlock> {
    let raw = enc.predict(f.values())?;
    Ok(SymbolBlock {
        symbols: pair_symbols(&power_normalize(&raw, power, symbols)?),
        power,
    })
}

/// Decoder input: for each user in ascending order, the real parts of its `K`
/// equalized symbols followed by their imaginary parts.
pub fn stack_symbols(x_hat: &ComplexMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x_hat.rows() * x_hat.cols());
    for i in 0..x_hat.rows() {
        out.extend(x_hat.row(i).iter().map(|s| s.re));
        out.extend(x_hat.row(i).iter().map(|s| s.im));
    }
    out
}

pub fn jscc_decode(dec: &Mlp<f64>, x_hat: &ComplexMatrix<f64>) -> Result<FeatureVector> {
    Ok(FeatureVector(dec.predict(&stack_symbols(x_hat))?))
}

/// Normalized exponential over each consecutive group of `classes` logits.
pub fn softmax_cells(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for c in logits.chunks(classes) {
        let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = c.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / sum));
    }
    out
}

pub fn semantic_decode(
    dec: &Mlp<f64>,
    f: &FeatureVector,
    height: usize,
    width: usize,
    classes: usize,
) -> Result<ProbabilityMap> {
    let logits = dec.predict(f.values())?;
    probability_map(&logits, height, width, classes)
}

pub fn probability_map(logits: &[f64], height: usize, width: usize, classes: usize) -> Result<ProbabilityMap> {
    if logits.len() != height * width * classes {
        return Err(Error::dims("semantic_decode", (height * width * classes, 1), (logits.len(), 1)));
    }
    Ok(ProbabilityMap {
        height,
        width,
        classes,
        probs: softmax_cells(logits, classes),
    })
}

fn check_shapes(pred: &ProbabilityMap, truth: &SegmentationMap) -> Result<()> {
    if (pred.height, pred.width) != truth.dims() || pred.classes != truth.classes() {
        return Err(Error::dims(
            "cross_entropy",
            (pred.height * pred.width, pred.classes),
            (truth.cells(), truth.classes()),
        ));
    }
    Ok(())
}

/// Mean over cells of `−Σ_g [y_g ln p_g + (1 − y_g) ln(1 − p_g)]`, one-hot `y`.
pub fn cross_entropy(pred: &ProbabilityMap, truth: &SegmentationMap) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut total = 0.0;
    for (k, &label) in truth.labels().iter().enumerate() {
        for (c, &p) in pred.cell(k).iter().enumerate() {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= if c == label as usize { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / truth.cells() as f64)
}

/// Loss and its gradient with respect to the logits that produced `pred`.
/// Clamped probabilities contribute no gradient.
pub fn cross_entropy_logit_grad(pred: &ProbabilityMap, truth: &SegmentationMap) -> Result<(f64, Vec<f64>)> {
    let loss = cross_entropy(pred, truth)?;
    let g = pred.classes;
    let inv_cells = 1.0 / truth.cells() as f64;
    let mut grad = vec![0.0; pred.probs.len()];
    let mut dp = vec![0.0; g];
    for (k, &label) in truth.labels().iter().enumerate() {
        let p = pred.cell(k);
        for c in 0..g {
            dp[c] = if p[c] <= PROB_CLAMP || p[c] >= 1.0 - PROB_CLAMP {
                0.0
            } else if c == label as usize {
                -1.0 / p[c]
            } else {
                1.0 / (1.0 - p[c])
            };
        }
        let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
        for c in 0..g {
            grad[k * g + c] = p[c] * (dp[c] - dot) * inv_cells;
        }
    }
    Ok((loss, grad))
}

/// Intermediate values of one training forward pass through all codecs.
#[derive(Debug, Clone, Default)]
pub struct LinkTrace {
    sem_caches: Vec<ForwardCache<f64>>,
    jscc_caches: Vec<ForwardCache<f64>>,
    raw: Vec<Vec<f64>>,
    decoder: DecoderTrace,
}

#[derive(Debug, Clone, Default)]
pub struct DecoderTrace {
    jscc_cache: ForwardCache<f64>,
    sem_cache: ForwardCache<f64>,
    pub probs: Option<ProbabilityMap>,
}

/// Gradient buffers matching [`Codecs`].
#[derive(Debug, Clone, PartialEq)]
pub struct CodecGradients {
    pub semantic_encoders: Vec<Gradients<f64>>,
    pub jscc_encoders: Vec<Gradients<f64>>,
    pub jscc_decoder: Gradients<f64>,
    pub semantic_decoder: Gradients<f64>,
}

impl CodecGradients {
    pub fn zeros_like(c: &Codecs) -> Self {
        Self {
            semantic_encoders: c.semantic_encoders.iter().map(Gradients::zeros_like).collect(),
            jscc_encoders: c.jscc_encoders.iter().map(Gradients::zeros_like).collect(),
            jscc_decoder: Gradients::zeros_like(&c.jscc_decoder),
            semantic_decoder: Gradients::zeros_like(&c.semantic_decoder),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.semantic_encoders.iter().all(|g| g.is_finite())
            && self.jscc_encoders.iter().all(|g| g.is_finite())
            && self.jscc_decoder.is_finite()
            && self.semantic_decoder.is_finite()
    }
}

impl Codecs {
    /// Decoder forward pass keeping the caches needed for backpropagation.
    pub fn decode_traced(&self, x_hat: &ComplexMatrix<f64>) -> Result<DecoderTrace> {
        let (f, jscc_cache) = self.jscc_decoder.forward(&stack_symbols(x_hat))?;
        let (logits, sem_cache) = self.semantic_decoder.forward(&f)?;
        let d = &self.dims;
        Ok(DecoderTrace {
            jscc_cache,
            sem_cache,
            probs: Some(probability_map(&logits, d.grid, d.grid, d.classes)?),
        })
    }

    /// Backpropagates the loss into the decoder buffers, returning the
    /// gradient with respect to the stacked decoder input.
    pub fn decoder_backward(
        &self,
        trace: &DecoderTrace,
        truth: &SegmentationMap,
        weight: f64,
        grads: &mut CodecGradients,
    ) -> Result<(f64, Vec<f64>)> {
        let probs = trace.probs.as_ref().ok_or(Error::MissingCache)?;
        let (loss, mut dz) = cross_entropy_logit_grad(probs, truth)?;
        dz.iter_mut().for_each(|v| *v *= weight);
        let df = self
            .semantic_decoder
            .backward_accumulate(&trace.sem_cache, &dz, &mut grads.semantic_decoder)?;
        let dx = self
            .jscc_decoder
            .backward_accumulate(&trace.jscc_cache, &df, &mut grads.jscc_decoder)?;
        Ok((loss, dx))
    }

    /// Noiseless identity-channel forward pass, `X̂ = X`.
    pub fn forward_identity(&self, modalities: &[Vec<f64>], power: f64) -> Result<(ComplexMatrix<f64>, LinkTrace)> {
        if modalities.len() != self.dims.users {
            return Err(Error::dims("forward_identity", (self.dims.users, 1), (modalities.len(), 1)));
        }
        let k = self.dims.symbols;
        let mut trace = LinkTrace::default();
        let mut data = Vec::with_capacity(self.dims.users * k);
        for (i, m) in modalities.iter().enumerate() {
            let (f, sc) = self.semantic_encoders[i].forward(m)?;
            let (raw, jc) = self.jscc_encoders[i].forward(&f)?;
            data.extend(pair_symbols(&power_normalize(&raw, power, k)?));
            trace.sem_caches.push(sc);
            trace.jscc_caches.push(jc);
            trace.raw.push(raw);
        }
        let x = ComplexMatrix::from_vec(self.dims.users, k, data)?;
        trace.decoder = self.decode_traced(&x)?;
        Ok((x, trace))
    }

    /// Full end-to-end backward pass of [`Codecs::forward_identity`].
    pub fn backward_identity(
        &self,
        trace: &LinkTrace,
        truth: &SegmentationMap,
        power: f64,
        weight: f64,
        grads: &mut CodecGradients,
    ) -> Result<f64> {
        let (loss, dx) = self.decoder_backward(&trace.decoder, truth, weight, grads)?;
        let k = self.dims.symbols;
        for i in 0..self.dims.users {
            let block = &dx[2 * k * i..2 * k * (i + 1)];
            // Back from [re..., im...] to interleaved pairs.
            let mut d_norm = vec![0.0; 2 * k];
            for s in 0..k {
                d_norm[2 * s] = block[s];
                d_norm[2 * s + 1] = block[k + s];
            }
            let d_raw = power_normalize_backward(&trace.raw[i], &d_norm, power, k)?;
            let df = self.jscc_encoders[i].backward_accumulate(&trace.jscc_caches[i], &d_raw, &mut grads.jscc_encoders[i])?;
            self.semantic_encoders[i].backward_accumulate(&trace.sem_caches[i], &df, &mut grads.semantic_encoders[i])?;
        }
        Ok(loss)
    }

    pub fn identity_loss(&self, modalities: &[Vec<f64>], truth: &SegmentationMap, power: f64) -> Result<f64> {
        let x = self.encode(modalities, power)?;
        cross_entropy(&self.decode(&x)?, truth)
    }

    pub fn apply_encoders(&mut self, grads: &CodecGradients, lr: f64) -> Result<()> {
        for (net, g) in self.semantic_encoders.iter_mut().zip(&grads.semantic_encoders) {
            net.sgd_step(g, lr)?;
        }
        for (net, g) in self.jscc_encoders.iter_mut().zip(&grads.jscc_encoders) {
            net.sgd_step(g, lr)?;
        }
        Ok(())
    }

    pub fn apply_decoders(&mut self, grads: &CodecGradients, lr: f64) -> Result<()> {
        self.jscc_decoder.sgd_step(&grads.jscc_decoder, lr)?;
        self.semantic_decoder.sgd_step(&grads.semantic_decoder, lr)
    }

    pub fn is_finite(&self) -> bool {
        self.sections().iter().all(|(_, n)| n.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;
    use crate::semantic::scene::{generate_scene, SceneConfig};
    use proptest::prelude::*;

    fn small_dims() -> CodecDims {
        CodecDims {
            users: 2,
            grid: 4,
            classes: 3,
            features: 5,
            symbols: 4,
            hidden: 6,
        }
    }

    #[test]
    fn normalization_examples() {
        let out = power_normalize(&[3.0, 0.0, 0.0, 4.0], 1.0, 2).unwrap();
        let s = 2f64.sqrt() / 5.0;
        assert_eq!(out, vec![3.0 * s, 0.0, 0.0, 4.0 * s]);
        assert!((out.iter().map(|v| v * v).sum::<f64>() - 2.0).abs() < 1e-15);

        let fixed = [1.0, 0.0, 0.0, 1.0];
        let same = power_normalize(&fixed, 1.0, 2).unwrap();
        for (a, b) in fixed.iter().zip(&same) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(power_normalize(&[0.0; 4], 1.0, 2), Err(Error::ZeroNorm)));
    }

    #[test]
    fn zero_encoder_has_zero_norm() {
        let enc = Mlp::<f64>::zeros(&[3, 4]).unwrap();
        let f = FeatureVector(vec![1.0, 2.0, 3.0]);
        assert!(matches!(jscc_encode(&enc, &f, 1.0, 2), Err(Error::ZeroNorm)));
    }

    #[test]
    fn softmax_and_argmax() {
        let pm = probability_map(&[0.0; 12], 2, 2, 3).unwrap();
        assert!(pm.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let pm = probability_map(&[1.0, 5.0, 2.0, 9.0, 0.0, -1.0], 1, 2, 3).unwrap();
        for k in 0..2 {
            assert!((pm.cell(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(pm.argmax().labels(), &[1, 0]);
        assert!(probability_map(&[0.0; 5], 1, 2, 3).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let truth = SegmentationMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let perfect = ProbabilityMap {
            height: 1,
            width: 2,
            classes: 2,
            probs: vec![1.0, 0.0, 0.0, 1.0],
        };
        assert!(cross_entropy(&perfect, &truth).unwrap() < 1e-6);

        let uniform = probability_map(&[0.0; 4], 1, 2, 2).unwrap();
        // Per cell: −ln ½ − ln(1 − ½).
        let brute = -(0.5f64.ln()) - (1.0f64 - 0.5).ln();
        assert!((cross_entropy(&uniform, &truth).unwrap() - brute).abs() < 1e-15);

        let bad = SegmentationMap::new(1, 3, 2, vec![0, 1, 0]).unwrap();
        assert!(cross_entropy(&uniform, &bad).is_err());
    }

    fn numeric_logit_grad(logits: &[f64], truth: &SegmentationMap, classes: usize) -> Vec<f64> {
        let (h, w) = truth.dims();
        let loss = |z: &[f64]| cross_entropy(&probability_map(z, h, w, classes).unwrap(), truth).unwrap();
        (0..logits.len())
            .map(|i| {
                let mut a = logits.to_vec();
                let mut b = logits.to_vec();
                a[i] += 1e-6;
                b[i] -= 1e-6;
                (loss(&a) - loss(&b)) / 2e-6
            })
            .collect()
    }

    #[test]
    fn logit_gradient_matches_differences() {
        let truth = SegmentationMap::new(2, 2, 3, vec![0, 2, 1, 1]).unwrap();
        let logits = [0.3, -1.2, 0.8, 2.0, 0.1, -0.4, -0.7, 0.9, 0.2, 1.5, -2.0, 0.0];
        let pm = probability_map(&logits, 2, 2, 3).unwrap();
        let (_, g) = cross_entropy_logit_grad(&pm, &truth).unwrap();
        let n = numeric_logit_grad(&logits, &truth, 3);
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn normalization_backward_matches_differences() {
        let raw = [0.4, -1.1, 0.3, 2.0, -0.5, 0.7];
        let up = [1.0, 0.5, -0.3, 0.2, 0.9, -1.4];
        let analytic = power_normalize_backward(&raw, &up, 1.5, 3).unwrap();
        for i in 0..raw.len() {
            let f = |d: f64| {
                let mut r = raw;
                r[i] += d;
                power_normalize(&r, 1.5, 3).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let num = (f(1e-6) - f(-1e-6)) / 2e-6;
            assert!((analytic[i] - num).abs() < 1e-8);
        }
    }

    #[test]
    fn stacking_order() {
        let x = ComplexMatrix::from_rows(&[
            vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)],
            vec![Complex64::new(5.0, 6.0), Complex64::new(7.0, 8.0)],
        ]);
        assert_eq!(stack_symbols(&x), vec![1.0, 3.0, 2.0, 4.0, 5.0, 7.0, 6.0, 8.0]);
    }

    #[test]
    fn end_to_end_gradient_matches_differences() {
        let dims = small_dims();
        let mut rng = rng_from_seed(9);
        let mut codecs = Codecs::new(dims, &mut rng).unwrap();
        let scene_cfg = SceneConfig {
            grid: 4,
            classes: 3,
            block: 2,
            intensity: vec![vec![0.0, 1.0, -1.0], vec![0.0, -0.5, 0.5]],
            ..SceneConfig::default()
        };
        let scene = generate_scene(&mut rng, &scene_cfg);
        let (_, trace) = codecs.forward_identity(&scene.modalities, 1.0).unwrap();
        let mut grads = CodecGradients::zeros_like(&codecs);
        let loss = codecs.backward_identity(&trace, &scene.truth, 1.0, 1.0, &mut grads).unwrap();
        assert!((loss - codecs.identity_loss(&scene.modalities, &scene.truth, 1.0).unwrap()).abs() < 1e-14);

        let analytic: Vec<f64> = grads.semantic_encoders[1].values().cloned().collect();
        let mut params = codecs.semantic_encoders[1].params();
        for i in (0..params.len()).step_by(7) {
            let orig = params[i];
            params[i] = orig + 1e-6;
            codecs.semantic_encoders[1].set_params(&params).unwrap();
            let up = codecs.identity_loss(&scene.modalities, &scene.truth, 1.0).unwrap();
            params[i] = orig - 1e-6;
            codecs.semantic_encoders[1].set_params(&params).unwrap();
            let down = codecs.identity_loss(&scene.modalities, &scene.truth, 1.0).unwrap();
            params[i] = orig;
            codecs.semantic_encoders[1].set_params(&params).unwrap();
            let num = (up - down) / 2e-6;
            assert!((analytic[i] - num).abs() <= 1e-4 * num.abs().max(1e-2), "{i}: {} vs {num}", analytic[i]);
        }
    }

    #[test]
    fn sections_round_trip() {
        let codecs = Codecs::new(small_dims(), &mut rng_from_seed(1)).unwrap();
        let owned: Vec<(String, Mlp<f64>)> = codecs.sections().into_iter().map(|(n, m)| (n, m.clone())).collect();
        assert_eq!(owned.len(), 6);
        let back = Codecs::from_sections(small_dims(), owned.clone()).unwrap();
        assert_eq!(back, codecs);
        let bigger = CodecDims { hidden: 7, ..small_dims() };
        assert!(Codecs::from_sections(bigger, owned).is_err());
    }

    proptest! {
        #[test]
        fn normalized_power_is_exact(raw in proptest::collection::vec(-10.0f64..10.0, 16), power in 0.1f64..4.0) {
            prop_assume!(raw.iter().any(|v| v.abs() > 1e-6));
            let out = power_normalize(&raw, power, 8).unwrap();
            let e: f64 = out.iter().map(|v| v * v).sum();
            prop_assert!((e - power * 8.0).abs() <= 1e-9 * power * 8.0);
        }

        #[test]
        fn loss_is_relabel_equivariant(logits in proptest::collection::vec(-3.0f64..3.0, 12), labels in proptest::collection::vec(0u8..3, 4)) {
            let truth = SegmentationMap::new(2, 2, 3, labels.clone()).unwrap();
            let a = cross_entropy(&probability_map(&logits, 2, 2, 3).unwrap(), &truth).unwrap();
            let perm = [2usize, 0, 1];
            let mut z = vec![0.0; 12];
            for k in 0..4 {
                for g in 0..3 {
                    z[k * 3 + perm[g]] = logits[k * 3 + g];
                }
            }
            let relabeled = SegmentationMap::new(2, 2, 3, labels.iter().map(|&l| perm[l as usize] as u8).collect()).unwrap();
            let b = cross_entropy(&probability_map(&z, 2, 2, 3).unwrap(), &relabeled).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
