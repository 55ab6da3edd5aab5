//! Time-conditioned noise predictor `ε_θ(x_t, t)` and its training loop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{complex_to_real, EpsilonModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::neuralnet::{sinusoidal_time_embedding, Gradients, Mlp};
use crate::random::{rng_from_seed, SimRng};
use crate::scalar::Scalar;

/// Number of draws used to measure the per-entry training signal power.
pub const POWER_CALIBRATION_DRAWS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            decay: 0.95,
            epochs: 100,
            batch_size: 32,
            steps_per_epoch: 100,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train: need learning_rate > 0 and 0 < decay <= 1, got {} / {}",
                self.learning_rate, self.decay
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidParameter("train: epochs, batch_size, steps_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorArch {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Also feed the normalized estimate to the network next to `x_t`.
    pub condition_on_estimate: bool,
}

impl Default for PredictorArch {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            embedding_dim: 32,
            condition_on_estimate: false,
        }
    }
}

/// `ε_θ`: an MLP over `[x_t, (condition), embed(t)]` predicting the noise in `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor<T> {
    net: Mlp<T>,
    embedding_dim: usize,
    data_dim: usize,
    conditioned: bool,
    signal_power: f64,
}

impl<T: Scalar> NoisePredictor<T> {
    pub fn new<R: Rng + ?Sized>(data_dim: usize, signal_power: f64, arch: &PredictorArch, rng: &mut R) -> Result<Self> {
        let input = data_dim * if arch.condition_on_estimate { 2 } else { 1 } + arch.embedding_dim;
        let dims: Vec<usize> = std::iter::once(input)
            .chain(arch.hidden.iter().copied())
            .chain(std::iter::once(data_dim))
            .collect();
        Self::from_parts(Mlp::new(&dims, rng)?, arch.embedding_dim, signal_power)
    }

    /// Wraps a network; conditioning is inferred from its input width.
    pub fn from_parts(net: Mlp<T>, embedding_dim: usize, signal_power: f64) -> Result<Self> {
        let data_dim = net.output_dim();
        let rest = net
            .input_dim()
            .checked_sub(embedding_dim)
            .ok_or_else(|| Error::InvalidParameter("embedding wider than network input".into()))?;
        let conditioned = match rest / data_dim.max(1) {
            1 if rest == data_dim => false,
            2 if rest == 2 * data_dim => true,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "network input {} does not fit data dim {data_dim} + embedding {embedding_dim}",
                    net.input_dim()
                )))
            }
        };
        if embedding_dim % 2 != 0 || embedding_dim == 0 {
            return Err(Error::InvalidParameter("embedding dim must be even and positive".into()));
        }
        if !(signal_power > 0.0) {
            return Err(Error::InvalidParameter("signal power must be positive".into()));
        }
        Ok(Self {
            net,
            embedding_dim,
            data_dim,
            conditioned,
            signal_power,
        })
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Length of the real vector the predictor operates on (2·M·N for CSI).
    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn is_conditioned(&self) -> bool {
        self.conditioned
    }

    /// Per-complex-entry signal power `p̂` measured at training time.
    pub fn signal_power(&self) -> f64 {
        self.signal_power
    }

    /// Assembles the network input for step `t`.
    pub fn input(&self, xt: &[T], t: usize, steps: usize, condition: Option<&[T]>) -> Result<Vec<T>> {
        if xt.len() != self.data_dim {
            return Err(Error::dims("noise predictor", (self.data_dim, 1), (xt.len(), 1)));
        }
        let mut input = Vec::with_capacity(self.net.input_dim());
        input.extend_from_slice(xt);
        if self.conditioned {
            let c = condition
                .ok_or_else(|| Error::InvalidParameter("conditioned predictor needs the estimate".into()))?;
            if c.len() != self.data_dim {
                return Err(Error::dims("noise predictor condition", (self.data_dim, 1), (c.len(), 1)));
            }
            input.extend_from_slice(c);
        }
        input.extend(sinusoidal_time_embedding::<T>(t, self.embedding_dim, steps)?);
        Ok(input)
    }

    /// Denoising loss `mean((ε − ε_θ(x_t, t))²)` for one sample and its parameter gradient.
    pub fn loss_and_grad(
        &self,
        x0: &[T],
        t: usize,
        eps: &[T],
        condition: Option<&[T]>,
        schedule: &NoiseSchedule<T>,
    ) -> Result<(T, Gradients<T>)> {
        let mut grads = Gradients::zeros_like(&self.net);
        let loss = self.accumulate_loss(x0, t, eps, condition, schedule, T::one(), &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `weight · ∇loss` into `grads` and returns the unweighted loss.
    #[allow(clippy::too_many_arguments)]
    fn accumulate_loss(
        &self,
        x0: &[T],
        t: usize,
        eps: &[T],
        condition: Option<&[T]>,
        schedule: &NoiseSchedule<T>,
        weight: T,
        grads: &mut Gradients<T>,
    ) -> Result<T> {
        let xt = schedule.q_sample(x0, t, eps)?;
        let input = self.input(&xt, t, schedule.steps(), condition)?;
        let (pred, cache) = self.net.forward(&input)?;
        let d = T::lit(self.data_dim as f64);
        let mut loss = T::zero();
        let upstream: Vec<T> = pred
            .iter()
            .zip(eps)
            .map(|(&p, &e)| {
                let r = p - e;
                loss = loss + r * r;
                T::lit(2.0) * r / d * weight
            })
            .collect();
        self.net.backward_accumulate(&cache, &upstream, grads)?;
        Ok(loss / d)
    }
}

/// One training draw for the denoising objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingExample<T> {
    pub x0: Vec<T>,
    pub t: usize,
    pub eps: Vec<T>,
    pub condition: Option<Vec<T>>,
}

impl<T: Scalar> NoisePredictor<T> {
    /// Adds the gradient of the batch-mean loss into `grads` and returns that mean.
    pub fn accumulate_batch_loss(
        &self,
        batch: &[DenoisingExample<T>],
        schedule: &NoiseSchedule<T>,
        grads: &mut Gradients<T>,
    ) -> Result<T> {
        let width = self.net.input_dim();
        let mut inputs = Vec::with_capacity(batch.len() * width);
        for ex in batch {
            let xt = schedule.q_sample(&ex.x0, ex.t, &ex.eps)?;
            inputs.extend(self.input(&xt, ex.t, schedule.steps(), ex.condition.as_deref())?);
        }
        let (pred, cache) = self.net.forward_batch(&inputs, batch.len())?;
        let scale = T::lit(2.0 / (self.data_dim * batch.len()) as f64);
        let mut loss = T::zero();
        let mut upstream = Vec::with_capacity(pred.len());
        for (p_row, ex) in pred.chunks_exact(self.data_dim).zip(batch) {
            if ex.eps.len() != self.data_dim {
                return Err(Error::dims("noise target", (self.data_dim, 1), (ex.eps.len(), 1)));
            }
            for (&p, &e) in p_row.iter().zip(&ex.eps) {
                let r = p - e;
                loss = loss + r * r;
                upstream.push(scale * r);
            }
        }
        self.net.backward_batch_accumulate(&cache, &upstream, grads)?;
        Ok(loss / T::lit((self.data_dim * batch.len()) as f64))
    }
}

impl<T: Scalar> EpsilonModel<T> for NoisePredictor<T> {
    fn predict_eps(&self, xt: &[T], t: usize, steps: usize, condition: &[T]) -> Result<Vec<T>> {
        let input = self.input(xt, t, steps, Some(condition))?;
        self.net.predict(&input)
    }
}

/// Source of clean training samples `x₀` (channel matrices).
pub trait ChannelSampler {
    fn sample(&mut self, rng: &mut SimRng) -> ComplexMatrix<f64>;
}

impl<F: FnMut(&mut SimRng) -> ComplexMatrix<f64>> ChannelSampler for F {
    fn sample(&mut self, rng: &mut SimRng) -> ComplexMatrix<f64> {
        self(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over the first and last `window` steps.
    pub fn head_tail(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.step_losses.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (
            mean(&self.step_losses[..w]),
            mean(&self.step_losses[self.step_losses.len() - w..]),
        )
    }
}

/// Converts a channel draw into the unit-variance real vector the diffusion runs on.
pub fn normalized_vector<T: Scalar>(h: &ComplexMatrix<f64>, signal_power: f64) -> Vec<T> {
    let scale = (2.0 / signal_power).sqrt();
    complex_to_real(h).into_iter().map(|v| T::lit(v * scale)).collect()
}

/// Trains `ε_θ` on clean draws from `sampler` with the standard denoising objective.
///
/// Each sample: draw `x₀`, a uniform step `t`, Gaussian `ε`; regress `ε` from
/// `q_sample(x₀, t, ε)`. When conditioning is enabled the condition is the
/// clean sample re-noised to a uniformly drawn level at or above `t`.
pub fn train_noise_predictor<T: Scalar, S: ChannelSampler>(
    sampler: &mut S,
    schedule: &NoiseSchedule<T>,
    arch: &PredictorArch,
    cfg: &TrainConfig,
) -> Result<(NoisePredictor<T>, TrainReport)> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.rng_seed);

    let probe = sampler.sample(&mut rng);
    let entries = (probe.rows() * probe.cols()) as f64;
    let mut power = probe.frobenius_norm_sq() / entries;
    for _ in 1..POWER_CALIBRATION_DRAWS {
        power += sampler.sample(&mut rng).frobenius_norm_sq() / entries;
    }
    let signal_power = power / POWER_CALIBRATION_DRAWS as f64;
    let data_dim = 2 * probe.rows() * probe.cols();

    let mut predictor = NoisePredictor::<T>::new(data_dim, signal_power, arch, &mut rng)?;
    let steps = schedule.steps();
    let mut report = TrainReport {
        step_losses: Vec::with_capacity(cfg.epochs * cfg.steps_per_epoch),
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let lr = T::lit(cfg.learning_rate_at(epoch));
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            batch.clear();
            for _ in 0..cfg.batch_size {
                let x0: Vec<T> = normalized_vector(&sampler.sample(&mut rng), signal_power);
                let t = rng.random_range(1..=steps);
                let eps: Vec<T> = (0..data_dim).map(|_| T::lit(rng.sample(StandardNormal))).collect();
                let condition = if predictor.is_conditioned() {
                    let level = rng.random_range(t..=steps);
                    let sd = schedule.noise_to_signal(level).sqrt();
                    Some(
                        x0.iter()
                            .map(|&x| x + sd * T::lit(rng.sample::<f64, _>(StandardNormal)))
                            .collect::<Vec<T>>(),
                    )
                } else {
                    None
                };
                batch.push(DenoisingExample { x0, t, eps, condition });
            }
            let mut grads = Gradients::zeros_like(predictor.net());
            let batch_loss = predictor.accumulate_batch_loss(&batch, schedule, &mut grads)?.as_f64();
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            predictor.net_mut().sgd_step(&grads, lr)?;
            report.step_losses.push(batch_loss);
            epoch_loss += batch_loss;
        }
        report.epoch_losses.push(epoch_loss / cfg.steps_per_epoch as f64);
    }
    if !predictor.net().is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs });
    }
    Ok((predictor, report))
}
