//! DDPM forward and reverse processes, per-split training, and sampling from
//! recorded exogenous noise.
//!
//! Step indices run `1..=T`. The reverse update is
//! `x_{t-1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z` with `σ_t = √β_t` and
//! `z = 0` at `t = 1`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{batch_loss_gradient, Architecture, DenoiserParams, RngStream, Tensor};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "schedule needs T >= 1 and 0 < {beta_start} <= {beta_end} < 1"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigmas = betas.iter().map(|b| b.sqrt()).collect();
        Ok(NoiseSchedule {
            steps,
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }

    fn index(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.index(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[self.index(t)]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[self.index(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `(1/√α_t, β_t/√(1−ᾱ_t), σ_t)`.
    pub fn step_coefficients(&self, t: usize) -> (f64, f64, f64) {
        let i = self.index(t);
        (
            1.0 / self.alphas[i].sqrt(),
            self.betas[i] / (1.0 - self.alpha_bars[i]).sqrt(),
            self.sigmas[i],
        )
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

pub fn q_sample_f64(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    eps.ensure_shape(x0.shape())?;
    Tensor::from_f64(
        x0.shape().to_vec(),
        &q_sample_f64(&x0.to_f64(), t, &eps.to_f64(), schedule),
    )
}

/// One reverse step on double-precision state; `z` is `None` for no noise.
pub fn ddpm_step_f64(
    x_t: &[f64],
    t: usize,
    predicted_noise: &[f64],
    z: Option<&[f64]>,
    schedule: &NoiseSchedule,
) -> Vec<f64> {
    let (inv_sqrt_alpha, eps_coef, sigma) = schedule.step_coefficients(t);
    let mut out: Vec<f64> = x_t
        .iter()
        .zip(predicted_noise)
        .map(|(x, e)| (x - eps_coef * e) * inv_sqrt_alpha)
        .collect();
    if let Some(z) = z {
        out.iter_mut().zip(z).for_each(|(o, zi)| *o += sigma * zi);
    }
    out
}

pub fn ddpm_step(
    x_t: &Tensor,
    t: usize,
    predicted_noise: &Tensor,
    z: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    predicted_noise.ensure_shape(x_t.shape())?;
    z.ensure_shape(x_t.shape())?;
    if t == 1 && z.data().iter().any(|&v| v != 0.0) {
        return Err(Error::invalid("z must be zero at t = 1"));
    }
    let z = z.to_f64();
    let out = ddpm_step_f64(
        &x_t.to_f64(),
        t,
        &predicted_noise.to_f64(),
        Some(&z),
        schedule,
    );
    Tensor::from_f64(x_t.shape().to_vec(), &out)
}

/// Everything needed to replay a trajectory's exogenous noise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub version: u32,
    pub seed: u64,
    pub stream_id: u64,
    pub algorithm_id: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub shape: Vec<usize>,
}

impl NoiseRecord {
    pub fn new(seed: u64, stream_id: u64, steps: usize, shape: Vec<usize>) -> Self {
        NoiseRecord {
            version: RECORD_VERSION,
            seed,
            stream_id,
            algorithm_id: crate::numerics::rng::ALGORITHM_ID.to_string(),
            steps,
            shape,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    fn block(&self) -> u64 {
        RngStream::words_for(self.dim())
    }

    fn check(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.algorithm_id != crate::numerics::rng::ALGORITHM_ID {
            return Err(Error::Format(format!("unknown rng {}", self.algorithm_id)));
        }
        if self.steps != schedule.steps {
            return Err(Error::invalid(format!(
                "record has T={} but schedule has T={}",
                self.steps, schedule.steps
            )));
        }
        Ok(())
    }

    /// `x_T`, drawn at counter 0.
    pub fn initial_noise(&self) -> Vec<f64> {
        RngStream::at(self.seed, self.stream_id, 0)
            .normals(self.dim())
            .0
    }

    /// `z_t` for `t >= 2`, drawn at counter `t · block`; `None` at `t = 1`.
    pub fn step_noise(&self, t: usize) -> Option<Vec<f64>> {
        (t >= 2).then(|| {
            RngStream::at(self.seed, self.stream_id, t as u64 * self.block())
                .normals(self.dim())
                .0
        })
    }
}

/// Runs the reverse process from `record`'s noise in double precision.
pub fn sample_f64<F>(denoise: F, record: &NoiseRecord, schedule: &NoiseSchedule) -> Result<Vec<f64>>
where
    F: Fn(&[f64], usize) -> Vec<f64>,
{
    record.check(schedule)?;
    let mut x = record.initial_noise();
    for t in (1..=schedule.steps).rev() {
        let eps = denoise(&x, t);
        if eps.len() != x.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.len()],
                actual: vec![eps.len()],
            });
        }
        let z = record.step_noise(t);
        x = ddpm_step_f64(&x, t, &eps, z.as_deref(), schedule);
    }
    Ok(x)
}

pub fn sample<F>(denoise: F, record: &NoiseRecord, schedule: &NoiseSchedule) -> Result<Tensor>
where
    F: Fn(&[f64], usize) -> Vec<f64>,
{
    let x = sample_f64(denoise, record, schedule)?;
    Tensor::from_f64(record.shape.clone(), &x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `learning_rate` down to zero at the last step.
    #[default]
    Cosine,
}

impl LrSchedule {
    fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
            }
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 2e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden: vec![128, 128],
            seed: 0,
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

impl TrainingConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainingConfig {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let rates = [
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
        ];
        if self.epochs == 0 || self.batch_size == 0 || rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainingConfig, lr: f64) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains one denoiser on `dataset[split]` with the noise-prediction loss.
/// Each epoch visits the split in shuffled minibatches; every visit draws a
/// fresh `t ~ U{1..T}` and `ε ~ N(0, I)`. Deterministic in `(split, config)`.
pub fn train_model(
    split: &[usize],
    dataset: &[Tensor],
    config: &TrainingConfig,
    schedule: &NoiseSchedule,
) -> Result<DenoiserParams> {
    config.validate()?;
    if split.is_empty() {
        return Err(Error::invalid("cannot train on an empty split"));
    }
    if let Some(&bad) = split.iter().find(|&&j| j >= dataset.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: dataset.len(),
        });
    }
    let shape = dataset[split[0]].shape().to_vec();
    let data: Vec<Vec<f64>> = split
        .iter()
        .map(|&j| {
            dataset[j].ensure_shape(&shape)?;
            Ok(dataset[j].to_f64())
        })
        .collect::<Result<_>>()?;
    let dim = shape.iter().product();

    let template = DenoiserParams::init(Architecture::new(dim, config.hidden.clone()), config.seed)?;
    let mut master: Vec<f64> = template.flat().iter().map(|&w| f64::from(w)).collect();
    let mut adam = Adam::new(master.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut noise = RngStream::new(config.seed, 1);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let arch = template.arch.clone();
    let mut ts = Vec::with_capacity(config.batch_size);
    let mut xt = Vec::with_capacity(config.batch_size * dim);
    let mut eps_rows = Vec::with_capacity(config.batch_size * dim);
    let total = config.epochs * data.len().div_ceil(config.batch_size);
    let mut step = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            // The forward pass sees the single-precision weights that get stored.
            let widened: Vec<f64> = master.iter().map(|&w| f64::from(w as f32)).collect();
            ts.clear();
            xt.clear();
            eps_rows.clear();
            for &i in batch {
                let t = rng.random_range(1..=schedule.steps);
                let (eps, next) = noise.normals(dim);
                noise = next;
                xt.extend(q_sample_f64(&data[i], t, &eps, schedule));
                eps_rows.extend(eps);
                ts.push(t);
            }
            let (_, mut grad) = batch_loss_gradient(&arch, &widened, &xt, &ts, &eps_rows)?;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let lr = config.lr_schedule.rate(config.learning_rate, step, total);
            step += 1;
            adam.update(&mut master, &grad, config, lr);
        }
    }
    template.with_flat(&to_f32(&master))
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Mean noise-prediction loss over a fixed set of `(x₀, t, ε)` triples.
pub fn probe_loss(
    params: &DenoiserParams,
    dataset: &[Tensor],
    schedule: &NoiseSchedule,
    draws_per_item: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = RngStream::new(seed, 7);
    let mut total = 0.0;
    let mut count = 0usize;
    for item in dataset {
        let x0 = item.to_f64();
        for _ in 0..draws_per_item {
            let t = rng.random_range(1..=schedule.steps);
            let (eps, next) = noise.normals(x0.len());
            noise = next;
            let xt = q_sample_f64(&x0, t, &eps, schedule);
            let pred = params.predict_f64(&xt, t)?;
            total += pred.iter().zip(&eps).map(|(p, e)| (p - e).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}
