//! Joint training of the decoder RNN and the post-CBHG head: l1 losses on
//! both spectrogram outputs plus l2 regularization over all trainable
//! parameters, optimized with Adam under exponential learning-rate decay.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{masked_mae, ConditioningMode, DecodeMode, DurianModel, ModelError};
use crate::corpus::TrainingExample;
use crate::nn::{ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Per-step multiplicative decay of the learning rate.
    pub lr_decay: f64,
    pub lambda_l2: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 200,
            batch_size: 4,
            seed: 0,
            lr: 1e-3,
            lr_decay: 0.9995,
            lambda_l2: 1e-6,
            checkpoint_every: 100,
        }
    }
}

/// Per-step loss report; `total` is what the optimizer descends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss_mel: f64,
    pub loss_linear: f64,
    pub l2_penalty: f64,
    pub total: f64,
}

/// Adam with exponential learning-rate decay. Moment buffers are keyed by
/// parameter index; non-trainable entries stay untouched.
pub struct Adam {
    pub lr0: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_l2: f64,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, opts: &TrainOptions) -> Self {
        let m = params
            .ids()
            .map(|id| Array2::zeros(params.value(id).dim()))
            .collect();
        let v = params
            .ids()
            .map(|id| Array2::zeros(params.value(id).dim()))
            .collect();
        Adam {
            lr0: opts.lr,
            decay: opts.lr_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda_l2: opts.lambda_l2,
            step: 0,
            m,
            v,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.lr0 * self.decay.powi(self.step as i32)
    }

    /// One update from the accumulated gradients. Fails if any parameter
    /// stops being finite.
    pub fn apply(&mut self, params: &mut ParamSet) -> Result<(), String> {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for id in params.ids() {
            if !params.is_trainable(id) {
                continue;
            }
            let name = params.name(id).to_string();
            let idx = id.index();
            let grad = params.grad(id).clone();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut *m).and(&grad).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&grad).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let value = params.value_mut(id);
            for ((p, m), v) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
                if !p.is_finite() {
                    return Err(format!("parameter {name} went non-finite"));
                }
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, m: Vec<Array2<f64>>, v: Vec<Array2<f64>>) {
        self.m = m;
        self.v = v;
    }
}

impl ParamId {
    fn index(&self) -> usize {
        self.0
    }
}

/// One optimizer step over a batch of phrases: teacher-forced forward and
/// backward per phrase (gradients averaged), one l2 pass, one Adam update.
pub fn train_step(
    model: &mut DurianModel,
    batch: &[&TrainingExample],
    opt: &mut Adam,
    seed: u64,
) -> Result<StepStats, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::BadConfig("empty batch".into()));
    }
    model.params.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mode = model.cfg.conditioning_mode;
    let step_now = opt.step;

    let mut mel_sum = 0.0;
    let mut lin_sum = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let pass_seed = seed ^ (0x9E3779B97F4A7C15u64.wrapping_mul(i as u64 + 1));
        let (mel_l, lin_l) = model.with_forward(true, pass_seed, |m, fwd| {
            let f0 = match mode {
                ConditioningMode::Note => None,
                ConditioningMode::F0Scalar => Some(ex.f0_norm.as_slice()),
            };
            let cond = m.conditions_from_plan(fwd, &ex.plan, f0)?;
            let mel_tgt = &ex.mel_target.frames;
            let mel_pred = m.decode(fwd, cond, Some(mel_tgt), DecodeMode::TeacherForced)?;
            let lin_pred = m.postnet_linear(fwd, mel_pred)?;
            let ones = vec![1.0; mel_tgt.nrows()];
            let mel_l = masked_mae(fwd, mel_pred, mel_tgt, &ones);
            let lin_l = masked_mae(fwd, lin_pred, &ex.linear_target.frames, &ones);
            let data = fwd.tape.add(mel_l, lin_l);
            let scaled = fwd.tape.scalar_affine(data, scale, 0.0);
            fwd.backward(scaled);
            Ok::<(f64, f64), ModelError>((
                fwd.tape.value(mel_l)[(0, 0)],
                fwd.tape.value(lin_l)[(0, 0)],
            ))
        })?;
        if !mel_l.is_finite() || !lin_l.is_finite() {
            let grad_norms = gradient_norms(&model.params);
            return Err(ModelError::NonFinite {
                step: step_now,
                detail: format!(
                    "loss on phrase '{}' (mel {mel_l}, linear {lin_l}); grad norms {grad_norms}",
                    ex.phrase_id
                ),
            });
        }
        mel_sum += mel_l;
        lin_sum += lin_l;
    }

    // l2 penalty over all trainable parameters, on its own tape so its
    // gradient contribution (2 λ θ) flows like any other term.
    let lambda = opt.lambda_l2;
    let l2_penalty = model.with_forward(true, 0, |_m, fwd| {
        let ids = fwd.params().trainable_ids();
        let mut acc = fwd.tape.scalar(0.0);
        for id in ids {
            let v = fwd.param(id);
            let sq = fwd.tape.mul(v, v);
            let s = fwd.tape.sum(sq);
            acc = fwd.tape.add(acc, s);
        }
        let weighted = fwd.tape.scalar_affine(acc, lambda, 0.0);
        fwd.backward(weighted);
        fwd.tape.value(weighted)[(0, 0)]
    });

    opt.apply(&mut model.params)
        .map_err(|detail| ModelError::NonFinite {
            step: step_now,
            detail,
        })?;
    if !model.params.all_finite() {
        return Err(ModelError::NonFinite {
            step: step_now,
            detail: "parameters non-finite after update".into(),
        });
    }

    let loss_mel = mel_sum / batch.len() as f64;
    let loss_linear = lin_sum / batch.len() as f64;
    Ok(StepStats {
        loss_mel,
        loss_linear,
        l2_penalty,
        total: loss_mel + loss_linear + l2_penalty,
    })
}

fn gradient_norms(params: &ParamSet) -> String {
    let mut worst: Vec<(String, f64)> = params
        .ids()
        .filter(|&id| params.is_trainable(id))
        .map(|id| {
            let norm = params.grad(id).iter().map(|g| g * g).sum::<f64>().sqrt();
            (params.name(id).to_string(), norm)
        })
        .collect();
    // NaN norms sort first; they are exactly what the diagnostic is for
    worst.sort_by(|a, b| match (a.1.is_nan(), b.1.is_nan()) {
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        _ => b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal),
    });
    worst
        .iter()
        .take(3)
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The training batch for a given optimizer step: a pure function of
/// (seed, step, corpus size, batch size), so interrupted runs resume on
/// the same schedule.
pub fn batch_indices(seed: u64, step: u64, n_examples: usize, batch_size: usize) -> Vec<usize> {
    let batch_size = batch_size.max(1).min(n_examples.max(1));
    let batches_per_epoch = n_examples.div_ceil(batch_size).max(1) as u64;
    let epoch = step / batches_per_epoch;
    let slot = (step % batches_per_epoch) as usize;
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x51_7C_C1_B7_27_22_0A_95));
    order.shuffle(&mut rng);
    order
        .into_iter()
        .skip(slot * batch_size)
        .take(batch_size)
        .collect()
}

/// Drive [`train_step`] for `opts.steps` total steps, starting from
/// `start_step` (resume point). `on_step` receives the step index, its
/// stats and the wall-clock milliseconds it took; checkpointing is the
/// caller's job.
pub fn train_loop(
    model: &mut DurianModel,
    opt: &mut Adam,
    examples: &[TrainingExample],
    opts: &TrainOptions,
    start_step: u64,
    mut on_step: impl FnMut(u64, &StepStats, u128) -> Result<(), ModelError>,
) -> Result<(), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::BadConfig("no training examples".into()));
    }
    for step in start_step..opts.steps {
        let started = std::time::Instant::now();
        let idx = batch_indices(opts.seed, step, examples.len(), opts.batch_size);
        let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &examples[i]).collect();
        let step_seed = opts.seed ^ step.wrapping_mul(0x2545F4914F6CDD1D);
        let stats = train_step(model, &batch, opt, step_seed)?;
        on_step(step, &stats, started.elapsed().as_millis())?;
    }
    Ok(())
}
