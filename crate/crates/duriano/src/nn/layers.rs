//! Parameter storage and the layer zoo: fully-connected, embedding,
//! batch norm, 1-D convolution (and the bank), highway, GRU and CBHG.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::NnError;

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

struct ParamEntry {
    name: String,
    value: Array2<f64>,
    grad: Array2<f64>,
    trainable: bool,
}

/// Named parameter collection. Names are unique; gradients accumulate until
/// [`ParamSet::zero_grads`].
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Array2<f64>,
        trainable: bool,
    ) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let grad = Array2::zeros(value.dim());
        self.entries.push(ParamEntry {
            name: name.clone(),
            value,
            grad,
            trainable,
        });
        let id = self.entries.len() - 1;
        self.index.insert(name, id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Array2<f64>) {
        self.entries[id.0].grad += delta;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .map(ParamId)
            .collect()
    }

    /// Σ θ² over trainable parameters.
    pub fn sum_squares(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.value.iter().all(|v| v.is_finite()))
    }
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    // Box-Muller on the seeded stream keeps init reproducible.
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Per-pass context: the tape, a parameter binding cache, the train/eval
/// mode and a seeded RNG for dropout masks.
pub struct Forward<'p> {
    pub tape: Tape,
    params: &'p mut ParamSet,
    bound: Vec<Option<Var>>,
    pub training: bool,
    rng: ChaCha8Rng,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p mut ParamSet, training: bool, seed: u64) -> Self {
        let bound = vec![None; params.len()];
        Forward {
            tape: Tape::new(),
            params,
            bound,
            training,
            rng: rand::SeedableRng::seed_from_u64(seed),
        }
    }

    /// Bind a parameter onto the tape (once per pass; repeated uses share
    /// the node so gradients accumulate across time steps).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let trainable = self.params.is_trainable(id);
        let v = self.tape.leaf(self.params.value(id).clone(), trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.tape.constant(value)
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    /// Inverted dropout with a mask drawn from the pass RNG. The caller
    /// decides whether it applies outside training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let dim = self.tape.value(x).dim();
        let rng = &mut self.rng;
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.tape.mul_const(x, mask)
    }

    /// Exponential-moving-average update of a non-trainable statistics
    /// parameter (single row).
    pub fn ema_update(&mut self, id: ParamId, new_values: &[f64], momentum: f64) {
        let value = self.params.value_mut(id);
        debug_assert_eq!(value.len(), new_values.len());
        for (v, &n) in value.iter_mut().zip(new_values.iter()) {
            *v = momentum * *v + (1.0 - momentum) * n;
        }
    }

    /// Reverse pass and gradient accumulation into the parameter set.
    pub fn backward(&mut self, loss: Var) {
        self.tape.backward(loss);
        for (idx, bound) in self.bound.iter().enumerate() {
            if let Some(var) = bound {
                if let Some(g) = self.tape.grad(*var) {
                    let g = g.clone();
                    self.params.accumulate_grad(ParamId(idx), &g);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

/// y = act(x W + b).
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let w = ps.add(format!("{name}.w"), uniform_fan_in(rng, in_dim, out_dim, in_dim), true)?;
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, out_dim)), true)?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var, act: Activation) -> Result<Var, NnError> {
        let got = fwd.tape.value(x).ncols();
        if got != self.in_dim {
            return Err(NnError::ShapeMismatch {
                op: "fully_connected",
                detail: format!("input has {got} features, layer expects {}", self.in_dim),
            });
        }
        let w = fwd.param(self.w);
        let b = fwd.param(self.b);
        let xw = fwd.tape.matmul(x, w);
        let y = fwd.tape.add_row_broadcast(xw, b);
        Ok(apply_activation(&mut fwd.tape, y, act))
    }
}

pub(crate) fn apply_activation(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Linear => x,
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Row-gather table lookup with scatter-add backward.
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let table = ps.add(format!("{name}.table"), normal_init(rng, vocab, dim, 0.01), true)?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn forward(&self, fwd: &mut Forward, ids: &[usize]) -> Result<Var, NnError> {
        for &id in ids {
            if id >= self.vocab {
                return Err(NnError::IdOutOfRange {
                    id,
                    vocab: self.vocab,
                });
            }
        }
        let table = fwd.param(self.table);
        Ok(fwd.tape.gather(table, ids))
    }
}

/// Column-wise batch normalization over the time axis. Training mode uses
/// batch statistics and refreshes running averages; inference uses the
/// stored running statistics.
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Result<Self, NnError> {
        let gamma = ps.add(format!("{name}.gamma"), Array2::from_elem((1, dim), 1.0), true)?;
        let beta = ps.add(format!("{name}.beta"), Array2::zeros((1, dim)), true)?;
        let running_mean = ps.add(format!("{name}.running_mean"), Array2::zeros((1, dim)), false)?;
        let running_var =
            ps.add(format!("{name}.running_var"), Array2::from_elem((1, dim), 1.0), false)?;
        Ok(BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            dim,
            momentum: 0.9,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Var {
        let x_hat = if fwd.training {
            let (means, vars) = fwd.tape.column_stats(x);
            fwd.ema_update(self.running_mean, &means, self.momentum);
            fwd.ema_update(self.running_var, &vars, self.momentum);
            fwd.tape.batch_norm_train(x, self.eps)
        } else {
            let mean = fwd.params.value(self.running_mean).row(0).to_vec();
            let var = fwd.params.value(self.running_var).row(0).to_vec();
            let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let shift: Vec<f64> = mean.iter().zip(scale.iter()).map(|(m, s)| -m * s).collect();
            fwd.tape.col_affine_const(x, scale, shift)
        };
        let g = fwd.param(self.gamma);
        let b = fwd.param(self.beta);
        let scaled = fwd.tape.mul_row_broadcast(x_hat, g);
        fwd.tape.add_row_broadcast(scaled, b)
    }
}

/// Same-padded 1-D convolution over the time axis.
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        if k == 0 {
            return Err(NnError::BadConfig("conv kernel size must be >= 1".into()));
        }
        let w = ps.add(
            format!("{name}.w"),
            uniform_fan_in(rng, k * in_dim, out_dim, k * in_dim),
            true,
        )?;
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, out_dim)), true)?;
        Ok(Conv1d {
            w,
            b,
            k,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var, NnError> {
        let got = fwd.tape.value(x).ncols();
        if got != self.in_dim {
            return Err(NnError::ShapeMismatch {
                op: "conv1d",
                detail: format!("input has {got} channels, conv expects {}", self.in_dim),
            });
        }
        let w = fwd.param(self.w);
        let b = fwd.param(self.b);
        let y = fwd.tape.conv1d_same(x, w, self.k);
        Ok(fwd.tape.add_row_broadcast(y, b))
    }
}

/// Bank of same-padded convolutions with kernel sizes 1..=K, each followed
/// by batch norm and ReLU, concatenated channel-wise.
pub struct Conv1dBank {
    convs: Vec<Conv1d>,
    norms: Vec<BatchNorm>,
    pub k_max: usize,
    pub channels: usize,
}

impl Conv1dBank {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        channels: usize,
        k_max: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        if k_max == 0 {
            return Err(NnError::BadConfig("conv bank needs K >= 1".into()));
        }
        let mut convs = Vec::with_capacity(k_max);
        let mut norms = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            convs.push(Conv1d::new(ps, &format!("{name}.conv{k}"), in_dim, channels, k, rng)?);
            norms.push(BatchNorm::new(ps, &format!("{name}.bn{k}"), channels)?);
        }
        Ok(Conv1dBank {
            convs,
            norms,
            k_max,
            channels,
        })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var, NnError> {
        let mut parts = Vec::with_capacity(self.k_max);
        for (conv, norm) in self.convs.iter().zip(self.norms.iter()) {
            let y = conv.forward(fwd, x)?;
            let y = norm.forward(fwd, y);
            parts.push(fwd.tape.relu(y));
        }
        Ok(fwd.tape.concat_cols(&parts))
    }
}

/// Gated residual stack: per layer y = t ⊙ h(x) + (1 − t) ⊙ x.
pub struct Highway {
    pairs: Vec<(Linear, Linear)>,
    pub dim: usize,
}

impl Highway {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let mut pairs = Vec::with_capacity(layers);
        for i in 0..layers {
            let h = Linear::new(ps, &format!("{name}.h{i}"), dim, dim, rng)?;
            let t = Linear::new(ps, &format!("{name}.t{i}"), dim, dim, rng)?;
            // Bias the gates toward carrying the input at init.
            ps.value_mut(t.b).fill(-1.0);
            pairs.push((h, t));
        }
        Ok(Highway { pairs, dim })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var, NnError> {
        let mut cur = x;
        for (h_lin, t_lin) in &self.pairs {
            let h = h_lin.forward(fwd, cur, Activation::Relu)?;
            let t = t_lin.forward(fwd, cur, Activation::Sigmoid)?;
            let th = fwd.tape.mul(t, h);
            let one_minus_t = fwd.tape.scalar_affine(t, -1.0, 1.0);
            let carry = fwd.tape.mul(one_minus_t, cur);
            cur = fwd.tape.add(th, carry);
        }
        Ok(cur)
    }
}

/// Gated recurrent unit: update gate z, reset gate r, candidate c,
/// h_t = z ⊙ h_{t-1} + (1 − z) ⊙ c.
pub struct Gru {
    /// input weights, `[in_dim, 3H]` packed as z | r | c
    pub wx: ParamId,
    /// hidden weights for z and r, `[H, 2H]`
    pub wh: ParamId,
    /// hidden weights for the candidate, `[H, H]`
    pub wc: ParamId,
    /// bias, `[1, 3H]`
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let wx = ps.add(
            format!("{name}.wx"),
            uniform_fan_in(rng, in_dim, 3 * hidden, in_dim),
            true,
        )?;
        let wh = ps.add(
            format!("{name}.wh"),
            uniform_fan_in(rng, hidden, 2 * hidden, hidden),
            true,
        )?;
        let wc = ps.add(
            format!("{name}.wc"),
            uniform_fan_in(rng, hidden, hidden, hidden),
            true,
        )?;
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, 3 * hidden)), true)?;
        Ok(Gru {
            wx,
            wh,
            wc,
            b,
            in_dim,
            hidden,
        })
    }

    /// One step from precomputed input gates `gx = x_t W_x + b` ([1, 3H]).
    fn step(&self, fwd: &mut Forward, gx: Var, h_prev: Var) -> Var {
        let hidden = self.hidden;
        let wh = fwd.param(self.wh);
        let wc = fwd.param(self.wc);
        let hz = fwd.tape.matmul(h_prev, wh);
        let zr_x = fwd.tape.slice_cols(gx, 0, 2 * hidden);
        let zr_pre = fwd.tape.add(zr_x, hz);
        let z = {
            let part = fwd.tape.slice_cols(zr_pre, 0, hidden);
            fwd.tape.sigmoid(part)
        };
        let r = {
            let part = fwd.tape.slice_cols(zr_pre, hidden, 2 * hidden);
            fwd.tape.sigmoid(part)
        };
        let rh = fwd.tape.mul(r, h_prev);
        let c_pre = {
            let cx = fwd.tape.slice_cols(gx, 2 * hidden, 3 * hidden);
            let ch = fwd.tape.matmul(rh, wc);
            fwd.tape.add(cx, ch)
        };
        let c = fwd.tape.tanh(c_pre);
        // h = z*h_prev + (1-z)*c = c + z*(h_prev - c)
        let h_minus_c = fwd.tape.sub(h_prev, c);
        let zh = fwd.tape.mul(z, h_minus_c);
        fwd.tape.add(c, zh)
    }

    /// Single-cell update, `x_t` `[1, in_dim]`, `h_prev` `[1, H]`.
    pub fn cell(&self, fwd: &mut Forward, x_t: Var, h_prev: Var) -> Result<Var, NnError> {
        let got = fwd.tape.value(x_t).ncols();
        if got != self.in_dim {
            return Err(NnError::ShapeMismatch {
                op: "gru_cell",
                detail: format!("input has {got} features, cell expects {}", self.in_dim),
            });
        }
        let wx = fwd.param(self.wx);
        let b = fwd.param(self.b);
        let xw = fwd.tape.matmul(x_t, wx);
        let gx = fwd.tape.add_row_broadcast(xw, b);
        Ok(self.step(fwd, gx, h_prev))
    }

    /// Run over a sequence `[T, in_dim]`, zero initial state, returning all
    /// hidden states `[T, H]`.
    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var, NnError> {
        let t_len = fwd.tape.value(x).nrows();
        let got = fwd.tape.value(x).ncols();
        if got != self.in_dim {
            return Err(NnError::ShapeMismatch {
                op: "gru",
                detail: format!("input has {got} features, layer expects {}", self.in_dim),
            });
        }
        let wx = fwd.param(self.wx);
        let b = fwd.param(self.b);
        let xw = fwd.tape.matmul(x, wx);
        let gates = fwd.tape.add_row_broadcast(xw, b);
        let mut h = fwd.constant(Array2::zeros((1, self.hidden)));
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let gx = fwd.tape.slice_rows(gates, t, t + 1);
            h = self.step(fwd, gx, h);
            rows.push(h);
        }
        Ok(fwd.tape.concat_rows(&rows))
    }
}

/// Forward and backward GRU passes concatenated per frame.
pub struct BiGru {
    pub forward_gru: Gru,
    pub backward_gru: Gru,
}

impl BiGru {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        Ok(BiGru {
            forward_gru: Gru::new(ps, &format!("{name}.fwd"), in_dim, hidden, rng)?,
            backward_gru: Gru::new(ps, &format!("{name}.bwd"), in_dim, hidden, rng)?,
        })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var, NnError> {
        let f = self.forward_gru.forward(fwd, x)?;
        let x_rev = fwd.tape.reverse_rows(x);
        let b_rev = self.backward_gru.forward(fwd, x_rev)?;
        let b = fwd.tape.reverse_rows(b_rev);
        Ok(fwd.tape.concat_cols(&[f, b]))
    }
}

/// CBHG hyperparameters. `projections.last()` must equal the input width
/// for the residual connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbhgConfig {
    pub bank_k: usize,
    pub bank_channels: usize,
    pub projections: Vec<usize>,
    pub highway_layers: usize,
    pub highway_dim: usize,
    pub gru_units: usize,
}

/// Convolution bank → max pool (width 2, stride 1) → projections →
/// residual → highway → bidirectional GRU.
pub struct Cbhg {
    bank: Conv1dBank,
    projections: Vec<(Conv1d, BatchNorm)>,
    pre_highway: Option<Linear>,
    highway: Highway,
    bigru: BiGru,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Cbhg {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        cfg: &CbhgConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        if cfg.projections.is_empty() {
            return Err(NnError::BadConfig("cbhg needs at least one projection".into()));
        }
        if *cfg.projections.last().unwrap() != in_dim {
            return Err(NnError::BadConfig(format!(
                "cbhg residual: last projection dim {} != input dim {in_dim}",
                cfg.projections.last().unwrap()
            )));
        }
        let bank = Conv1dBank::new(ps, &format!("{name}.bank"), in_dim, cfg.bank_channels, cfg.bank_k, rng)?;
        let mut projections = Vec::with_capacity(cfg.projections.len());
        let mut prev = cfg.bank_k * cfg.bank_channels;
        for (i, &dim) in cfg.projections.iter().enumerate() {
            let conv = Conv1d::new(ps, &format!("{name}.proj{i}"), prev, dim, 3, rng)?;
            let bn = BatchNorm::new(ps, &format!("{name}.proj_bn{i}"), dim)?;
            projections.push((conv, bn));
            prev = dim;
        }
        let pre_highway = if in_dim != cfg.highway_dim {
            Some(Linear::new(ps, &format!("{name}.pre_highway"), in_dim, cfg.highway_dim, rng)?)
        } else {
            None
        };
        let highway = Highway::new(ps, &format!("{name}.highway"), cfg.highway_dim, cfg.highway_layers, rng)?;
        let bigru = BiGru::new(ps, &format!("{name}.bigru"), cfg.highway_dim, cfg.gru_units, rng)?;
        Ok(Cbhg {
            bank,
            projections,
            pre_highway,
            highway,
            bigru,
            in_dim,
            out_dim: 2 * cfg.gru_units,
        })
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var, NnError> {
        let bank_out = self.bank.forward(fwd, x)?;
        let pooled = fwd.tape.max_pool2(bank_out);
        let mut h = pooled;
        let last = self.projections.len() - 1;
        for (i, (conv, bn)) in self.projections.iter().enumerate() {
            h = conv.forward(fwd, h)?;
            h = bn.forward(fwd, h);
            if i != last {
                h = fwd.tape.relu(h);
            }
        }
        let res = fwd.tape.add(h, x);
        let hw_in = match &self.pre_highway {
            Some(lin) => lin.forward(fwd, res, Activation::Linear)?,
            None => res,
        };
        let hw = self.highway.forward(fwd, hw_in)?;
        self.bigru.forward(fwd, hw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_gradient};
    use ndarray::arr2;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Fixed quasi-random weighting so the scalar test loss depends on every
    /// output element asymmetrically.
    fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
        let dim = tape.value(y).dim();
        let mask =
            Array2::from_shape_fn(dim, |(i, j)| (0.7 * i as f64 + 1.3 * j as f64).sin() + 0.1);
        let weighted = tape.mul_const(y, mask);
        tape.sum(weighted)
    }

    /// Backward once for analytic gradients, then compare each listed
    /// parameter against central finite differences.
    fn check_grads(
        ps: &mut ParamSet,
        ids: &[ParamId],
        seed: u64,
        build: impl Fn(&mut Forward<'_>) -> Var,
    ) {
        ps.zero_grads();
        let mut fwd = Forward::new(ps, true, seed);
        let loss = build(&mut fwd);
        fwd.backward(loss);
        drop(fwd);
        for &id in ids {
            let analytic = ps.grad(id).clone();
            let numeric = numeric_gradient(ps, id, 1e-5, |ps| {
                let mut fwd = Forward::new(ps, true, seed);
                let loss = build(&mut fwd);
                fwd.tape.value(loss)[(0, 0)]
            });
            let err = max_rel_error(&analytic, &numeric);
            assert!(err < 1e-4, "param {}: rel err {err}", ps.name(id));
        }
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut ps = ParamSet::new();
        let mut r = rng(1);
        let lin = Linear::new(&mut ps, "l", 3, 3, &mut r).unwrap();
        *ps.value_mut(lin.w) = Array2::eye(3);
        let x = arr2(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);

        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x.clone());
        let y = lin.forward(&mut fwd, xv, Activation::Linear).unwrap();
        assert_eq!(fwd.tape.value(y), &x);
        drop(fwd);

        // zero input -> act(b) per row
        let mut ps2 = ParamSet::new();
        let lin2 = Linear::new(&mut ps2, "l", 2, 2, &mut r).unwrap();
        ps2.value_mut(lin2.b).assign(&arr2(&[[0.5, -0.25]]));
        let mut fwd2 = Forward::new(&mut ps2, false, 0);
        let zeros = fwd2.constant(Array2::zeros((3, 2)));
        let y2 = lin2.forward(&mut fwd2, zeros, Activation::Relu).unwrap();
        for t in 0..3 {
            assert_eq!(fwd2.tape.value(y2)[(t, 0)], 0.5);
            assert_eq!(fwd2.tape.value(y2)[(t, 1)], 0.0);
        }
        drop(fwd2);

        // wrong width errors
        let mut fwd3 = Forward::new(&mut ps, false, 0);
        let bad = fwd3.constant(Array2::zeros((1, 5)));
        assert!(lin.forward(&mut fwd3, bad, Activation::Linear).is_err());
    }

    #[test]
    fn linear_gradcheck() {
        let mut ps = ParamSet::new();
        let mut r = rng(7);
        let lin = Linear::new(&mut ps, "l", 4, 3, &mut r).unwrap();
        let x_in = ps.add("x", uniform_fan_in(&mut r, 5, 4, 4), true).unwrap();
        check_grads(&mut ps, &[lin.w, lin.b, x_in], 42, |fwd| {
            let x = fwd.param(x_in);
            let y = lin.forward(fwd, x, Activation::Tanh).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
    }

    #[test]
    fn embedding_lookup_and_grads() {
        let mut ps = ParamSet::new();
        let mut r = rng(3);
        let emb = Embedding::new(&mut ps, "e", 50, 64, &mut r).unwrap();
        let mut fwd = Forward::new(&mut ps, true, 0);
        let y = emb.forward(&mut fwd, &[0]).unwrap();
        let row0 = fwd.tape.value(y).row(0).to_owned();
        drop(fwd);
        assert_eq!(row0.len(), 64);
        let expect = ps.value(emb.table).row(0).to_owned();
        assert_eq!(row0, expect);

        // out-of-range id
        let mut fwd = Forward::new(&mut ps, true, 0);
        assert!(matches!(
            emb.forward(&mut fwd, &[50]),
            Err(NnError::IdOutOfRange { id: 50, vocab: 50 })
        ));
        drop(fwd);

        // repeated ids accumulate in the backward pass
        let mut ps2 = ParamSet::new();
        let emb2 = Embedding::new(&mut ps2, "e", 3, 4, &mut r).unwrap();
        check_grads(&mut ps2, &[emb2.table], 0, |fwd| {
            let y = emb2.forward(fwd, &[1, 1, 2]).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
        // row 0 was never looked up
        let mut fwd = Forward::new(&mut ps2, true, 0);
        let y = emb2.forward(&mut fwd, &[1, 1, 2]).unwrap();
        let loss = weighted_sum(&mut fwd.tape, y);
        fwd.backward(loss);
        drop(fwd);
        let g = ps2.grad(emb2.table);
        assert!(g.row(0).iter().all(|&v| v == 0.0));
        assert!(g.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut ps = ParamSet::new();
        let mut r = rng(5);
        let conv = Conv1d::new(&mut ps, "c", 2, 2, 1, &mut r).unwrap();
        *ps.value_mut(conv.w) = Array2::eye(2);
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x.clone());
        let y = conv.forward(&mut fwd, xv).unwrap();
        assert_eq!(fwd.tape.value(y), &x);
    }

    #[test]
    fn conv_constant_input_constant_interior() {
        let mut ps = ParamSet::new();
        let mut r = rng(6);
        let conv = Conv1d::new(&mut ps, "c", 3, 4, 3, &mut r).unwrap();
        let x = Array2::from_elem((9, 3), 0.5);
        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x);
        let y = conv.forward(&mut fwd, xv).unwrap();
        let v = fwd.tape.value(y);
        for t in 1..8 {
            for c in 0..4 {
                assert!((v[(t, c)] - v[(1, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_bank_shape_and_gradcheck() {
        let mut ps = ParamSet::new();
        let mut r = rng(11);
        let bank = Conv1dBank::new(&mut ps, "b", 3, 2, 4, &mut r).unwrap();
        let x_in = ps.add("x", uniform_fan_in(&mut r, 7, 3, 3), true).unwrap();

        let mut fwd = Forward::new(&mut ps, true, 9);
        let x = fwd.param(x_in);
        let y = bank.forward(&mut fwd, x).unwrap();
        assert_eq!(fwd.tape.value(y).dim(), (7, 8)); // K * channels
        drop(fwd);

        let ids = vec![x_in, bank.convs[0].w, bank.convs[3].w, bank.norms[1].gamma];
        check_grads(&mut ps, &ids, 9, |fwd| {
            let x = fwd.param(x_in);
            let y = bank.forward(fwd, x).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
        assert!(Conv1dBank::new(&mut ps, "zero", 3, 2, 0, &mut r).is_err());
    }

    #[test]
    fn highway_gate_limits() {
        let mut ps = ParamSet::new();
        let mut r = rng(13);
        let hw = Highway::new(&mut ps, "h", 4, 1, &mut r).unwrap();
        let x = uniform_fan_in(&mut r, 5, 4, 1);

        // gate toward 0 -> identity
        ps.value_mut(hw.pairs[0].1.b).fill(-30.0);
        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x.clone());
        let y = hw.forward(&mut fwd, xv).unwrap();
        for (a, b) in fwd.tape.value(y).iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        drop(fwd);

        // gate toward 1 -> transform h(x)
        ps.value_mut(hw.pairs[0].1.b).fill(30.0);
        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x.clone());
        let y = hw.forward(&mut fwd, xv).unwrap();
        let got = fwd.tape.value(y).clone();
        drop(fwd);
        let h_lin = &hw.pairs[0].0;
        let xw = x.dot(ps.value(h_lin.w));
        let expect = (&xw + ps.value(h_lin.b)).mapv(|v| v.max(0.0));
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn highway_gradcheck_two_layers() {
        let mut ps = ParamSet::new();
        let mut r = rng(17);
        let hw = Highway::new(&mut ps, "h", 5, 2, &mut r).unwrap();
        let x_in = ps.add("x", uniform_fan_in(&mut r, 4, 5, 2), true).unwrap();
        let ids = [x_in, hw.pairs[0].0.w, hw.pairs[1].1.w, hw.pairs[0].1.b];
        check_grads(&mut ps, &ids, 1, |fwd| {
            let x = fwd.param(x_in);
            let y = hw.forward(fwd, x).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
    }

    #[test]
    fn gru_cell_zero_and_carry() {
        let mut ps = ParamSet::new();
        let mut r = rng(19);
        let gru = Gru::new(&mut ps, "g", 3, 4, &mut r).unwrap();
        // zero params, zero input, zero state -> zero output
        for id in [gru.wx, gru.wh, gru.wc, gru.b] {
            ps.value_mut(id).fill(0.0);
        }
        let mut fwd = Forward::new(&mut ps, false, 0);
        let x = fwd.constant(Array2::zeros((1, 3)));
        let h0 = fwd.constant(Array2::zeros((1, 4)));
        let h = gru.cell(&mut fwd, x, h0).unwrap();
        assert!(fwd.tape.value(h).iter().all(|&v| v == 0.0));
        drop(fwd);

        // force z -> 1 via bias: h_t = h_prev
        let mut ps2 = ParamSet::new();
        let gru2 = Gru::new(&mut ps2, "g", 3, 4, &mut r).unwrap();
        for c in 0..4 {
            ps2.value_mut(gru2.b)[(0, c)] = 40.0;
        }
        let h_prev = arr2(&[[0.3, -0.7, 0.2, 0.9]]);
        let mut fwd2 = Forward::new(&mut ps2, false, 0);
        let x = fwd2.constant(arr2(&[[0.5, -0.5, 1.0]]));
        let hp = fwd2.constant(h_prev.clone());
        let h = gru2.cell(&mut fwd2, x, hp).unwrap();
        for (a, b) in fwd2.tape.value(h).iter().zip(h_prev.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gru_bptt_gradcheck() {
        let mut ps = ParamSet::new();
        let mut r = rng(23);
        let gru = Gru::new(&mut ps, "g", 3, 4, &mut r).unwrap();
        let x_in = ps.add("x", uniform_fan_in(&mut r, 5, 3, 1), true).unwrap();
        let ids = [x_in, gru.wx, gru.wh, gru.wc, gru.b];
        check_grads(&mut ps, &ids, 2, |fwd| {
            let x = fwd.param(x_in);
            let y = gru.forward(fwd, x).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
    }

    #[test]
    fn bigru_symmetry_and_gradcheck() {
        let mut ps = ParamSet::new();
        let mut r = rng(29);
        let bi = BiGru::new(&mut ps, "bg", 2, 3, &mut r).unwrap();
        let x = uniform_fan_in(&mut r, 4, 2, 1);

        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x.clone());
        let y = bi.forward(&mut fwd, xv).unwrap();
        assert_eq!(fwd.tape.value(y).dim(), (4, 6));
        drop(fwd);

        // with shared weights, reversing the input swaps and reverses the
        // two output halves
        let mut ps_shared = ParamSet::new();
        let bi_shared = BiGru::new(&mut ps_shared, "bg", 2, 3, &mut r).unwrap();
        for (&dst, &src) in [
            bi_shared.backward_gru.wx,
            bi_shared.backward_gru.wh,
            bi_shared.backward_gru.wc,
            bi_shared.backward_gru.b,
        ]
        .iter()
        .zip(
            [
                bi_shared.forward_gru.wx,
                bi_shared.forward_gru.wh,
                bi_shared.forward_gru.wc,
                bi_shared.forward_gru.b,
            ]
            .iter(),
        ) {
            let v = ps_shared.value(src).clone();
            *ps_shared.value_mut(dst) = v;
        }
        let mut f1 = Forward::new(&mut ps_shared, false, 0);
        let xv = f1.constant(x.clone());
        let yy = bi_shared.forward(&mut f1, xv).unwrap();
        let y_fwd = f1.tape.value(yy).clone();
        drop(f1);
        let mut f2 = Forward::new(&mut ps_shared, false, 0);
        let x_rev = f2.constant(x.slice(ndarray::s![..;-1, ..]).to_owned());
        let yy2 = bi_shared.forward(&mut f2, x_rev).unwrap();
        let y_rev = f2.tape.value(yy2).clone();
        drop(f2);
        let t_len = 4;
        for t in 0..t_len {
            for c in 0..3 {
                assert!((y_rev[(t, c)] - y_fwd[(t_len - 1 - t, 3 + c)]).abs() < 1e-12);
                assert!((y_rev[(t, 3 + c)] - y_fwd[(t_len - 1 - t, c)]).abs() < 1e-12);
            }
        }

        // T = 1: both directions see the same single frame
        let mut f3 = Forward::new(&mut ps_shared, false, 0);
        let one = f3.constant(x.slice(ndarray::s![0..1, ..]).to_owned());
        let y1 = bi_shared.forward(&mut f3, one).unwrap();
        let y1 = f3.tape.value(y1).clone();
        for c in 0..3 {
            assert!((y1[(0, c)] - y1[(0, 3 + c)]).abs() < 1e-12);
        }
        drop(f3);

        // gradcheck at T=4
        let x_in = ps.add("x", x, true).unwrap();
        let ids = [x_in, bi.forward_gru.wx, bi.backward_gru.wc];
        check_grads(&mut ps, &ids, 3, |fwd| {
            let xv = fwd.param(x_in);
            let y = bi.forward(fwd, xv).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
    }

    #[test]
    fn cbhg_output_shape_and_determinism() {
        let mut ps = ParamSet::new();
        let mut r = rng(31);
        let cfg = CbhgConfig {
            bank_k: 4,
            bank_channels: 8,
            projections: vec![8, 6],
            highway_layers: 2,
            highway_dim: 8,
            gru_units: 128,
        };
        let cbhg = Cbhg::new(&mut ps, "c", 6, &cfg, &mut r).unwrap();
        let x = uniform_fan_in(&mut r, 20, 6, 1);
        let run = |ps: &mut ParamSet| {
            let mut fwd = Forward::new(ps, false, 0);
            let xv = fwd.constant(x.clone());
            let y = cbhg.forward(&mut fwd, xv).unwrap();
            fwd.tape.value(y).clone()
        };
        let y1 = run(&mut ps);
        let y2 = run(&mut ps);
        assert_eq!(y1.dim(), (20, 256));
        assert_eq!(y1, y2);

        // residual dimension mismatch is a construction error
        let bad = CbhgConfig {
            projections: vec![8, 5],
            ..cfg
        };
        assert!(Cbhg::new(&mut ps, "bad", 6, &bad, &mut r).is_err());
    }

    #[test]
    fn cbhg_tiny_gradcheck() {
        let mut ps = ParamSet::new();
        let mut r = rng(37);
        let cfg = CbhgConfig {
            bank_k: 2,
            bank_channels: 3,
            projections: vec![4, 3],
            highway_layers: 1,
            highway_dim: 4,
            gru_units: 3,
        };
        let cbhg = Cbhg::new(&mut ps, "c", 3, &cfg, &mut r).unwrap();
        let x_in = ps.add("x", uniform_fan_in(&mut r, 5, 3, 1), true).unwrap();
        let ids: Vec<ParamId> = ps.trainable_ids();
        check_grads(&mut ps, &ids, 4, |fwd| {
            let xv = fwd.param(x_in);
            let y = cbhg.forward(fwd, xv).unwrap();
            weighted_sum(&mut fwd.tape, y)
        });
    }

    #[test]
    fn batch_norm_train_vs_eval() {
        let mut ps = ParamSet::new();
        let bn = BatchNorm::new(&mut ps, "bn", 2).unwrap();
        let x = arr2(&[[1.0, 10.0], [3.0, 30.0], [5.0, 20.0]]);
        let mut fwd = Forward::new(&mut ps, true, 0);
        let xv = fwd.constant(x.clone());
        let y = bn.forward(&mut fwd, xv);
        let y = fwd.tape.value(y).clone();
        drop(fwd);
        // batch-normalized columns have ~zero mean and unit variance
        for c in 0..2 {
            let mean: f64 = (0..3).map(|t| y[(t, c)]).sum::<f64>() / 3.0;
            let var: f64 = (0..3).map(|t| (y[(t, c)] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // running stats moved away from init
        assert!(ps.value(bn.running_mean)[(0, 0)] != 0.0);

        // eval mode uses running stats and stays finite
        let mut fwd = Forward::new(&mut ps, false, 0);
        let xv = fwd.constant(x);
        let y = bn.forward(&mut fwd, xv);
        assert!(fwd.tape.value(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn param_names_are_unique() {
        let mut ps = ParamSet::new();
        ps.add("a", Array2::zeros((1, 1)), true).unwrap();
        assert!(matches!(
            ps.add("a", Array2::zeros((1, 1)), true),
            Err(NnError::DuplicateParam(_))
        ));
    }
}
