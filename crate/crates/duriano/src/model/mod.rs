//! The synthesis network: phoneme encoder, identity fusion, frame-aligned
//! conditioning, autoregressive two-frame decoder and post-CBHG linear
//! head, plus losses, training and checkpoints.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use train::{train_loop, Adam, StepStats, TrainOptions};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::align::{expand_durations, AlignError, FrameFeaturePlan};
use crate::dsp::{self, AudioBuffer, DspError, LinearSpectrogram, StftConfig};
use crate::nn::{
    Activation, Cbhg, CbhgConfig, Embedding, Forward, Gru, Linear, NnError, ParamSet, Var,
};
use crate::pitch::{NOTE_PITCH_VOCAB, NOTE_STATE_VOCAB};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("size ledger: {0}")]
    Ledger(String),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("teacher-forced decoding requires targets")]
    MissingTargets,
    #[error("{0}")]
    LengthMismatch(String),
    #[error("non-finite values at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Musical conditioning: note events, or the f0-scalar baseline where the
/// two note embeddings are replaced by one normalized f0 value per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningMode {
    Note,
    F0Scalar,
}

impl ConditioningMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditioningMode::Note => "note",
            ConditioningMode::F0Scalar => "f0_scalar",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "note" => Ok(ConditioningMode::Note),
            "f0_scalar" | "f0" => Ok(ConditioningMode::F0Scalar),
            other => Err(ModelError::BadConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub phoneme_vocab: usize,
    pub singer_vocab: usize,
    pub role_vocab: usize,
    pub phoneme_emb: usize,
    pub singer_emb: usize,
    pub role_emb: usize,
    pub note_pitch_emb: usize,
    pub note_state_emb: usize,
    /// Encoder pre-net widths; the second layer is the linear one.
    pub prenet_dims: [usize; 2],
    pub encoder_bank_k: usize,
    pub encoder_bank_channels: usize,
    pub encoder_highway_layers: usize,
    /// Per-direction units; encoder output is twice this.
    pub encoder_gru_units: usize,
    pub identity_fused: usize,
    pub decoder_prenet_dims: [usize; 2],
    pub decoder_gru: usize,
    pub frames_per_step: usize,
    pub mel_bins: usize,
    pub linear_bins: usize,
    pub post_bank_k: usize,
    pub post_bank_channels: usize,
    pub post_highway_layers: usize,
    pub post_highway_dim: usize,
    pub post_gru_units: usize,
    pub dropout: f64,
    pub conditioning_mode: ConditioningMode,
    /// When set, construction asserts the full-scale sizes.
    pub full_scale: bool,
}

impl ModelConfig {
    /// The full-scale configuration: identity embeddings of 256, note-pitch
    /// 64, note-state 16, 80 mel and 2049 linear bins, two frames per
    /// decoder step.
    pub fn full(singer_vocab: usize, role_vocab: usize, mode: ConditioningMode) -> Self {
        ModelConfig {
            phoneme_vocab: 39,
            singer_vocab,
            role_vocab,
            phoneme_emb: 256,
            singer_emb: 256,
            role_emb: 256,
            note_pitch_emb: 64,
            note_state_emb: 16,
            prenet_dims: [256, 128],
            encoder_bank_k: 16,
            encoder_bank_channels: 128,
            encoder_highway_layers: 4,
            encoder_gru_units: 128,
            identity_fused: 256,
            decoder_prenet_dims: [256, 128],
            decoder_gru: 256,
            frames_per_step: 2,
            mel_bins: 80,
            linear_bins: 2049,
            post_bank_k: 8,
            post_bank_channels: 128,
            post_highway_layers: 4,
            post_highway_dim: 128,
            post_gru_units: 128,
            dropout: 0.5,
            conditioning_mode: mode,
            full_scale: true,
        }
    }

    /// Miniature configuration for tests; every width stays single-digit.
    pub fn tiny(mode: ConditioningMode) -> Self {
        ModelConfig {
            phoneme_vocab: 39,
            singer_vocab: 2,
            role_vocab: 2,
            phoneme_emb: 6,
            singer_emb: 4,
            role_emb: 4,
            note_pitch_emb: 5,
            note_state_emb: 3,
            prenet_dims: [8, 6],
            encoder_bank_k: 2,
            encoder_bank_channels: 4,
            encoder_highway_layers: 2,
            encoder_gru_units: 4,
            identity_fused: 8,
            decoder_prenet_dims: [8, 6],
            decoder_gru: 8,
            frames_per_step: 2,
            mel_bins: 4,
            linear_bins: 9,
            post_bank_k: 2,
            post_bank_channels: 4,
            post_highway_layers: 1,
            post_highway_dim: 6,
            post_gru_units: 4,
            dropout: 0.5,
            conditioning_mode: mode,
            full_scale: false,
        }
    }

    pub fn encoder_out(&self) -> usize {
        2 * self.encoder_gru_units
    }

    /// Width of one per-frame condition vector: fused identity plus either
    /// note embeddings or the f0 scalar, plus the position scalar.
    pub fn condition_dim(&self) -> usize {
        match self.conditioning_mode {
            ConditioningMode::Note => {
                self.identity_fused + self.note_pitch_emb + self.note_state_emb + 1
            }
            ConditioningMode::F0Scalar => self.identity_fused + 1 + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.frames_per_step != 2 {
            return Err(ModelError::Ledger(format!(
                "decoder emits 2 frames per step, config says {}",
                self.frames_per_step
            )));
        }
        if self.full_scale {
            let checks: [(&str, usize, usize); 8] = [
                ("phoneme embedding", self.phoneme_emb, 256),
                ("singer embedding", self.singer_emb, 256),
                ("role-type embedding", self.role_emb, 256),
                ("note-pitch embedding", self.note_pitch_emb, 64),
                ("note-state embedding", self.note_state_emb, 16),
                ("mel bins", self.mel_bins, 80),
                ("linear bins", self.linear_bins, 2049),
                ("fused identity width", self.identity_fused, 256),
            ];
            for (what, got, want) in checks {
                if got != want {
                    return Err(ModelError::Ledger(format!("{what} must be {want}, got {got}")));
                }
            }
            let want_cond = match self.conditioning_mode {
                ConditioningMode::Note => 337,
                ConditioningMode::F0Scalar => 258,
            };
            if self.condition_dim() != want_cond {
                return Err(ModelError::Ledger(format!(
                    "condition width must be {want_cond}, got {}",
                    self.condition_dim()
                )));
            }
        }
        if self.phoneme_vocab == 0 || self.singer_vocab == 0 || self.role_vocab == 0 {
            return Err(ModelError::BadConfig("empty vocabulary".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    TeacherForced,
    FreeRunning,
}

/// The assembled network. Parameters live in [`ParamSet`]; layer structs
/// hold ids into it.
pub struct DurianModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    phoneme_emb: Embedding,
    singer_emb: Embedding,
    role_emb: Embedding,
    note_pitch_emb: Option<Embedding>,
    note_state_emb: Option<Embedding>,
    enc_pre1: Linear,
    enc_pre2: Linear,
    encoder_cbhg: Cbhg,
    fusion: Linear,
    dec_pre1: Linear,
    dec_pre2: Linear,
    decoder_gru: Gru,
    dec_out: Linear,
    post_cbhg: Cbhg,
    post_linear: Linear,
}

impl DurianModel {
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let rng = &mut ChaCha8Rng::seed_from_u64(init_seed);

        let phoneme_emb = Embedding::new(&mut ps, "phoneme_emb", cfg.phoneme_vocab, cfg.phoneme_emb, rng)?;
        let singer_emb = Embedding::new(&mut ps, "singer_emb", cfg.singer_vocab, cfg.singer_emb, rng)?;
        let role_emb = Embedding::new(&mut ps, "role_emb", cfg.role_vocab, cfg.role_emb, rng)?;
        let (note_pitch_emb, note_state_emb) = match cfg.conditioning_mode {
            ConditioningMode::Note => (
                Some(Embedding::new(&mut ps, "note_pitch_emb", NOTE_PITCH_VOCAB, cfg.note_pitch_emb, rng)?),
                Some(Embedding::new(&mut ps, "note_state_emb", NOTE_STATE_VOCAB, cfg.note_state_emb, rng)?),
            ),
            ConditioningMode::F0Scalar => (None, None),
        };

        let enc_pre1 = Linear::new(&mut ps, "encoder.prenet1", cfg.phoneme_emb, cfg.prenet_dims[0], rng)?;
        let enc_pre2 = Linear::new(&mut ps, "encoder.prenet2", cfg.prenet_dims[0], cfg.prenet_dims[1], rng)?;
        let encoder_cbhg = Cbhg::new(
            &mut ps,
            "encoder.cbhg",
            cfg.prenet_dims[1],
            &CbhgConfig {
                bank_k: cfg.encoder_bank_k,
                bank_channels: cfg.encoder_bank_channels,
                projections: vec![cfg.encoder_bank_channels, cfg.prenet_dims[1]],
                highway_layers: cfg.encoder_highway_layers,
                highway_dim: cfg.encoder_bank_channels,
                gru_units: cfg.encoder_gru_units,
            },
            rng,
        )?;

        let fusion_in = cfg.encoder_out() + cfg.singer_emb + cfg.role_emb;
        let fusion = Linear::new(&mut ps, "fusion", fusion_in, cfg.identity_fused, rng)?;

        let dec_pre1 = Linear::new(&mut ps, "decoder.prenet1", cfg.mel_bins, cfg.decoder_prenet_dims[0], rng)?;
        let dec_pre2 = Linear::new(&mut ps, "decoder.prenet2", cfg.decoder_prenet_dims[0], cfg.decoder_prenet_dims[1], rng)?;
        let gru_in = cfg.decoder_prenet_dims[1] + cfg.condition_dim();
        let decoder_gru = Gru::new(&mut ps, "decoder.gru", gru_in, cfg.decoder_gru, rng)?;
        let dec_out = Linear::new(
            &mut ps,
            "decoder.out",
            cfg.decoder_gru,
            cfg.frames_per_step * cfg.mel_bins,
            rng,
        )?;

        let post_cbhg = Cbhg::new(
            &mut ps,
            "post.cbhg",
            cfg.mel_bins,
            &CbhgConfig {
                bank_k: cfg.post_bank_k,
                bank_channels: cfg.post_bank_channels,
                projections: vec![cfg.post_bank_channels * 2, cfg.mel_bins],
                highway_layers: cfg.post_highway_layers,
                highway_dim: cfg.post_highway_dim,
                gru_units: cfg.post_gru_units,
            },
            rng,
        )?;
        let post_linear = Linear::new(&mut ps, "post.linear", 2 * cfg.post_gru_units, cfg.linear_bins, rng)?;

        Ok(DurianModel {
            cfg,
            params: ps,
            phoneme_emb,
            singer_emb,
            role_emb,
            note_pitch_emb,
            note_state_emb,
            enc_pre1,
            enc_pre2,
            encoder_cbhg,
            fusion,
            dec_pre1,
            dec_pre2,
            decoder_gru,
            dec_out,
            post_cbhg,
            post_linear,
        })
    }

    /// Embedding → two-layer pre-net (second layer linear) → CBHG.
    /// `[N] -> [N, encoder_out]`. The cited design's skip gate is absent.
    pub fn encode_phonemes(&self, fwd: &mut Forward, phoneme_ids: &[usize]) -> Result<Var, ModelError> {
        let emb = self.phoneme_emb.forward(fwd, phoneme_ids)?;
        let h = self.enc_pre1.forward(fwd, emb, Activation::Relu)?;
        let h = if fwd.training { fwd.dropout(h, self.cfg.dropout) } else { h };
        let h = self.enc_pre2.forward(fwd, h, Activation::Linear)?;
        let h = if fwd.training { fwd.dropout(h, self.cfg.dropout) } else { h };
        Ok(self.encoder_cbhg.forward(fwd, h)?)
    }

    /// Concatenate singer and role-type embeddings onto every encoded
    /// phoneme and project back to the fused width.
    pub fn fuse_identity(
        &self,
        fwd: &mut Forward,
        encoded: Var,
        singer_id: usize,
        role_id: usize,
    ) -> Result<Var, ModelError> {
        let n = fwd.tape.value(encoded).nrows();
        let singer = self.singer_emb.forward(fwd, &vec![singer_id; n])?;
        let role = self.role_emb.forward(fwd, &vec![role_id; n])?;
        let cat = fwd.tape.concat_cols(&[encoded, singer, role]);
        Ok(self.fusion.forward(fwd, cat, Activation::Linear)?)
    }

    /// Expand fused phoneme rows by duration and attach note-pitch and
    /// note-state embeddings plus the position scalar: `[T, condition_dim]`.
    pub fn build_conditions(
        &self,
        fwd: &mut Forward,
        fused: Var,
        plan: &FrameFeaturePlan,
    ) -> Result<Var, ModelError> {
        plan.validate()?;
        let n = fwd.tape.value(fused).nrows();
        if n != plan.phoneme_ids.len() {
            return Err(ModelError::LengthMismatch(format!(
                "fused has {n} rows but plan lists {} phonemes",
                plan.phoneme_ids.len()
            )));
        }
        let frame_phoneme: Vec<usize> =
            expand_durations(&(0..n).collect::<Vec<_>>(), &plan.durations)?;
        let expanded = fwd.tape.gather(fused, &frame_phoneme);

        let pitch_emb = self
            .note_pitch_emb
            .as_ref()
            .ok_or_else(|| ModelError::BadConfig("note conditioning disabled in f0 mode".into()))?;
        let state_emb = self.note_state_emb.as_ref().unwrap();
        let pitch = pitch_emb.forward(fwd, &plan.note_pitch_ids)?;
        let state = state_emb.forward(fwd, &plan.note_state_ids)?;
        let positions = positions_column(fwd, &plan.positions);
        Ok(fwd.tape.concat_cols(&[expanded, pitch, state, positions]))
    }

    /// Baseline conditioning: the note embeddings are replaced by one
    /// normalized f0 scalar per frame. `[T, identity_fused + 2]`.
    pub fn build_conditions_f0(
        &self,
        fwd: &mut Forward,
        fused: Var,
        durations: &[usize],
        f0_norm: &[f64],
        positions: &[f64],
    ) -> Result<Var, ModelError> {
        let n = fwd.tape.value(fused).nrows();
        let total: usize = durations.iter().sum();
        if f0_norm.len() != total || positions.len() != total {
            return Err(ModelError::LengthMismatch(format!(
                "durations cover {total} frames but f0 has {} and positions {}",
                f0_norm.len(),
                positions.len()
            )));
        }
        let frame_phoneme: Vec<usize> =
            expand_durations(&(0..n).collect::<Vec<_>>(), durations)?;
        let expanded = fwd.tape.gather(fused, &frame_phoneme);
        let f0col = fwd.constant(
            Array2::from_shape_vec((total, 1), f0_norm.to_vec()).expect("f0 column"),
        );
        let positions = positions_column(fwd, positions);
        Ok(fwd.tape.concat_cols(&[expanded, f0col, positions]))
    }

    /// Autoregressive decoding, two mel frames per step. Odd-length
    /// condition sequences are padded by repeating the final frame; the
    /// output is trimmed back. Teacher forcing feeds the target frame
    /// `2k - 1` into step `k`; free running feeds the model's own output.
    pub fn decode(
        &self,
        fwd: &mut Forward,
        conditions: Var,
        targets: Option<&Array2<f64>>,
        mode: DecodeMode,
    ) -> Result<Var, ModelError> {
        let t_real = fwd.tape.value(conditions).nrows();
        if t_real == 0 {
            return Err(ModelError::LengthMismatch("empty condition sequence".into()));
        }
        if mode == DecodeMode::TeacherForced && targets.is_none() {
            return Err(ModelError::MissingTargets);
        }
        if let Some(t) = targets {
            if t.nrows() != t_real || t.ncols() != self.cfg.mel_bins {
                return Err(ModelError::LengthMismatch(format!(
                    "targets are [{}, {}], expected [{t_real}, {}]",
                    t.nrows(),
                    t.ncols(),
                    self.cfg.mel_bins
                )));
            }
        }
        let conditions = if t_real % 2 == 1 {
            let last = fwd.tape.slice_rows(conditions, t_real - 1, t_real);
            fwd.tape.concat_rows(&[conditions, last])
        } else {
            conditions
        };
        let t_padded = fwd.tape.value(conditions).nrows();

        let mel = self.cfg.mel_bins;
        let mut h = fwd.constant(Array2::zeros((1, self.cfg.decoder_gru)));
        // The zero "go" frame.
        let mut prev = fwd.constant(Array2::zeros((1, mel)));
        let mut outputs = Vec::with_capacity(t_padded / 2);
        for k in 0..t_padded / 2 {
            let pre = self.dec_pre1.forward(fwd, prev, Activation::Relu)?;
            let pre = fwd.dropout(pre, self.cfg.dropout);
            let pre = self.dec_pre2.forward(fwd, pre, Activation::Relu)?;
            let pre = fwd.dropout(pre, self.cfg.dropout);
            let cond_k = fwd.tape.slice_rows(conditions, 2 * k, 2 * k + 1);
            let gru_in = fwd.tape.concat_cols(&[pre, cond_k]);
            h = self.decoder_gru.cell(fwd, gru_in, h)?;
            let out = self.dec_out.forward(fwd, h, Activation::Linear)?;
            let pair = fwd.tape.reshape(out, 2, mel);
            outputs.push(pair);
            prev = match mode {
                DecodeMode::TeacherForced => {
                    let tgt = targets.unwrap();
                    let idx = (2 * k + 1).min(t_real - 1);
                    fwd.constant(tgt.row(idx).to_owned().insert_axis(ndarray::Axis(0)))
                }
                DecodeMode::FreeRunning => fwd.tape.slice_rows(pair, 1, 2),
            };
        }
        let stacked = fwd.tape.concat_rows(&outputs);
        Ok(if t_padded != t_real {
            fwd.tape.slice_rows(stacked, 0, t_real)
        } else {
            stacked
        })
    }

    /// Post-CBHG over the decoder mel output, projected to linear bins.
    pub fn postnet_linear(&self, fwd: &mut Forward, mel: Var) -> Result<Var, ModelError> {
        let refined = self.post_cbhg.forward(fwd, mel)?;
        Ok(self.post_linear.forward(fwd, refined, Activation::Linear)?)
    }

    /// Run the full conditioning front half: encode, fuse identity, build
    /// the per-frame condition matrix (note or f0 mode per the config).
    pub fn conditions_from_plan(
        &self,
        fwd: &mut Forward,
        plan: &FrameFeaturePlan,
        f0_norm: Option<&[f64]>,
    ) -> Result<Var, ModelError> {
        plan.validate()?;
        let encoded = self.encode_phonemes(fwd, &plan.phoneme_ids)?;
        let fused = self.fuse_identity(fwd, encoded, plan.singer_id, plan.role_type_id)?;
        match self.cfg.conditioning_mode {
            ConditioningMode::Note => self.build_conditions(fwd, fused, plan),
            ConditioningMode::F0Scalar => {
                let f0 = f0_norm.ok_or_else(|| {
                    ModelError::BadConfig("f0 conditioning requires an f0 contour".into())
                })?;
                self.build_conditions_f0(fwd, fused, &plan.durations, f0, &plan.positions)
            }
        }
    }

    /// Full free-running synthesis: encode → fuse → conditions → decode →
    /// post-net → decompress → Griffin-Lim. Returns the audio and the
    /// predicted (compressed) linear spectrogram. Deterministic for a given
    /// seed, plan and parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn synthesize(
        &mut self,
        plan: &FrameFeaturePlan,
        f0_norm: Option<&[f64]>,
        stft_cfg: &StftConfig,
        floor_db: f64,
        ref_db: f64,
        griffin_lim_iters: usize,
        seed: u64,
    ) -> Result<(AudioBuffer, LinearSpectrogram), ModelError> {
        let lin_pred = self.predict_linear(plan, f0_norm, seed)?;
        let spec = LinearSpectrogram {
            frames: lin_pred,
            config: *stft_cfg,
            floor_db,
            ref_db,
        };
        let audio = dsp::griffin_lim(&spec, griffin_lim_iters, stft_cfg)?;
        Ok((audio, spec))
    }

    /// The network part of synthesis: plan in, compressed linear
    /// spectrogram out (values clamped to [0, 1]).
    pub fn predict_linear(
        &mut self,
        plan: &FrameFeaturePlan,
        f0_norm: Option<&[f64]>,
        seed: u64,
    ) -> Result<Array2<f64>, ModelError> {
        self.with_forward(false, seed, |model, fwd| {
            let cond = model.conditions_from_plan(fwd, plan, f0_norm)?;
            let mel = model.decode(fwd, cond, None, DecodeMode::FreeRunning)?;
            let lin = model.postnet_linear(fwd, mel)?;
            Ok(fwd.tape.value(lin).mapv(|v| v.clamp(0.0, 1.0)))
        })
    }

    /// Run `f` inside a forward pass over this model's parameters. The
    /// parameter set is temporarily moved out so layer methods can borrow
    /// the model while the pass holds the parameters mutably.
    pub fn with_forward<R>(
        &mut self,
        training: bool,
        seed: u64,
        f: impl FnOnce(&Self, &mut Forward) -> R,
    ) -> R {
        let mut params = std::mem::take(&mut self.params);
        let result = {
            let mut fwd = Forward::new(&mut params, training, seed);
            f(self, &mut fwd)
        };
        self.params = params;
        result
    }
}

fn positions_column(fwd: &mut Forward, positions: &[f64]) -> Var {
    fwd.constant(
        Array2::from_shape_vec((positions.len(), 1), positions.to_vec()).expect("positions"),
    )
}

/// Normalize an f0 contour in Hz for the scalar baseline: `f0 / 600`
/// clipped to [0, 1.5], zero when unvoiced.
pub fn normalize_f0(f0_hz: &[f64]) -> Vec<f64> {
    f0_hz
        .iter()
        .map(|&f| if f > 0.0 { (f / 600.0).clamp(0.0, 1.5) } else { 0.0 })
        .collect()
}

/// Mean absolute error between prediction and a constant target, with a
/// per-frame mask (1 keeps a frame, 0 drops it).
pub fn masked_mae(fwd: &mut Forward, pred: Var, target: &Array2<f64>, frame_mask: &[f64]) -> Var {
    let dim = fwd.tape.value(pred).dim();
    assert_eq!(dim, target.dim(), "masked_mae: target shape");
    assert_eq!(dim.0, frame_mask.len(), "masked_mae: mask length");
    let kept: f64 = frame_mask.iter().sum::<f64>() * dim.1 as f64;
    let tgt = fwd.constant(target.clone());
    let diff = fwd.tape.sub(pred, tgt);
    let abs = fwd.tape.abs(diff);
    let mask = Array2::from_shape_fn(dim, |(t, _)| frame_mask[t]);
    let masked = fwd.tape.mul_const(abs, mask);
    let total = fwd.tape.sum(masked);
    fwd.tape.scalar_affine(total, 1.0 / kept.max(1.0), 0.0)
}

/// Scalar training objective on plain arrays:
/// `mean|mel_pred - mel_tgt| + mean|lin_pred - lin_tgt| + λ Σ θ²`.
/// Serves as the independent reference for the tape-built loss.
pub fn loss_value(
    mel_pred: &Array2<f64>,
    mel_tgt: &Array2<f64>,
    lin_pred: &Array2<f64>,
    lin_tgt: &Array2<f64>,
    params: &ParamSet,
    lambda: f64,
) -> Result<f64, ModelError> {
    if mel_pred.dim() != mel_tgt.dim() || lin_pred.dim() != lin_tgt.dim() {
        return Err(ModelError::LengthMismatch(format!(
            "loss shapes: mel {:?} vs {:?}, linear {:?} vs {:?}",
            mel_pred.dim(),
            mel_tgt.dim(),
            lin_pred.dim(),
            lin_tgt.dim()
        )));
    }
    let mae = |a: &Array2<f64>, b: &Array2<f64>| {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    };
    Ok(mae(mel_pred, mel_tgt) + mae(lin_pred, lin_tgt) + lambda * params.sum_squares())
}
