//! Versioned parameter checkpoints: magic "DIAN", a string metadata table
//! (configuration, vocabularies, optimizer scalars), a name-and-shape
//! table, then every tensor's data as little-endian 32-bit floats in
//! table order.
//!
//! Saving first rounds every in-memory parameter to f32 precision, so the
//! state after a save is exactly the state a fresh load produces; synthesis
//! is bit-identical across the round trip.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::train::{Adam, TrainOptions};
use super::{ConditioningMode, DurianModel, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DIAN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything stored alongside the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub step: u64,
    pub config: ModelConfig,
    pub singer_names: Vec<String>,
    pub role_names: Vec<String>,
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn config_to_meta(cfg: &ModelConfig, meta: &mut BTreeMap<String, String>) {
    let mut put = |k: &str, v: String| {
        meta.insert(format!("cfg.{k}"), v);
    };
    put("phoneme_vocab", cfg.phoneme_vocab.to_string());
    put("singer_vocab", cfg.singer_vocab.to_string());
    put("role_vocab", cfg.role_vocab.to_string());
    put("phoneme_emb", cfg.phoneme_emb.to_string());
    put("singer_emb", cfg.singer_emb.to_string());
    put("role_emb", cfg.role_emb.to_string());
    put("note_pitch_emb", cfg.note_pitch_emb.to_string());
    put("note_state_emb", cfg.note_state_emb.to_string());
    put("prenet0", cfg.prenet_dims[0].to_string());
    put("prenet1", cfg.prenet_dims[1].to_string());
    put("encoder_bank_k", cfg.encoder_bank_k.to_string());
    put("encoder_bank_channels", cfg.encoder_bank_channels.to_string());
    put("encoder_highway_layers", cfg.encoder_highway_layers.to_string());
    put("encoder_gru_units", cfg.encoder_gru_units.to_string());
    put("identity_fused", cfg.identity_fused.to_string());
    put("decoder_prenet0", cfg.decoder_prenet_dims[0].to_string());
    put("decoder_prenet1", cfg.decoder_prenet_dims[1].to_string());
    put("decoder_gru", cfg.decoder_gru.to_string());
    put("frames_per_step", cfg.frames_per_step.to_string());
    put("mel_bins", cfg.mel_bins.to_string());
    put("linear_bins", cfg.linear_bins.to_string());
    put("post_bank_k", cfg.post_bank_k.to_string());
    put("post_bank_channels", cfg.post_bank_channels.to_string());
    put("post_highway_layers", cfg.post_highway_layers.to_string());
    put("post_highway_dim", cfg.post_highway_dim.to_string());
    put("post_gru_units", cfg.post_gru_units.to_string());
    put("dropout", format!("{:.17}", cfg.dropout));
    put("mode", cfg.conditioning_mode.as_str().to_string());
    put("full_scale", cfg.full_scale.to_string());
}

fn config_from_meta(meta: &BTreeMap<String, String>) -> Result<ModelConfig, String> {
    let get = |k: &str| -> Result<&String, String> {
        meta.get(&format!("cfg.{k}")).ok_or_else(|| format!("missing cfg.{k}"))
    };
    let int = |k: &str| -> Result<usize, String> {
        get(k)?.parse::<usize>().map_err(|e| format!("cfg.{k}: {e}"))
    };
    Ok(ModelConfig {
        phoneme_vocab: int("phoneme_vocab")?,
        singer_vocab: int("singer_vocab")?,
        role_vocab: int("role_vocab")?,
        phoneme_emb: int("phoneme_emb")?,
        singer_emb: int("singer_emb")?,
        role_emb: int("role_emb")?,
        note_pitch_emb: int("note_pitch_emb")?,
        note_state_emb: int("note_state_emb")?,
        prenet_dims: [int("prenet0")?, int("prenet1")?],
        encoder_bank_k: int("encoder_bank_k")?,
        encoder_bank_channels: int("encoder_bank_channels")?,
        encoder_highway_layers: int("encoder_highway_layers")?,
        encoder_gru_units: int("encoder_gru_units")?,
        identity_fused: int("identity_fused")?,
        decoder_prenet_dims: [int("decoder_prenet0")?, int("decoder_prenet1")?],
        decoder_gru: int("decoder_gru")?,
        frames_per_step: int("frames_per_step")?,
        mel_bins: int("mel_bins")?,
        linear_bins: int("linear_bins")?,
        post_bank_k: int("post_bank_k")?,
        post_bank_channels: int("post_bank_channels")?,
        post_highway_layers: int("post_highway_layers")?,
        post_highway_dim: int("post_highway_dim")?,
        post_gru_units: int("post_gru_units")?,
        dropout: get("dropout")?.parse::<f64>().map_err(|e| e.to_string())?,
        conditioning_mode: ConditioningMode::parse(get("mode")?)
            .map_err(|e| e.to_string())?,
        full_scale: get("full_scale")? == "true",
    })
}

fn write_string<W: Write + ?Sized>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_string<R: Read + ?Sized>(r: &mut R) -> std::io::Result<String> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let len = u32::from_le_bytes(b4) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad utf-8"))
}

fn write_tensor_entry<W: Write + ?Sized>(
    w: &mut W,
    name: &str,
    value: &Array2<f64>,
    trainable: bool,
) -> std::io::Result<()> {
    write_string(w, name)?;
    w.write_all(&(value.nrows() as u64).to_le_bytes())?;
    w.write_all(&(value.ncols() as u64).to_le_bytes())?;
    w.write_all(&[u8::from(trainable)])
}

fn write_tensor_data<W: Write + ?Sized>(w: &mut W, value: &Array2<f64>) -> std::io::Result<()> {
    for &v in value.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor_entry<R: Read + ?Sized>(r: &mut R) -> std::io::Result<(String, usize, usize, bool)> {
    let name = read_string(r)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    Ok((name, rows, cols, flag[0] != 0))
}

fn read_tensor_data<R: Read + ?Sized>(
    r: &mut R,
    rows: usize,
    cols: usize,
) -> std::io::Result<Array2<f64>> {
    let mut data = vec![0u8; rows * cols * 4];
    r.read_exact(&mut data)?;
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

/// Save model (and optionally optimizer) state. Rounds the live parameters
/// to f32 precision first; see the module docs.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &mut DurianModel,
    opt: Option<&Adam>,
    meta: &CheckpointMeta,
) -> Result<(), ModelError> {
    let path = path.as_ref();

    // Round in memory so saved state == live state.
    for id in model.params.ids().collect::<Vec<_>>() {
        let value = model.params.value_mut(id);
        value.mapv_inplace(|v| v as f32 as f64);
    }

    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    kv.insert("step".into(), meta.step.to_string());
    kv.insert("singer_names".into(), meta.singer_names.join("\t"));
    kv.insert("role_names".into(), meta.role_names.join("\t"));
    config_to_meta(&meta.config, &mut kv);
    if let Some(opt) = opt {
        kv.insert("optimizer.step".into(), opt.step.to_string());
        kv.insert("optimizer.lr0".into(), format!("{:.17e}", opt.lr0));
        kv.insert("optimizer.decay".into(), format!("{:.17e}", opt.decay));
        kv.insert("optimizer.lambda_l2".into(), format!("{:.17e}", opt.lambda_l2));
    }

    let inner = |w: &mut dyn Write| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(kv.len() as u32).to_le_bytes())?;
        for (k, v) in &kv {
            write_string(w, k)?;
            write_string(w, v)?;
        }
        // name and shape table first, then the data blocks in table order
        let mut tensors: Vec<(String, &Array2<f64>, bool)> = Vec::new();
        for id in model.params.ids() {
            tensors.push((
                model.params.name(id).to_string(),
                model.params.value(id),
                model.params.is_trainable(id),
            ));
        }
        if let Some(opt) = opt {
            let (m, v) = opt.moments();
            for (id, buf) in model.params.ids().zip(m.iter()) {
                tensors.push((format!("optimizer.m.{}", model.params.name(id)), buf, false));
            }
            for (id, buf) in model.params.ids().zip(v.iter()) {
                tensors.push((format!("optimizer.v.{}", model.params.name(id)), buf, false));
            }
        }
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, value, trainable) in &tensors {
            write_tensor_entry(w, name, value, *trainable)?;
        }
        for (_, value, _) in &tensors {
            write_tensor_data(w, value)?;
        }
        Ok(())
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| ckpt_err(path, e.to_string()))?);
    inner(&mut w).map_err(|e| ckpt_err(path, e.to_string()))?;
    w.flush().map_err(|e| ckpt_err(path, e.to_string()))
}

/// Load a checkpoint into a freshly constructed model. Every model
/// parameter must be present in the file with a matching shape; the
/// optimizer is restored when its tensors are present and `train_opts`
/// is supplied.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    train_opts: Option<&TrainOptions>,
) -> Result<(DurianModel, Option<Adam>, CheckpointMeta), ModelError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| ckpt_err(path, e.to_string()))?);

    type RawCheckpoint = (BTreeMap<String, String>, Vec<(String, Array2<f64>, bool)>);
    let inner = |r: &mut dyn Read| -> std::io::Result<RawCheckpoint> {
        use std::io::{Error, ErrorKind};
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::new(ErrorKind::InvalidData, "bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != CHECKPOINT_VERSION {
            return Err(Error::new(ErrorKind::InvalidData, "unsupported version"));
        }
        r.read_exact(&mut b4)?;
        let n_meta = u32::from_le_bytes(b4) as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = read_string(r)?;
            let v = read_string(r)?;
            meta.insert(k, v);
        }
        r.read_exact(&mut b4)?;
        let n_tensors = u32::from_le_bytes(b4) as usize;
        let mut entries = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            entries.push(read_tensor_entry(r)?);
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for (name, rows, cols, trainable) in entries {
            let arr = read_tensor_data(r, rows, cols)?;
            tensors.push((name, arr, trainable));
        }
        Ok((meta, tensors))
    };
    let (kv, tensors) = inner(&mut r).map_err(|e| ckpt_err(path, e.to_string()))?;

    let config = config_from_meta(&kv).map_err(|e| ckpt_err(path, e))?;
    let step: u64 = kv
        .get("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ckpt_err(path, "missing step"))?;
    let split_names = |key: &str| -> Vec<String> {
        kv.get(key)
            .map(|s| {
                if s.is_empty() {
                    Vec::new()
                } else {
                    s.split('\t').map(str::to_string).collect()
                }
            })
            .unwrap_or_default()
    };
    let meta = CheckpointMeta {
        step,
        config: config.clone(),
        singer_names: split_names("singer_names"),
        role_names: split_names("role_names"),
    };

    let mut model = DurianModel::new(config, 0)?;
    let mut seen = 0usize;
    let mut opt_m: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut opt_v: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    for (name, value, _trainable) in tensors {
        if let Some(rest) = name.strip_prefix("optimizer.m.") {
            opt_m.insert(rest.to_string(), value);
            continue;
        }
        if let Some(rest) = name.strip_prefix("optimizer.v.") {
            opt_v.insert(rest.to_string(), value);
            continue;
        }
        let id = model
            .params
            .id(&name)
            .map_err(|_| ckpt_err(path, format!("unexpected tensor '{name}'")))?;
        if model.params.value(id).dim() != value.dim() {
            return Err(ckpt_err(
                path,
                format!(
                    "tensor '{name}' has shape {:?}, model expects {:?}",
                    value.dim(),
                    model.params.value(id).dim()
                ),
            ));
        }
        *model.params.value_mut(id) = value;
        seen += 1;
    }
    if seen != model.params.len() {
        return Err(ckpt_err(
            path,
            format!("file holds {seen} tensors, model has {}", model.params.len()),
        ));
    }

    let opt = match (train_opts, opt_m.is_empty()) {
        (Some(opts), false) => {
            let mut adam = Adam::new(&model.params, opts);
            adam.step = kv
                .get("optimizer.step")
                .and_then(|s| s.parse().ok())
                .unwrap_or(step);
            if let Some(lr0) = kv.get("optimizer.lr0").and_then(|s| s.parse().ok()) {
                adam.lr0 = lr0;
            }
            if let Some(decay) = kv.get("optimizer.decay").and_then(|s| s.parse().ok()) {
                adam.decay = decay;
            }
            if let Some(l2) = kv.get("optimizer.lambda_l2").and_then(|s| s.parse().ok()) {
                adam.lambda_l2 = l2;
            }
            let mut m = Vec::with_capacity(model.params.len());
            let mut v = Vec::with_capacity(model.params.len());
            for id in model.params.ids() {
                let name = model.params.name(id);
                let bm = opt_m
                    .remove(name)
                    .ok_or_else(|| ckpt_err(path, format!("missing optimizer.m.{name}")))?;
                let bv = opt_v
                    .remove(name)
                    .ok_or_else(|| ckpt_err(path, format!("missing optimizer.v.{name}")))?;
                m.push(bm);
                v.push(bv);
            }
            adam.restore_moments(m, v);
            Some(adam)
        }
        _ => None,
    };

    Ok((model, opt, meta))
}
