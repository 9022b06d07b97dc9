//! Run configuration: a line-oriented `key=value` file plus command-line
//! `--set key=value` overrides. The resolved configuration is fully
//! explicit and echoed to the workdir as `resolved.cfg`.

use std::collections::BTreeMap;
use std::path::Path;

use duriano::corpus::FeatureParams;
use duriano::dsp::{StftConfig, WindowKind};
use duriano::model::{ConditioningMode, ModelConfig, TrainOptions};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("sample_rate", "44100"),
    ("win_length", "2205"),
    ("hop_length", "441"),
    ("fft_size", "4096"),
    ("n_mels", "80"),
    ("floor_db", "-100"),
    ("ref_db", "20"),
    ("fmin", "50"),
    ("fmax", "1500"),
    ("steps", "10000"),
    ("batch_size", "4"),
    ("lr", "0.001"),
    ("lr_decay", "0.9995"),
    ("lambda_l2", "0.000001"),
    ("checkpoint_every", "500"),
    ("seed", "0"),
    ("mode", "note"),
    ("model_preset", "full"),
    ("gl_iters", "60"),
    ("holdout_piece", ""),
    ("tempo", ""),
];

/// Model-size keys accepted as `model.<name>=<value>` overrides. Any
/// override marks the configuration as no longer full scale.
const MODEL_KEYS: &[&str] = &[
    "phoneme_emb",
    "singer_emb",
    "role_emb",
    "note_pitch_emb",
    "note_state_emb",
    "prenet0",
    "prenet1",
    "encoder_bank_k",
    "encoder_bank_channels",
    "encoder_highway_layers",
    "encoder_gru_units",
    "identity_fused",
    "decoder_prenet0",
    "decoder_prenet1",
    "decoder_gru",
    "post_bank_k",
    "post_bank_channels",
    "post_highway_layers",
    "post_highway_dim",
    "post_gru_units",
    "dropout",
];

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|&(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::User(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::User(format!(
                        "{}:{}: expected key=value, got '{line}'",
                        path.display(),
                        i + 1
                    ))
                })?;
                Self::put(&mut values, k.trim(), v.trim())?;
            }
        }
        for raw in overrides {
            let (k, v) = raw.split_once('=').ok_or_else(|| {
                CliError::User(format!("--set expects key=value, got '{raw}'"))
            })?;
            Self::put(&mut values, k.trim(), v.trim())?;
        }
        Ok(RunConfig { values })
    }

    fn put(values: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<(), CliError> {
        let known_model = key
            .strip_prefix("model.")
            .map(|rest| MODEL_KEYS.contains(&rest))
            .unwrap_or(false);
        if !values.contains_key(key) && !known_model {
            return Err(CliError::User(format!("unknown config key '{key}'")));
        }
        values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)
            .parse::<T>()
            .map_err(|_| CliError::User(format!("config key '{key}': bad value '{}'", self.get(key))))
    }

    pub fn feature_params(&self) -> Result<FeatureParams, CliError> {
        let stft = StftConfig {
            sample_rate: self.parse("sample_rate")?,
            win_length: self.parse("win_length")?,
            hop_length: self.parse("hop_length")?,
            fft_size: self.parse("fft_size")?,
            window: WindowKind::Hann,
        };
        stft.validate().map_err(|e| CliError::User(e.to_string()))?;
        Ok(FeatureParams {
            stft,
            n_mels: self.parse("n_mels")?,
            floor_db: self.parse("floor_db")?,
            ref_db: self.parse("ref_db")?,
            fmin: self.parse("fmin")?,
            fmax: self.parse("fmax")?,
        })
    }

    pub fn train_options(&self, seed_flag: Option<u64>) -> Result<TrainOptions, CliError> {
        Ok(TrainOptions {
            steps: self.parse("steps")?,
            batch_size: self.parse("batch_size")?,
            seed: match seed_flag {
                Some(s) => s,
                None => self.parse("seed")?,
            },
            lr: self.parse("lr")?,
            lr_decay: self.parse("lr_decay")?,
            lambda_l2: self.parse("lambda_l2")?,
            checkpoint_every: self.parse("checkpoint_every")?,
        })
    }

    pub fn conditioning_mode(&self) -> Result<ConditioningMode, CliError> {
        ConditioningMode::parse(self.get("mode")).map_err(|e| CliError::User(e.to_string()))
    }

    pub fn gl_iters(&self) -> Result<usize, CliError> {
        self.parse("gl_iters")
    }

    pub fn holdout_piece(&self) -> Option<String> {
        let v = self.get("holdout_piece");
        if v.is_empty() {
            None
        } else {
            Some(v.to_string())
        }
    }

    pub fn tempo(&self) -> Result<Option<f64>, CliError> {
        let v = self.get("tempo");
        if v.is_empty() {
            Ok(None)
        } else {
            v.parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::User(format!("config key 'tempo': bad value '{v}'")))
        }
    }

    /// Assemble the model configuration: preset sizes, `model.*` overrides,
    /// vocabularies and spectrogram widths from the preprocessed features.
    pub fn model_config(
        &self,
        singer_vocab: usize,
        role_vocab: usize,
        mel_bins: usize,
        linear_bins: usize,
    ) -> Result<ModelConfig, CliError> {
        let mode = self.conditioning_mode()?;
        let preset = self.get("model_preset");
        let mut cfg = match preset {
            "full" => ModelConfig::full(singer_vocab.max(1), role_vocab.max(1), mode),
            "tiny" => {
                let mut c = ModelConfig::tiny(mode);
                c.singer_vocab = singer_vocab.max(1);
                c.role_vocab = role_vocab.max(1);
                c
            }
            other => {
                return Err(CliError::User(format!(
                    "model_preset must be 'full' or 'tiny', got '{other}'"
                )))
            }
        };
        cfg.mel_bins = mel_bins;
        cfg.linear_bins = linear_bins;

        let mut overridden = false;
        for key in MODEL_KEYS {
            let full_key = format!("model.{key}");
            let Some(raw) = self.values.get(&full_key) else {
                continue;
            };
            overridden = true;
            let int = || -> Result<usize, CliError> {
                raw.parse::<usize>()
                    .map_err(|_| CliError::User(format!("{full_key}: bad value '{raw}'")))
            };
            match *key {
                "phoneme_emb" => cfg.phoneme_emb = int()?,
                "singer_emb" => cfg.singer_emb = int()?,
                "role_emb" => cfg.role_emb = int()?,
                "note_pitch_emb" => cfg.note_pitch_emb = int()?,
                "note_state_emb" => cfg.note_state_emb = int()?,
                "prenet0" => cfg.prenet_dims[0] = int()?,
                "prenet1" => cfg.prenet_dims[1] = int()?,
                "encoder_bank_k" => cfg.encoder_bank_k = int()?,
                "encoder_bank_channels" => cfg.encoder_bank_channels = int()?,
                "encoder_highway_layers" => cfg.encoder_highway_layers = int()?,
                "encoder_gru_units" => cfg.encoder_gru_units = int()?,
                "identity_fused" => cfg.identity_fused = int()?,
                "decoder_prenet0" => cfg.decoder_prenet_dims[0] = int()?,
                "decoder_prenet1" => cfg.decoder_prenet_dims[1] = int()?,
                "decoder_gru" => cfg.decoder_gru = int()?,
                "post_bank_k" => cfg.post_bank_k = int()?,
                "post_bank_channels" => cfg.post_bank_channels = int()?,
                "post_highway_layers" => cfg.post_highway_layers = int()?,
                "post_highway_dim" => cfg.post_highway_dim = int()?,
                "post_gru_units" => cfg.post_gru_units = int()?,
                "dropout" => {
                    cfg.dropout = raw
                        .parse::<f64>()
                        .map_err(|_| CliError::User(format!("{full_key}: bad value '{raw}'")))?
                }
                _ => unreachable!(),
            }
        }
        // The published-size ledger only applies to the untouched full
        // preset with the full-scale spectrogram widths.
        cfg.full_scale =
            preset == "full" && !overridden && mel_bins == 80 && linear_bins == 2049;
        Ok(cfg)
    }

    /// Every key with its final value, one per line, sorted.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }
}
