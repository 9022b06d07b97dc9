//! Shared fixtures for integration tests: a small synthetic singing corpus
//! (harmonic tones following note sequences, annotated with phonemes) and a
//! miniature model configuration that trains in seconds.

use std::fs;
use std::path::Path;

use duriano::corpus::FeatureParams;
use duriano::dsp::{AudioBuffer, StftConfig, WindowKind};
use duriano::model::{ConditioningMode, ModelConfig};
use duriano::pitch::midi_to_hz;

pub const TOY_SR: u32 = 8000;

pub fn toy_stft() -> StftConfig {
    StftConfig {
        sample_rate: TOY_SR,
        win_length: 400,
        hop_length: 80,
        fft_size: 512,
        window: WindowKind::Hann,
    }
}

pub fn toy_feature_params() -> FeatureParams {
    FeatureParams {
        stft: toy_stft(),
        n_mels: 20,
        floor_db: -100.0,
        ref_db: 20.0,
        fmin: 80.0,
        fmax: 600.0,
    }
}

/// Miniature model matched to the toy features (20 mel / 257 linear bins).
pub fn toy_model_config(singer_vocab: usize, role_vocab: usize) -> ModelConfig {
    ModelConfig {
        phoneme_vocab: 39,
        singer_vocab,
        role_vocab,
        phoneme_emb: 32,
        singer_emb: 8,
        role_emb: 8,
        note_pitch_emb: 16,
        note_state_emb: 4,
        prenet_dims: [32, 16],
        encoder_bank_k: 4,
        encoder_bank_channels: 16,
        encoder_highway_layers: 2,
        encoder_gru_units: 16,
        identity_fused: 32,
        decoder_prenet_dims: [32, 16],
        decoder_gru: 48,
        frames_per_step: 2,
        mel_bins: 20,
        linear_bins: 257,
        post_bank_k: 4,
        post_bank_channels: 16,
        post_highway_layers: 2,
        post_highway_dim: 16,
        post_gru_units: 16,
        dropout: 0.5,
        conditioning_mode: ConditioningMode::Note,
        full_scale: false,
    }
}

/// One phrase: (midi or None for rest, seconds, phoneme label).
pub type Segment = (Option<i32>, f64, &'static str);

/// Harmonic tone synthesis with a short raised-cosine attack/release so
/// segment edges do not click.
pub fn render_segments(segments: &[Segment], sr: u32) -> AudioBuffer {
    let sr_f = sr as f64;
    let mut samples: Vec<f64> = Vec::new();
    for &(midi, seconds, _) in segments {
        let n = (seconds * sr_f).round() as usize;
        match midi {
            None => samples.extend(std::iter::repeat_n(0.0, n)),
            Some(m) => {
                let f0 = midi_to_hz(m as f64);
                let ramp = (0.02 * sr_f) as usize;
                for i in 0..n {
                    let t = i as f64 / sr_f;
                    let mut v = 0.0;
                    for (k, amp) in [(1.0, 0.55), (2.0, 0.28), (3.0, 0.14), (4.0, 0.07)] {
                        v += amp * (2.0 * std::f64::consts::PI * f0 * k * t).sin();
                    }
                    let env_in = if i < ramp {
                        0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
                    } else {
                        1.0
                    };
                    let env_out = if i + ramp > n {
                        0.5 - 0.5 * (std::f64::consts::PI * (n - i) as f64 / ramp as f64).cos()
                    } else {
                        1.0
                    };
                    samples.push(v * env_in * env_out * 0.8);
                }
            }
        }
    }
    AudioBuffer::new(samples, sr)
}

/// Write `<id>.wav` and `<id>.phn` for one phrase.
pub fn write_phrase(
    dir: &Path,
    id: &str,
    piece: &str,
    singer: &str,
    role: &str,
    segments: &[Segment],
) {
    let audio = render_segments(segments, TOY_SR);
    duriano::dsp::write_wav(dir.join(format!("{id}.wav")), &audio).unwrap();
    let mut phn = format!("#singer\t{singer}\n#role\t{role}\n#piece\t{piece}\n");
    let mut t = 0.0;
    for &(_, seconds, phoneme) in segments {
        phn.push_str(&format!("{t:.6}\t{:.6}\t{phoneme}\n", t + seconds));
        t += seconds;
    }
    fs::write(dir.join(format!("{id}.phn")), phn).unwrap();
}

/// The standard two-phrase toy corpus used by the overfit and
/// end-to-end tests.
pub fn toy_phrases() -> Vec<(&'static str, &'static str, Vec<Segment>)> {
    vec![
        (
            "p0",
            "pieceA",
            vec![
                (None, 0.08, "SIL"),
                (Some(57), 0.30, "a"),
                (Some(60), 0.30, "i"),
                (Some(64), 0.30, "u"),
                (None, 0.08, "SIL"),
            ],
        ),
        (
            "p1",
            "pieceB",
            vec![
                (None, 0.08, "SIL"),
                (Some(62), 0.30, "o"),
                (Some(57), 0.30, "a"),
                (Some(65), 0.30, "E"),
                (None, 0.08, "SIL"),
            ],
        ),
    ]
}

pub fn write_toy_corpus(dir: &Path) {
    for (id, piece, segments) in toy_phrases() {
        write_phrase(dir, id, piece, "s01", "laosheng", &segments);
    }
}
