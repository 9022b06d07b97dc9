//! Deterministic spectral transforms.
//!
//! Everything in here is a pure function over immutable inputs: STFT and
//! inverse STFT, the mel filterbank, log-magnitude compression and
//! Griffin-Lim phase reconstruction. All transforms are deterministic;
//! identical inputs give bit-identical outputs.

mod container;
mod wav;

pub use container::{read_matrix, read_matrix_from, write_matrix, write_matrix_to};
pub use wav::{read_wav, write_wav};

use ndarray::{Array2, ArrayView2};
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use thiserror::Error;

/// Default lower clip for log-magnitude compression, in dB.
pub const DEFAULT_FLOOR_DB: f64 = -100.0;
/// Default reference (upper clip) for log-magnitude compression, in dB.
pub const DEFAULT_REF_DB: f64 = 20.0;
/// Griffin-Lim iteration count used for waveform generation.
pub const GRIFFIN_LIM_ITERS: usize = 60;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bin count mismatch: spectrogram has {got} bins, config implies {want}")]
    BinMismatch { got: usize, want: usize },
    #[error("mel band count {n_mels} exceeds bin count {bins}")]
    TooManyMelBands { n_mels: usize, bins: usize },
    #[error("floor_db {floor} must be strictly below ref_db {reference}")]
    BadDbRange { floor: f64, reference: f64 },
    #[error("magnitude values must be non-negative")]
    NegativeMagnitude,
    #[error("iterations must be >= 1")]
    NoIterations,
    #[error("wav {path}: {reason}")]
    Wav { path: String, reason: String },
    #[error("container {path}: {reason}")]
    Container { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

/// Analysis parameters shared by the STFT, ISTFT and Griffin-Lim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// Corpus configuration: 44.1 kHz, 50 ms window, 10 ms hop, 2049 bins.
    pub fn canonical() -> Self {
        StftConfig {
            sample_rate: 44_100,
            win_length: 2205,
            hop_length: 441,
            fft_size: 4096,
            window: WindowKind::Hann,
        }
    }

    /// Number of spectrogram bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate as f64
    }

    /// Frame count produced by [`stft`] for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (len - 1) / self.hop_length + 1
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate == 0 {
            return Err(DspError::InvalidConfig("sample_rate must be > 0".into()));
        }
        if self.win_length == 0 || self.hop_length == 0 || self.fft_size == 0 {
            return Err(DspError::InvalidConfig(
                "win_length, hop_length and fft_size must be > 0".into(),
            ));
        }
        if self.fft_size < self.win_length {
            return Err(DspError::InvalidConfig(format!(
                "fft_size {} < win_length {}",
                self.fft_size, self.win_length
            )));
        }
        if self.hop_length > self.win_length {
            return Err(DspError::InvalidConfig(format!(
                "hop_length {} > win_length {}",
                self.hop_length, self.win_length
            )));
        }
        Ok(())
    }
}

/// Mono audio, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Normalized log-magnitude linear spectrogram, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpectrogram {
    pub frames: Array2<f64>,
    pub config: StftConfig,
    pub floor_db: f64,
    pub ref_db: f64,
}

/// Normalized log-mel spectrogram, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub floor_db: f64,
    pub ref_db: f64,
}

/// Triangular mel filters, one row per band, `bins` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
}

fn window_values(kind: WindowKind, len: usize) -> Vec<f64> {
    match kind {
        // Periodic Hann: exact constant overlap-add when hop divides the length.
        WindowKind::Hann => (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
            .collect(),
    }
}

/// Reflection without repeating the edge sample, valid for any offset.
fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut j = i.rem_euclid(period);
    if j >= len {
        j = period - j;
    }
    j as usize
}

fn pad_left(cfg: &StftConfig) -> usize {
    cfg.win_length / 2
}

fn pad_right(cfg: &StftConfig) -> usize {
    cfg.win_length - 1 - cfg.win_length / 2
}

/// Short-time Fourier transform with centered frames.
///
/// The signal is reflect-padded by half a window at both ends, so frame `t`
/// is centered on sample `t * hop_length` and the frame count is
/// `ceil(len / hop_length)`.
pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Array2<Complex<f64>>, DspError> {
    cfg.validate()?;
    if audio.samples.is_empty() {
        return Err(DspError::EmptyInput);
    }
    let left = pad_left(cfg) as isize;
    let n = audio.samples.len();
    let padded_len = n + pad_left(cfg) + pad_right(cfg);
    let padded: Vec<f64> = (0..padded_len)
        .map(|i| audio.samples[reflect_index(i as isize - left, n)])
        .collect();
    Ok(stft_frames(&padded, cfg))
}

/// STFT of an already-padded signal: frames at offsets `t * hop_length`,
/// no extra padding. Requires `signal.len() >= win_length`.
fn stft_frames(signal: &[f64], cfg: &StftConfig) -> Array2<Complex<f64>> {
    let win = window_values(cfg.window, cfg.win_length);
    let n_frames = (signal.len() - cfg.win_length) / cfg.hop_length + 1;
    let bins = cfg.bins();

    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(cfg.fft_size);
    let mut input = r2c.make_input_vec();
    let mut output = r2c.make_output_vec();

    let mut spec = Array2::<Complex<f64>>::zeros((n_frames, bins));
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        for i in 0..cfg.fft_size {
            input[i] = if i < cfg.win_length {
                signal[start + i] * win[i]
            } else {
                0.0
            };
        }
        r2c.process(&mut input, &mut output).expect("rfft");
        for (k, v) in output.iter().enumerate() {
            spec[(t, k)] = *v;
        }
    }
    spec
}

/// Inverse STFT by weighted overlap-add with window-sum-squared
/// normalization. Returns the full overlap-add reconstruction of length
/// `win_length + (T - 1) * hop_length`; for an unmodified [`stft`] output
/// the interior samples reproduce the padded input exactly.
pub fn istft(spec: &ArrayView2<Complex<f64>>, cfg: &StftConfig) -> Result<AudioBuffer, DspError> {
    cfg.validate()?;
    if spec.nrows() == 0 {
        return Err(DspError::EmptyInput);
    }
    if spec.ncols() != cfg.bins() {
        return Err(DspError::BinMismatch {
            got: spec.ncols(),
            want: cfg.bins(),
        });
    }
    let samples = istft_frames(spec, cfg);
    Ok(AudioBuffer::new(samples, cfg.sample_rate))
}

fn istft_frames(spec: &ArrayView2<Complex<f64>>, cfg: &StftConfig) -> Vec<f64> {
    let win = window_values(cfg.window, cfg.win_length);
    let n_frames = spec.nrows();
    let out_len = cfg.win_length + (n_frames - 1) * cfg.hop_length;

    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(cfg.fft_size);
    let mut input = c2r.make_input_vec();
    let mut output = c2r.make_output_vec();

    let mut acc = vec![0.0f64; out_len];
    let mut wsum = vec![0.0f64; out_len];
    let scale = 1.0 / cfg.fft_size as f64;
    let last = input.len() - 1;
    for t in 0..n_frames {
        for (k, v) in input.iter_mut().enumerate() {
            *v = spec[(t, k)];
        }
        // The inverse real FFT requires purely real DC and Nyquist bins.
        input[0].im = 0.0;
        input[last].im = 0.0;
        c2r.process(&mut input, &mut output).expect("irfft");
        let start = t * cfg.hop_length;
        for i in 0..cfg.win_length {
            acc[start + i] += output[i] * scale * win[i];
            wsum[start + i] += win[i] * win[i];
        }
    }
    for i in 0..out_len {
        acc[i] = if wsum[i] > 1e-10 { acc[i] / wsum[i] } else { 0.0 };
    }
    acc
}

/// Magnitudes of a complex spectrogram.
pub fn magnitude(spec: &ArrayView2<Complex<f64>>) -> Array2<f64> {
    spec.mapv(|c| c.norm())
}

const MEL_BREAK_HZ: f64 = 700.0;
const MEL_SCALE: f64 = 2595.0;

pub fn hz_to_mel(f: f64) -> f64 {
    MEL_SCALE * (1.0 + f / MEL_BREAK_HZ).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    MEL_BREAK_HZ * (10f64.powf(m / MEL_SCALE) - 1.0)
}

/// Edge frequencies (Hz) of the triangular filters: `n_mels + 2` points
/// equally spaced on the mel scale between 0 and Nyquist.
pub fn mel_edge_frequencies(cfg: &StftConfig, n_mels: usize) -> Vec<f64> {
    let mel_max = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters on the mel scale spanning 0 Hz to Nyquist.
pub fn build_mel_filterbank(cfg: &StftConfig, n_mels: usize) -> Result<MelFilterbank, DspError> {
    cfg.validate()?;
    if n_mels == 0 {
        return Err(DspError::InvalidConfig("n_mels must be >= 1".into()));
    }
    let bins = cfg.bins();
    if n_mels > bins {
        return Err(DspError::TooManyMelBands { n_mels, bins });
    }
    let edges = mel_edge_frequencies(cfg, n_mels);
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut weights = Array2::<f64>::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                any = true;
            }
            weights[(m, k)] = w;
        }
        if !any {
            // Degenerate spacing (triangle narrower than a bin): fall back to
            // the bin nearest the center so every band stays non-empty.
            let k = ((center / bin_hz).round() as usize).min(bins - 1);
            weights[(m, k)] = 1.0;
        }
    }
    Ok(MelFilterbank { weights })
}

/// Project linear magnitudes onto the mel bands: `spec · weightsᵀ`.
/// Applied pre-compression; the frame count is preserved.
pub fn linear_to_mel(mag: &ArrayView2<f64>, fb: &MelFilterbank) -> Array2<f64> {
    mag.dot(&fb.weights.t())
}

/// Log-compress magnitudes and affinely map [floor_db, ref_db] to [0, 1].
pub fn compress_and_normalize(
    mag: &ArrayView2<f64>,
    floor_db: f64,
    ref_db: f64,
) -> Result<Array2<f64>, DspError> {
    if floor_db >= ref_db {
        return Err(DspError::BadDbRange {
            floor: floor_db,
            reference: ref_db,
        });
    }
    if mag.iter().any(|&v| v < 0.0) {
        return Err(DspError::NegativeMagnitude);
    }
    let span = ref_db - floor_db;
    Ok(mag.mapv(|v| {
        let db = 20.0 * v.max(1e-10).log10();
        (db.clamp(floor_db, ref_db) - floor_db) / span
    }))
}

/// Inverse of [`compress_and_normalize`] up to the clip.
pub fn decompress(norm: &ArrayView2<f64>, floor_db: f64, ref_db: f64) -> Array2<f64> {
    let span = ref_db - floor_db;
    norm.mapv(|y| 10f64.powf((y * span + floor_db) / 20.0))
}

/// Compute the compressed linear spectrogram of `audio`.
pub fn linear_spectrogram(
    audio: &AudioBuffer,
    cfg: &StftConfig,
    floor_db: f64,
    ref_db: f64,
) -> Result<LinearSpectrogram, DspError> {
    let mag = magnitude(&stft(audio, cfg)?.view());
    Ok(LinearSpectrogram {
        frames: compress_and_normalize(&mag.view(), floor_db, ref_db)?,
        config: *cfg,
        floor_db,
        ref_db,
    })
}

/// Compute the compressed mel spectrogram of `audio` through `fb`.
pub fn mel_spectrogram(
    audio: &AudioBuffer,
    cfg: &StftConfig,
    fb: &MelFilterbank,
    floor_db: f64,
    ref_db: f64,
) -> Result<MelSpectrogram, DspError> {
    let mag = magnitude(&stft(audio, cfg)?.view());
    let mel = linear_to_mel(&mag.view(), fb);
    Ok(MelSpectrogram {
        frames: compress_and_normalize(&mel.view(), floor_db, ref_db)?,
        floor_db,
        ref_db,
    })
}

/// Griffin-Lim phase reconstruction from a compressed linear spectrogram.
pub fn griffin_lim(
    spec: &LinearSpectrogram,
    iterations: usize,
    cfg: &StftConfig,
) -> Result<AudioBuffer, DspError> {
    if spec.frames.ncols() != cfg.bins() {
        return Err(DspError::BinMismatch {
            got: spec.frames.ncols(),
            want: cfg.bins(),
        });
    }
    let target = decompress(&spec.frames.view(), spec.floor_db, spec.ref_db);
    let (audio, _) = griffin_lim_magnitude(&target.view(), iterations, cfg)?;
    Ok(audio)
}

/// Griffin-Lim on a raw magnitude target. Returns the reconstructed audio,
/// trimmed to the original time axis, together with the per-iteration
/// squared spectral error `sum((|STFT(x_k)| - target)^2)`, which is
/// non-increasing for this classic zero-initial-phase variant.
pub fn griffin_lim_magnitude(
    target: &ArrayView2<f64>,
    iterations: usize,
    cfg: &StftConfig,
) -> Result<(AudioBuffer, Vec<f64>), DspError> {
    cfg.validate()?;
    if iterations == 0 {
        return Err(DspError::NoIterations);
    }
    if target.ncols() != cfg.bins() {
        return Err(DspError::BinMismatch {
            got: target.ncols(),
            want: cfg.bins(),
        });
    }
    if target.nrows() == 0 {
        return Err(DspError::EmptyInput);
    }

    // Zero initial phase; the loop alternates between the time-domain
    // projection (istft followed by stft, both without re-padding) and the
    // magnitude projection.
    let mut estimate = target.mapv(|m| Complex::new(m, 0.0));
    let mut errors = Vec::with_capacity(iterations);
    let mut signal = istft_frames(&estimate.view(), cfg);
    for _ in 0..iterations {
        let rebuilt = stft_frames(&signal, cfg);
        let mut err = 0.0;
        for (r, &m) in rebuilt.iter().zip(target.iter()) {
            let d = r.norm() - m;
            err += d * d;
        }
        errors.push(err);
        for ((e, r), &m) in estimate.iter_mut().zip(rebuilt.iter()).zip(target.iter()) {
            let norm = r.norm();
            *e = if norm > 1e-300 {
                r * (m / norm)
            } else {
                Complex::new(m, 0.0)
            };
        }
        signal = istft_frames(&estimate.view(), cfg);
    }

    // Trim the analysis padding so the output aligns with `t * hop_length`.
    let left = pad_left(cfg);
    let right = pad_right(cfg);
    let trimmed: Vec<f64> = if signal.len() > left + right {
        signal[left..signal.len() - right].to_vec()
    } else {
        signal
    };
    Ok((AudioBuffer::new(trimmed, cfg.sample_rate), errors))
}
