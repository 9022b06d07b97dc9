//! Monophonic f0 extraction and note transcription.
//!
//! The extractor runs YIN (cumulative-mean-normalized difference with an
//! absolute threshold and parabolic interpolation) per frame, then smooths
//! the candidate track with a Viterbi pass over 0.1-semitone pitch bins plus
//! an unvoiced state. [`segment_notes`] quantizes a contour into integer
//! note-pitch events with onset/sustain/silence states.

use thiserror::Error;

use crate::dsp::AudioBuffer;

/// Lowest transcribable note, C2.
pub const MIDI_MIN: i32 = 36;
/// Highest transcribable note, C6.
pub const MIDI_MAX: i32 = 84;
/// Note-pitch vocabulary: 49 semitones plus silence.
pub const NOTE_PITCH_VOCAB: usize = (MIDI_MAX - MIDI_MIN + 1) as usize + 1;
/// Note-state vocabulary: silence, onset, sustain.
pub const NOTE_STATE_VOCAB: usize = 3;

/// YIN absolute threshold on the normalized difference.
const YIN_THRESHOLD: f64 = 0.15;
/// Shortest note kept by [`segment_notes`], in seconds.
const MIN_NOTE_SECONDS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PitchError {
    #[error("audio shorter than one analysis window ({need} samples, got {got})")]
    TooShort { need: usize, got: usize },
    #[error("fmin must be positive and below fmax (got fmin={fmin}, fmax={fmax})")]
    BadRange { fmin: f64, fmax: f64 },
    #[error("hop must be > 0")]
    BadHop,
    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("empty contour")]
    EmptyContour,
}

/// Per-frame fundamental frequency in Hz; 0.0 encodes unvoiced.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    /// Frame hop in seconds.
    pub hop: f64,
}

impl PitchContour {
    pub fn voiced_frames(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.f0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (i, v))
    }
}

/// One frame of the note event stream. Voiced runs start with a single
/// onset frame followed by sustain frames; silence carries no pitch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteEvent {
    Silence,
    Onset(i32),
    Sustain(i32),
}

impl NoteEvent {
    pub fn midi(&self) -> Option<i32> {
        match self {
            NoteEvent::Silence => None,
            NoteEvent::Onset(m) | NoteEvent::Sustain(m) => Some(*m),
        }
    }

    /// 0 silence, 1 onset, 2 sustain.
    pub fn state_id(&self) -> usize {
        match self {
            NoteEvent::Silence => 0,
            NoteEvent::Onset(_) => 1,
            NoteEvent::Sustain(_) => 2,
        }
    }
}

/// Frame-aligned note events, one per spectrogram frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteEventSequence {
    pub events: Vec<NoteEvent>,
    /// Frame hop in seconds.
    pub hop: f64,
}

impl NoteEventSequence {
    /// Checks the state-pattern invariant: every voiced run opens with
    /// exactly one onset and continues with sustains of the same pitch,
    /// and all pitches lie in [C2, C6].
    pub fn validate(&self) -> Result<(), String> {
        let mut prev: Option<i32> = None;
        for (i, ev) in self.events.iter().enumerate() {
            match ev {
                NoteEvent::Silence => prev = None,
                NoteEvent::Onset(m) => {
                    if *m < MIDI_MIN || *m > MIDI_MAX {
                        return Err(format!("frame {i}: midi {m} out of range"));
                    }
                    prev = Some(*m);
                }
                NoteEvent::Sustain(m) => {
                    if *m < MIDI_MIN || *m > MIDI_MAX {
                        return Err(format!("frame {i}: midi {m} out of range"));
                    }
                    match prev {
                        Some(p) if p == *m => {}
                        Some(p) => {
                            return Err(format!(
                                "frame {i}: sustain of {m} inside run of {p} without onset"
                            ))
                        }
                        None => return Err(format!("frame {i}: sustain without onset")),
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn hz_to_midi(f0: f64) -> Result<f64, PitchError> {
    if f0 <= 0.0 {
        return Err(PitchError::NonPositiveFrequency(f0));
    }
    Ok(69.0 + 12.0 * (f0 / 440.0).log2())
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

struct YinCandidate {
    f0: f64,
}

/// YIN on one frame: `frame.len()` must be at least `2 * tau_max`.
fn yin_frame(frame: &[f64], sample_rate: f64, tau_min: usize, tau_max: usize) -> Option<YinCandidate> {
    let w = tau_max;
    debug_assert!(frame.len() >= 2 * tau_max);

    let mut diff = vec![0.0f64; tau_max + 1];
    for tau in 1..=tau_max {
        let mut s = 0.0;
        for i in 0..w {
            let d = frame[i] - frame[i + tau];
            s += d * d;
        }
        diff[tau] = s;
    }

    // Cumulative mean normalized difference.
    let mut cmnd = vec![1.0f64; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    // First threshold crossing, refined to its local minimum.
    let mut tau_est = None;
    let mut tau = tau_min.max(2);
    while tau <= tau_max {
        if cmnd[tau] < YIN_THRESHOLD {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            tau_est = Some(tau);
            break;
        }
        tau += 1;
    }
    let tau = tau_est?;

    // Parabolic interpolation around the minimum.
    let refined = if tau > 1 && tau < tau_max {
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            tau as f64 + (a - c) / (2.0 * denom)
        } else {
            tau as f64
        }
    } else {
        tau as f64
    };

    Some(YinCandidate {
        f0: sample_rate / refined,
    })
}

/// Extract a per-frame pitch contour; one value per `hop` samples, frame
/// count `ceil(len / hop)` to stay aligned with the spectrogram.
pub fn extract_f0(
    audio: &AudioBuffer,
    hop: usize,
    fmin: f64,
    fmax: f64,
) -> Result<PitchContour, PitchError> {
    if hop == 0 {
        return Err(PitchError::BadHop);
    }
    if fmin <= 0.0 || fmin >= fmax {
        return Err(PitchError::BadRange { fmin, fmax });
    }
    let sr = audio.sample_rate as f64;
    let tau_max = (sr / fmin).ceil() as usize;
    let tau_min = ((sr / fmax).floor() as usize).max(1);
    let frame_len = 2 * tau_max;
    let n = audio.samples.len();
    if n < frame_len {
        return Err(PitchError::TooShort {
            need: frame_len,
            got: n,
        });
    }

    let n_frames = (n - 1) / hop + 1;
    let half = frame_len / 2;
    let mut frame = vec![0.0f64; frame_len];
    let mut candidates: Vec<Option<f64>> = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let center = t * hop;
        for (i, v) in frame.iter_mut().enumerate() {
            let idx = center as isize - half as isize + i as isize;
            *v = audio.samples[reflect(idx, n)];
        }
        let cand = yin_frame(&frame, sr, tau_min, tau_max)
            .map(|c| c.f0)
            .filter(|&f| f >= fmin && f <= fmax);
        candidates.push(cand);
    }

    let f0 = viterbi_smooth(&candidates, fmin, fmax);
    Ok(PitchContour {
        f0,
        hop: hop as f64 / sr,
    })
}

fn reflect(i: isize, len: usize) -> usize {
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

/// Viterbi over {unvoiced} ∪ 0.1-semitone pitch bins. Octave jumps pay a
/// capped per-semitone cost so spurious candidates get absorbed while real
/// note changes stay sharp.
#[allow(clippy::needless_range_loop)]
fn viterbi_smooth(candidates: &[Option<f64>], fmin: f64, fmax: f64) -> Vec<f64> {
    const BIN_SEMITONES: f64 = 0.1;
    const EMIT_SIGMA: f64 = 0.3;
    const NO_CANDIDATE_VOICED_COST: f64 = 4.0;
    const CANDIDATE_UNVOICED_COST: f64 = 4.0;
    const SWITCH_COST: f64 = 2.0;
    const JUMP_COST_PER_SEMITONE: f64 = 1.0;
    const JUMP_COST_CAP: f64 = 3.0;

    let t_len = candidates.len();
    if t_len == 0 {
        return Vec::new();
    }
    let midi_lo = hz_to_midi(fmin).unwrap();
    let midi_hi = hz_to_midi(fmax).unwrap();
    let n_bins = ((midi_hi - midi_lo) / BIN_SEMITONES).ceil() as usize + 1;
    let n_states = n_bins + 1; // state 0 is unvoiced
    let bin_midi = |b: usize| midi_lo + (b as f64) * BIN_SEMITONES;

    let emit = |t: usize, s: usize| -> f64 {
        match (candidates[t], s) {
            (None, 0) => 0.0,
            (None, _) => NO_CANDIDATE_VOICED_COST,
            (Some(_), 0) => CANDIDATE_UNVOICED_COST,
            (Some(f), s) => {
                let m = hz_to_midi(f).unwrap();
                let d = (m - bin_midi(s - 1)) / EMIT_SIGMA;
                0.5 * d * d
            }
        }
    };

    let band = (JUMP_COST_CAP / JUMP_COST_PER_SEMITONE / BIN_SEMITONES).ceil() as usize;
    let mut score = vec![0.0f64; n_states];
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(t_len);
    for s in 0..n_states {
        score[s] = emit(0, s);
    }
    for t in 1..t_len {
        let mut next = vec![f64::INFINITY; n_states];
        let mut bp = vec![0u32; n_states];

        // Cheapest predecessor overall, used through the capped jump cost.
        let (mut best_voiced, mut best_voiced_idx) = (f64::INFINITY, 0usize);
        for s in 1..n_states {
            if score[s] < best_voiced {
                best_voiced = score[s];
                best_voiced_idx = s;
            }
        }

        for s in 0..n_states {
            let (mut best, mut arg) = (f64::INFINITY, 0usize);
            if s == 0 {
                // stay unvoiced, or leave a note
                if score[0] < best {
                    best = score[0];
                    arg = 0;
                }
                if best_voiced + SWITCH_COST < best {
                    best = best_voiced + SWITCH_COST;
                    arg = best_voiced_idx;
                }
            } else {
                let lo = s.saturating_sub(band).max(1);
                let hi = (s + band).min(n_states - 1);
                for p in lo..=hi {
                    let jump = (bin_midi(p - 1) - bin_midi(s - 1)).abs() * JUMP_COST_PER_SEMITONE;
                    let c = score[p] + jump.min(JUMP_COST_CAP);
                    if c < best {
                        best = c;
                        arg = p;
                    }
                }
                // far jumps all pay the cap
                if best_voiced + JUMP_COST_CAP < best {
                    best = best_voiced + JUMP_COST_CAP;
                    arg = best_voiced_idx;
                }
                if score[0] + SWITCH_COST < best {
                    best = score[0] + SWITCH_COST;
                    arg = 0;
                }
            }
            next[s] = best + emit(t, s);
            bp[s] = arg as u32;
        }
        score = next;
        back.push(bp);
    }

    let mut state = score
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t - 1][state] as usize;
        path[t - 1] = state;
    }

    path.iter()
        .enumerate()
        .map(|(t, &s)| {
            if s == 0 {
                0.0
            } else {
                let center = bin_midi(s - 1);
                match candidates[t] {
                    // Keep the interpolated YIN value when it agrees with the
                    // chosen bin; fall back to the bin center otherwise.
                    Some(f) if (hz_to_midi(f).unwrap() - center).abs() <= 0.5 => {
                        f.clamp(fmin, fmax)
                    }
                    _ => midi_to_hz(center).clamp(fmin, fmax),
                }
            }
        })
        .collect()
}

/// Quantize a contour into integer note events: Viterbi over
/// {silence} ∪ {C2..C6} with Gaussian emissions in MIDI space, then a
/// minimum-duration merge, then onset/sustain marking.
#[allow(clippy::needless_range_loop)]
pub fn segment_notes(contour: &PitchContour) -> Result<NoteEventSequence, PitchError> {
    const EMIT_SIGMA: f64 = 1.0;
    const SILENCE_MISMATCH_COST: f64 = 8.0;
    const NOTE_CHANGE_COST: f64 = 3.0;
    const VOICING_SWITCH_COST: f64 = 2.0;

    if contour.f0.is_empty() {
        return Err(PitchError::EmptyContour);
    }
    let t_len = contour.f0.len();
    let n_notes = (MIDI_MAX - MIDI_MIN + 1) as usize;
    let n_states = n_notes + 1; // state 0 is silence

    let midi: Vec<Option<f64>> = contour
        .f0
        .iter()
        .map(|&f| if f > 0.0 { hz_to_midi(f).ok() } else { None })
        .collect();

    let emit = |t: usize, s: usize| -> f64 {
        match (midi[t], s) {
            (None, 0) => 0.0,
            (None, _) => SILENCE_MISMATCH_COST,
            (Some(_), 0) => SILENCE_MISMATCH_COST,
            (Some(m), s) => {
                let pitch = (MIDI_MIN + (s as i32 - 1)) as f64;
                let d = (m - pitch) / EMIT_SIGMA;
                0.5 * d * d
            }
        }
    };
    let trans = |p: usize, s: usize| -> f64 {
        if p == s {
            0.0
        } else if p == 0 || s == 0 {
            VOICING_SWITCH_COST
        } else {
            NOTE_CHANGE_COST
        }
    };

    let mut score: Vec<f64> = (0..n_states).map(|s| emit(0, s)).collect();
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![f64::INFINITY; n_states];
        let mut bp = vec![0u32; n_states];
        for s in 0..n_states {
            let (mut best, mut arg) = (f64::INFINITY, 0usize);
            for p in 0..n_states {
                let c = score[p] + trans(p, s);
                if c < best {
                    best = c;
                    arg = p;
                }
            }
            next[s] = best + emit(t, s);
            bp[s] = arg as u32;
        }
        score = next;
        back.push(bp);
    }

    let mut state = score
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t - 1][state] as usize;
        path[t - 1] = state;
    }

    // Short-run merge. Runs below the minimum duration are absorbed into the
    // longer neighbor (the earlier one on ties).
    let min_frames = if contour.hop > 0.0 {
        ((MIN_NOTE_SECONDS / contour.hop).round() as usize).max(1)
    } else {
        1
    };
    let mut runs: Vec<(usize, usize)> = Vec::new(); // (state, length)
    for &s in &path {
        match runs.last_mut() {
            Some((state, len)) if *state == s => *len += 1,
            _ => runs.push((s, 1)),
        }
    }
    loop {
        // Find the shortest offending voiced run. Short rests are kept:
        // the minimum duration applies to notes, not to silence.
        let mut idx: Option<usize> = None;
        for (i, &(state, len)) in runs.iter().enumerate() {
            if state != 0
                && runs.len() > 1
                && len < min_frames
                && idx.is_none_or(|j| len < runs[j].1)
            {
                idx = Some(i);
            }
        }
        let Some(i) = idx else { break };
        let (_, len) = runs[i];
        let take_prev = if i == 0 {
            false
        } else if i + 1 >= runs.len() {
            true
        } else {
            runs[i - 1].1 >= runs[i + 1].1
        };
        if take_prev {
            runs[i - 1].1 += len;
            runs.remove(i);
        } else {
            runs[i + 1].1 += len;
            runs.remove(i);
        }
        // Coalesce neighbors that became equal.
        let mut j = 1;
        while j < runs.len() {
            if runs[j].0 == runs[j - 1].0 {
                runs[j - 1].1 += runs[j].1;
                runs.remove(j);
            } else {
                j += 1;
            }
        }
    }

    let mut events = Vec::with_capacity(t_len);
    for &(s, len) in &runs {
        if s == 0 {
            events.extend(std::iter::repeat_n(NoteEvent::Silence, len));
        } else {
            let m = MIDI_MIN + (s as i32 - 1);
            events.push(NoteEvent::Onset(m));
            events.extend(std::iter::repeat_n(NoteEvent::Sustain(m), len - 1));
        }
    }
    Ok(NoteEventSequence {
        events,
        hop: contour.hop,
    })
}

/// One line per frame: `frame_index<TAB>midi_or_SIL<TAB>state`.
pub fn note_events_to_tsv(seq: &NoteEventSequence) -> String {
    let mut out = String::new();
    for (i, ev) in seq.events.iter().enumerate() {
        let (pitch, state) = match ev {
            NoteEvent::Silence => ("SIL".to_string(), "silence"),
            NoteEvent::Onset(m) => (m.to_string(), "onset"),
            NoteEvent::Sustain(m) => (m.to_string(), "sustain"),
        };
        out.push_str(&format!("{i}\t{pitch}\t{state}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64, sr: u32) -> AudioBuffer {
        let n = (seconds * sr as f64).round() as usize;
        AudioBuffer::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() * 0.7)
                .collect(),
            sr,
        )
    }

    #[test]
    fn midi_anchors() {
        assert!((hz_to_midi(440.0).unwrap() - 69.0).abs() < 1e-12);
        assert!((hz_to_midi(261.6256).unwrap() - 60.0).abs() < 1e-3);
        assert!((hz_to_midi(880.0).unwrap() - 81.0).abs() < 1e-12);
        assert!(matches!(
            hz_to_midi(0.0),
            Err(PitchError::NonPositiveFrequency(_))
        ));
        assert!((midi_to_hz(69.0) - 440.0).abs() < 1e-9);
    }

    #[test]
    fn sine_contour_hits_440() {
        let audio = sine(440.0, 1.0, 44_100);
        let contour = extract_f0(&audio, 441, 50.0, 1500.0).unwrap();
        assert_eq!(contour.f0.len(), 100);
        let mut voiced: Vec<f64> = contour.voiced_frames().map(|(_, f)| f).collect();
        assert!(voiced.len() > 80, "only {} voiced frames", voiced.len());
        voiced.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = voiced[voiced.len() / 2];
        assert!((median - 440.0).abs() <= 1.0, "median {median}");
    }

    #[test]
    fn silence_is_unvoiced() {
        let audio = AudioBuffer::new(vec![0.0; 44_100], 44_100);
        let contour = extract_f0(&audio, 441, 50.0, 1500.0).unwrap();
        assert!(contour.f0.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn octave_step_is_sharp() {
        let sr = 44_100;
        let mut samples = sine(440.0, 0.5, sr).samples;
        samples.extend(sine(880.0, 0.5, sr).samples);
        let audio = AudioBuffer::new(samples, sr);
        let contour = extract_f0(&audio, 441, 100.0, 1500.0).unwrap();
        let step_frame = 50;
        let mut deviating = 0;
        for (t, &f) in contour.f0.iter().enumerate() {
            if f == 0.0 {
                deviating += 1;
                continue;
            }
            let want = if t < step_frame { 440.0 } else { 880.0 };
            if (hz_to_midi(f).unwrap() - hz_to_midi(want).unwrap()).abs() > 1.0 {
                deviating += 1;
            }
        }
        assert!(deviating <= 3, "{deviating} frames deviate");
    }

    #[test]
    fn too_short_audio_errors() {
        let audio = sine(440.0, 0.01, 44_100);
        assert!(matches!(
            extract_f0(&audio, 441, 50.0, 1500.0),
            Err(PitchError::TooShort { .. })
        ));
    }

    #[test]
    fn two_note_step_segments_exactly() {
        let hop = 0.01;
        let mut f0 = vec![261.6256; 100];
        f0.extend(vec![293.6648; 100]);
        let seq = segment_notes(&PitchContour { f0, hop }).unwrap();
        seq.validate().unwrap();
        assert_eq!(seq.events.len(), 200);
        assert_eq!(seq.events[0], NoteEvent::Onset(60));
        for t in 1..100 {
            assert_eq!(seq.events[t], NoteEvent::Sustain(60), "frame {t}");
        }
        assert_eq!(seq.events[100], NoteEvent::Onset(62));
        for t in 101..200 {
            assert_eq!(seq.events[t], NoteEvent::Sustain(62), "frame {t}");
        }
    }

    #[test]
    fn unvoiced_contour_is_all_silence() {
        let seq = segment_notes(&PitchContour {
            f0: vec![0.0; 50],
            hop: 0.01,
        })
        .unwrap();
        assert!(seq.events.iter().all(|e| *e == NoteEvent::Silence));
    }

    #[test]
    fn short_octave_glitch_is_merged() {
        let hop = 0.01; // min duration 5 frames
        let c4 = 261.6256;
        let mut f0 = vec![c4; 40];
        f0[20] = c4 * 2.0;
        f0[21] = c4 * 2.0;
        let seq = segment_notes(&PitchContour { f0, hop }).unwrap();
        seq.validate().unwrap();
        assert_eq!(seq.events[0], NoteEvent::Onset(60));
        for t in 1..40 {
            assert_eq!(seq.events[t], NoteEvent::Sustain(60), "frame {t}");
        }
    }

    #[test]
    fn semitone_grid_round_trip() {
        let hop = 0.01;
        let notes = [60, 64, 67, 59, 72];
        let mut f0 = Vec::new();
        for &m in &notes {
            f0.extend(vec![midi_to_hz(m as f64); 20]);
        }
        let seq = segment_notes(&PitchContour { f0, hop }).unwrap();
        seq.validate().unwrap();
        let mut got = Vec::new();
        for ev in &seq.events {
            if let NoteEvent::Onset(m) = ev {
                got.push(*m);
            }
        }
        assert_eq!(got, notes);
    }

    #[test]
    fn tsv_export_format() {
        let seq = NoteEventSequence {
            events: vec![
                NoteEvent::Silence,
                NoteEvent::Onset(69),
                NoteEvent::Sustain(69),
            ],
            hop: 0.01,
        };
        let tsv = note_events_to_tsv(&seq);
        assert_eq!(tsv, "0\tSIL\tsilence\n1\t69\tonset\n2\t69\tsustain\n");
    }

    proptest::proptest! {
        // arbitrary contours always yield a valid event stream: one onset
        // per voiced run, pitches confined to [C2, C6] or silence
        #[test]
        fn random_contours_give_valid_sequences(
            frames in proptest::collection::vec(
                proptest::option::weighted(0.7, 30.0f64..2000.0),
                1..200,
            ),
        ) {
            let f0: Vec<f64> = frames.into_iter().map(|v| v.unwrap_or(0.0)).collect();
            let seq = segment_notes(&PitchContour { f0, hop: 0.01 }).unwrap();
            proptest::prop_assert!(seq.validate().is_ok());
            for ev in &seq.events {
                if let Some(m) = ev.midi() {
                    proptest::prop_assert!((MIDI_MIN..=MIDI_MAX).contains(&m));
                }
            }
        }
    }
}
