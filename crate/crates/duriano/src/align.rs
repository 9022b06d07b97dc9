//! Frame-aligned conditioning plans.
//!
//! A [`FrameFeaturePlan`] carries everything the acoustic model needs per
//! phrase: phoneme ids with durations, per-frame note-pitch and note-state
//! ids, normalized frame positions and the singing identity. Plans are built
//! from transcriptions during training and from scores at synthesis time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::dsp::{read_matrix_from, write_matrix_to};
use crate::pitch::{NoteEventSequence, MIDI_MAX, MIDI_MIN};

pub const PLAN_MAGIC: &[u8; 4] = b"PLAN";
pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("phoneme id and duration lists differ in length ({ids} vs {durations})")]
    LengthMismatch { ids: usize, durations: usize },
    #[error("phoneme {index} has zero duration")]
    ZeroDuration { index: usize },
    #[error("midi {0} outside [{MIDI_MIN}, {MIDI_MAX}]")]
    MidiOutOfRange(i32),
    #[error("per-frame arrays disagree: durations sum to {expected} but {field} has {got} frames")]
    FrameCountMismatch {
        expected: usize,
        field: &'static str,
        got: usize,
    },
    #[error("phoneme {index} (frames {start}..{end}) overlaps no score note")]
    NoOverlappingNotes {
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("score is empty")]
    EmptyScore,
    #[error("score line {line}: {reason}")]
    BadScoreLine { line: usize, reason: String },
    #[error("plan file {path}: {reason}")]
    PlanFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integer, frame-aligned conditioning plan for one phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeaturePlan {
    /// Per-phoneme ids, in phrase order.
    pub phoneme_ids: Vec<usize>,
    /// Per-phoneme frame counts; sums to the phrase frame total.
    pub durations: Vec<usize>,
    /// Per-frame note-pitch ids in [0, 49]; 0 is silence, C2 is 1.
    pub note_pitch_ids: Vec<usize>,
    /// Per-frame note-state ids: 0 silence, 1 onset, 2 sustain.
    pub note_state_ids: Vec<usize>,
    /// Per-frame positions, exactly `t / T`.
    pub positions: Vec<f64>,
    pub singer_id: usize,
    pub role_type_id: usize,
}

impl FrameFeaturePlan {
    pub fn total_frames(&self) -> usize {
        self.note_pitch_ids.len()
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if self.phoneme_ids.len() != self.durations.len() {
            return Err(AlignError::LengthMismatch {
                ids: self.phoneme_ids.len(),
                durations: self.durations.len(),
            });
        }
        if let Some(index) = self.durations.iter().position(|&d| d == 0) {
            return Err(AlignError::ZeroDuration { index });
        }
        let total: usize = self.durations.iter().sum();
        for (field, got) in [
            ("note_pitch_ids", self.note_pitch_ids.len()),
            ("note_state_ids", self.note_state_ids.len()),
            ("positions", self.positions.len()),
        ] {
            if got != total {
                return Err(AlignError::FrameCountMismatch {
                    expected: total,
                    field,
                    got,
                });
            }
        }
        for (t, &p) in self.positions.iter().enumerate() {
            if (p - t as f64 / total as f64).abs() > 1e-12 {
                return Err(AlignError::FrameCountMismatch {
                    expected: total,
                    field: "positions (not t/T)",
                    got: t,
                });
            }
        }
        Ok(())
    }
}

/// `positions[t] = t / T`.
pub fn frame_positions(total: usize) -> Vec<f64> {
    (0..total).map(|t| t as f64 / total as f64).collect()
}

/// Repeat `ids[i]` exactly `durations[i]` times, in order.
pub fn expand_durations<T: Copy>(ids: &[T], durations: &[usize]) -> Result<Vec<T>, AlignError> {
    if ids.len() != durations.len() {
        return Err(AlignError::LengthMismatch {
            ids: ids.len(),
            durations: durations.len(),
        });
    }
    if let Some(index) = durations.iter().position(|&d| d == 0) {
        return Err(AlignError::ZeroDuration { index });
    }
    let total = durations.iter().sum();
    let mut out = Vec::with_capacity(total);
    for (&id, &d) in ids.iter().zip(durations.iter()) {
        out.extend(std::iter::repeat_n(id, d));
    }
    Ok(out)
}

/// Map note events onto per-frame integer ids: pitch 0 for silence else
/// `midi - 35` (C2 → 1 … C6 → 49); state 0 silence, 1 onset, 2 sustain.
pub fn events_to_id_frames(
    events: &NoteEventSequence,
) -> Result<(Vec<usize>, Vec<usize>), AlignError> {
    let mut pitch_ids = Vec::with_capacity(events.events.len());
    let mut state_ids = Vec::with_capacity(events.events.len());
    for ev in &events.events {
        match ev.midi() {
            None => {
                pitch_ids.push(0);
                state_ids.push(0);
            }
            Some(m) => {
                if !(MIDI_MIN..=MIDI_MAX).contains(&m) {
                    return Err(AlignError::MidiOutOfRange(m));
                }
                pitch_ids.push((m - MIDI_MIN + 1) as usize);
                state_ids.push(ev.state_id());
            }
        }
    }
    Ok((pitch_ids, state_ids))
}

/// One note from a score: MIDI pitch (or rest) with onset and duration in
/// beats. Notes are sorted and non-overlapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreNote {
    pub onset_beats: f64,
    pub duration_beats: f64,
    /// `None` is a rest.
    pub pitch: Option<i32>,
}

/// Parse a score: one line per note, `onset_beats<TAB>duration_beats<TAB>midi_or_SIL`.
pub fn parse_score(text: &str) -> Result<Vec<ScoreNote>, AlignError> {
    let mut notes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(AlignError::BadScoreLine {
                line: line_no,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let onset: f64 = fields[0].parse().map_err(|_| AlignError::BadScoreLine {
            line: line_no,
            reason: format!("bad onset '{}'", fields[0]),
        })?;
        let duration: f64 = fields[1].parse().map_err(|_| AlignError::BadScoreLine {
            line: line_no,
            reason: format!("bad duration '{}'", fields[1]),
        })?;
        if duration <= 0.0 {
            return Err(AlignError::BadScoreLine {
                line: line_no,
                reason: "duration must be > 0".into(),
            });
        }
        let pitch = if fields[2] == "SIL" {
            None
        } else {
            let midi: i32 = fields[2].parse().map_err(|_| AlignError::BadScoreLine {
                line: line_no,
                reason: format!("bad pitch '{}'", fields[2]),
            })?;
            if !(MIDI_MIN..=MIDI_MAX).contains(&midi) {
                return Err(AlignError::BadScoreLine {
                    line: line_no,
                    reason: format!("midi {midi} outside [{MIDI_MIN}, {MIDI_MAX}]"),
                });
            }
            Some(midi)
        };
        if let Some(prev) = notes.last() {
            let prev: &ScoreNote = prev;
            if onset < prev.onset_beats + prev.duration_beats - 1e-9 {
                return Err(AlignError::BadScoreLine {
                    line: line_no,
                    reason: "notes must be sorted and non-overlapping".into(),
                });
            }
        }
        notes.push(ScoreNote {
            onset_beats: onset,
            duration_beats: duration,
            pitch,
        });
    }
    if notes.is_empty() {
        return Err(AlignError::EmptyScore);
    }
    Ok(notes)
}

/// Largest-remainder apportionment of `total` units over non-negative
/// weights; ties go to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Build a synthesis plan from a score.
///
/// Each non-consonant phoneme's frame span is divided among the score notes
/// it overlaps in time, proportionally to the overlap in beats
/// (largest-remainder rounding; sub-spans rounded to zero are absorbed by
/// their neighbors). Initial consonants are forced to silence. A frame gets
/// the onset state when its note begins there (including re-entry after
/// silence); subsequent frames of the note sustain.
#[allow(clippy::too_many_arguments)]
pub fn score_to_plan(
    score: &[ScoreNote],
    phoneme_ids: &[usize],
    durations: &[usize],
    tempo_sec_per_beat: f64,
    hop_seconds: f64,
    consonant_flags: &[bool],
    singer_id: usize,
    role_type_id: usize,
) -> Result<FrameFeaturePlan, AlignError> {
    if score.is_empty() {
        return Err(AlignError::EmptyScore);
    }
    if phoneme_ids.len() != durations.len() || phoneme_ids.len() != consonant_flags.len() {
        return Err(AlignError::LengthMismatch {
            ids: phoneme_ids.len(),
            durations: durations.len(),
        });
    }
    if let Some(index) = durations.iter().position(|&d| d == 0) {
        return Err(AlignError::ZeroDuration { index });
    }
    let total: usize = durations.iter().sum();

    // Per-frame note index; None marks silence (rests and consonants).
    let mut frame_note: Vec<Option<usize>> = vec![None; total];

    let mut frame_cursor = 0usize;
    for (i, (&dur, &consonant)) in durations.iter().zip(consonant_flags.iter()).enumerate() {
        let (fs, fe) = (frame_cursor, frame_cursor + dur);
        frame_cursor = fe;
        if consonant {
            continue; // silence
        }
        let (t0, t1) = (fs as f64 * hop_seconds, fe as f64 * hop_seconds);
        // Overlapping notes and their overlap in beats.
        let mut overlaps: Vec<(usize, f64)> = Vec::new();
        for (j, note) in score.iter().enumerate() {
            let n0 = note.onset_beats * tempo_sec_per_beat;
            let n1 = (note.onset_beats + note.duration_beats) * tempo_sec_per_beat;
            let lo = n0.max(t0);
            let hi = n1.min(t1);
            if hi - lo > 1e-9 {
                overlaps.push((j, (hi - lo) / tempo_sec_per_beat));
            }
        }
        if overlaps.is_empty() {
            return Err(AlignError::NoOverlappingNotes {
                index: i,
                start: fs,
                end: fe,
            });
        }
        let weights: Vec<f64> = overlaps.iter().map(|&(_, w)| w).collect();
        let counts = largest_remainder(&weights, dur);
        let mut at = fs;
        for (&(j, _), &c) in overlaps.iter().zip(counts.iter()) {
            for slot in frame_note.iter_mut().skip(at).take(c) {
                *slot = score[j].pitch.map(|_| j);
            }
            at += c;
        }
    }

    let mut note_pitch_ids = Vec::with_capacity(total);
    let mut note_state_ids = Vec::with_capacity(total);
    let mut prev: Option<usize> = None;
    for &cur in &frame_note {
        match cur {
            None => {
                note_pitch_ids.push(0);
                note_state_ids.push(0);
            }
            Some(j) => {
                let midi = score[j].pitch.expect("voiced frame maps to pitched note");
                note_pitch_ids.push((midi - MIDI_MIN + 1) as usize);
                note_state_ids.push(if prev == Some(j) { 2 } else { 1 });
            }
        }
        prev = cur;
    }

    let plan = FrameFeaturePlan {
        phoneme_ids: phoneme_ids.to_vec(),
        durations: durations.to_vec(),
        note_pitch_ids,
        note_state_ids,
        positions: frame_positions(total),
        singer_id,
        role_type_id,
    };
    plan.validate()?;
    Ok(plan)
}

fn plan_err(path: &Path, reason: impl Into<String>) -> AlignError {
    AlignError::PlanFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn usize_row(values: &[usize]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.iter().map(|&v| v as f64).collect()).unwrap()
}

/// Write a plan: "PLAN" header followed by the five arrays, each in the
/// flat binary matrix container layout.
pub fn write_plan(
    path: impl AsRef<Path>,
    phrase_id: &str,
    plan: &FrameFeaturePlan,
) -> Result<(), AlignError> {
    let path = path.as_ref();
    let inner = |w: &mut dyn Write| -> std::io::Result<()> {
        w.write_all(PLAN_MAGIC)?;
        w.write_all(&PLAN_VERSION.to_le_bytes())?;
        let id = phrase_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(plan.singer_id as u32).to_le_bytes())?;
        w.write_all(&(plan.role_type_id as u32).to_le_bytes())?;
        w.write_all(&(plan.total_frames() as u64).to_le_bytes())?;
        w.write_all(&(plan.phoneme_ids.len() as u64).to_le_bytes())?;
        write_matrix_to(w, &usize_row(&plan.phoneme_ids).view())?;
        write_matrix_to(w, &usize_row(&plan.durations).view())?;
        write_matrix_to(w, &usize_row(&plan.note_pitch_ids).view())?;
        write_matrix_to(w, &usize_row(&plan.note_state_ids).view())?;
        let pos = Array2::from_shape_vec((1, plan.positions.len()), plan.positions.clone())
            .expect("positions row");
        write_matrix_to(w, &pos.view())?;
        Ok(())
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| plan_err(path, e.to_string()))?);
    inner(&mut w).map_err(|e| plan_err(path, e.to_string()))?;
    w.flush().map_err(|e| plan_err(path, e.to_string()))
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<(String, FrameFeaturePlan), AlignError> {
    let path = path.as_ref();
    let inner = |r: &mut dyn Read| -> std::io::Result<(String, FrameFeaturePlan)> {
        use std::io::{Error, ErrorKind};
        let bad = |m: &str| Error::new(ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PLAN_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != PLAN_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut b4)?;
        let id_len = u32::from_le_bytes(b4) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let phrase_id = String::from_utf8(id).map_err(|_| bad("phrase id not utf-8"))?;
        r.read_exact(&mut b4)?;
        let singer_id = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let role_type_id = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let total = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let n_phonemes = u64::from_le_bytes(b8) as usize;

        let row_to_usize =
            |m: Array2<f64>| -> Vec<usize> { m.into_iter().map(|v| v.round() as usize).collect() };
        let phoneme_ids = row_to_usize(read_matrix_from(r)?);
        let durations = row_to_usize(read_matrix_from(r)?);
        let note_pitch_ids = row_to_usize(read_matrix_from(r)?);
        let note_state_ids = row_to_usize(read_matrix_from(r)?);
        let stored: Vec<f64> = read_matrix_from(r)?.into_iter().collect();
        if phoneme_ids.len() != n_phonemes || stored.len() != total {
            return Err(bad("header counts disagree with arrays"));
        }
        // Positions are t/T by construction; the file stores them in f32, so
        // verify and regenerate them exactly.
        let positions = frame_positions(total);
        for (a, b) in stored.iter().zip(positions.iter()) {
            if (a - b).abs() > 1e-6 {
                return Err(bad("stored positions are not t/T"));
            }
        }
        Ok((
            phrase_id,
            FrameFeaturePlan {
                phoneme_ids,
                durations,
                note_pitch_ids,
                note_state_ids,
                positions,
                singer_id,
                role_type_id,
            },
        ))
    };
    let mut r = BufReader::new(File::open(path).map_err(|e| plan_err(path, e.to_string()))?);
    let (phrase_id, plan) = inner(&mut r).map_err(|e| plan_err(path, e.to_string()))?;
    plan.validate()?;
    Ok((phrase_id, plan))
}
