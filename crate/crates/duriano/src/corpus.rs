//! Corpus ingestion: phoneme inventory, phrase annotations, dataset splits
//! and training-example preparation.
//!
//! Annotations are line-based UTF-8 TSV files (`start<TAB>end<TAB>phoneme`)
//! with `#key<TAB>value` metadata lines for singer, role type and piece.
//! External datasets are converted to this layout by an adapter script; the
//! loader validates against the 38-phoneme inventory and fills gaps between
//! intervals with silence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::align::{self, AlignError, FrameFeaturePlan};
use crate::dsp::{self, AudioBuffer, DspError, LinearSpectrogram, MelFilterbank, MelSpectrogram, StftConfig};
use crate::pitch::{NoteEvent, NoteEventSequence, PitchContour};

/// The silence symbol, id 0 in every inventory.
pub const SIL: &str = "SIL";
/// Number of phonemes besides silence.
pub const PHONEME_COUNT: usize = 38;
/// Largest tolerated gap between note-event and spectrogram frame counts.
pub const FRAME_TOLERANCE: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: unknown phoneme '{label}'")]
    UnknownPhoneme {
        path: String,
        line: usize,
        label: String,
    },
    #[error("{path}:{line}: {reason}")]
    BadAnnotationLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: overlapping intervals at {t:.4}s")]
    OverlappingIntervals { path: String, t: f64 },
    #[error("{path}: no intervals")]
    EmptyAnnotation { path: String },
    #[error("inventory must contain exactly {PHONEME_COUNT} distinct phonemes, got {0}")]
    BadInventorySize(usize),
    #[error("inventory: duplicate symbol '{0}'")]
    DuplicateSymbol(String),
    #[error("unknown piece '{0}'")]
    UnknownPiece(String),
    #[error("phrase {phrase}: note events span {events} frames but spectrogram has {frames}")]
    FrameCountMismatch {
        phrase: String,
        events: usize,
        frames: usize,
    },
    #[error("manifest {path}: {reason}")]
    BadManifest { path: String, reason: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The closed phoneme set: silence at id 0, then 38 phonemes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    consonant: Vec<bool>,
}

impl PhonemeInventory {
    /// Built-in X-SAMPA-style inventory: 21 initial consonants and 17
    /// finals. Replaceable per corpus via a `phonemes.txt`.
    pub fn default_set() -> Self {
        const INITIALS: &[&str] = &[
            "p", "p_h", "m", "f", "t", "t_h", "n", "l", "k", "k_h", "x", "ts\\", "ts\\_h", "s\\",
            "ts`", "ts`_h", "s`", "z`", "ts", "ts_h", "s",
        ];
        const FINALS: &[&str] = &[
            "a", "o", "7", "@", "i", "u", "y", "E", "aI", "eI", "AU", "ou", "an", "@n", "aN",
            "@N", "UN",
        ];
        let mut symbols = vec![SIL.to_string()];
        let mut consonant = vec![false];
        for s in INITIALS {
            symbols.push((*s).to_string());
            consonant.push(true);
        }
        for s in FINALS {
            symbols.push((*s).to_string());
            consonant.push(false);
        }
        debug_assert_eq!(symbols.len(), PHONEME_COUNT + 1);
        PhonemeInventory { symbols, consonant }
    }

    /// Build from `(symbol, is_consonant)` pairs; exactly 38 distinct
    /// non-silence symbols required. Silence is always added at id 0.
    pub fn from_symbols(entries: &[(String, bool)]) -> Result<Self, CorpusError> {
        let mut symbols = vec![SIL.to_string()];
        let mut consonant = vec![false];
        for (s, c) in entries {
            if s == SIL {
                continue;
            }
            if symbols.contains(s) {
                return Err(CorpusError::DuplicateSymbol(s.clone()));
            }
            symbols.push(s.clone());
            consonant.push(*c);
        }
        if symbols.len() != PHONEME_COUNT + 1 {
            return Err(CorpusError::BadInventorySize(symbols.len() - 1));
        }
        Ok(PhonemeInventory { symbols, consonant })
    }

    /// Load from a text file: one symbol per line, optionally followed by
    /// `<TAB>C` to mark an initial consonant.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let symbol = parts.next().unwrap().to_string();
            let is_consonant = parts.next() == Some("C");
            entries.push((symbol, is_consonant));
        }
        Self::from_symbols(&entries)
    }

    pub fn lookup(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(|s| s.as_str())
    }

    /// Total symbol count including silence (39).
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_consonant(&self, id: usize) -> bool {
        self.consonant.get(id).copied().unwrap_or(false)
    }
}

/// One annotated phoneme interval, seconds within the phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeInterval {
    pub start: f64,
    pub end: f64,
    pub phoneme_id: usize,
}

/// Timed phoneme intervals with singer and role-type identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseAnnotation {
    pub phrase_id: String,
    pub audio_path: PathBuf,
    pub intervals: Vec<PhonemeInterval>,
    pub singer: String,
    pub role_type: String,
    pub piece: String,
}

/// Load and validate an annotation file. Gaps between intervals are filled
/// with silence; intervals come out sorted and contiguous.
pub fn load_annotation(
    path: impl AsRef<Path>,
    inventory: &PhonemeInventory,
) -> Result<PhraseAnnotation, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let phrase_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "phrase".to_string());

    let mut singer = "default".to_string();
    let mut role_type = "default".to_string();
    let mut piece = phrase_id.clone();
    let mut raw: Vec<PhonemeInterval> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.splitn(2, '\t');
            let key = parts.next().unwrap_or("");
            let value = parts.next().unwrap_or("").trim().to_string();
            match key {
                "singer" => singer = value,
                "role" => role_type = value,
                "piece" => piece = value,
                _ => {} // unknown directives are ignored
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::BadAnnotationLine {
                path: display.clone(),
                line: line_no,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let start: f64 = fields[0]
            .parse()
            .map_err(|_| CorpusError::BadAnnotationLine {
                path: display.clone(),
                line: line_no,
                reason: format!("bad start '{}'", fields[0]),
            })?;
        let end: f64 = fields[1]
            .parse()
            .map_err(|_| CorpusError::BadAnnotationLine {
                path: display.clone(),
                line: line_no,
                reason: format!("bad end '{}'", fields[1]),
            })?;
        if end <= start {
            return Err(CorpusError::BadAnnotationLine {
                path: display.clone(),
                line: line_no,
                reason: format!("end {end} not after start {start}"),
            });
        }
        let phoneme_id =
            inventory
                .lookup(fields[2])
                .ok_or_else(|| CorpusError::UnknownPhoneme {
                    path: display.clone(),
                    line: line_no,
                    label: fields[2].to_string(),
                })?;
        raw.push(PhonemeInterval {
            start,
            end,
            phoneme_id,
        });
    }
    if raw.is_empty() {
        return Err(CorpusError::EmptyAnnotation { path: display });
    }

    raw.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
    let sil = inventory.lookup(SIL).expect("SIL in inventory");
    let mut intervals: Vec<PhonemeInterval> = Vec::with_capacity(raw.len());
    for iv in raw {
        if let Some(prev) = intervals.last() {
            if iv.start < prev.end - 1e-9 {
                return Err(CorpusError::OverlappingIntervals {
                    path: display,
                    t: iv.start,
                });
            }
            if iv.start > prev.end + 1e-9 {
                intervals.push(PhonemeInterval {
                    start: prev.end,
                    end: iv.start,
                    phoneme_id: sil,
                });
            }
        }
        intervals.push(iv);
    }

    Ok(PhraseAnnotation {
        phrase_id,
        audio_path: path.with_extension("wav"),
        intervals,
        singer,
        role_type,
        piece,
    })
}

/// Per-phoneme frame counts plus any merge warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationPlan {
    /// `(phoneme_id, frame_count)`, every count >= 1, summing to the total.
    pub items: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Quantize interval lengths into frame counts that sum exactly to
/// `total_frames` (largest-remainder correction). Intervals that round to
/// zero frames are merged into a neighbor and recorded as warnings.
pub fn durations_in_frames(
    annotation: &PhraseAnnotation,
    _hop_seconds: f64,
    total_frames: usize,
) -> Result<DurationPlan, CorpusError> {
    let weights: Vec<f64> = annotation
        .intervals
        .iter()
        .map(|iv| (iv.end - iv.start).max(0.0))
        .collect();
    let counts = align::largest_remainder(&weights, total_frames);

    let mut items: Vec<(usize, usize)> = Vec::with_capacity(counts.len());
    let mut warnings = Vec::new();
    for (iv, &c) in annotation.intervals.iter().zip(counts.iter()) {
        if c == 0 {
            warnings.push(format!(
                "interval [{:.4}, {:.4}] ({}) shorter than one frame; merged into neighbor",
                iv.start,
                iv.end,
                iv.phoneme_id
            ));
            continue;
        }
        items.push((iv.phoneme_id, c));
    }
    if items.is_empty() && total_frames > 0 {
        // Degenerate: everything rounded away; keep one interval.
        items.push((annotation.intervals[0].phoneme_id, total_frames));
        warnings.push("all intervals shorter than one frame".into());
    }
    Ok(DurationPlan { items, warnings })
}

/// Train/validation split over phrase ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    /// phrase id → piece id, for every phrase in either split.
    pub pieces: BTreeMap<String, String>,
}

/// Hold out every phrase of `holdout_piece` as validation; the remainder
/// trains. Split membership is a partition by construction.
pub fn split_dataset(
    phrases: &[(String, String)],
    holdout_piece: &str,
) -> Result<DatasetManifest, CorpusError> {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut pieces = BTreeMap::new();
    for (phrase, piece) in phrases {
        pieces.insert(phrase.clone(), piece.clone());
        if piece == holdout_piece {
            validation.push(phrase.clone());
        } else {
            train.push(phrase.clone());
        }
    }
    if validation.is_empty() {
        return Err(CorpusError::UnknownPiece(holdout_piece.to_string()));
    }
    Ok(DatasetManifest {
        train,
        validation,
        pieces,
    })
}

/// `phrase_id<TAB>split<TAB>piece_id` per line, trains first.
pub fn manifest_to_tsv(manifest: &DatasetManifest) -> String {
    let mut out = String::new();
    for (split, ids) in [("train", &manifest.train), ("validation", &manifest.validation)] {
        for id in ids {
            let piece = manifest.pieces.get(id).map(|s| s.as_str()).unwrap_or("");
            out.push_str(&format!("{id}\t{split}\t{piece}\n"));
        }
    }
    out
}

pub fn parse_manifest(text: &str, path: &str) -> Result<DatasetManifest, CorpusError> {
    let mut manifest = DatasetManifest {
        train: Vec::new(),
        validation: Vec::new(),
        pieces: BTreeMap::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::BadManifest {
                path: path.to_string(),
                reason: format!("line {}: expected 3 fields", i + 1),
            });
        }
        manifest
            .pieces
            .insert(fields[0].to_string(), fields[2].to_string());
        match fields[1] {
            "train" => manifest.train.push(fields[0].to_string()),
            "validation" => manifest.validation.push(fields[0].to_string()),
            other => {
                return Err(CorpusError::BadManifest {
                    path: path.to_string(),
                    reason: format!("line {}: unknown split '{other}'", i + 1),
                })
            }
        }
    }
    Ok(manifest)
}

/// Everything the trainer needs for one phrase. `f0_norm` carries the
/// normalized pitch contour for the f0-scalar baseline variant; it is
/// all zeros when no contour was supplied.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub phrase_id: String,
    pub mel_target: MelSpectrogram,
    pub linear_target: LinearSpectrogram,
    pub plan: FrameFeaturePlan,
    pub f0_norm: Vec<f64>,
}

/// Compute targets and the conditioning plan for one phrase.
///
/// The note-event stream may disagree with the spectrogram frame count by
/// up to [`FRAME_TOLERANCE`] frames; it is padded (sustaining the final
/// event) or truncated to fit. A larger gap is an error.
#[allow(clippy::too_many_arguments)]
pub fn prepare_training_example(
    annotation: &PhraseAnnotation,
    audio: &AudioBuffer,
    note_events: &NoteEventSequence,
    f0: Option<&PitchContour>,
    cfg: &StftConfig,
    filterbank: &MelFilterbank,
    floor_db: f64,
    ref_db: f64,
    singer_id: usize,
    role_type_id: usize,
) -> Result<TrainingExample, CorpusError> {
    let linear_target = dsp::linear_spectrogram(audio, cfg, floor_db, ref_db)?;
    let mel_target = dsp::mel_spectrogram(audio, cfg, filterbank, floor_db, ref_db)?;
    let frames = linear_target.frames.nrows();

    let events = reconcile_events(note_events, frames, &annotation.phrase_id)?;
    let (note_pitch_ids, note_state_ids) = align::events_to_id_frames(&events)?;

    let f0_norm = match f0 {
        Some(contour) => {
            if contour.f0.len().abs_diff(frames) > FRAME_TOLERANCE {
                return Err(CorpusError::FrameCountMismatch {
                    phrase: annotation.phrase_id.clone(),
                    events: contour.f0.len(),
                    frames,
                });
            }
            let mut v = crate::model::normalize_f0(&contour.f0);
            v.truncate(frames);
            v.resize(frames, 0.0);
            v
        }
        None => vec![0.0; frames],
    };

    let durations = durations_in_frames(annotation, cfg.hop_seconds(), frames)?;
    let (phoneme_ids, frame_counts): (Vec<usize>, Vec<usize>) =
        durations.items.iter().copied().unzip();

    let plan = FrameFeaturePlan {
        phoneme_ids,
        durations: frame_counts,
        note_pitch_ids,
        note_state_ids,
        positions: align::frame_positions(frames),
        singer_id,
        role_type_id,
    };
    plan.validate()?;
    Ok(TrainingExample {
        phrase_id: annotation.phrase_id.clone(),
        mel_target,
        linear_target,
        plan,
        f0_norm,
    })
}

/// Singer and role-type vocabularies, built from the corpus at preprocess
/// time (sorted for determinism) and frozen into checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdentityVocab {
    pub singers: Vec<String>,
    pub roles: Vec<String>,
}

impl IdentityVocab {
    pub fn build(annotations: &[PhraseAnnotation]) -> Self {
        let mut singers: Vec<String> = annotations.iter().map(|a| a.singer.clone()).collect();
        let mut roles: Vec<String> = annotations.iter().map(|a| a.role_type.clone()).collect();
        singers.sort();
        singers.dedup();
        roles.sort();
        roles.dedup();
        IdentityVocab { singers, roles }
    }

    pub fn singer_id(&self, name: &str) -> Option<usize> {
        self.singers.iter().position(|s| s == name)
    }

    pub fn role_id(&self, name: &str) -> Option<usize> {
        self.roles.iter().position(|s| s == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.singers {
            out.push_str(&format!("singer\t{s}\n"));
        }
        for r in &self.roles {
            out.push_str(&format!("role\t{r}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let mut vocab = IdentityVocab::default();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("singer\t") {
                vocab.singers.push(rest.to_string());
            } else if let Some(rest) = line.strip_prefix("role\t") {
                vocab.roles.push(rest.to_string());
            }
        }
        vocab
    }
}

/// Feature-extraction parameters persisted with the workdir so training
/// and synthesis stay consistent with the caches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub floor_db: f64,
    pub ref_db: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl FeatureParams {
    pub fn to_kv(&self) -> String {
        format!(
            "sample_rate={}\nwin_length={}\nhop_length={}\nfft_size={}\nn_mels={}\nfloor_db={}\nref_db={}\nfmin={}\nfmax={}\n",
            self.stft.sample_rate,
            self.stft.win_length,
            self.stft.hop_length,
            self.stft.fft_size,
            self.n_mels,
            self.floor_db,
            self.ref_db,
            self.fmin,
            self.fmax
        )
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<f64, CorpusError> {
            map.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CorpusError::BadManifest {
                    path: path.to_string(),
                    reason: format!("missing or bad '{k}'"),
                })
        };
        Ok(FeatureParams {
            stft: StftConfig {
                sample_rate: get("sample_rate")? as u32,
                win_length: get("win_length")? as usize,
                hop_length: get("hop_length")? as usize,
                fft_size: get("fft_size")? as usize,
                window: crate::dsp::WindowKind::Hann,
            },
            n_mels: get("n_mels")? as usize,
            floor_db: get("floor_db")?,
            ref_db: get("ref_db")?,
            fmin: get("fmin")?,
            fmax: get("fmax")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub phrase_count: usize,
    pub total_seconds: f64,
    pub train_count: usize,
    pub validation_count: usize,
    pub vocab: IdentityVocab,
    pub warnings: Vec<String>,
}

fn feature_dir(workdir: &Path) -> PathBuf {
    workdir.join("features")
}

fn row_matrix(values: &[f64]) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row")
}

/// Ingest every `*.phn` + `*.wav` pair under `corpus_root`: validate
/// annotations, extract f0 and note events, compute spectrogram targets
/// and conditioning plans, and write the caches plus manifest and
/// vocabularies into `workdir`. Deterministic and idempotent.
pub fn preprocess_corpus(
    corpus_root: impl AsRef<Path>,
    workdir: impl AsRef<Path>,
    fp: &FeatureParams,
    holdout_piece: Option<&str>,
) -> Result<PreprocessSummary, CorpusError> {
    let corpus_root = corpus_root.as_ref();
    let workdir = workdir.as_ref();
    fs::create_dir_all(feature_dir(workdir))?;

    let inventory_path = corpus_root.join("phonemes.txt");
    let inventory = if inventory_path.exists() {
        PhonemeInventory::load(&inventory_path)?
    } else {
        PhonemeInventory::default_set()
    };

    let mut annotation_paths: Vec<PathBuf> = fs::read_dir(corpus_root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "phn").unwrap_or(false))
        .collect();
    annotation_paths.sort();
    if annotation_paths.is_empty() {
        return Err(CorpusError::EmptyAnnotation {
            path: corpus_root.display().to_string(),
        });
    }

    let mut annotations = Vec::with_capacity(annotation_paths.len());
    for path in &annotation_paths {
        annotations.push(load_annotation(path, &inventory)?);
    }
    let vocab = IdentityVocab::build(&annotations);

    let fb = dsp::build_mel_filterbank(&fp.stft, fp.n_mels)?;
    let mut total_seconds = 0.0;
    let mut warnings = Vec::new();
    let mut phrase_pieces: Vec<(String, String)> = Vec::new();
    for ann in &annotations {
        let audio = dsp::read_wav(&ann.audio_path)?;
        if audio.sample_rate != fp.stft.sample_rate {
            return Err(CorpusError::BadAnnotationLine {
                path: ann.audio_path.display().to_string(),
                line: 0,
                reason: format!(
                    "sample rate {} does not match configured {}",
                    audio.sample_rate, fp.stft.sample_rate
                ),
            });
        }
        total_seconds += audio.duration_seconds();

        let contour = crate::pitch::extract_f0(&audio, fp.stft.hop_length, fp.fmin, fp.fmax)
            .map_err(|e| CorpusError::BadAnnotationLine {
                path: ann.audio_path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
        let events = crate::pitch::segment_notes(&contour).map_err(|e| {
            CorpusError::BadAnnotationLine {
                path: ann.audio_path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            }
        })?;

        let example = prepare_training_example(
            ann,
            &audio,
            &events,
            Some(&contour),
            &fp.stft,
            &fb,
            fp.floor_db,
            fp.ref_db,
            vocab.singer_id(&ann.singer).unwrap(),
            vocab.role_id(&ann.role_type).unwrap(),
        )?;

        let dir = feature_dir(workdir);
        let id = &ann.phrase_id;
        dsp::write_matrix(dir.join(format!("{id}.mel.dspc")), &example.mel_target.frames.view())?;
        dsp::write_matrix(dir.join(format!("{id}.lin.dspc")), &example.linear_target.frames.view())?;
        dsp::write_matrix(dir.join(format!("{id}.f0.dspc")), &row_matrix(&example.f0_norm).view())?;
        align::write_plan(dir.join(format!("{id}.plan")), id, &example.plan)?;
        fs::write(
            dir.join(format!("{id}.notes.tsv")),
            crate::pitch::note_events_to_tsv(&events),
        )?;

        let dplan = durations_in_frames(ann, fp.stft.hop_seconds(), example.plan.total_frames())?;
        warnings.extend(dplan.warnings.iter().map(|w| format!("{id}: {w}")));
        phrase_pieces.push((id.clone(), ann.piece.clone()));
    }

    let holdout = match holdout_piece {
        Some(p) => p.to_string(),
        None => {
            let mut pieces: Vec<&String> = phrase_pieces.iter().map(|(_, p)| p).collect();
            pieces.sort();
            pieces.first().map(|s| s.to_string()).unwrap_or_default()
        }
    };
    let manifest = split_dataset(&phrase_pieces, &holdout)?;

    fs::write(workdir.join("manifest.tsv"), manifest_to_tsv(&manifest))?;
    fs::write(workdir.join("identity.tsv"), vocab.to_tsv())?;
    fs::write(workdir.join("features.cfg"), fp.to_kv())?;

    Ok(PreprocessSummary {
        phrase_count: phrase_pieces.len(),
        total_seconds,
        train_count: manifest.train.len(),
        validation_count: manifest.validation.len(),
        vocab,
        warnings,
    })
}

/// Read back the cached examples for the given phrase ids.
pub fn load_cached_examples(
    workdir: impl AsRef<Path>,
    ids: &[String],
) -> Result<Vec<TrainingExample>, CorpusError> {
    let workdir = workdir.as_ref();
    let text = fs::read_to_string(workdir.join("features.cfg"))?;
    let fp = FeatureParams::parse(&text, &workdir.join("features.cfg").display().to_string())?;
    let dir = feature_dir(workdir);
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mel = dsp::read_matrix(dir.join(format!("{id}.mel.dspc")))?;
        let lin = dsp::read_matrix(dir.join(format!("{id}.lin.dspc")))?;
        let f0 = dsp::read_matrix(dir.join(format!("{id}.f0.dspc")))?;
        let (_, plan) = align::read_plan(dir.join(format!("{id}.plan")))?;
        out.push(TrainingExample {
            phrase_id: id.clone(),
            mel_target: crate::dsp::MelSpectrogram {
                frames: mel,
                floor_db: fp.floor_db,
                ref_db: fp.ref_db,
            },
            linear_target: crate::dsp::LinearSpectrogram {
                frames: lin,
                config: fp.stft,
                floor_db: fp.floor_db,
                ref_db: fp.ref_db,
            },
            plan,
            f0_norm: f0.into_iter().collect(),
        });
    }
    Ok(out)
}

fn reconcile_events(
    events: &NoteEventSequence,
    frames: usize,
    phrase: &str,
) -> Result<NoteEventSequence, CorpusError> {
    let have = events.events.len();
    if have.abs_diff(frames) > FRAME_TOLERANCE {
        return Err(CorpusError::FrameCountMismatch {
            phrase: phrase.to_string(),
            events: have,
            frames,
        });
    }
    let mut out = events.events.clone();
    out.truncate(frames);
    while out.len() < frames {
        let pad = match out.last() {
            Some(NoteEvent::Onset(m)) | Some(NoteEvent::Sustain(m)) => NoteEvent::Sustain(*m),
            _ => NoteEvent::Silence,
        };
        out.push(pad);
    }
    Ok(NoteEventSequence {
        events: out,
        hop: events.hop,
    })
}
