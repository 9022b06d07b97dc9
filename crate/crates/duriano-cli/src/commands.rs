//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::Path;

use duriano::align::{parse_score, score_to_plan};
use duriano::corpus::{
    self, durations_in_frames, load_annotation, load_cached_examples, parse_manifest,
    FeatureParams,
};
use duriano::dsp;
use duriano::eval::{eval_report, report_to_tsv, ContourSet};
use duriano::model::{
    load_checkpoint, save_checkpoint, train_loop, Adam, CheckpointMeta, ConditioningMode,
    DurianModel,
};
use duriano::pitch::{extract_f0, note_events_to_tsv, segment_notes};

use crate::config::RunConfig;
use crate::CliError;

pub fn preprocess(
    corpus_root: &Path,
    workdir: &Path,
    config: Option<&Path>,
    set: &[String],
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, set)?;
    let fp = cfg.feature_params()?;
    fs::create_dir_all(workdir)?;
    let summary = corpus::preprocess_corpus(corpus_root, workdir, &fp, cfg.holdout_piece().as_deref())?;
    fs::write(workdir.join("resolved.cfg"), cfg.resolved())?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "preprocessed {} phrases ({} train / {} validation), {:.3} hours of audio",
        summary.phrase_count,
        summary.train_count,
        summary.validation_count,
        summary.total_seconds / 3600.0
    );
    Ok(())
}

pub fn transcribe(
    wav: &Path,
    out: &Path,
    f0_out: Option<&Path>,
    config: Option<&Path>,
    set: &[String],
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, set)?;
    let fp = cfg.feature_params()?;
    let audio = dsp::read_wav(wav)?;
    // keep the configured hop duration at whatever rate the file has
    let hop = ((fp.stft.hop_seconds() * audio.sample_rate as f64).round() as usize).max(1);
    let contour = extract_f0(&audio, hop, fp.fmin, fp.fmax)?;
    let events = segment_notes(&contour)?;
    fs::write(out, note_events_to_tsv(&events))?;
    if let Some(path) = f0_out {
        let mut text = String::new();
        for v in &contour.f0 {
            text.push_str(&format!("{v:.4}\n"));
        }
        fs::write(path, text)?;
    }
    println!(
        "transcribed {} frames ({} voiced) to {}",
        events.events.len(),
        contour.voiced_frames().count(),
        out.display()
    );
    Ok(())
}

fn checkpoint_path(workdir: &Path, step: u64) -> std::path::PathBuf {
    workdir.join(format!("checkpoint_{step:08}.dian"))
}

fn latest_checkpoint(workdir: &Path) -> Option<(u64, std::path::PathBuf)> {
    let mut best: Option<(u64, std::path::PathBuf)> = None;
    let entries = fs::read_dir(workdir).ok()?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(step) = name
            .strip_prefix("checkpoint_")
            .and_then(|s| s.strip_suffix(".dian"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, entry.path()));
            }
        }
    }
    best
}

pub fn train(
    workdir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    resume: bool,
    set: &[String],
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, set)?;
    let fp_text = fs::read_to_string(workdir.join("features.cfg")).map_err(|_| {
        CliError::User(format!(
            "{} is not a preprocessed workdir (features.cfg missing); run preprocess first",
            workdir.display()
        ))
    })?;
    let fp = FeatureParams::parse(&fp_text, "features.cfg")?;
    let manifest_text = fs::read_to_string(workdir.join("manifest.tsv")).map_err(|_| {
        CliError::User("manifest.tsv missing; run preprocess first".to_string())
    })?;
    let manifest = parse_manifest(&manifest_text, "manifest.tsv")?;
    let vocab = corpus::IdentityVocab::parse(
        &fs::read_to_string(workdir.join("identity.tsv"))
            .map_err(|_| CliError::User("identity.tsv missing; run preprocess first".to_string()))?,
    );
    let examples = load_cached_examples(workdir, &manifest.train)?;
    if examples.is_empty() {
        return Err(CliError::User("no training phrases in the manifest".into()));
    }

    let opts = cfg.train_options(seed)?;
    let model_cfg = cfg.model_config(
        vocab.singers.len(),
        vocab.roles.len(),
        fp.n_mels,
        fp.stft.bins(),
    )?;

    let (mut model, mut opt, start_step) = if resume {
        let (step, path) = latest_checkpoint(workdir).ok_or_else(|| {
            CliError::User("--resume given but no checkpoint_*.dian in the workdir".into())
        })?;
        let (model, opt, meta) = load_checkpoint(&path, Some(&opts))?;
        if meta.config != model_cfg {
            return Err(CliError::User(format!(
                "checkpoint {} was trained with a different model configuration",
                path.display()
            )));
        }
        let opt = opt.unwrap_or_else(|| Adam::new(&model.params, &opts));
        println!("resuming from {} at step {step}", path.display());
        (model, opt, step)
    } else {
        let model = DurianModel::new(model_cfg.clone(), opts.seed)?;
        let opt = Adam::new(&model.params, &opts);
        (model, opt, 0)
    };

    fs::write(workdir.join("resolved.cfg"), cfg.resolved())?;
    let log_path = workdir.join("train_log.tsv");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .truncate(!resume)
        .write(true)
        .open(&log_path)?;

    let meta_of = |step: u64| CheckpointMeta {
        step,
        config: model_cfg.clone(),
        singer_names: vocab.singers.clone(),
        role_names: vocab.roles.clone(),
    };

    let mut last_total = f64::NAN;
    let every = opts.checkpoint_every.max(1);
    // train_loop drives the optimizer; checkpoints are written outside the
    // closure to keep the model borrow simple.
    let mut pending_ckpt: Vec<u64> = Vec::new();
    {
        let pending = &mut pending_ckpt;
        let log = &mut log;
        train_loop(&mut model, &mut opt, &examples, &opts, start_step, |step, stats, ms| {
            writeln!(
                log,
                "{step}\t{:.9}\t{:.9}\t{:.9}\t{ms}",
                stats.loss_mel, stats.loss_linear, stats.l2_penalty
            )
            .map_err(duriano::model::ModelError::Io)?;
            last_total = stats.total;
            let completed = step + 1;
            if completed % every == 0 || completed == opts.steps {
                pending.push(completed);
            }
            Ok(())
        })?;
    }
    drop(log);
    for completed in pending_ckpt {
        save_checkpoint(checkpoint_path(workdir, completed), &mut model, Some(&opt), &meta_of(completed))?;
        println!("checkpoint at step {completed}");
    }
    println!(
        "trained {} steps on {} phrases, final loss {last_total:.6}",
        opts.steps - start_step,
        examples.len()
    );
    Ok(())
}

pub struct SynthArgs<'a> {
    pub score: &'a Path,
    pub phonemes: &'a Path,
    pub checkpoint: &'a Path,
    pub out: &'a Path,
    pub mode: &'a str,
    pub f0: Option<&'a Path>,
    pub tempo: Option<f64>,
    pub inventory: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub set: &'a [String],
}

pub fn synth(args: SynthArgs<'_>) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config, args.set)?;
    let fp = cfg.feature_params()?;
    if !args.checkpoint.exists() {
        return Err(CliError::User(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let (mut model, _, meta) = load_checkpoint(args.checkpoint, None)?;

    let mode = ConditioningMode::parse(args.mode)?;
    if mode != model.cfg.conditioning_mode {
        return Err(CliError::User(format!(
            "checkpoint was trained in '{}' mode but --mode {} was requested",
            model.cfg.conditioning_mode.as_str(),
            args.mode
        )));
    }
    if fp.stft.bins() != model.cfg.linear_bins {
        return Err(CliError::User(format!(
            "fft_size {} gives {} bins but the checkpoint predicts {}",
            fp.stft.fft_size,
            fp.stft.bins(),
            model.cfg.linear_bins
        )));
    }

    let inventory = match args.inventory {
        Some(path) => corpus::PhonemeInventory::load(path)?,
        None => corpus::PhonemeInventory::default_set(),
    };
    let annotation = load_annotation(args.phonemes, &inventory)?;
    let end = annotation.intervals.last().map(|iv| iv.end).unwrap_or(0.0);
    let hop = fp.stft.hop_seconds();
    let total_frames = ((end / hop).ceil() as usize).max(2);
    let plan_durations = durations_in_frames(&annotation, hop, total_frames)?;
    let (phoneme_ids, durations): (Vec<usize>, Vec<usize>) =
        plan_durations.items.iter().copied().unzip();
    let consonant_flags: Vec<bool> = phoneme_ids
        .iter()
        .map(|&id| inventory.is_consonant(id))
        .collect();

    let score = parse_score(&fs::read_to_string(args.score).map_err(|e| {
        CliError::User(format!("cannot read score {}: {e}", args.score.display()))
    })?)?;
    let total_beats = score
        .last()
        .map(|n| n.onset_beats + n.duration_beats)
        .unwrap_or(0.0);
    let tempo = match args.tempo.or(cfg.tempo()?) {
        Some(t) => t,
        None => end / total_beats.max(1e-9),
    };

    let singer_id = meta
        .singer_names
        .iter()
        .position(|s| s == &annotation.singer)
        .ok_or_else(|| {
            CliError::User(format!(
                "singer '{}' not in the checkpoint vocabulary {:?}",
                annotation.singer, meta.singer_names
            ))
        })?;
    let role_id = meta
        .role_names
        .iter()
        .position(|r| r == &annotation.role_type)
        .ok_or_else(|| {
            CliError::User(format!(
                "role type '{}' not in the checkpoint vocabulary {:?}",
                annotation.role_type, meta.role_names
            ))
        })?;

    let plan = score_to_plan(
        &score,
        &phoneme_ids,
        &durations,
        tempo,
        hop,
        &consonant_flags,
        singer_id,
        role_id,
    )?;

    let f0_norm: Option<Vec<f64>> = match mode {
        ConditioningMode::Note => None,
        ConditioningMode::F0Scalar => {
            let path = args.f0.ok_or_else(|| {
                CliError::User("--mode f0 requires an --f0 contour file".into())
            })?;
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::User(format!("cannot read f0 {}: {e}", path.display())))?;
            let mut hz: Vec<f64> = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                hz.push(line.parse::<f64>().map_err(|_| {
                    CliError::User(format!("{}:{}: bad f0 value '{line}'", path.display(), i + 1))
                })?);
            }
            if hz.len().abs_diff(total_frames) > 2 {
                return Err(CliError::User(format!(
                    "f0 contour has {} frames, plan needs {total_frames}",
                    hz.len()
                )));
            }
            hz.resize(total_frames, 0.0);
            Some(duriano::model::normalize_f0(&hz))
        }
    };

    let gl_iters = cfg.gl_iters()?;
    let (audio, spec) = model.synthesize(
        &plan,
        f0_norm.as_deref(),
        &fp.stft,
        fp.floor_db,
        fp.ref_db,
        gl_iters,
        cfg.seed()?,
    )?;
    dsp::write_wav(args.out, &audio)?;
    let spec_path = args.out.with_extension("dspc");
    dsp::write_matrix(&spec_path, &spec.frames.view())?;
    println!(
        "synthesized {} frames ({:.2} s) to {} (spectrogram: {})",
        plan.total_frames(),
        audio.duration_seconds(),
        args.out.display(),
        spec_path.display()
    );
    Ok(())
}

pub fn vocode(
    spec: &Path,
    out: &Path,
    iters: usize,
    config: Option<&Path>,
    set: &[String],
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, set)?;
    let fp = cfg.feature_params()?;
    let frames = dsp::read_matrix(spec)?;
    if frames.ncols() != fp.stft.bins() {
        return Err(CliError::User(format!(
            "{}: {} bins but fft_size {} implies {}",
            spec.display(),
            frames.ncols(),
            fp.stft.fft_size,
            fp.stft.bins()
        )));
    }
    let spec = dsp::LinearSpectrogram {
        frames,
        config: fp.stft,
        floor_db: fp.floor_db,
        ref_db: fp.ref_db,
    };
    let audio = dsp::griffin_lim(&spec, iters, &fp.stft)?;
    dsp::write_wav(out, &audio)?;
    println!(
        "reconstructed {:.2} s of audio ({iters} iterations) to {}",
        audio.duration_seconds(),
        out.display()
    );
    Ok(())
}

pub fn eval(
    wavs: &[std::path::PathBuf],
    labels: &[String],
    out: Option<&Path>,
    config: Option<&Path>,
    set: &[String],
) -> Result<(), CliError> {
    if wavs.len() < 2 {
        return Err(CliError::User("eval needs at least two --wav inputs".into()));
    }
    if wavs.len() != labels.len() {
        return Err(CliError::User(format!(
            "{} wav files but {} labels",
            wavs.len(),
            labels.len()
        )));
    }
    let cfg = RunConfig::load(config, set)?;
    let fp = cfg.feature_params()?;
    let mut set_data = ContourSet::new();
    for (path, label) in wavs.iter().zip(labels.iter()) {
        let audio = dsp::read_wav(path)?;
        let hop = ((fp.stft.hop_seconds() * audio.sample_rate as f64).round() as usize).max(1);
        let contour = extract_f0(&audio, hop, fp.fmin, fp.fmax).map_err(|e| {
            CliError::User(format!("{}: {e}", path.display()))
        })?;
        set_data.push(label.clone(), contour.f0);
    }
    let report = eval_report(&set_data)?;
    let tsv = report_to_tsv(&report);
    print!("{tsv}");
    if let Some(path) = out {
        fs::write(path, &tsv)?;
    }
    Ok(())
}
