//! End-to-end tests driving the `duriano` binary over a synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duriano::dsp::{write_wav, AudioBuffer};
use duriano::pitch::midi_to_hz;

const SR: u32 = 8000;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_duriano"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn duriano");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        cmd.get_args().collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn duriano");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

type Segment = (Option<i32>, f64, &'static str);

fn render(segments: &[Segment]) -> AudioBuffer {
    let sr = SR as f64;
    let mut samples = Vec::new();
    for &(midi, dur, _) in segments {
        let n = (dur * sr).round() as usize;
        match midi {
            None => samples.extend(std::iter::repeat_n(0.0, n)),
            Some(m) => {
                let f0 = midi_to_hz(m as f64);
                let ramp = (0.02 * sr) as usize;
                for i in 0..n {
                    let t = i as f64 / sr;
                    let mut v = 0.0;
                    for (k, a) in [(1.0, 0.55), (2.0, 0.28), (3.0, 0.14), (4.0, 0.07)] {
                        v += a * (2.0 * std::f64::consts::PI * f0 * k * t).sin();
                    }
                    let ei = if i < ramp {
                        0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
                    } else {
                        1.0
                    };
                    let eo = if i + ramp > n {
                        0.5 - 0.5 * (std::f64::consts::PI * (n - i) as f64 / ramp as f64).cos()
                    } else {
                        1.0
                    };
                    samples.push(v * ei * eo * 0.8);
                }
            }
        }
    }
    AudioBuffer::new(samples, SR)
}

fn write_phrase(dir: &Path, id: &str, piece: &str, segments: &[Segment]) {
    write_wav(dir.join(format!("{id}.wav")), &render(segments)).unwrap();
    let mut phn = format!("#singer\ts01\n#role\tlaosheng\n#piece\t{piece}\n");
    let mut t = 0.0;
    for &(_, dur, ph) in segments {
        phn.push_str(&format!("{t:.6}\t{:.6}\t{ph}\n", t + dur));
        t += dur;
    }
    fs::write(dir.join(format!("{id}.phn")), phn).unwrap();
}

fn toy_corpus(dir: &Path) {
    write_phrase(
        dir,
        "p0",
        "pieceA",
        &[
            (None, 0.08, "SIL"),
            (Some(57), 0.30, "a"),
            (Some(60), 0.30, "i"),
            (Some(64), 0.30, "u"),
            (None, 0.08, "SIL"),
        ],
    );
    write_phrase(
        dir,
        "p1",
        "pieceA",
        &[
            (None, 0.08, "SIL"),
            (Some(62), 0.30, "o"),
            (Some(57), 0.30, "a"),
            (Some(65), 0.30, "E"),
            (None, 0.08, "SIL"),
        ],
    );
    write_phrase(
        dir,
        "p2",
        "pieceB",
        &[
            (None, 0.08, "SIL"),
            (Some(60), 0.30, "a"),
            (Some(64), 0.30, "o"),
            (Some(57), 0.30, "i"),
            (None, 0.08, "SIL"),
        ],
    );
}

fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!(
            "sample_rate=8000\nwin_length=400\nhop_length=80\nfft_size=512\nn_mels=20\n\
             fmin=80\nfmax=600\nsteps=30\nbatch_size=2\nlr=0.003\nlr_decay=0.999\n\
             checkpoint_every=15\nmodel_preset=tiny\nmodel.phoneme_emb=16\n\
             model.decoder_gru=24\nholdout_piece=pieceB\ngl_iters=10\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn strip_wallclock(log: &str) -> String {
    log.lines()
        .map(|l| l.rsplit_once('\t').map(|(head, _)| head).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    toy_corpus(&corpus);
    let cfg = toy_config(dir.path(), "");
    let work = dir.path().join("work");

    // preprocess: manifest, caches, summary
    let out = run_ok(bin().args([
        "preprocess",
        "--corpus",
        corpus.to_str().unwrap(),
        "--workdir",
        work.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3 phrases"), "{stdout}");
    let manifest = fs::read_to_string(work.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(work.join("resolved.cfg").exists());

    // idempotence: rerun leaves byte-identical caches
    let before = fs::read(work.join("features/p0.lin.dspc")).unwrap();
    run_ok(bin().args([
        "preprocess",
        "--corpus",
        corpus.to_str().unwrap(),
        "--workdir",
        work.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let after = fs::read(work.join("features/p0.lin.dspc")).unwrap();
    assert_eq!(before, after);

    // train: log lines and checkpoints
    run_ok(bin().args([
        "train",
        "--workdir",
        work.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
    ]));
    let log = fs::read_to_string(work.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 30);
    assert!(work.join("checkpoint_00000015.dian").exists());
    assert!(work.join("checkpoint_00000030.dian").exists());
    let first: f64 = log.lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    let last: f64 = log.lines().last().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(last < first, "mel loss did not drop: {first} -> {last}");

    // synth from a score against the trained checkpoint
    let score = dir.path().join("melody.score");
    fs::write(&score, "0\t1\t60\n1\t1\t64\n2\t1\t57\n").unwrap();
    let wav_out = dir.path().join("synth.wav");
    let out = run_ok(bin().args([
        "synth",
        "--score",
        score.to_str().unwrap(),
        "--phonemes",
        corpus.join("p2.phn").to_str().unwrap(),
        "--checkpoint",
        work.join("checkpoint_00000030.dian").to_str().unwrap(),
        "--out",
        wav_out.to_str().unwrap(),
        "--mode",
        "note",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synthesized"));
    let synth_audio = duriano::dsp::read_wav(&wav_out).unwrap();
    // annotation covers 1.06 s; output within 50 ms
    assert!(
        (synth_audio.duration_seconds() - 1.06).abs() < 0.05,
        "duration {}",
        synth_audio.duration_seconds()
    );
    assert!(dir.path().join("synth.dspc").exists());

    // vocode a cached spectrogram
    let vocoded = dir.path().join("vocoded.wav");
    run_ok(bin().args([
        "vocode",
        "--spec",
        work.join("features/p0.lin.dspc").to_str().unwrap(),
        "--out",
        vocoded.to_str().unwrap(),
        "--iters",
        "10",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert!(vocoded.exists());

    // transcribe
    let notes = dir.path().join("p0.notes.tsv");
    let f0_file = dir.path().join("p0.f0");
    run_ok(bin().args([
        "transcribe",
        "--wav",
        corpus.join("p0.wav").to_str().unwrap(),
        "--out",
        notes.to_str().unwrap(),
        "--f0-out",
        f0_file.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let notes_text = fs::read_to_string(&notes).unwrap();
    assert!(notes_text.contains("onset"), "{notes_text}");
    assert!(f0_file.exists());

    // eval: identical inputs correlate at 1.0
    let report_path = dir.path().join("report.tsv");
    let out = run_ok(bin().args([
        "eval",
        "--wav",
        corpus.join("p0.wav").to_str().unwrap(),
        corpus.join("p0.wav").to_str().unwrap(),
        wav_out.to_str().unwrap(),
        "--labels",
        "original",
        "copy",
        "synth",
        "--out",
        report_path.to_str().unwrap(),
    ]).args(["--config", cfg.to_str().unwrap()]));
    let report = String::from_utf8_lossy(&out.stdout);
    let row: Vec<&str> = report.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "original");
    assert_eq!(row[1], "1.0000");
    assert_eq!(row[2], "1.0000");
    assert_eq!(fs::read_to_string(&report_path).unwrap(), report);
}

#[test]
fn train_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    toy_corpus(&corpus);
    let cfg = toy_config(dir.path(), "");

    let preprocess = |work: &Path| {
        run_ok(bin().args([
            "preprocess",
            "--corpus",
            corpus.to_str().unwrap(),
            "--workdir",
            work.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]));
    };
    let train = |work: &Path, extra: &[&str]| {
        let mut cmd = bin();
        cmd.args([
            "train",
            "--workdir",
            work.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        cmd.args(extra);
        run_ok(&mut cmd);
    };

    // two runs, same seed: deterministic columns of the log are identical
    let work_a = dir.path().join("a");
    let work_b = dir.path().join("b");
    preprocess(&work_a);
    preprocess(&work_b);
    train(&work_a, &[]);
    train(&work_b, &[]);
    let log_a = fs::read_to_string(work_a.join("train_log.tsv")).unwrap();
    let log_b = fs::read_to_string(work_b.join("train_log.tsv")).unwrap();
    assert_eq!(strip_wallclock(&log_a), strip_wallclock(&log_b));

    // interrupted run + resume: continues from the checkpointed step
    let work_c = dir.path().join("c");
    preprocess(&work_c);
    train(&work_c, &["--set", "steps=15"]);
    assert!(work_c.join("checkpoint_00000015.dian").exists());
    let log_first = fs::read_to_string(work_c.join("train_log.tsv")).unwrap();
    assert_eq!(log_first.lines().count(), 15);
    train(&work_c, &["--resume"]);
    let log_resumed = fs::read_to_string(work_c.join("train_log.tsv")).unwrap();
    assert_eq!(log_resumed.lines().count(), 30);
    let steps: Vec<u64> = log_resumed
        .lines()
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, (0..30).collect::<Vec<u64>>());
    assert!(work_c.join("checkpoint_00000030.dian").exists());
}

#[test]
fn f0_baseline_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    toy_corpus(&corpus);
    let cfg = toy_config(dir.path(), "mode=f0\nsteps=5\n");
    let work = dir.path().join("work");
    run_ok(bin().args([
        "preprocess",
        "--corpus",
        corpus.to_str().unwrap(),
        "--workdir",
        work.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "train",
        "--workdir",
        work.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let ckpt = work.join("checkpoint_00000005.dian");
    assert!(ckpt.exists());

    // an f0 contour matching the p2 annotation length (106 frames)
    let f0_path = dir.path().join("contour.f0");
    run_ok(bin().args([
        "transcribe",
        "--wav",
        corpus.join("p2.wav").to_str().unwrap(),
        "--out",
        dir.path().join("p2.notes").to_str().unwrap(),
        "--f0-out",
        f0_path.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));

    let score = dir.path().join("melody.score");
    fs::write(&score, "0\t1\t60\n1\t1\t64\n2\t1\t57\n").unwrap();
    let out_wav = dir.path().join("f0_synth.wav");
    run_ok(bin().args([
        "synth",
        "--score",
        score.to_str().unwrap(),
        "--phonemes",
        corpus.join("p2.phn").to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out_wav.to_str().unwrap(),
        "--mode",
        "f0",
        "--f0",
        f0_path.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert!(out_wav.exists());

    // requesting note mode against an f0 checkpoint is a user error
    let (code, stderr) = exit_code(bin().args([
        "synth",
        "--score",
        score.to_str().unwrap(),
        "--phonemes",
        corpus.join("p2.phn").to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out_wav.to_str().unwrap(),
        "--mode",
        "note",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("mode"), "{stderr}");
}

#[test]
fn eval_constant_pitch_has_near_zero_sigma() {
    let dir = tempfile::tempdir().unwrap();
    for (name, midi) in [("tone_a.wav", 57), ("tone_b.wav", 62)] {
        let audio = render(&[(Some(midi), 1.0, "a")]);
        write_wav(dir.path().join(name), &audio).unwrap();
    }
    let out = run_ok(bin().args([
        "eval",
        "--wav",
        dir.path().join("tone_a.wav").to_str().unwrap(),
        dir.path().join("tone_b.wav").to_str().unwrap(),
        "--labels",
        "a",
        "b",
        "--set",
        "sample_rate=8000",
        "--set",
        "fmin=80",
        "--set",
        "fmax=600",
    ]));
    let report = String::from_utf8_lossy(&out.stdout);
    // second block: label, mu, sigma
    for line in report.lines().skip_while(|l| !l.is_empty()).skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let sigma: f64 = fields[2].parse().unwrap();
        assert!(sigma < 0.005, "constant tone sigma {sigma} ({line})");
    }
}

#[test]
fn user_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    toy_corpus(&corpus);
    let cfg = toy_config(dir.path(), "");

    // corrupt annotation names the file
    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::copy(corpus.join("p0.wav"), bad.join("x.wav")).unwrap();
    fs::write(bad.join("x.phn"), "0\t0.5\tzz\n").unwrap();
    let (code, stderr) = exit_code(bin().args([
        "preprocess",
        "--corpus",
        bad.to_str().unwrap(),
        "--workdir",
        dir.path().join("w").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(code, 2);
    assert!(stderr.contains("x.phn"), "{stderr}");
    assert!(stderr.contains("zz"), "{stderr}");

    // missing checkpoint
    fs::write(dir.path().join("m.score"), "0\t1\t60\n").unwrap();
    let (code, stderr) = exit_code(bin().args([
        "synth",
        "--score",
        dir.path().join("m.score").to_str().unwrap(),
        "--phonemes",
        corpus.join("p0.phn").to_str().unwrap(),
        "--checkpoint",
        dir.path().join("missing.dian").to_str().unwrap(),
        "--out",
        dir.path().join("o.wav").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");

    // unreadable wav in eval names the file
    let (code, stderr) = exit_code(bin().args([
        "eval",
        "--wav",
        dir.path().join("ghost.wav").to_str().unwrap(),
        corpus.join("p0.wav").to_str().unwrap(),
        "--labels",
        "a",
        "b",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("ghost.wav"), "{stderr}");

    // unknown config key
    let (code, stderr) = exit_code(bin().args([
        "vocode",
        "--spec",
        dir.path().join("none.dspc").to_str().unwrap(),
        "--out",
        dir.path().join("o.wav").to_str().unwrap(),
        "--set",
        "not_a_key=1",
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("not_a_key"), "{stderr}");
}
