use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"
seed = 7
workers = 1

[synth]
n_artists = 8
tracks_per_artist = 3
clip_seconds = 4.0
extra_unlabeled_tracks = 6

[dsp]
n_mels = 32

[model.transformer]
conv_channels = 4
attn_dim = 16
n_layers = 1
n_heads = 2
n_mels = 32
n_tags = 4

[train]
lr = 0.001
max_epochs = 2
patience = 2
batch_size = 4

[student]
unlabeled_ratio = 1
iterations = 1
"#;

fn tagformer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagformer"))
        .current_dir(dir)
        .args(args)
        .env_remove("TAGFORMER_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tagformer(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    (dir, cfg)
}

#[test]
fn help_on_every_command_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let top = tagformer(dir.path(), &["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for cmd in [
        "synth-data",
        "split",
        "train-teacher",
        "train-student",
        "evaluate",
        "augment-preview",
    ] {
        let out = tagformer(dir.path(), &[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{cmd}: {text}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagformer(dir.path(), &["split", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_data_without_out_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagformer(dir.path(), &["synth-data", "--artists", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--out"), "{}", stderr(&out));
}

#[test]
fn synth_data_writes_one_wav_per_track_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "--seed".to_string(),
            "3".into(),
            "synth-data".into(),
            "--artists".into(),
            "5".into(),
            "--tracks-per-artist".into(),
            "2".into(),
            "--clip-seconds".into(),
            "1.0".into(),
            "--out".into(),
            out.into(),
        ]
    };
    for out in ["a", "b"] {
        let a = args(out);
        ok(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let wavs: Vec<_> = std::fs::read_dir(dir.path().join("a/audio"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(wavs.len(), 10);
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.tsv")).unwrap();
    assert_eq!(
        manifest.lines().filter(|l| !l.starts_with('#')).count(),
        10,
        "one row per track"
    );
    for w in wavs {
        let name = w.file_name().unwrap();
        assert_eq!(
            std::fs::read(&w).unwrap(),
            std::fs::read(dir.path().join("b/audio").join(name)).unwrap()
        );
    }
}

#[test]
fn split_rejects_bad_ratios() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth-data",
            "--artists",
            "6",
            "--tracks-per-artist",
            "2",
            "--clip-seconds",
            "0.5",
            "--out",
            "d",
        ],
    );
    for bad in ["0.5,0.2,0.2", "0.7,0.3", "a,b,c", "-0.1,0.6,0.5"] {
        let out = tagformer(
            dir.path(),
            &[
                "split",
                "--manifest",
                "d/manifest.tsv",
                "--out",
                "s.tsv",
                "--ratios",
                bad,
            ],
        );
        assert_eq!(out.status.code(), Some(1), "{bad}: {}", stderr(&out));
    }
    let text = ok(dir.path(), &["split", "--manifest", "d/manifest.tsv", "--out", "s.tsv"]);
    assert!(text.contains("artist overlap among train/valid/test: 0"), "{text}");
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagformer(dir.path(), &["split", "--manifest", "nope.tsv", "--out", "s.tsv"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("nope.tsv"));
}

#[test]
fn corrupt_checkpoint_is_an_integrity_error_naming_the_file() {
    let (dir, cfg) = workspace();
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["--config", cfg, "synth-data", "--out", "d"]);
    ok(
        dir.path(),
        &[
            "--config",
            cfg,
            "split",
            "--manifest",
            "d/manifest.tsv",
            "--out",
            "s.tsv",
        ],
    );
    std::fs::write(
        dir.path().join("broken.ckpt"),
        b"tagformer-checkpoint\nformat_version=1\n",
    )
    .unwrap();
    let out = tagformer(
        dir.path(),
        &[
            "--config",
            cfg,
            "evaluate",
            "--checkpoint",
            "broken.ckpt",
            "--split",
            "s.tsv",
            "--out",
            "e",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("broken.ckpt") && err.contains("integrity"), "{err}");
}

#[test]
fn augment_preview_writes_before_and_after() {
    let (dir, cfg) = workspace();
    let cfg = cfg.to_str().unwrap();
    ok(
        dir.path(),
        &[
            "--config",
            cfg,
            "synth-data",
            "--artists",
            "1",
            "--tracks-per-artist",
            "1",
            "--out",
            "d",
        ],
    );
    ok(
        dir.path(),
        &[
            "--config",
            cfg,
            "augment-preview",
            "--input",
            "d/audio/t00000.wav",
            "--out",
            "p",
        ],
    );
    for f in ["input.wav", "chain.wav", "applied.tsv", "resolved_config.toml"] {
        assert!(dir.path().join("p").join(f).exists(), "{f}");
    }
}

fn pipeline(dir: &Path, cfg: &str, tag: &str) {
    ok(dir, &["--config", cfg, "synth-data", "--out", "d"]);
    ok(
        dir,
        &[
            "--config",
            cfg,
            "split",
            "--manifest",
            "d/manifest.tsv",
            "--out",
            "s.tsv",
        ],
    );
    let text = ok(
        dir,
        &[
            "--config",
            cfg,
            "train-teacher",
            "--split",
            "s.tsv",
            "--out",
            &format!("{tag}/teacher"),
        ],
    );
    assert!(text.contains("parameters"), "{text}");
    ok(
        dir,
        &[
            "--config",
            cfg,
            "train-student",
            "--split",
            "s.tsv",
            "--teacher",
            &format!("{tag}/teacher/best.ckpt"),
            "--mode",
            "ke",
            "--out",
            &format!("{tag}/student"),
        ],
    );
    ok(
        dir,
        &[
            "--config",
            cfg,
            "evaluate",
            "--checkpoint",
            &format!("{tag}/student/best.ckpt"),
            "--split",
            "s.tsv",
            "--length-sweep",
            "1.0,2.0",
            "--out",
            &format!("{tag}/eval"),
        ],
    );
}

#[test]
fn full_pipeline_is_bit_reproducible() {
    let (dir, cfg) = workspace();
    let cfg = cfg.to_str().unwrap();
    pipeline(dir.path(), cfg, "r1");
    pipeline(dir.path(), cfg, "r2");
    for f in [
        "teacher/best.ckpt",
        "student/best.ckpt",
        "eval/report.tsv",
        "eval/report.json",
        "eval/length_sweep.tsv",
        "teacher/resolved_config.toml",
    ] {
        let a = std::fs::read(dir.path().join("r1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
}

#[test]
fn env_override_reaches_the_resolved_config() {
    let (dir, cfg) = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_tagformer"))
        .current_dir(dir.path())
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "synth-data",
            "--artists",
            "1",
            "--tracks-per-artist",
            "1",
            "--out",
            "d",
        ])
        .env("TAGFORMER_SYNTH__CLIP_SECONDS", "0.25")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let snap = std::fs::read_to_string(dir.path().join("d/resolved_config.toml")).unwrap();
    assert!(snap.contains("clip_seconds = 0.25"), "{snap}");
}
