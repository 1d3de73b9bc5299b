use std::path::Path;
use std::process::{Command, Output};

const DESK: &str = "scale = desk\nbatch_size = 4\npretrain_classes = 5\nepochs = 2\npretrain_steps = 20\n";

fn dancegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dancegen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dancegen(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn count(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn ingest_train_generate_evaluate_render() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (raw, data, run, gen, frames) = (
        root.join("raw"),
        root.join("data"),
        root.join("run"),
        root.join("gen"),
        root.join("frames"),
    );
    let config = root.join("desk.conf");
    std::fs::write(&config, DESK).unwrap();

    ok(&["fixtures", "--out", s(&raw), "--seed", "3", "--per-style", "2"]);
    for i in 0..10 {
        let video = raw.join(format!("video_{i:03}"));
        ok(&[
            "ingest",
            "--keypoints",
            s(&video.join("keypoints")),
            "--audio",
            s(&video.join("audio.wav")),
            "--out",
            s(&data),
        ]);
    }
    assert_eq!(count(&data, "sksq"), 10);
    assert_eq!(count(&data, "wav"), 10);

    ok(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&run)]);
    let log = std::fs::read_to_string(run.join("loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 6, "3 steps per epoch for 2 epochs");
    assert!(log.lines().all(|l| l.contains("l_p=") && l.contains("adv_d_local=")));
    assert!(run.join("perceptual.dgck").exists());
    let ckpt = run.join("checkpoint.dgck");

    let audio = raw.join("video_000").join("audio.wav");
    ok(&["generate", "--checkpoint", s(&ckpt), "--audio", s(&audio), "--out", s(&gen), "--json"]);
    let first = std::fs::read(gen.join("audio.sksq")).unwrap();
    assert!(gen.join("audio.json").exists());
    ok(&["generate", "--checkpoint", s(&ckpt), "--audio", s(&audio), "--out", s(&gen)]);
    assert_eq!(std::fs::read(gen.join("audio.sksq")).unwrap(), first, "generation is deterministic");

    let eval = root.join("eval");
    let out = ok(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval), "--trials", "2"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rand_seq"));
    assert_eq!(std::fs::read_to_string(eval.join("scores.tsv")).unwrap().lines().count(), 12);
    assert!(eval.join("dictionary").join("manifest.json").exists());

    ok(&["render", "--sequence", s(&gen.join("audio.sksq")), "--out", s(&frames), "--width", "128", "--height", "128"]);
    assert_eq!(count(&frames, "png"), 50);
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bad = root.join("bad.conf");
    std::fs::write(&bad, "learning_rate = 1\n").unwrap();
    let out = dancegen(&["train", "--data", s(root), "--config", s(&bad), "--out", s(root)]);
    assert_eq!(out.status.code(), Some(2));

    let out = dancegen(&["render", "--sequence", s(&root.join("missing.sksq")), "--out", s(root)]);
    assert_eq!(out.status.code(), Some(3));

    // 49 frames of keypoints with matching audio: no pairs, a warning, success.
    let raw = root.join("raw");
    ok(&["fixtures", "--out", s(&raw), "--styles", "1", "--per-style", "1", "--seconds", "4.9"]);
    let video = raw.join("video_000");
    let data = root.join("data");
    let out = Command::new(env!("CARGO_BIN_EXE_dancegen"))
        .args([
            "ingest",
            "--keypoints",
            s(&video.join("keypoints")),
            "--audio",
            s(&video.join("audio.wav")),
            "--out",
            s(&data),
        ])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no pairs written"));

    // Audio from a different, longer video: alignment error.
    ok(&["fixtures", "--out", s(&root.join("long")), "--styles", "1", "--per-style", "1", "--seconds", "7"]);
    let out = dancegen(&[
        "ingest",
        "--keypoints",
        s(&video.join("keypoints")),
        "--audio",
        s(&root.join("long").join("video_000").join("audio.wav")),
        "--out",
        s(&data),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
