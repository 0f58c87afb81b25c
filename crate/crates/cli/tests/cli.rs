use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uvsr_cli::DegradeManifest;
use uvsr_core::io::{read_sequence, write_sequence};
use uvsr_core::operators::Space;
use uvsr_core::training::SyntheticTextures;

fn uvsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvsr"))
        .args(args)
        .env_remove("UVSR_DEVICE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = uvsr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two small translating-texture sequences under `root/hr_src`.
fn hr_dataset(root: &Path) -> std::path::PathBuf {
    let src = SyntheticTextures::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in ["alpha", "beta"] {
        let (clip, _) = src.sample_with_velocity(&mut rng, 5, 42, 46).unwrap();
        write_sequence(&root.join("hr_src").join(name), &clip).unwrap();
    }
    root.join("hr_src")
}

#[test]
fn selftest_passes() {
    let stdout = ok(&["selftest", "--cases", "12"]);
    assert!(stdout.contains("8/8 checks passed"), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn degrade_fixed_sigma_writes_manifest_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = hr_dataset(dir.path());
    let out = dir.path().join("deg");
    ok(&["degrade", "--input", p(&input), "--out", p(&out), "--sigma", "1.6", "--scale", "4"]);
    let m = DegradeManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.scale, 4);
    assert_eq!(m.sequences.len(), 2);
    for e in &m.sequences {
        assert_eq!(e.sigma, 1.6);
        assert_eq!(e.hr_size, [40, 44]);
        assert_eq!(e.lr_size, [10, 11]);
        assert!(e.source.ends_with(&e.name));
        let lr = read_sequence(&out.join("lr").join(&e.name), Space::Lr).unwrap();
        let hr = read_sequence(&out.join("hr").join(&e.name), Space::Hr).unwrap();
        assert_eq!((lr.len(), lr[0].height(), lr[0].width()), (5, 10, 11));
        assert_eq!((hr.len(), hr[0].height(), hr[0].width()), (5, 40, 44));
    }
    let config = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(config.contains("value = 1.6"), "{config}");
}

#[test]
fn degrade_uniform_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = hr_dataset(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["degrade", "--input", p(&input), "--out", p(&out), "--sigma-range", "0.375", "2.825", "--seed", seed]);
        fs::read_to_string(out.join("manifest.json")).unwrap()
    };
    let a = run("a", "3");
    assert_eq!(a, run("b", "3"));
    assert_ne!(a, run("c", "4"));
    let m: DegradeManifest = serde_json::from_str(&a).unwrap();
    assert!(m.sequences.iter().all(|e| (0.375..=2.825).contains(&e.sigma)));
}

#[test]
fn degrade_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = hr_dataset(dir.path());
    let out = dir.path().join("deg");
    let cfg = dir.path().join("degrade.toml");
    fs::write(
        &cfg,
        format!("input = {:?}\nout = {:?}\nscale = 2\n[sigma]\nmode = \"fixed\"\nvalue = 0.9\n", input, out),
    )
    .unwrap();
    ok(&["degrade", "--config", p(&cfg)]);
    let m = DegradeManifest::load(&out.join("manifest.json")).unwrap();
    assert!(m.sequences.iter().all(|e| e.sigma == 0.9 && e.lr_size == [21, 23]));
}

#[test]
fn classical_infer_needs_no_checkpoint_and_eval_scores_it() {
    let dir = tempfile::tempdir().unwrap();
    let input = hr_dataset(dir.path());
    let deg = dir.path().join("deg");
    ok(&["degrade", "--input", p(&input), "--out", p(&deg), "--sigma", "1.2", "--scale", "2"]);
    let sr = dir.path().join("sr");
    ok(&["infer", "--classical", "--input", p(&deg.join("lr")), "--out", p(&sr), "--scale", "2", "--blocks", "4"]);
    let frames = read_sequence(&sr.join("alpha"), Space::Hr).unwrap();
    assert_eq!((frames.len(), frames[0].height(), frames[0].width()), (5, 42, 46));
    let manifest = fs::read_to_string(sr.join("manifest.json")).unwrap();
    assert!(manifest.contains("1.2"), "sigma comes from the degrade manifest: {manifest}");
    assert!(sr.join("config.toml").exists());

    let ev = dir.path().join("ev");
    let stdout = ok(&["eval", "--pred", p(&sr), "--gt", p(&deg.join("hr")), "--out", p(&ev), "--classical", "--scale", "2"]);
    assert!(stdout.contains("PSNR(dB)/SSIM"));
    let csv = fs::read_to_string(ev.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("alpha,5,"));
    assert!(ev.join("summary.txt").exists() && ev.join("config.toml").exists());
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let input = hr_dataset(dir.path());
    let ev = dir.path().join("ev");
    ok(&["eval", "--pred", p(&input), "--gt", p(&input), "--out", p(&ev), "--profile-row", "20"]);
    let csv = fs::read_to_string(ev.join("report.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",inf,1.000000"), "{line}");
    }
    let strip = read_sequence(&ev.join("profiles"), Space::Hr).unwrap();
    assert_eq!((strip[0].height(), strip[0].width()), (5, 46));
}

#[test]
fn train_then_infer_and_eval_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    fs::write(
        &cfg,
        "steps = 2\nbatch_size = 1\nframes = 2\ncrop = 8\nlearning_rate = 0.001\n\
         [model]\nblocks = 1\ndepth = 2\nfilters = 4\nchannels = 3\nscale = 2\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let stdout = ok(&["train", "--config", p(&cfg), "--out", p(&run), "--seed", "5", "--log-every", "1"]);
    assert!(stdout.contains("step      2"), "{stdout}");
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,total,sr,flow_prev_to_t,flow_t_to_prev,lr");
    assert_eq!(log.lines().count(), 3);
    let resolved = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 5"));

    let input = hr_dataset(dir.path());
    let deg = dir.path().join("deg");
    ok(&["degrade", "--input", p(&input), "--out", p(&deg), "--scale", "2"]);
    let ckpt = run.join("checkpoint");
    let sr = dir.path().join("sr");
    ok(&["infer", "--checkpoint", p(&ckpt), "--input", p(&deg.join("lr")), "--out", p(&sr)]);
    assert_eq!(read_sequence(&sr.join("beta"), Space::Hr).unwrap()[0].width(), 46);

    let ev = dir.path().join("ev");
    let stdout = ok(&[
        "eval", "--pred", p(&sr), "--gt", p(&deg.join("hr")), "--out", p(&ev),
        "--checkpoint", p(&ckpt), "--runtime-runs", "2",
    ]);
    assert!(stdout.contains("ms per frame"), "{stdout}");
    assert!(stdout.contains("parameters: "));

    let out = uvsr(&["infer", "--checkpoint", p(&ckpt), "--input", p(&deg.join("lr")), "--out", p(&sr), "--scale", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let code = |args: &[&str]| uvsr(args).status.code();

    assert_eq!(code(&["degrade", "--input", p(&missing), "--out", p(dir.path())]), Some(4));
    assert_eq!(code(&["infer", "--input", p(dir.path()), "--out", p(dir.path())]), Some(5));
    assert_eq!(
        code(&["infer", "--checkpoint", p(&missing), "--input", p(dir.path()), "--out", p(dir.path())]),
        Some(5)
    );
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "stepz = 1\n").unwrap();
    assert_eq!(code(&["train", "--config", p(&bad), "--out", p(dir.path())]), Some(3));
    assert_eq!(code(&["degrade", "--sigma", "1", "--sigma-range", "1", "2"]), Some(2));
    assert_eq!(code(&["degrade", "--input", p(dir.path()), "--out", p(dir.path()), "--sigma=-1"]), Some(6));

    let out = Command::new(env!("CARGO_BIN_EXE_uvsr"))
        .args(["eval", "--pred", "x", "--gt", "y", "--out", "z"])
        .env("UVSR_DEVICE", "cuda:0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cuda:0"));
}
