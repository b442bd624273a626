use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rrnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrnet")).current_dir(dir).args(args).output().expect("spawn rrnet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rrnet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrnet(dir.path(), &["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&rrnet(dir.path(), &[])), 1);
    assert_eq!(code(&rrnet(dir.path(), &["--help"])), 0);
}

#[test]
fn encode_writes_all_outputs_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus", "--count", "1", "--width", "72", "--height", "40", "--out-dir", "imgs"]);
    let input = fs::read(d.join("imgs/img0000.pgm")).unwrap();
    let stdout = ok(d, &["encode", "--in", "imgs/img0000.pgm", "--qp", "37", "--out-dir", "a"]);
    assert!(stdout.starts_with("rate_proxy "));
    ok(d, &["encode", "--in", "imgs/img0000.pgm", "--qp", "37", "--out-dir", "b"]);
    for f in ["img0000_qp37.recon.pgm", "img0000_qp37.resi", "img0000_qp37.part.txt", "img0000_qp37.rate.txt"] {
        let a = fs::read(d.join("a").join(f)).unwrap();
        assert!(!a.is_empty(), "{f}");
        assert_eq!(a, fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(d.join("imgs/img0000.pgm")).unwrap(), input);

    let lossless = ok(d, &["encode", "--in", "imgs/img0000.pgm", "--qp", "22", "--lossless", "--out-dir", "l"]);
    assert!(lossless.contains("psnr inf"), "{lossless}");
    assert_eq!(fs::read(d.join("l/img0000_qp22.recon.pgm")).unwrap(), input);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&rrnet(d, &["encode", "--in", "missing.pgm", "--qp", "30", "--out-dir", "o"])), 2);
    fs::write(d.join("junk.pgm"), b"P2\n1 1\n255\n0\n").unwrap();
    assert_eq!(code(&rrnet(d, &["encode", "--in", "junk.pgm", "--qp", "30", "--out-dir", "o"])), 1);
    ok(d, &["corpus", "--count", "1", "--width", "32", "--height", "32", "--out-dir", "."]);
    assert_eq!(code(&rrnet(d, &["encode", "--in", "img0000.pgm", "--qp", "52", "--out-dir", "o"])), 1);

    fs::write(d.join("bad.conf"), "seed = 3\nbogus = 1\n").unwrap();
    let out = rrnet(d, &["--config", "bad.conf", "corpus", "--out-dir", "c"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line 2"), "{err}");
    assert!(!d.join("c").exists());

    fs::write(d.join("w.rrnw"), b"XXXX\x01\x00\x00\x00").unwrap();
    let out = rrnet(d, &["dump-features", "--weights", "w.rrnw", "--recon", "img0000.pgm"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn bdrate_of_identical_curves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.csv"), "rate,psnr\n120,31.5\n210,33.9\n390,36.2\n700,38.8\n").unwrap();
    fs::write(d.join("t.csv"), "rate,psnr\n108,31.5\n189,33.9\n351,36.2\n630,38.8\n").unwrap();
    assert_eq!(ok(d, &["bdrate", "--anchor", "a.csv", "--test", "a.csv"]), "0.00\n");
    assert_eq!(ok(d, &["bdrate", "--anchor", "a.csv", "--test", "t.csv"]), "-10.00\n");
    assert_eq!(code(&rrnet(d, &["bdrate", "--anchor", "a.csv", "--test", "none.csv"])), 2);
    fs::write(d.join("short.csv"), "rate,psnr\n1,30\n2,31\n").unwrap();
    assert_eq!(code(&rrnet(d, &["bdrate", "--anchor", "a.csv", "--test", "short.csv"])), 1);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck"]);
    let v: f64 = out.trim().parse().unwrap();
    assert!(v <= 1e-5, "{v}");
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.conf"), "# tiny run\nbatch_size = 1\nseed = 4\n").unwrap();
    let c = ["--config", "run.conf"];
    let run = |args: &[&str]| ok(d, &[&c[..], args].concat());

    run(&["corpus", "--count", "1", "--width", "64", "--height", "64", "--out-dir", "train"]);
    run(&["corpus", "--count", "1", "--first", "50", "--width", "48", "--height", "40", "--out-dir", "test/synthetic"]);
    let summary = run(&["dataset", "--images", "train/img0000.pgm", "--out-dir", "ds"]);
    assert!(summary.starts_with("4 patches"), "{summary}");
    let manifest = fs::read(d.join("ds/manifest.tsv")).unwrap();

    for out in ["w37.rrnw", "again.rrnw"] {
        run(&["train", "--manifest", "ds/manifest.tsv", "--qp", "37", "--epochs", "1", "--out", out, "--history", "h.csv"]);
    }
    assert_eq!(fs::read(d.join("w37.rrnw")).unwrap(), fs::read(d.join("again.rrnw")).unwrap());
    assert_eq!(fs::read(d.join("ds/manifest.tsv")).unwrap(), manifest);
    assert_eq!(fs::read_to_string(d.join("h.csv")).unwrap().lines().count(), 2);
    // A mixed-qp manifest needs --qp.
    let mixed = rrnet(d, &["train", "--manifest", "ds/manifest.tsv", "--epochs", "1", "--out", "x.rrnw"]);
    assert_eq!(code(&mixed), 1);

    for qp in ["22", "27", "32"] {
        let out = format!("w{qp}.rrnw");
        run(&["finetune", "--base", "w37.rrnw", "--manifest", "ds/manifest.tsv", "--qp", qp, "--epochs", "0", "--out", &out]);
    }

    run(&["encode", "--in", "test/synthetic/img0050.pgm", "--qp", "37", "--out-dir", "enc"]);
    let planes = ["--recon", "enc/img0050_qp37.recon.pgm", "--residual", "enc/img0050_qp37.resi"];
    let report = run(&[&["apply", "--weights", "w37.rrnw", "--out", "f.pgm", "--original", "test/synthetic/img0050.pgm"][..], &planes].concat());
    assert!(report.contains("psnr filtered"));
    assert!(fs::metadata(d.join("f.pgm")).unwrap().len() > 48 * 40);
    let missing = rrnet(d, &["apply", "--weights", "w37.rrnw", "--out", "g.pgm", "--recon", "enc/img0050_qp37.recon.pgm"]);
    assert_eq!(code(&missing), 1);

    let layers = run(&["dump-features", "--weights", "w37.rrnw", "--recon", "enc/img0050_qp37.recon.pgm"]);
    assert!(layers.lines().any(|l| l == "res.conv8"));
    let dumped = run(&[&["dump-features", "--weights", "w37.rrnw", "--layer", "res.conv1", "--out-dir", "maps"][..], &planes].concat());
    assert!(dumped.starts_with("64 maps"), "{dumped}");

    let models = ["w22.rrnw", "w27.rrnw", "w32.rrnw", "w37.rrnw"];
    let text = run(&[&["eval", "--images", "test/synthetic/img0050.pgm", "--out-dir", "rep", "--models"][..], &models].concat());
    assert!(text.contains("RRNET"), "{text}");
    for f in ["report.csv", "raw.csv", "pairwise.csv", "report.txt"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
    let raw = fs::read_to_string(d.join("rep/raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 4);

    let matrix = run(&[&["crossqp", "--images", "test/synthetic/img0050.pgm", "--out", "m.csv", "--models"][..], &models].concat());
    assert!(matrix.contains("|dQP| = 15"), "{matrix}");
    let csv = fs::read_to_string(d.join("m.csv")).unwrap();
    for (i, line) in csv.lines().skip(1).enumerate() {
        assert_eq!(line.split(',').nth(i + 1), Some("0.0000"), "{line}");
    }
}
