//! End-to-end command tests against the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn collagan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collagan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_data_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = collagan(&[
            "gen-data",
            "--out",
            out.to_str().unwrap(),
            "--subjects",
            "3",
            "--domains",
            "4",
            "--size",
            "32",
            "--seed",
            "5",
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let count = walk_files(&a, "pgm").len();
    assert_eq!(count, 12);
    assert!(a.join("manifest.txt").exists());

    // same seed twice -> identical bytes
    for f in walk_files(&a, "pgm") {
        let rel = f.strip_prefix(&a).unwrap();
        let fa = std::fs::read(&f).unwrap();
        let fb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(fa, fb, "{rel:?}");
    }

    // size=32 -> every header reports 32 32
    for f in walk_files(&a, "pgm") {
        let bytes = std::fs::read(&f).unwrap();
        let head = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]).into_owned();
        assert!(head.contains("32 32"), "{head}");
    }

    // refusing to overwrite without --force is a data error (exit 2)
    let res = collagan(&["gen-data", "--out", a.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(res.status.code(), Some(2));
}

fn walk_files(root: &Path, ext: &str) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(walk_files(&p, ext));
        } else if p.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_flags_are_rejected_with_usage_exit() {
    let res = collagan(&["gen-data", "--out", "/tmp/x", "--bogus-flag", "1"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn metrics_identity_and_uniform_offset() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    // constant 0.5 reference and +0.1 offset: nmse = 0.1^2 / 0.5^2 = 0.04
    let half = collagan_core::tensor::Tensor::<f32>::full(vec![1, 16, 16], 127.5 / 255.0);
    let off = collagan_core::tensor::Tensor::<f32>::full(vec![1, 16, 16], 153.0 / 255.0);
    collagan_core::data::pnm::write_image(&a, &half).unwrap();
    collagan_core::data::pnm::write_image(&b, &off).unwrap();

    let same = collagan(&["metrics", "--a", a.to_str().unwrap(), "--b", a.to_str().unwrap()]);
    assert!(stdout(&same).contains("nmse=0 ssim=1"), "{}", stdout(&same));

    let res = collagan(&["metrics", "--a", b.to_str().unwrap(), "--b", a.to_str().unwrap()]);
    let line = stdout(&res);
    let nm: f64 = line
        .split("nmse=")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    // quantized pixels: 127/255 vs 153/255
    let expected = {
        let r = 127.5f64.round() / 255.0;
        let x = 153.0 / 255.0;
        (x - r) * (x - r) / (r * r)
    };
    assert!((nm - expected).abs() < 1e-6, "{nm} vs {expected}");
}

#[test]
fn train_impute_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_out = dir.path().join("run");
    let res = collagan(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--subjects",
        "10",
        "--domains",
        "4",
        "--size",
        "16",
        "--seed",
        "3",
    ]);
    assert!(res.status.success());

    // tiny config: joint-steps 0 -> checkpoint exists, exactly 1 metrics row
    let res = collagan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_out.to_str().unwrap(),
        "--set",
        "image_size=16",
        "--set",
        "gen_depth=2",
        "--set",
        "gen_base_width=4",
        "--set",
        "dsc_base_width=8",
        "--set",
        "dsc_downsamples=2",
        "--set",
        "pretrain_epochs=1",
        "--set",
        "joint_steps=0",
        "--set",
        "seed=3",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // resolved config printed
    assert!(stdout(&res).contains("joint_steps = 0"));
    let ckpt = run_out.join("checkpoint.clgn");
    assert!(ckpt.exists());
    let csv = std::fs::read_to_string(run_out.join("metrics.csv")).unwrap();
    assert_eq!(csv.trim_end().lines().count(), 2); // header + 1 data row

    // impute with all complements provided -> sidecar lists N-1 live slots
    let out_img = dir.path().join("imputed.pgm");
    let res = collagan(&[
        "impute",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--input",
        &format!("0={}", data.join("s000/0.pgm").display()),
        "--input",
        &format!("1={}", data.join("s000/1.pgm").display()),
        "--input",
        &format!("3={}", data.join("s000/3.pgm").display()),
        "--target",
        "2",
        "--out",
        out_img.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out_img.exists());
    let sidecar = std::fs::read_to_string(dir.path().join("imputed.txt")).unwrap();
    assert_eq!(sidecar.matches("live").count(), 3);
    assert_eq!(sidecar.matches("target").count(), 1);

    // evaluate writes the per-domain table and montages
    let eval_out = dir.path().join("eval");
    let res = collagan(&[
        "evaluate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(eval_out.join("evaluation.csv")).unwrap();
    assert_eq!(csv.trim_end().lines().count(), 5); // header + 4 domains
    assert!(eval_out.join("montage_domain0.pgm").exists());

    // oracle passthrough: nmse 0 / ssim 1 for every domain
    let oracle_out = dir.path().join("eval-oracle");
    let res = collagan(&[
        "evaluate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        oracle_out.to_str().unwrap(),
        "--oracle",
    ]);
    assert!(res.status.success());
    let csv = std::fs::read_to_string(oracle_out.join("evaluation.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let nm: f64 = fields[1].parse().unwrap();
        let ss: f64 = fields[2].parse().unwrap();
        assert_eq!(nm, 0.0, "{line}");
        assert!((ss - 1.0).abs() < 1e-7, "{line}");
    }
}

#[test]
fn gradcheck_passes_at_default_tolerance() {
    let res = collagan(&["gradcheck", "--seed", "12345"]);
    assert!(
        res.status.success(),
        "{}\n{}",
        stdout(&res),
        String::from_utf8_lossy(&res.stderr)
    );
    let text = stdout(&res);
    assert!(text.contains("conv2d_s1_same"));
    assert!(text.contains("ssim_loss"));
    assert!(text.contains("ok"));
}
