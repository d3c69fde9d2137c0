//! End-to-end tests driving the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spectral-unet"))
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_pgm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            bytes.push(f(i, j));
        }
    }
    fs::write(path, bytes).unwrap();
}

fn tiny_config(dir: &Path, max_iters: usize) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "network": {
            "in_channels": 1, "num_classes": 2, "base_channels": 4, "depth": 1,
            "down_kind": "wave_block", "up_kind": "iwave_block", "wavelet": "Dtcwt",
            "wave_conv": "grouped_shared", "bn_momentum": 0.1, "seed": 0
        },
        "train": {"max_iters": max_iters, "batch_size": 4, "eval_every": 10, "seed": 0, "num_repeats": 1},
        "data": {
            "image_size": 16, "num_images": 16, "object_count_range": [1, 2],
            "radius_range": [2.5, 4.0], "noise_sigma": 0.05, "num_classes": 2, "seed": 0
        }
    });
    let p = dir.join("cfg.json");
    fs::write(&p, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn decompose_reconstruct_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.pgm");
    write_pgm(&img, 16, 16, |i, j| ((i * 16 + j * 3) % 256) as u8);
    for wavelet in ["dtcwt", "haar"] {
        let sub = dir.path().join(format!("sub_{wavelet}"));
        ok(&bin()
            .args(["decompose", "--input"])
            .arg(&img)
            .args(["--levels", "2", "--wavelet", wavelet, "--out"])
            .arg(&sub)
            .output()
            .unwrap());
        let stdout = ok(&bin()
            .args(["reconstruct", "--input"])
            .arg(&sub)
            .arg("--reference")
            .arg(&img)
            .arg("--out")
            .arg(dir.path().join(format!("rec_{wavelet}")))
            .output()
            .unwrap());
        let err_line = stdout
            .lines()
            .find(|l| l.contains("max abs error"))
            .expect("missing error report");
        let err: f64 = err_line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(err < 1e-6, "{wavelet} roundtrip error {err}");
    }
}

#[test]
fn decompose_black_image_gives_zero_subbands() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("black.pgm");
    write_pgm(&img, 16, 16, |_, _| 0);
    let sub = dir.path().join("sub");
    ok(&bin()
        .args(["decompose", "--input"])
        .arg(&img)
        .args(["--out"])
        .arg(&sub)
        .output()
        .unwrap());
    for entry in fs::read_dir(&sub).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("stnt") {
            continue;
        }
        let t: spectral_core::Tensor<f32> = spectral_core::io::read_tensor(&path).unwrap();
        assert_eq!(t.max_abs(), 0.0, "{} not all zero", path.display());
    }
}

#[test]
fn reconstruct_rejects_mismatched_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.pgm");
    write_pgm(&img, 16, 16, |i, _| (i * 10) as u8);
    let sub = dir.path().join("sub");
    ok(&bin()
        .args(["decompose", "--input"])
        .arg(&img)
        .args(["--out"])
        .arg(&sub)
        .output()
        .unwrap());
    // corrupt one orientation with a wrong-shaped tensor
    let t = spectral_core::Tensor::<f32>::zeros(&[1, 2, 1, 4, 4]);
    spectral_core::io::write_tensor(&sub.join("highpass_l1_o3.stnt"), &t).unwrap();
    let out = bin()
        .args(["reconstruct", "--input"])
        .arg(&sub)
        .arg("--out")
        .arg(dir.path().join("rec"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let run = dir.path().join("run");
    ok(&bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(&run).output().unwrap());
    assert!(run.join("model.ckpt").exists());
    assert!(run.join("loss.csv").exists());
    assert!(run.join("evals.csv").exists());
    let stdout = ok(&bin()
        .arg("eval")
        .arg("--config")
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(run.join("model.ckpt"))
        .output()
        .unwrap());
    assert!(stdout.contains("mean foreground dice"), "{stdout}");
}

#[test]
fn training_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 10);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&bin()
            .arg("train")
            .arg("--config")
            .arg(&cfg)
            .args(["--threads", "1", "--out"])
            .arg(out)
            .output()
            .unwrap());
    }
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap(),
        "checkpoints differ between identical runs"
    );
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
}

#[test]
fn config_errors_carry_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(
        &p,
        r#"{"network": {"in_channels": "one"}, "train": {"max_iters": 1},
           "data": {"image_size":16,"num_images":16,"object_count_range":[1,2],
                    "radius_range":[2.5,4.0],"noise_sigma":0.05,"num_classes":2,"seed":0}}"#,
    )
    .unwrap();
    let out = bin().arg("train").arg("--config").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("network.in_channels"), "no field path in: {stderr}");
}

#[test]
fn exit_codes() {
    // usage error
    let out = bin().arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // runtime error: missing config
    let out = bin().args(["train", "--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // help is a success
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn selfcheck_passes_and_lists_checks() {
    let out = bin().arg("selfcheck").output().unwrap();
    let stdout = ok(&out);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn bench_prints_table_rows() {
    let stdout = ok(&bin().arg("bench").output().unwrap());
    for row in ["Conv + Linear-I", "Conv + iWave", "Wave + iWave", "params", "MACs"] {
        assert!(stdout.contains(row), "missing {row} in:\n{stdout}");
    }
    assert!(stdout.contains("overhead"));
}
