//! Command-line surface over the spectral U-Net library: transforms,
//! training, ablation, benchmarking, and the runtime self-check suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 self-check
//! failure. `SPECTRAL_UNET_LOG` ∈ {error, info, debug} controls verbosity.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use spectral_core::data::{self, SyntheticSpec};
use spectral_core::io;
use spectral_core::network::{
    count_params_flops, forward, load_model, save_model, DownKind, ModelParams, NetworkConfig,
    UpKind,
};
use spectral_core::selfcheck;
use spectral_core::tensor::Mode;
use spectral_core::trainer::{
    ablate, evaluate, split_indices, train, write_ablation_csv, write_eval_csv, write_loss_csv,
    TrainConfig,
};
use spectral_core::wavelet::{
    dtcwt_forward, dtcwt_inverse, haar_forward, haar_inverse, FilterBank, Subbands, WaveletKind,
};
use spectral_core::Tensor;

#[derive(Parser)]
#[command(name = "spectral-unet", version, about = "Wavelet U-Net transforms, training, and diagnostics")]
struct Cli {
    /// JSON config file (train / eval / ablate / bench).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; computation is single-threaded, kept at 1 for
    /// bit-reproducibility.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decompose an image (PGM/PPM/STNT) into wavelet sub-band files.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long, default_value = "dtcwt")]
        wavelet: String,
    },
    /// Invert a sub-band directory written by `decompose`.
    Reconstruct {
        /// Directory holding lowpass/highpass STNT files plus meta.json.
        #[arg(long)]
        input: PathBuf,
        /// Original image; prints the max-abs reconstruction error.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train a model on a synthetic dataset described by the config.
    Train,
    /// Evaluate a checkpoint on the config's held-out test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the full block-combination grid and write the result CSV.
    Ablate,
    /// Print parameter counts, MACs, and wall-clock per forward pass.
    Bench,
    /// Run the invariant suite; exits 3 if any check fails.
    Selfcheck,
}

// ---------------------------------------------------------------- logging

static LOG_LEVEL: OnceLock<u8> = OnceLock::new();

fn log_level() -> u8 {
    *LOG_LEVEL.get_or_init(|| match std::env::var("SPECTRAL_UNET_LOG").as_deref() {
        Ok("debug") => 2,
        Ok("info") => 1,
        _ => 0,
    })
}

macro_rules! info {
    ($($t:tt)*) => { if log_level() >= 1 { eprintln!("[info] {}", format!($($t)*)); } };
}
macro_rules! debug {
    ($($t:tt)*) => { if log_level() >= 2 { eprintln!("[debug] {}", format!($($t)*)); } };
}

// ----------------------------------------------------------------- config

#[derive(Debug, Serialize, Deserialize)]
struct RunConfig {
    network: NetworkConfig,
    train: TrainConfig,
    data: SyntheticSpec,
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let path = path.ok_or_else(|| anyhow!("this subcommand requires --config <file.json>"))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| anyhow!("{}: invalid config at `{}`: {}", path.display(), e.path(), e.inner()))?;
    if let Some(s) = seed {
        cfg.network.seed = s;
        cfg.train.seed = s;
        cfg.data.seed = s;
        info!("seed override: {s}");
    }
    cfg.network.validate().context("config field `network`")?;
    cfg.train.validate().context("config field `train`")?;
    Ok(cfg)
}

fn parse_wavelet(s: &str) -> Result<WaveletKind> {
    match s.to_ascii_lowercase().as_str() {
        "dtcwt" => Ok(WaveletKind::Dtcwt),
        "haar" => Ok(WaveletKind::Haar),
        other => bail!("unknown wavelet {other:?} (expected dtcwt or haar)"),
    }
}

// -------------------------------------------------------- decompose files

#[derive(Serialize, Deserialize)]
struct DecomposeMeta {
    wavelet: WaveletKind,
    levels: usize,
    original_hw: (usize, usize),
    batch: usize,
    channels: usize,
}

fn read_image(path: &Path) -> Result<Tensor<f64>> {
    let t = if path.extension().and_then(|e| e.to_str()) == Some("stnt") {
        io::read_tensor::<f64>(path)?
    } else {
        io::read_netpbm::<f64>(path)?
    };
    if t.shape().len() != 4 {
        bail!("input tensor must be (N,C,H,W), got {:?}", t.shape());
    }
    Ok(t)
}

/// Channel-0/batch-0 plane scaled so its peak maps to white.
fn preview(path: &Path, plane: &[f64], h: usize, w: usize) -> Result<()> {
    let peak = plane.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let t = Tensor::from_vec(&[h, w], plane.iter().map(|v| v.abs() * scale).collect())?;
    Ok(io::write_pgm(path, &t)?)
}

/// Pull one orientation (N,2,C,h,w) out of a (N,2,6,C,h,w) level tensor.
fn take_orientation(hp: &Tensor<f64>, o: usize) -> Result<Tensor<f64>> {
    let sh = hp.shape().to_vec();
    let (n, c, h, w) = (sh[0], sh[3], sh[4], sh[5]);
    let plane = c * h * w;
    let mut out = Tensor::zeros(&[n, 2, c, h, w]);
    for b in 0..n {
        for reim in 0..2 {
            let src = ((b * 2 + reim) * 6 + o) * plane;
            let dst = (b * 2 + reim) * plane;
            out.data_mut()[dst..dst + plane].copy_from_slice(&hp.data()[src..src + plane]);
        }
    }
    Ok(out)
}

fn put_orientation(hp: &mut Tensor<f64>, o: usize, part: &Tensor<f64>) -> Result<()> {
    let sh = hp.shape().to_vec();
    let (n, c, h, w) = (sh[0], sh[3], sh[4], sh[5]);
    if part.shape() != [n, 2, c, h, w] {
        bail!("orientation {o} file has shape {:?}, expected {:?}", part.shape(), [n, 2, c, h, w]);
    }
    let plane = c * h * w;
    for b in 0..n {
        for reim in 0..2 {
            let dst = ((b * 2 + reim) * 6 + o) * plane;
            let src = (b * 2 + reim) * plane;
            hp.data_mut()[dst..dst + plane].copy_from_slice(&part.data()[src..src + plane]);
        }
    }
    Ok(())
}

fn cmd_decompose(out: &Path, input: &Path, levels: usize, wavelet: WaveletKind) -> Result<()> {
    let x = read_image(input)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        println!("note: odd input {h}x{w}; padding to even dims internally");
    }
    fs::create_dir_all(out)?;
    let meta = DecomposeMeta { wavelet, levels, original_hw: (h, w), batch: n, channels: c };
    fs::write(out.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;

    match wavelet {
        WaveletKind::Dtcwt => {
            let fb = FilterBank::default();
            let s = dtcwt_forward(&x, levels, &fb)?;
            io::write_tensor(&out.join("lowpass.stnt"), &s.lowpass.cast::<f32>())?;
            let lsh = s.lowpass.shape().to_vec();
            preview(
                &out.join("lowpass.pgm"),
                &s.lowpass.data()[..lsh[2] * lsh[3]],
                lsh[2],
                lsh[3],
            )?;
            println!("lowpass: shape {:?}", lsh);
            for (j, hp) in s.highpass.iter().enumerate() {
                let sh = hp.shape().to_vec();
                println!("highpass level {}: shape {:?}", j + 1, sh);
                let (hc, hh, hw) = (sh[3], sh[4], sh[5]);
                for o in 0..6 {
                    let part = take_orientation(hp, o)?;
                    io::write_tensor(
                        &out.join(format!("highpass_l{}_o{o}.stnt", j + 1)),
                        &part.cast::<f32>(),
                    )?;
                    // magnitude of the complex coefficient, channel 0
                    let plane = hc * hh * hw;
                    let mag: Vec<f64> = (0..hh * hw)
                        .map(|i| {
                            let re = part.data()[i];
                            let im = part.data()[plane * 1 + i];
                            (re * re + im * im).sqrt()
                        })
                        .collect();
                    preview(&out.join(format!("highpass_l{}_o{o}.pgm", j + 1)), &mag, hh, hw)?;
                }
            }
        }
        WaveletKind::Haar => {
            let mut low = x;
            for j in 1..=levels {
                let bands = haar_forward(&low)?;
                let (bn, c4, bh, bw) = bands.dims4()?;
                let bc = c4 / 4;
                let slice = |lo: usize, hi: usize| {
                    spectral_core::tensor::ops::slice_channels(&bands, lo, hi)
                };
                low = slice(0, bc)?;
                for (bi, name) in ["lh", "hl", "hh"].iter().enumerate() {
                    let d = slice((bi + 1) * bc, (bi + 2) * bc)?;
                    io::write_tensor(&out.join(format!("haar_l{j}_{name}.stnt")), &d.cast::<f32>())?;
                    preview(&out.join(format!("haar_l{j}_{name}.pgm")), &d.data()[..bh * bw], bh, bw)?;
                }
                println!("haar level {j}: detail shape {:?}", [bn, bc, bh, bw]);
            }
            io::write_tensor(&out.join("lowpass.stnt"), &low.cast::<f32>())?;
            let lsh = low.shape().to_vec();
            preview(&out.join("lowpass.pgm"), &low.data()[..lsh[2] * lsh[3]], lsh[2], lsh[3])?;
            println!("lowpass: shape {:?}", lsh);
        }
    }
    println!("wrote sub-bands to {}", out.display());
    Ok(())
}

fn read_subband(dir: &Path, name: &str) -> Result<Tensor<f64>> {
    let path = dir.join(name);
    let t: Tensor<f32> = io::read_tensor(&path)
        .with_context(|| format!("missing or unreadable sub-band file {}", path.display()))?;
    Ok(t.cast::<f64>())
}

fn cmd_reconstruct(out: &Path, input: &Path, reference: Option<&PathBuf>) -> Result<()> {
    let meta: DecomposeMeta = serde_json::from_slice(
        &fs::read(input.join("meta.json")).context("missing meta.json in sub-band directory")?,
    )?;
    let lowpass = read_subband(input, "lowpass.stnt")?;
    let y = match meta.wavelet {
        WaveletKind::Dtcwt => {
            let fb = FilterBank::default();
            let mut highpass = Vec::with_capacity(meta.levels);
            for j in 1..=meta.levels {
                let first = read_subband(input, &format!("highpass_l{j}_o0.stnt"))?;
                let sh = first.shape().to_vec();
                let mut hp = Tensor::zeros(&[sh[0], 2, 6, sh[2], sh[3], sh[4]]);
                put_orientation(&mut hp, 0, &first)?;
                for o in 1..6 {
                    let part = read_subband(input, &format!("highpass_l{j}_o{o}.stnt"))?;
                    put_orientation(&mut hp, o, &part)?;
                }
                highpass.push(hp);
            }
            dtcwt_inverse(&Subbands { lowpass, highpass, original_hw: meta.original_hw }, &fb)?
        }
        WaveletKind::Haar => {
            let mut low = lowpass;
            for j in (1..=meta.levels).rev() {
                let (n, c, h, w) = low.dims4()?;
                let mut bands = Tensor::zeros(&[n, 4 * c, h, w]);
                let put = |bands: &mut Tensor<f64>, lo: usize, t: &Tensor<f64>| -> Result<()> {
                    let plane = h * w;
                    for b in 0..n {
                        for ch in 0..c {
                            let dst = (b * 4 * c + lo + ch) * plane;
                            let src = (b * c + ch) * plane;
                            bands.data_mut()[dst..dst + plane]
                                .copy_from_slice(&t.data()[src..src + plane]);
                        }
                    }
                    Ok(())
                };
                put(&mut bands, 0, &low)?;
                for (bi, name) in ["lh", "hl", "hh"].iter().enumerate() {
                    let d = read_subband(input, &format!("haar_l{j}_{name}.stnt"))?;
                    if d.shape() != [n, c, h, w] {
                        bail!("haar_l{j}_{name}: shape {:?}, expected {:?}", d.shape(), [n, c, h, w]);
                    }
                    put(&mut bands, (bi + 1) * c, &d)?;
                }
                low = haar_inverse(&bands)?;
            }
            low
        }
    };
    fs::create_dir_all(out)?;
    io::write_tensor(&out.join("reconstructed.stnt"), &y.cast::<f32>())?;
    let sh = y.shape().to_vec();
    preview(&out.join("reconstructed.pgm"), &y.data()[..sh[2] * sh[3]], sh[2], sh[3])?;
    println!("reconstructed: shape {:?}", sh);
    if let Some(ref_path) = reference {
        let x = read_image(ref_path)?;
        if x.shape() != y.shape() {
            bail!("reference shape {:?} != reconstruction {:?}", x.shape(), y.shape());
        }
        println!("max abs error vs reference: {:.3e}", y.sub(&x)?.max_abs());
    }
    Ok(())
}

// ------------------------------------------------------------ train / eval

fn cmd_train(out: &Path, cfg: &RunConfig) -> Result<()> {
    let dataset = data::generate(&cfg.data)?;
    info!("generated {} images of {}x{}", dataset.len(), cfg.data.image_size, cfg.data.image_size);
    let (params, record) = train(&cfg.network, &cfg.train, &dataset)?;
    fs::create_dir_all(out)?;
    save_model(&out.join("model.ckpt"), &params)?;
    write_loss_csv(&out.join("loss.csv"), &record)?;
    write_eval_csv(&out.join("evals.csv"), &record)?;
    fs::write(out.join("run.json"), serde_json::to_vec_pretty(&record)?)?;
    println!(
        "trained {} iters in {:.1}s; best val Dice {:.4} at iter {}; test mean fg Dice {:.4}",
        record.losses.len(),
        record.wall_clock_secs,
        record.best_val_dice,
        record.best_iter,
        record.test.mean_fg_dice
    );
    println!("config hash {}", record.config_hash);
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let dataset = data::generate(&cfg.data)?;
    let (_, _, test_ids) = split_indices(dataset.len(), cfg.train.split, cfg.train.seed)?;
    let mut params: ModelParams<f32> = load_model(checkpoint)?;
    let ev = evaluate(&mut params, &dataset, &test_ids, &FilterBank::default(), 0)?;
    println!("test split: {} images", test_ids.len());
    println!("class  dice     hd95");
    for (c, d) in ev.class_dice.iter().enumerate() {
        match ev.class_hd95[c] {
            Some(h) => println!("{c:<5}  {d:.4}   {h:.3}"),
            None => println!("{c:<5}  {d:.4}   n/a"),
        }
    }
    println!("mean foreground dice: {:.4}", ev.mean_fg_dice);
    Ok(())
}

fn cmd_ablate(out: &Path, cfg: &RunConfig) -> Result<()> {
    let dataset = data::generate(&cfg.data)?;
    let rows = ablate(&cfg.network, &cfg.train, &dataset)?;
    fs::create_dir_all(out)?;
    write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    println!("wavelet  down        up           mean_fg_dice  repeats  failures");
    for r in &rows {
        println!(
            "{:<8} {:<11} {:<12} {:<13.4} {:<8} {}",
            format!("{:?}", r.wavelet),
            format!("{:?}", r.down_kind),
            format!("{:?}", r.up_kind),
            r.mean_fg_dice,
            r.repeats_done,
            r.failures.len()
        );
    }
    println!("wrote {}", out.join("ablation.csv").display());
    Ok(())
}

// ------------------------------------------------------------------ bench

fn bench_variant(cfg: &NetworkConfig, hw: (usize, usize)) -> Result<(usize, u64, f64)> {
    let cost = count_params_flops(cfg, hw)?;
    let mut params = ModelParams::<f32>::init(cfg)?;
    let fb = FilterBank::default();
    let x = Tensor::<f32>::zeros(&[1, cfg.in_channels, hw.0, hw.1]);
    forward(&x, &mut params, Mode::Eval, &fb)?; // warm up
    let t0 = Instant::now();
    forward(&x, &mut params, Mode::Eval, &fb)?;
    Ok((cost.params, cost.macs, t0.elapsed().as_secs_f64() * 1e3))
}

fn cmd_bench(cfg: Option<&RunConfig>, seed: Option<u64>) -> Result<()> {
    let base = match cfg {
        Some(c) => c.network.clone(),
        None => NetworkConfig {
            in_channels: 1,
            num_classes: 2,
            base_channels: 16,
            depth: 3,
            down_kind: DownKind::WaveBlock,
            up_kind: UpKind::IwaveBlock,
            wavelet: WaveletKind::Dtcwt,
            wave_conv: spectral_core::blocks::WaveConv::GroupedShared,
            bn_momentum: 0.1,
            synth_bn: true,
            bottleneck: true,
            seed: seed.unwrap_or(0),
        },
    };
    let hw = {
        let s = cfg.map(|c| c.data.image_size).unwrap_or(64);
        (s, s)
    };
    let variants = [
        ("Conv + Linear-I", DownKind::ConvBlock, UpKind::LinearUp),
        ("Conv + iWave", DownKind::ConvBlock, UpKind::IwaveBlock),
        ("Wave + Linear-I", DownKind::WaveBlock, UpKind::LinearUp),
        ("Wave + iWave", DownKind::WaveBlock, UpKind::IwaveBlock),
    ];
    println!("input {}x{}, base {} channels, depth {}, wavelet {:?}, conv {:?}",
        hw.0, hw.1, base.base_channels, base.depth, base.wavelet, base.wave_conv);
    println!("{:<16} {:>10} {:>14} {:>12}", "variant", "params", "MACs", "ms/forward");
    let mut by_variant = std::collections::HashMap::new();
    for (name, down, up) in variants {
        let mut c = base.clone();
        c.down_kind = down;
        c.up_kind = up;
        let (p, m, ms) = bench_variant(&c, hw)?;
        println!("{name:<16} {p:>10} {m:>14} {ms:>12.2}");
        by_variant.insert(name, p);
    }
    let (conv, wave) = (by_variant["Conv + iWave"], by_variant["Wave + iWave"]);
    println!(
        "encoder substitution overhead (Wave+iWave vs Conv+iWave): {:+.1}%",
        100.0 * (wave as f64 - conv as f64) / conv as f64
    );
    Ok(())
}

fn cmd_selfcheck() -> Result<u8> {
    let results = selfcheck::run_all();
    let mut failed = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag}  {:<26} {}", r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        println!("{failed}/{} checks failed", results.len());
        Ok(3)
    } else {
        println!("all {} checks passed", results.len());
        Ok(0)
    }
}

// ------------------------------------------------------------------- main

fn run(cli: &Cli) -> Result<u8> {
    if cli.threads != 1 {
        info!("--threads {} requested; computation is single-threaded", cli.threads);
    }
    debug!("out dir: {}", cli.out.display());
    match &cli.cmd {
        Cmd::Decompose { input, levels, wavelet } => {
            cmd_decompose(&cli.out, input, *levels, parse_wavelet(wavelet)?)?;
            Ok(0)
        }
        Cmd::Reconstruct { input, reference } => {
            cmd_reconstruct(&cli.out, input, reference.as_ref())?;
            Ok(0)
        }
        Cmd::Train => {
            cmd_train(&cli.out, &load_config(cli.config.as_ref(), cli.seed)?)?;
            Ok(0)
        }
        Cmd::Eval { checkpoint } => {
            cmd_eval(&load_config(cli.config.as_ref(), cli.seed)?, checkpoint)?;
            Ok(0)
        }
        Cmd::Ablate => {
            cmd_ablate(&cli.out, &load_config(cli.config.as_ref(), cli.seed)?)?;
            Ok(0)
        }
        Cmd::Bench => {
            let cfg = match cli.config {
                Some(_) => Some(load_config(cli.config.as_ref(), cli.seed)?),
                None => None,
            };
            cmd_bench(cfg.as_ref(), cli.seed)?;
            Ok(0)
        }
        Cmd::Selfcheck => cmd_selfcheck(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes, everything else is usage
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
