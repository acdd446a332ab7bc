//! Command-line interface: dataset generation, training, imputation,
//! evaluation, gradient checking, and image metrics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use collagan_core::data::pnm::{read_image, write_image};
use collagan_core::data::synth::synth_dataset;
use collagan_core::data::{load_dataset, write_dataset, DomainSample};
use collagan_core::error::Error;
use collagan_core::losses::SsimConfig;
use collagan_core::metrics::{mean_ssim, nmse};
use collagan_core::tensor::Tensor;
use collagan_core::train::{
    impute_with, run, split_samples, Checkpoint, DomainMetrics, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "collagan",
    about = "Multi-domain missing-image imputation: train, impute, evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset folder
    GenData(GenDataArgs),
    /// Train a model on a dataset folder
    Train(TrainArgs),
    /// Impute one missing domain image from provided complements
    Impute(ImputeArgs),
    /// Evaluate a checkpoint on the held-out test split
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite over every layer and loss
    Gradcheck(GradcheckArgs),
    /// Print NMSE and mean SSIM between two images
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    #[arg(long, default_value_t = 4)]
    domains: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image channels (1 = PGM, 3 = PPM)
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Overwrite a non-empty output directory
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (see gen-data)
    #[arg(long)]
    data: PathBuf,
    /// Flat key = value config file; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint and metrics CSV
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint file instead of initializing fresh
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Inline overrides, e.g. --set joint_steps=500 --set adam_lr=0.0005
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct ImputeArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Complement images as <domain_index>=<path>; missing slots are nulled
    #[arg(long = "input", value_name = "IDX=PATH")]
    inputs: Vec<String>,
    /// Target domain index to synthesize
    #[arg(long)]
    target: usize,
    /// Output image path (.pgm or .ppm); a .txt sidecar lists slot states
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the per-domain CSV and montage images
    #[arg(long)]
    out: PathBuf,
    /// Score a ground-truth passthrough oracle instead of the model
    #[arg(long, default_value_t = false)]
    oracle: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 12345)]
    seed: u64,
    /// Max allowed relative error (64-bit central differences)
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArg { .. } => 1,
        Error::NonFinite { .. } | Error::NonScalarLoss { .. } | Error::DetachedLoss => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the same error path
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Impute(args) => cmd_impute(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

type CmdResult = Result<ExitCode, Error>;

fn cmd_gen_data(args: GenDataArgs) -> CmdResult {
    println!(
        "gen-data: out={} subjects={} domains={} size={} seed={} channels={} force={}",
        args.out.display(),
        args.subjects,
        args.domains,
        args.size,
        args.seed,
        args.channels,
        args.force
    );
    let (samples, transforms) = synth_dataset::<f32>(
        args.subjects,
        args.domains,
        args.channels,
        args.size,
        args.size,
        args.seed,
    )?;
    let names: Vec<String> = transforms.iter().map(|t| t.name().to_string()).collect();
    write_dataset(&args.out, &samples, &names, args.seed, args.force)?;
    println!(
        "wrote {} subjects x {} domains under {}",
        samples.len(),
        args.domains,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig, Error> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        config.apply_text(&text)?;
    }
    for kv in &args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let samples: Vec<DomainSample<f32>> = load_dataset(&args.data)?;
    let outcome = if let Some(ckpt_path) = &args.resume {
        let ckpt = Checkpoint::<f32>::load(ckpt_path)?;
        let mut config = ckpt.config;
        // allow extending the run on resume
        for kv in &args.sets {
            if let Some((k, v)) = kv.split_once('=') {
                config.set(k.trim(), v.trim())?;
            }
        }
        let mut ckpt = ckpt;
        ckpt.config = config;
        println!("resolved config (resumed at step {}):", ckpt.step);
        print!("{}", ckpt.config.to_text());
        collagan_core::train::resume(ckpt, &samples, Some(&args.out))?
    } else {
        let config = resolve_config(&args)?;
        println!("resolved config:");
        print!("{}", config.to_text());
        run(config, &samples, Some(&args.out))?
    };
    println!(
        "final checkpoint at step {} -> {}",
        outcome.checkpoint.step,
        args.out.join("checkpoint.clgn").display()
    );
    for m in &outcome.final_eval {
        println!(
            "test domain {}: nmse {:.6} ssim {:.6} over {} samples",
            m.domain, m.nmse_mean, m.ssim_mean, m.samples
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_impute(args: ImputeArgs) -> CmdResult {
    let ckpt = Checkpoint::<f32>::load(&args.ckpt)?;
    let n = ckpt.config.n_domains;
    println!(
        "impute: target={} n_domains={n} ckpt_step={}",
        args.target, ckpt.step
    );
    print!("{}", ckpt.config.to_text());

    let mut images: Vec<Option<Tensor<f32>>> = vec![None; n];
    for spec in &args.inputs {
        let (idx, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--input expects IDX=PATH, got '{spec}'")))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad domain index '{idx}'")))?;
        if idx >= n {
            return Err(Error::Config(format!(
                "domain index {idx} out of range for {n} domains"
            )));
        }
        images[idx] = Some(read_image(path.trim())?);
    }
    let shape = images
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Data("no input images provided".into()))?
        .shape()
        .to_vec();
    let available: Vec<bool> = images
        .iter()
        .enumerate()
        .map(|(d, img)| img.is_some() && d != args.target)
        .collect();
    let sample = DomainSample {
        subject_id: "cli".into(),
        images: images
            .into_iter()
            .map(|img| img.unwrap_or_else(|| Tensor::zeros(shape.clone())))
            .collect(),
        available,
    };
    let out = impute_with(&ckpt.gen, &sample, args.target)?;
    write_image(&args.out, &out)?;

    let mut sidecar = String::new();
    for d in 0..n {
        let state = if d == args.target {
            "target"
        } else if sample.available[d] {
            "live"
        } else {
            "nulled"
        };
        sidecar.push_str(&format!("slot {d}: {state}\n"));
    }
    let sidecar_path = args.out.with_extension("txt");
    std::fs::write(&sidecar_path, sidecar)?;
    println!(
        "wrote {} and sidecar {}",
        args.out.display(),
        sidecar_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Single-row montage: complement inputs in domain order, then the model
/// output, then ground truth, separated by 2-pixel white gutters.
fn montage(
    tiles: &[Tensor<f32>],
) -> Result<Tensor<f32>, Error> {
    let (c, h, w) = tiles
        .first()
        .ok_or_else(|| Error::Data("montage needs at least one tile".into()))?
        .dims3()?;
    let gap = 2;
    let total_w = tiles.len() * w + (tiles.len() - 1) * gap;
    let mut out = Tensor::full(vec![c, h, total_w], 1.0f32);
    for (i, tile) in tiles.iter().enumerate() {
        if tile.dims3()? != (c, h, w) {
            return Err(Error::shape("montage", &[c, h, w], tile.shape()));
        }
        let x0 = i * (w + gap);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.data_mut()[(ch * h + y) * total_w + x0 + x] =
                        tile.data()[(ch * h + y) * w + x];
                }
            }
        }
    }
    Ok(out)
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let ckpt = Checkpoint::<f32>::load(&args.ckpt)?;
    println!("evaluate: oracle={} ckpt_step={}", args.oracle, ckpt.step);
    print!("{}", ckpt.config.to_text());
    let samples: Vec<DomainSample<f32>> = load_dataset(&args.data)?;
    let (_, _, test) = split_samples(&ckpt.config, &samples)?;
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let n = ckpt.config.n_domains;
    let ssim_cfg = SsimConfig::default();

    std::fs::create_dir_all(&args.out)?;
    let mut rows: Vec<DomainMetrics> = Vec::new();
    for target in 0..n {
        let mut nmse_sum = 0.0;
        let mut ssim_sum = 0.0;
        let mut count = 0usize;
        for sample in &test {
            if !sample.available[target] {
                continue;
            }
            let pred = if args.oracle {
                sample.images[target].clone()
            } else {
                impute_with(&ckpt.gen, sample, target)?
            };
            nmse_sum += nmse(&pred, &sample.images[target])?;
            ssim_sum += mean_ssim(&pred, &sample.images[target], &ssim_cfg)?;
            count += 1;
        }
        rows.push(DomainMetrics {
            domain: target,
            nmse_mean: nmse_sum / count.max(1) as f64,
            ssim_mean: ssim_sum / count.max(1) as f64,
            samples: count,
        });
    }

    let mut csv = String::from("domain,nmse,ssim,samples\n");
    println!("domain  nmse      ssim      samples");
    for m in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            m.domain, m.nmse_mean, m.ssim_mean, m.samples
        ));
        println!(
            "{:>6}  {:<8.6}  {:<8.6}  {}",
            m.domain, m.nmse_mean, m.ssim_mean, m.samples
        );
    }
    std::fs::write(args.out.join("evaluation.csv"), csv)?;

    // montage per domain from the first test subject:
    // inputs (in domain order, target slot skipped) | output | ground truth
    let subject = &test[0];
    for target in 0..n {
        if !subject.available[target] {
            continue;
        }
        let mut tiles: Vec<Tensor<f32>> = Vec::new();
        for d in 0..n {
            if d != target && subject.available[d] {
                tiles.push(subject.images[d].clone());
            }
        }
        let pred = if args.oracle {
            subject.images[target].clone()
        } else {
            impute_with(&ckpt.gen, subject, target)?
        };
        tiles.push(pred);
        tiles.push(subject.images[target].clone());
        let strip = montage(&tiles)?;
        let (c, _, _) = strip.dims3()?;
        let ext = if c == 3 { "ppm" } else { "pgm" };
        write_image(args.out.join(format!("montage_domain{target}.{ext}")), &strip)?;
    }
    println!("wrote evaluation.csv and montages under {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    println!(
        "gradcheck: seed={} tolerance={} (64-bit central differences)",
        args.seed, args.tolerance
    );
    let reports = collagan_core::gradcheck::run_full::<f64>(args.seed)?;
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.max_rel_err < args.tolerance;
        println!(
            "{:<28} max_rel_err {:>12.3e}  {}",
            r.op,
            r.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        worst = worst.max(r.max_rel_err);
        if !ok {
            failed.push(r.op.clone());
        }
    }
    println!("worst {worst:.3e} over {} checks", reports.len());
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::NonFinite {
            term: format!("gradient checks failed: {}", failed.join(", ")),
        })
    }
}

fn cmd_metrics(args: MetricsArgs) -> CmdResult {
    let a: Tensor<f64> = read_image(&args.a)?;
    let b: Tensor<f64> = read_image(&args.b)?;
    let nm = nmse(&a, &b)?;
    let ss = mean_ssim(&a, &b, &SsimConfig::default())?;
    println!("nmse={nm} ssim={ss}");
    Ok(ExitCode::SUCCESS)
}
