use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use sfsnid::data::{generate_dataset, load_image, save_image, DatasetManifest, MANIFEST_FILE};
use sfsnid::fourier::spectrum_images;
use sfsnid::pipeline::{
    evaluate, generate_pseudo_labels, infer, retrain_fused, run_gradcheck, train_supervised, Checkpoint, Config,
    Model, Split, CHECKPOINT_FILE,
};
use sfsnid::{Error, Result};

/// Nighttime dehazing with spatial/frequency bidomain blocks.
#[derive(Parser)]
#[command(name = "sfsnid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with [network], [train], [loss] and [data] sections.
    /// Defaults to the toy configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pairs and real-like hazy images.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised training on the synthetic pairs.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dehaze the real-like split and record the results as pseudo labels.
    Pseudo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain on synthetic and pseudo-labelled pairs with the brightness loss.
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Dehaze an image or every image in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split and write `eval_<split>.json`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "synthetic")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and composite.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write `gradcheck.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write log-amplitude and phase images of an image's spectrum.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::toy(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: serde_json::Result<String>) -> Result<()> {
    let text = value.expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(common.config.as_deref(), None)?;
            let seed = common.seed.unwrap_or(cfg.train.seed);
            let m = generate_dataset(&cfg.data, seed, &common.out)?;
            info!(
                "wrote {} pairs and {} real-like images to {}",
                m.synthetic.len(),
                m.real_hazy.len(),
                common.out.join(MANIFEST_FILE).display()
            );
        }
        Command::Train { common, manifest, resume } => {
            let cfg = load_config(common.config.as_deref(), common.seed)?;
            let m = DatasetManifest::load(&manifest)?;
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            let out = train_supervised(&m, &cfg, resume.as_ref(), Some(&common.out))?;
            report_loss(&out.log);
        }
        Command::Pseudo { checkpoint, manifest, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let m = generate_pseudo_labels(&ckpt, &DatasetManifest::load(&manifest)?, &out)?;
            info!("wrote {} pseudo labels", m.real_hazy.len());
        }
        Command::Retrain {
            common,
            checkpoint,
            manifest,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = match common.config {
                Some(_) => load_config(common.config.as_deref(), common.seed)?,
                None => {
                    let mut cfg = ckpt.config.clone();
                    if let Some(s) = common.seed {
                        cfg.train.seed = s;
                    }
                    cfg
                }
            };
            let out = retrain_fused(&ckpt, &DatasetManifest::load(&manifest)?, &cfg, Some(&common.out))?;
            report_loss(&out.log);
        }
        Command::Infer { checkpoint, input, out } => {
            let model = Model::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let inputs = if input.is_dir() { image_files(&input)? } else { vec![input] };
            create_dir(&out)?;
            for path in inputs {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let dst = out.join(format!("{stem}.png"));
                save_image(&infer(&model, &load_image(&path)?)?, &dst)?;
                info!("{} -> {}", path.display(), dst.display());
            }
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let model = Model::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let report = evaluate(&model, &DatasetManifest::load(&manifest)?, split)?;
            create_dir(&out)?;
            let name = match split {
                Split::Synthetic => "eval_synthetic.json",
                Split::Real => "eval_real.json",
            };
            write_json(&out.join(name), serde_json::to_string_pretty(&report))?;
            println!(
                "psnr {} ssim {} brightness {:.4} (input {:.4})",
                report.mean_psnr.map_or("-".into(), |v| format!("{v:.3}")),
                report.mean_ssim.map_or("-".into(), |v| format!("{v:.4}")),
                report.mean_brightness,
                report.mean_input_brightness
            );
        }
        Command::Gradcheck { config, seed, out } => {
            let cfg = load_config(config.as_deref(), None)?;
            let report = run_gradcheck(&cfg, seed)?;
            for c in &report.cases {
                let status = if c.passed { "ok  " } else { "FAIL" };
                println!("{status} {:<28} {:.3e} (threshold {:.0e})", c.name, c.max_rel_error, c.threshold);
                if let Some(e) = &c.error {
                    println!("     {e}");
                }
            }
            let missing = report.missing_ops();
            if !missing.is_empty() {
                println!("ops without a case: {missing:?}");
            }
            println!("{} cases, {} ops covered", report.cases.len(), report.covered_ops().len());
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_json(&dir.join("gradcheck.json"), serde_json::to_string_pretty(&report))?;
            }
            return Ok(report.passed() && missing.is_empty());
        }
        Command::Spectrum { input, out } => {
            let image = load_image(&input)?;
            let (amp, phase) = spectrum_images(&image)?;
            create_dir(&out)?;
            save_image(&amp, &out.join("amplitude.png"))?;
            save_image(&phase, &out.join("phase.png"))?;
        }
    }
    Ok(true)
}

fn report_loss(log: &[sfsnid::pipeline::LossRecord]) {
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!("steps {}..{} loss {:.6} -> {:.6}", first.step, last.step, first.total, last.total);
    }
    info!("checkpoint written as {CHECKPOINT_FILE}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
