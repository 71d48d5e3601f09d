use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use clif_vqa::config::RunConfig;
use clif_vqa::dataset_io::load_manifest;
use clif_vqa::synthetic::{write_synthetic_dataset, SyntheticSpec};
use clif_vqa_cli::*;

#[derive(Parser)]
#[command(name = "clif-vqa", version, about = "No-reference video quality assessment")]
struct Cli {
    /// TOML config file; every key has a default.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write semantic and fragment caches for every manifest entry.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Train on a manifest and write a checkpoint plus training log.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a manifest with a checkpoint and report correlations.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the predicted MOS of one video.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        video: PathBuf,
    },
    /// Distortion response curves or prompt-bank comparison.
    Probe {
        #[command(subcommand)]
        what: ProbeCommand,
    },
    /// Train/test over seeded random splits.
    Splits {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the procedural brightness dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        clips: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Sweep `probe.kind` over `probe.levels` and record `probe.description`.
    Curve {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        videos: Vec<PathBuf>,
    },
    /// Compare `probe.banks` as semantic-only regressor inputs.
    Compare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    eprintln!("# effective config\n{}", cfg.to_toml());
    let ctx = Context::new(cfg)?;
    match cli.command {
        Command::Extract { manifest, cache } => {
            let m = load_manifest(&manifest)?;
            let s = cmd_extract(&ctx, &m, &cache)?;
            eprintln!("extracted {}, up to date {}, failed {}", s.computed, s.skipped, s.failed.len());
            if let Some((id, e)) = s.failed.into_iter().next() {
                return Err(anyhow::Error::new(e).context(format!("extraction failed for `{id}`")));
            }
        }
        Command::Train { manifest, cache, out } => {
            let m = load_manifest(&manifest)?;
            let t = cmd_train(&ctx, &m, &cache, &out)?;
            eprintln!("checkpoint {} (digest {})", t.checkpoint_dir.display(), t.checkpoint.digest);
        }
        Command::Eval { manifest, cache, checkpoint, out } => {
            let m = load_manifest(&manifest)?;
            let r = cmd_eval(&ctx, &m, &cache, &checkpoint, &out)?.report;
            println!("n={} srocc={:.4} plcc={:.4} krocc={:.4}", r.n, r.srocc, r.plcc, r.krocc);
        }
        Command::Predict { checkpoint, video } => {
            println!("{}", cmd_predict(&ctx, &checkpoint, &video)?);
        }
        Command::Probe { what: ProbeCommand::Curve { out, videos } } => {
            cmd_probe_curves(&ctx, &videos, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Probe { what: ProbeCommand::Compare { manifest, out } } => {
            let m = load_manifest(&manifest)?;
            for row in cmd_probe_compare(&ctx, &m, &out)? {
                println!("{} (r={}): srocc={:.4} krocc={:.4} plcc={:.4}", row.bank, row.descriptions, row.report.mean.srocc, row.report.mean.krocc, row.report.mean.plcc);
            }
        }
        Command::Splits { manifest, cache, out } => {
            let m = load_manifest(&manifest)?;
            let r = cmd_splits(&ctx, &m, &cache, &out)?;
            println!("mean srocc={:.4} plcc={:.4} krocc={:.4}", r.mean.srocc, r.mean.plcc, r.mean.krocc);
            println!("median srocc={:.4} plcc={:.4} krocc={:.4}", r.median.srocc, r.median.plcc, r.median.krocc);
        }
        Command::Synth { out, clips, frames } => {
            let spec = SyntheticSpec { clips, frames, seed: ctx.cfg.seed, ..Default::default() };
            let path = write_synthetic_dataset(&out, &spec).context("writing synthetic dataset")?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<clif_vqa::Error>() {
        Some(e) if !e.is_validation() => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
