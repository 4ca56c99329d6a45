//! `inod` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error (including
//! malformed input files), 3 runtime data error (missing images, I/O).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "inod", version, about = "Noise-injection pretext pipeline: masks, pseudo labels, pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run config.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run config with optional [mask], [encoder], [train], [augment]
    /// and [paths] sections; omitted keys take their defaults.
    ///
    /// Mask defaults: crop = [224, 224], granularity = 4 (one of 4, 8, 16, 32),
    /// target_fraction = 0.2, tolerance = 0.02, seed = 0, rescale = "interval".
    /// Train defaults: epochs = 100, batch_size = 8, base_lr = 0.02,
    /// momentum = 0.9, weight_decay = 1e-4, lr_milestones = [0.6, 0.8],
    /// lr_decay = 0.1, focal_alpha = 0.25, focal_gamma = 2.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set train.epochs=10`. Repeatable;
    /// applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate noise masks (PGM) with JSON sidecars and a fraction report.
    MaskGen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of masks; mask i uses seed `mask.seed + i`.
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write the per-level injection grids of each mask.
        #[arg(long)]
        split_levels: bool,
    },
    /// Derive detection, semantic or instance labels from a mask PGM.
    LabelsGen {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// Output file. For `instance`, boxes go next to it with a `.json` extension.
        #[arg(long)]
        out: PathBuf,
        /// Pixels per mask cell; read from a `_g<N>_` file-name tag when omitted, else 4.
        #[arg(long)]
        granularity: Option<u32>,
        /// Semantic output size `HxW`; defaults to the mask dims.
        #[arg(long, value_parser = parse_dims)]
        size: Option<(usize, usize)>,
        #[arg(long, value_enum, default_value_t = InstanceRuleArg::Component)]
        instance_rule: InstanceRuleArg,
    },
    /// Train encoder, neck and discriminator head on the pretext task.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides `paths.out_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on held-out pretext episodes.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `train.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-channel mean and std of every image in a directory, as JSON.
    Stats {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inject one noise image into one source image and summarize the composite features.
    InjectDemo {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Use trained weights instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a procedural texture dataset as PNG files.
    Synth {
        #[arg(long, value_enum)]
        kind: TextureArg,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a checkpoint whose discriminator predicts the true mask.
    OracleCheckpoint {
        #[arg(long)]
        out: PathBuf,
        /// Logit magnitude emitted on every cell.
        #[arg(long, default_value_t = 10.0)]
        logit: f64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Detect,
    Semantic,
    Instance,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceRuleArg {
    /// Instance id is the 4-connected component id.
    Component,
    /// Cells inside an earlier component's box join that instance.
    BoxInterior,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureArg {
    Stripes,
    Checkerboard,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("`{s}` is not HxW"))?;
    let h: usize = h.parse().map_err(|e| format!("height: {e}"))?;
    let w: usize = w.parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("dims must be positive".into());
    }
    Ok((h, w))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MaskGen {
            config,
            count,
            out_dir,
            split_levels,
        } => commands::mask_gen(&config, count, &out_dir, split_levels),
        Command::LabelsGen {
            mask,
            task,
            out,
            granularity,
            size,
            instance_rule,
        } => commands::labels_gen(&mask, task, &out, granularity, size, instance_rule),
        Command::Pretrain { config, out_dir } => commands::pretrain(&config, out_dir),
        Command::Eval {
            config,
            checkpoint,
            episodes,
            out,
        } => commands::eval(&config, &checkpoint, episodes, out.as_deref()),
        Command::Stats { dir, out } => commands::stats(&dir, out.as_deref()),
        Command::InjectDemo {
            config,
            source,
            noise,
            out_dir,
            checkpoint,
        } => commands::inject_demo(&config, &source, &noise, &out_dir, checkpoint.as_deref()),
        Command::Synth {
            kind,
            count,
            size,
            seed,
            out_dir,
        } => commands::synth(kind, count, size, seed, &out_dir),
        Command::OracleCheckpoint { out, logit } => commands::oracle_checkpoint(&out, logit),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<inod::Error>() {
        Some(inod::Error::Data(_) | inod::Error::Io { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
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
