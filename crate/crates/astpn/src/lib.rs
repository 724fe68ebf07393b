//! File formats, dataset IO and the `astpn` command line on top of
//! `astpn-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ppm;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};

#[derive(Debug, Parser)]
#[command(name = "astpn", version, about = "Attentive spatial-temporal pooling for video re-identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override fields of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub feature_dim: Option<usize>,
    /// `half` or `overfit`.
    #[arg(long, global = true)]
    pub split: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per trial.
    Train {
        #[command(flatten)]
        o: Overrides,
    },
    /// Evaluate trained checkpoints and write CMC reports.
    Eval {
        #[command(flatten)]
        o: Overrides,
        /// Use this checkpoint for every trial.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// One frame per probe and gallery sequence.
        #[arg(long)]
        single_shot: bool,
        /// Evaluate on a fraction of another dataset without retraining.
        #[arg(long)]
        cross_dataset: Option<PathBuf>,
    },
    /// Write one feature vector per sequence.
    Extract {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        single_shot: bool,
    },
    /// Compare analytic gradients with finite differences on a toy model.
    Gradcheck {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        o: Overrides,
        /// Destination root (defaults to the configured dataset root).
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        ids: Option<usize>,
        #[arg(long)]
        cams: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Only this many frames per sequence show the identity.
        #[arg(long)]
        signal_frames: Option<usize>,
    },
}

impl Overrides {
    pub fn resolve(&self) -> AppResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone().into();
                }
            )*};
        }
        set!(out, seed, k, margin, variant, trials, epochs, lr, feature_dim, split);
        if let Some(d) = &self.dataset {
            c.dataset = Some(d.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn dispatch(cmd: Command) -> AppResult<()> {
    match cmd {
        Command::Train { o } => commands::cmd_train(&o.resolve()?).map(drop),
        Command::Eval {
            o,
            checkpoint,
            single_shot,
            cross_dataset,
        } => {
            let mut c = o.resolve()?;
            c.single_shot |= single_shot;
            if cross_dataset.is_some() {
                c.cross_dataset = cross_dataset;
            }
            commands::cmd_eval(&c, checkpoint.as_deref()).map(drop)
        }
        Command::Extract {
            o,
            checkpoint,
            single_shot,
        } => {
            let mut c = o.resolve()?;
            c.single_shot |= single_shot;
            commands::cmd_extract(&c, checkpoint.as_deref()).map(drop)
        }
        Command::Gradcheck { o, corrupt_backward } => commands::cmd_gradcheck(&o.resolve()?, corrupt_backward).map(drop),
        Command::Synth {
            o,
            root,
            ids,
            cams,
            frames,
            height,
            width,
            signal_frames,
        } => {
            let mut c = o.resolve()?;
            let s = &mut c.synth;
            s.ids = ids.unwrap_or(s.ids);
            s.cams = cams.unwrap_or(s.cams);
            s.frames = frames.unwrap_or(s.frames);
            s.height = height.unwrap_or(s.height);
            s.width = width.unwrap_or(s.width);
            s.signal_frames = signal_frames.or(s.signal_frames);
            let root = root
                .or_else(|| c.dataset.clone())
                .ok_or_else(|| AppError::Usage("synth needs --root or a dataset root".into()))?;
            commands::cmd_synth(&c, &root).map(drop)
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
