//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{cmd_run, cmd_sweep, sweep_csv, write_run, SweepKind};
use crate::gen::cmd_gen;
use crate::plot::cmd_plot;
use crate::vtid_report::{cmd_vtid, write_vtid, ExtractorKind, ExtractorSpec};

#[derive(Debug, Parser)]
#[command(name = "csclab", version, about = "Attention-energy guided sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's `threads`.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::read(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Paired runs with and without the correction; writes trajectories.csv and summary.json.
    Run(ConfigArgs),
    /// One row per grid point of an ablation; writes sweep_<kind>.csv.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// VTID of every manifest sample; writes vtid.json and vtid.csv.
    Vtid {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pixel")]
        extractor: ExtractorKind,
        /// Seed of the random feature extractor.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        scales: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
    },
    /// Generates a synthetic try-on dataset under <out>/<split>/.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long, conflicts_with = "unpaired")]
        paired: bool,
        #[arg(long)]
        unpaired: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders one SVG line chart per trajectory metric.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn execute(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let report = cmd_run(&cfg)?;
            write_run(&report, &cfg.out)?;
            let d = report.summary.delta;
            Ok(format!(
                "wrote {}: in-mask fraction delta {:.6}, e_attract delta {:.6}",
                cfg.out.display(),
                d.final_in_mask_fraction,
                d.final_e_attract
            ))
        }
        Command::Sweep { kind, config } => {
            let cfg = config.load()?;
            let rows = cmd_sweep(kind, &cfg)?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::output(&cfg.out, e))?;
            let path = cfg.out.join(format!("sweep_{}.csv", kind.name()));
            std::fs::write(&path, sweep_csv(kind, &rows)?).map_err(|e| CliError::output(&path, e))?;
            Ok(format!("wrote {} ({} rows)", path.display(), rows.len()))
        }
        Command::Vtid {
            manifest,
            out,
            extractor,
            seed,
            scales,
            channels,
        } => {
            let spec = ExtractorSpec {
                kind: extractor,
                seed,
                scales,
                channels,
            };
            let summary = cmd_vtid(&manifest, &spec)?;
            write_vtid(&summary, &out)?;
            Ok(format!(
                "wrote {}: mean vtid {:.6} over {} samples",
                out.display(),
                summary.mean.vtid,
                summary.samples.len()
            ))
        }
        Command::Gen {
            seed,
            n,
            paired: _,
            unpaired,
            out,
        } => {
            let manifest = cmd_gen(seed, n, !unpaired, &out)?;
            Ok(format!("wrote {} samples under {}", manifest.len(), out.display()))
        }
        Command::Plot { input, out } => {
            let paths = cmd_plot(&input, &out)?;
            Ok(format!("wrote {} charts to {}", paths.len(), out.display()))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
