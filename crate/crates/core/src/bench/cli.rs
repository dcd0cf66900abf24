//! `splitmix` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use super::config::ExperimentConfig;
use super::output::write_bundle;
use super::report::render_report;
use super::run::{prepare, run_experiment};
use crate::error::{Error, Result};
use crate::fedsim::eval::{evaluate_widths, Split, LocalStats};
use crate::nn::{BnRoute, Width};
use crate::robustness::evaluate_ra_sa;
use crate::splitmix::BaseModelSet;
use crate::data::LabeledDataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "splitmix", version, about = "Split-Mix federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured method and write the result files.
    Train {
        config: PathBuf,
        /// `--key=value` overrides, dotted keys into the config.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a trained run at a chosen width (and mixing weight).
    Customize {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        width: f64,
        #[arg(long)]
        lambda: Option<f64>,
        /// Also write the selected bases to `<run>/customized_x<width>/`.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Print the comparison table of a results directory.
    Report { dir: PathBuf },
    /// Train once per value of one config key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn train(config: &Path, overrides: &[String]) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    let bundle = run_experiment(&cfg)?;
    write_bundle(&bundle, &cfg.output_dir)?;
    let text = render_report(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("report.txt"), &text)?;
    println!("{text}");
    Ok(cfg.output_dir)
}

/// Evaluate the checkpoint in `run` at `width`. Returns the printed line.
pub fn customize(run: &Path, width: f64, lambda: Option<f64>, save: bool) -> Result<String> {
    let text = fs::read_to_string(run.join("config_resolved.json"))
        .map_err(|e| Error::Config(format!("{}: {e}", run.join("config_resolved.json").display())))?;
    let cfg = ExperimentConfig::parse(&text, false, &[])?;
    let set = BaseModelSet::load(&run.join("checkpoint"))?;
    let w = Width::from_ratio(width, set.m())?;
    set.members_for(w)?;
    let prep = prepare(&cfg)?;
    let route = match lambda {
        Some(l) if set.arch.dual_bn => BnRoute::Mix(l).validate()?,
        Some(_) => return Err(Error::Config("--lambda needs a run trained with robustness enabled".into())),
        None => BnRoute::Clean,
    };
    let model = set.customize(w)?;
    let mut line = format!("width {} : {} bases, {} params, {} MACs", w, model.members().len(), model.params(), model.macs()?);
    match lambda {
        Some(l) => {
            let users: Vec<&LabeledDataset> = prep.clients.iter().filter_map(|c| c.test.as_ref()).collect();
            let (sa, ra) = evaluate_ra_sa(&model, &users, &cfg.robustness.attack(), l, cfg.schedule.eval_batch, cfg.seed)?;
            line.push_str(&format!(", lambda {l}: SA {sa:.4}, RA {ra:.4}"));
        }
        None => {
            let evals = evaluate_widths(&set, &prep.clients, Split::Test, cfg.schedule.eval_batch, route, &LocalStats::new())?;
            let acc = evals.iter().find(|e| e.width == w).map(|e| e.accuracy()).unwrap_or(f64::NAN);
            line.push_str(&format!(", test acc {acc:.4}"));
        }
    }
    if save {
        let k = model.members().len();
        let sub = BaseModelSet {
            arch: set.arch.clone(),
            bases: set.bases[..k].to_vec(),
            base_seeds: set.base_seeds[..k].to_vec(),
            ids: set.ids[..k].to_vec(),
            val_acc: set.val_acc.as_ref().map(|v| v[..k].to_vec()),
        };
        let dir = run.join(format!("customized_x{width}"));
        sub.save(&dir)?;
        line.push_str(&format!(", saved to {}", dir.display()));
    }
    Ok(line)
}

fn sweep(config: &Path, key: &str, values: &[String], overrides: &[String]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base = ExperimentConfig::load(config, overrides)?;
    for v in values {
        let mut ov = overrides.to_vec();
        ov.push(format!("{key}={v}"));
        let dir = base.output_dir.join(format!("{key}={v}"));
        ov.push(format!("output_dir={}", dir.display()));
        info!("sweep {key}={v}");
        let cfg = ExperimentConfig::load(config, &ov)?;
        let bundle = run_experiment(&cfg)?;
        write_bundle(&bundle, &cfg.output_dir)?;
        println!("== {key}={v}\n{}", render_report(&cfg.output_dir)?);
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Run the CLI on `args` (including the program name); returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let res = match cli.command {
        Command::Train { config, overrides } => train(&config, &overrides).map(|_| ()),
        Command::Customize { run, width, lambda, checkpoint } => customize(&run, width, lambda, checkpoint).map(|l| println!("{l}")),
        Command::Report { dir } => render_report(&dir).map(|t| print!("{t}")),
        Command::Sweep { config, key, values, overrides } => sweep(&config, &key, &values, &overrides),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
