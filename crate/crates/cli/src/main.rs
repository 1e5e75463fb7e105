//! `qnoddi`: scheme generation, phantom synthesis, training, evaluation and
//! SH fitting as reproducible file-to-file pipelines.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qnoddi::estimator::{train, LossMode, TrainingLog};
use qnoddi::evaluation::{rows_to_csv, run_ablation, run_protocol, Protocol};
use qnoddi::io::{fit_sh_maps, read_dataset, read_model, write_atomic, write_dataset, write_model, write_sh_maps};
use qnoddi::noddi::{generate_phantom, PhantomDataset};
use qnoddi::scheme::{generate_uniform_scheme, locate_selection, read_scheme, write_scheme, UNIT_TOL};
use qnoddi::shbasis::{DEFAULT_LAMBDA, DEFAULT_ORDER};

use config::RunConfig;

const DEFAULT_DIMS: (usize, usize) = (64, 64);
const DEFAULT_NOISE: f64 = 1.0 / 30.0;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<qnoddi::Error> for CliError {
    fn from(e: qnoddi::Error) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "qnoddi", version, about = "Sampling-robust NODDI estimation from multi-shell diffusion MRI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a multi-shell scheme with electrostatically repelled directions.
    GenScheme {
        /// Directions per shell, e.g. 30,30.
        #[arg(long, value_delimiter = ',', required = true)]
        n_per_shell: Vec<usize>,
        /// b-values in s/mm², e.g. 1000,2000.
        #[arg(long, value_delimiter = ',', required = true)]
        b_values: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a NODDI phantom dataset on a scheme.
    Synth {
        #[arg(long)]
        scheme: Option<PathBuf>,
        /// Grid size as HEIGHTxWIDTH (default 64x64).
        #[arg(long, value_parser = parse_dims)]
        dims: Option<(usize, usize)>,
        /// Rician noise scale on the b0-normalized signal (default 1/30).
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Independent slices stacked vertically, seeded seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        slices: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON run configuration supplying any of the above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train an estimator on a phantom dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_model: Option<PathBuf>,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// One of lr, lu, lr+lu, consis.
        #[arg(long)]
        loss_mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a model under a test protocol and write a CSV report.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// One of ss, rs, sweep, flexible, ablation.
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// JSON run configuration (required for the ablation).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit per-voxel SH coefficients of every shell of a dataset.
    FitSh {
        #[arg(long)]
        dataset: PathBuf,
        /// Scheme file whose directions select a subset of the dataset's scheme.
        #[arg(long)]
        scheme_subset: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_ORDER)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(h)?, p(w)?))
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::usage(format!("missing {what} path (flag or config)")))
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::data(format!("{}: no such file", path.display())));
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::data(format!(
            "{}: output directory does not exist",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => {
            check_input(p)?;
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn log_csv(log: &TrainingLog) -> String {
    let mut out = String::from("epoch,loss,l_r,l_u,l_ru\n");
    for e in &log.epochs {
        let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.loss, e.terms.l_r, e.terms.l_u, e.terms.l_ru);
    }
    out
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenScheme { n_per_shell, b_values, seed, out } => {
            check_output(&out)?;
            let scheme = generate_uniform_scheme(&n_per_shell, &b_values, seed)?;
            write_scheme(&out, &scheme)?;
        }
        Command::Synth { scheme, dims, noise, seed, slices, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let scheme = require(scheme.or(cfg.scheme.clone()), "scheme")?;
            let out = require(out.or(cfg.dataset.clone()), "output dataset")?;
            let (h, w) = dims.or(cfg.dims.map(|[h, w]| (h, w))).unwrap_or(DEFAULT_DIMS);
            let noise = noise.or(cfg.noise).unwrap_or(DEFAULT_NOISE);
            let seed = seed.or(cfg.seed).unwrap_or(0);
            if slices == 0 {
                return Err(CliError::usage("--slices must be at least 1"));
            }
            check_input(&scheme)?;
            check_output(&out)?;
            let scheme = read_scheme(&scheme)?;
            let parts = (0..slices as u64)
                .map(|i| generate_phantom(h, w, &scheme, noise, seed.wrapping_add(i)))
                .collect::<qnoddi::Result<Vec<_>>>()?;
            let data = PhantomDataset::vstack(&parts)?;
            write_dataset(&out, &data)?;
        }
        Command::Train { dataset, config, out_model, log, loss_mode, seed, epochs } => {
            let cfg = load_config(config.as_deref())?;
            let dataset = require(dataset.or(cfg.dataset.clone()), "dataset")?;
            let out_model = require(out_model.or(cfg.model.clone()), "output model")?;
            let log = log.or(cfg.log.clone());
            check_input(&dataset)?;
            check_output(&out_model)?;
            if let Some(l) = &log {
                check_output(l)?;
            }
            let loss_mode = loss_mode.map(|m| m.parse::<LossMode>()).transpose()?;
            let data = read_dataset(&dataset)?;
            let mut tc = cfg.train_config(&data.scheme().shell_sizes())?;
            if let Some(m) = loss_mode {
                tc.loss_mode = m;
            }
            tc.seed = seed.unwrap_or(tc.seed);
            tc.epochs = epochs.unwrap_or(tc.epochs);
            let (model, training_log) = train(&data, &tc)?;
            write_model(&out_model, &model)?;
            if let Some(l) = &log {
                write_atomic(l, log_csv(&training_log).as_bytes())?;
            }
        }
        Command::Evaluate { model, dataset, protocol, seeds, out_csv, config } => {
            let cfg = load_config(config.as_deref())?;
            let protocol: Protocol = protocol
                .or(cfg.protocol.clone())
                .ok_or_else(|| CliError::usage("missing protocol"))?
                .parse()?;
            let seeds = seeds.or(cfg.seeds.clone()).unwrap_or_else(|| vec![0]);
            let dataset = require(dataset.or(cfg.dataset.clone()), "dataset")?;
            let out_csv = require(out_csv.or(cfg.report.clone()), "output CSV")?;
            check_input(&dataset)?;
            check_output(&out_csv)?;
            let rows = if protocol == Protocol::Ablation {
                if config.is_none() {
                    return Err(CliError::usage("the ablation protocol needs --config"));
                }
                let data = read_dataset(&dataset)?;
                // training phantom from the config, else the test phantom itself
                let train_data = match &cfg.train_dataset {
                    Some(p) => {
                        check_input(p)?;
                        read_dataset(p)?
                    }
                    None => data.clone(),
                };
                let base = cfg.train_config(&train_data.scheme().shell_sizes())?;
                let rs_seeds = cfg.rs_seeds.clone().unwrap_or_else(|| seeds.clone());
                run_ablation(&base, &train_data, &data, &seeds, &rs_seeds)?
            } else {
                let model = require(model.or(cfg.model.clone()), "model")?;
                check_input(&model)?;
                let model = read_model(&model)?;
                let data = read_dataset(&dataset)?;
                if !model.accepts(data.scheme()) {
                    return Err(qnoddi::Error::MissingShell(model.b_values()[0]).into());
                }
                run_protocol(&cfg.experiment(protocol, seeds), Some(&model), &data)?
            };
            write_atomic(&out_csv, rows_to_csv(&rows).as_bytes())?;
        }
        Command::FitSh { dataset, scheme_subset, lambda, order, out } => {
            check_input(&dataset)?;
            if let Some(s) = &scheme_subset {
                check_input(s)?;
            }
            check_output(&out)?;
            let mut data = read_dataset(&dataset)?;
            if let Some(s) = &scheme_subset {
                let subset = read_scheme(s)?;
                let sel = locate_selection(data.scheme(), &subset, UNIT_TOL)?;
                data = data.restrict(&sel)?;
            }
            write_sh_maps(&out, &fit_sh_maps(&data, order, lambda)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
