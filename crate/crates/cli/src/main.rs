//! `hmimo`: seeded Monte-Carlo sweeps and one-off fits.
//!
//! Exit codes: 0 success, 1 configuration or IO error, 2 some trials failed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use hmimo_core::harness::{self, emit};
use hmimo_core::{
    build_lattice, variance_profile, ApertureConfig, EmSettings, Error, ExperimentConfig, Method,
    NmseMode, OutputFormat, QuadratureSettings, SampleAnchor, SampleSet, Sampling, SelectionRule,
    SweepAxis, ThetaBranch, VmfMixture,
};

#[derive(Debug, Parser)]
#[command(
    name = "hmimo",
    version,
    about = "Holographic-MIMO angular spectrum estimation benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write raw and aggregate tables.
    Sweep(SweepArgs),
    /// Fit a vMF mixture to a sample CSV (`theta,phi,s`).
    Fit(FitArgs),
    /// Integrate a mixture into a per-harmonic variance profile CSV.
    Profile(ProfileArgs),
    /// Print the default experiment configuration.
    Config {
        #[arg(long, default_value = "toml")]
        format: ConfigFormat,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ConfigFormat {
    Toml,
    Json,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    /// JSON or TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    axis: Option<SweepAxis>,
    /// Comma-separated sweep values (dB for snr, counts for nrf).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    nmse_mode: Option<NmseMode>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    theta_branch: Option<ThetaBranch>,
    #[arg(long)]
    anchor: Option<SampleAnchor>,
    #[arg(long)]
    selection: Option<SelectionRule>,
    #[arg(long)]
    sampling: Option<Sampling>,
    #[arg(long)]
    exact_gram: bool,
    #[arg(long)]
    denoise_floor: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Record per-method wall time (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, clap::Args)]
struct FitArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value_t = EmSettings::default().max_scatterers)]
    max_scatterers: usize,
    #[arg(long, default_value_t = EmSettings::default().restarts)]
    restarts: usize,
    #[arg(long, default_value_t = EmSettings::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = EmSettings::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = EmSettings::default().prune_weight)]
    prune_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ProfileArgs {
    /// Mixture JSON as written by `fit` (the `mixture` field) or `VmfMixture`.
    #[arg(long)]
    mixture: PathBuf,
    /// Square aperture side in metres.
    #[arg(long, default_value_t = 0.1)]
    side: f64,
    #[arg(long, default_value_t = 30e9)]
    f_c: f64,
    #[arg(long, default_value_t = QuadratureSettings::default().rel_tol)]
    rel_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Partial(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn apply(args: &SweepArgs, mut cfg: ExperimentConfig) -> ExperimentConfig {
    if let Some(axis) = args.axis {
        if axis != cfg.sweep.axis && args.values.is_none() {
            cfg.sweep.values = match axis {
                SweepAxis::Snr => vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
                SweepAxis::Nrf => vec![100.0, 200.0, 300.0, 400.0],
            };
        }
        cfg.sweep.axis = axis;
    }
    if let Some(v) = &args.values {
        cfg.sweep.values = v.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(d) = &args.out {
        cfg.output.dir = d.clone();
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    if let Some(m) = args.nmse_mode {
        cfg.nmse_mode = m;
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.clone();
    }
    if let Some(b) = args.theta_branch {
        cfg.theta_branch = b;
    }
    if let Some(a) = args.anchor {
        cfg.anchor = a;
    }
    if let Some(r) = args.selection {
        cfg.selection = r;
    }
    if let Some(s) = args.sampling {
        cfg.sampling = s;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.exact_gram |= args.exact_gram;
    cfg.denoise_floor |= args.denoise_floor;
    cfg.record_timing |= args.timing;
    cfg
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = apply(&args, cfg);
    let exp = harness::Experiment::new(cfg)?;
    let result = exp.sweep();
    let out = &exp.config().output;
    let files = emit(&result, &out.dir, out.format)?;
    if !args.quiet {
        let mut stdout = std::io::stdout().lock();
        let _ = writeln!(
            stdout,
            "{:>6} {:>10} {:>10} {:>10} {:>7}",
            exp.config().sweep.axis,
            "method",
            "median_dB",
            "mean_dB",
            "failed"
        );
        let db = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        for a in &result.aggregates {
            let _ = writeln!(
                stdout,
                "{:>6} {:>10} {:>10} {:>10} {:>7}",
                a.sweep_value,
                a.method,
                db(a.median_nmse_db),
                db(a.mean_nmse_db),
                a.trials_failed
            );
        }
        eprintln!(
            "wrote {} and {}",
            files.raw.display(),
            files.aggregate.display()
        );
    }
    match result.failures() {
        0 => Ok(()),
        n => Err(Failure::Partial(n)),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    let samples = SampleSet::load_csv(&args.samples)?;
    let settings = EmSettings {
        max_scatterers: args.max_scatterers,
        tol: args.tol,
        max_iter: args.max_iter,
        restarts: args.restarts,
        prune_weight: args.prune_weight,
        seed: args.seed,
    };
    settings.validate()?;
    let report = hmimo_core::wd_em::run(&samples, &settings)?;
    write_out(args.out.as_deref(), &report.to_json()?)
}

fn read_mixture(path: &Path) -> Result<VmfMixture, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let inner = value.get("mixture").cloned().unwrap_or(value);
    Ok(VmfMixture::from_json(&inner.to_string())?)
}

fn profile(args: ProfileArgs) -> Result<(), Failure> {
    let mixture = read_mixture(&args.mixture)?;
    let lattice = Arc::new(build_lattice(ApertureConfig::square(args.side, args.f_c)?)?);
    let quad = QuadratureSettings {
        rel_tol: args.rel_tol,
        ..QuadratureSettings::default()
    };
    let prof = variance_profile(&mixture, &lattice, &quad)?;
    match &args.out {
        Some(p) => prof.save_csv(p)?,
        None => prof.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn print_config(format: ConfigFormat) -> Result<(), Failure> {
    let cfg = ExperimentConfig::default();
    let text = match format {
        ConfigFormat::Toml => toml_text(&cfg)?,
        ConfigFormat::Json => serde_json::to_string_pretty(&cfg).map_err(Error::from)?,
    };
    write_out(None, &text)
}

fn toml_text(cfg: &ExperimentConfig) -> Result<String, Failure> {
    toml::to_string_pretty(cfg).map_err(|e| Failure::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::Profile(a) => profile(a),
        Command::Config { format } => print_config(format),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(n)) => {
            eprintln!("{n} trial rows failed");
            ExitCode::from(2)
        }
    }
}
