//! `qpgap`: spectra, gap labels, decay and homogeneity campaigns, gap-edge
//! reduction and dual Bloch waves for quasi-periodic Schrödinger operators.

mod cache;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cache::{Cache, Lookup};
use commands::Context;
use config::{keys_help, RawConfig, Settings};
use output::{write_all, Meta};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage { stage: String, message: String },
    Cache(String),
    Io(String),
}

impl CliError {
    pub fn stage(stage: &str, e: qpgap::Error) -> CliError {
        match e {
            qpgap::Error::Stage { stage, source } => CliError::Stage { stage: stage.into(), message: source.to_string() },
            e => CliError::Stage { stage: stage.into(), message: e.to_string() },
        }
    }

    /// Keeps the stage recorded inside the error, else falls back to `default`.
    pub fn from_core(default: &'static str) -> impl Fn(qpgap::Error) -> CliError {
        move |e| CliError::stage(default, e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::Cache(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Stage { stage, message } => write!(f, "stage `{stage}` failed: {message}"),
            CliError::Cache(m) => write!(f, "cache corruption: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "qpgap", version, about = "Spectral gaps of quasi-periodic Schrödinger operators", after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bands of a rational approximant, or a sweep over all p/q.
    Spectrum(Opts),
    /// Labeled gaps with the rotation-number check.
    Gaps(Opts),
    /// Gap widths against |m| across convergents, with the exponential fit.
    Decay(Opts),
    /// Minimum local band-measure ratio per window size.
    Homogeneity(Opts),
    /// Full gap-edge dossier: Bloch wave, reduction, μ, ε_m, rotation shift.
    Reduce(Opts),
    /// Bloch solution of the dual operator at an energy.
    Dual(Opts),
    /// β(α) estimate from the continued fraction.
    Beta(Opts),
    /// Inspect or clear the result cache.
    Cache {
        action: CacheAction,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheAction {
    List,
    Verify,
    Clear,
}

#[derive(Args, Default)]
struct Opts {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    #[arg(long, alias = "alpha")]
    freq: Option<String>,
    #[arg(long)]
    potential: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    q_max: Option<String>,
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    m: Option<String>,
    #[arg(long)]
    m_max: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    sigmas: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    energy: Option<String>,
    #[arg(long)]
    edge: Option<String>,
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    kmax: Option<String>,
    #[arg(long)]
    theta_factor: Option<String>,
    /// double | extended
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    e_samples: Option<String>,
    #[arg(long)]
    rho_iterations: Option<String>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    emit_plot_data: bool,
    #[arg(long)]
    cache_dir: Option<String>,
    #[arg(long)]
    no_cache: bool,
}

impl Opts {
    fn resolve(&self) -> Result<Settings, CliError> {
        let mut raw = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                RawConfig::parse(&text)?
            }
            None => RawConfig::default(),
        };
        let flags: [(&str, &Option<String>); 22] = [
            ("lambda", &self.lambda),
            ("freq", &self.freq),
            ("potential", &self.potential),
            ("depth", &self.depth),
            ("q", &self.q),
            ("q_max", &self.q_max),
            ("sweep", &self.sweep),
            ("m", &self.m),
            ("m_max", &self.m_max),
            ("levels", &self.levels),
            ("sigmas", &self.sigmas),
            ("energy", &self.energy),
            ("edge", &self.edge),
            ("truncation", &self.truncation),
            ("kmax", &self.kmax),
            ("theta_factor", &self.theta_factor),
            ("precision", &self.precision),
            ("e_samples", &self.e_samples),
            ("rho_iterations", &self.rho_iterations),
            ("jobs", &self.jobs),
            ("out", &self.out),
            ("cache_dir", &self.cache_dir),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                raw.set(k, v.clone());
            }
        }
        if self.emit_plot_data {
            raw.set("emit_plot_data", "true");
        }
        if self.no_cache {
            raw.set("no_cache", "true");
        }
        Settings::from_raw(&raw)
    }
}

type Runner = fn(&Context) -> Result<output::Outputs, CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, opts, runner): (&str, &Opts, Runner) = match &cli.command {
        Command::Spectrum(o) => ("spectrum", o, commands::spectrum),
        Command::Gaps(o) => ("gaps", o, commands::gaps),
        Command::Decay(o) => ("decay", o, commands::decay),
        Command::Homogeneity(o) => ("homogeneity", o, commands::homogeneity),
        Command::Reduce(o) => ("reduce", o, commands::reduce),
        Command::Dual(o) => ("dual", o, commands::dual),
        Command::Beta(o) => ("beta", o, commands::beta),
        Command::Cache { action, opts } => return cache_command(*action, opts),
    };
    let settings = opts.resolve()?;
    if let Some(j) = settings.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
    }
    let hash = settings.hash(name);
    let meta = Meta { command: name.into(), hash: hash.clone(), config: settings.canonical() };
    let cache = Cache::new(&settings.cache_dir);
    let key = format!("{name}-{hash}-v{}", output::VERSION);
    let mut cached = None;
    if !settings.no_cache {
        match cache.load(&key) {
            Lookup::Hit(files) => cached = Some(files),
            Lookup::Corrupt(why) => eprintln!("warning: cache entry {key} corrupt ({why}); recomputing"),
            Lookup::Miss => {}
        }
    }
    let from_cache = cached.is_some();
    let files = match cached {
        Some(f) => f,
        None => {
            let ctx = Context { settings: &settings, meta, cache: (!settings.no_cache).then_some(&cache) };
            let files = runner(&ctx)?.files;
            if !settings.no_cache {
                if let Err(e) = cache.store(&key, &files) {
                    eprintln!("warning: cache write failed: {e}");
                }
            }
            files
        }
    };
    let written = write_all(&files, &settings.out, settings.emit_plot_data).map_err(|e| CliError::Io(e.to_string()))?;
    println!(
        "{name}: config {hash}{}; wrote {} to {}",
        if from_cache { " (cached)" } else { "" },
        written.join(", "),
        settings.out.display()
    );
    Ok(())
}

fn cache_command(action: CacheAction, opts: &Opts) -> Result<(), CliError> {
    let settings = opts.resolve()?;
    let cache = Cache::new(&settings.cache_dir);
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match action {
        CacheAction::List => {
            for k in cache.keys().map_err(io)? {
                println!("{k}");
            }
        }
        CacheAction::Verify => {
            let bad = cache.verify().map_err(io)?;
            if !bad.is_empty() {
                let list: Vec<String> = bad.iter().map(|(k, why)| format!("{k} ({why})")).collect();
                return Err(CliError::Cache(list.join("; ")));
            }
            println!("cache ok: {} entries in {}", cache.keys().map_err(io)?.len(), cache.dir().display());
        }
        CacheAction::Clear => println!("removed {} entries", cache.clear().map_err(io)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpgap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
