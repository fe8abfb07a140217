use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod selftest;

use commands::Ctx;

#[derive(Parser)]
#[command(name = "augflow", version, about = "Coherent families and escape rates from the augmented generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` or `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = rayon default); overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Replace every seed in the config.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the augmented generator and write it as Matrix Market.
    Assemble(Common),
    /// Compute leading eigenpairs.
    Eigs(Common),
    /// Write coherent-family slices and sign sets.
    Extract(Common),
    /// Estimate escape rates by SDE simulation.
    Escape(Common),
    /// Compute boundary or box-set fluxes.
    Flux(Common),
    /// Compare the transfer-operator spectrum with the generator.
    UlamCompare(Common),
    /// Run built-in closed-form checks.
    Selftest,
}

pub enum Failure {
    Config(String),
    Lib(augflow::Error),
    NoConvergence(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        use augflow::Error as E;
        match self {
            Failure::Config(_) => 2,
            Failure::NoConvergence(_) => 4,
            Failure::Io(_) => 5,
            Failure::Lib(e) => match e {
                E::Config(_) | E::Domain { .. } | E::UnsupportedScheme(_) => 2,
                E::NoConvergence(_) => 4,
                E::Io { .. } | E::Parse { .. } => 5,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::NoConvergence(m) => write!(f, "not converged: {m}"),
            Failure::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

fn context(c: Common) -> Result<Ctx, Failure> {
    let loaded = config::load(&c.config).map_err(|e| Failure::Config(e.to_string()))?;
    let mut cfg = loaded.config;
    if let Some(seed) = c.seed_override {
        cfg.apply_seed_override(seed);
    }
    let threads = c.threads.unwrap_or(cfg.threads);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let out = c.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    Ok(Ctx { cfg, config_path: loaded.path, hash: loaded.hash, out })
}

fn run(cmd: Command) -> Result<(), Failure> {
    let (f, common): (fn(&Ctx) -> Result<(), Failure>, Common) = match cmd {
        Command::Assemble(c) => (commands::assemble, c),
        Command::Eigs(c) => (commands::eigs_cmd, c),
        Command::Extract(c) => (commands::extract, c),
        Command::Escape(c) => (commands::escape, c),
        Command::Flux(c) => (commands::flux, c),
        Command::UlamCompare(c) => (commands::ulam_compare, c),
        Command::Selftest => unreachable!(),
    };
    let ctx = context(common)?;
    log::info!("experiment {} (config sha256 {})", ctx.cfg.name, ctx.hash);
    f(&ctx)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Command::Selftest = cli.command {
        let checks = selftest::run();
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        return if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::from(6) };
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("augflow: {e}");
            ExitCode::from(e.code())
        }
    }
}
