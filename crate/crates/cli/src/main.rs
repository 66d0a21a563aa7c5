use clap::Parser;
use kgap_core::config::RunConfig;
use kgap_core::pipeline::{run_subcommand, Subcommand};
use kgap_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Discrete linearized Boltzmann experiments in a bounded domain.
///
/// Exit codes: 0 ok, 2 configuration error, 3 numerical abort,
/// 4 falsification event.
#[derive(Parser, Debug)]
#[command(name = "kgap", version)]
struct Args {
    /// assemble, spectrum, sweep, evolve, nonlinear, landau or selftest
    subcommand: String,
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Recorded in the manifest; execution is single-threaded.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Assemble operators afresh instead of using <out>/cache.
    #[arg(long)]
    no_cache: bool,
}

fn run(args: &Args) -> Result<(), Error> {
    let cmd: Subcommand = args.subcommand.parse()?;
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let use_cache = cfg.output.cache && !args.no_cache;
    let manifest = run_subcommand(cmd, &cfg, &out, use_cache, args.threads)?;
    for (name, hash) in &manifest.outputs {
        println!("{}  {}", &hash[..16], out.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
