use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use factformer_core::analysis::alloc::CountingAlloc;
use factformer_core::Error;

mod commands;
mod config;

use config::RunConfig;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const SUBCOMMANDS: [(&str, &str); 5] = [
    ("generate", "Write the toy advection-diffusion dataset (train and test splits)"),
    ("train", "Train a model and write its checkpoint plus metrics CSVs"),
    ("eval", "Roll out a checkpoint and write per-frame relative L2 errors"),
    ("benchmark", "Time single attention blocks of both mechanisms"),
    ("spectrum", "Singular-value energy spectra of a checkpoint's attention matrices"),
];

fn key_arg(key: &'static str, help: &'static str) -> Arg {
    let mut arg = Arg::new(key).long(key).value_name("VALUE").help(help).overrides_with(key);
    let dashed = key.replace('_', "-");
    if dashed != key {
        arg = arg.alias(dashed.leak() as &'static str);
    }
    arg
}

fn cli() -> Command {
    let mut cmd = Command::new("factformer")
        .about("Factorized-attention neural PDE surrogate")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name)
            .about(about)
            .after_help("Every KEY=VALUE setting may also be given in the --config file.")
            .arg(Arg::new("config").long("config").value_name("FILE").help("key=value settings file"))
            .arg(
                Arg::new("stdout")
                    .long("stdout")
                    .action(ArgAction::SetTrue)
                    .help("write CSV output to standard output instead of files"),
            )
            .arg(
                Arg::new("threads")
                    .long("threads")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize))
                    .help("worker thread cap (falls back to FACT_THREADS, then 1)"),
            );
        for (key, help) in RunConfig::keys() {
            sub = sub.arg(key_arg(key, help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Resource(_) | Error::OracleScale { .. } => 2,
        Error::Divergence { .. }
        | Error::NonFinite(_)
        | Error::Numerical { .. }
        | Error::DegenerateReference
        | Error::DegenerateStatistics(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn threads(m: &ArgMatches) -> factformer_core::Result<usize> {
    let n = match m.get_one::<usize>("threads") {
        Some(&n) => n,
        None => match std::env::var("FACT_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("FACT_THREADS must be a positive integer, got {v:?}")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(Error::Config("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn load_config(m: &ArgMatches) -> factformer_core::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let path = std::path::Path::new(path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text, path)?;
    }
    for (key, _) in RunConfig::keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| Error::Config(format!("--{key}: {e}")))?;
        }
    }
    Ok(cfg)
}

fn run(name: &str, m: &ArgMatches) -> factformer_core::Result<()> {
    let cfg = load_config(m)?;
    let opts = commands::Options {
        stdout: m.get_flag("stdout"),
        threads: threads(m)?,
    };
    match name {
        "generate" => commands::generate(&cfg, &opts),
        "train" => commands::train(cfg, &opts),
        "eval" => commands::eval(&cfg, &opts),
        "benchmark" => commands::benchmark(cfg, &opts),
        "spectrum" => commands::spectrum(&cfg, &opts),
        other => unreachable!("unregistered subcommand {other}"),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("factformer {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
