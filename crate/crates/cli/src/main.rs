mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use hflw::io;
use hflw::pipeline::bench::{bench_stack, format_table, run_bench, BenchConfig};
use hflw::pipeline::{self, RunConfig, CONFIG_FILE};
use hflw::{Error, Result};

use args::{BenchArgs, Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hflw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Stage directories whose stored configuration a command inherits, nearest first.
fn inherits_from(command: &Command) -> &'static [&'static str] {
    match command {
        Command::Phantom | Command::Bench(_) => &[],
        Command::Render | Command::Run => &["phantom"],
        Command::Doppler => &["render", "phantom"],
        Command::Segment => &["doppler", "render", "phantom"],
        Command::Flow => &["segment", "doppler", "render", "phantom"],
        Command::Report => &["flow"],
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.run.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let workdir = cli.run.workdir.clone().unwrap_or_else(|| RunConfig::default().paths.workdir);
            let stored = inherits_from(&cli.command)
                .iter()
                .map(|stage| workdir.join(stage).join(CONFIG_FILE))
                .find(|p| p.is_file());
            match stored {
                Some(p) => {
                    log::info!("using configuration from {}", p.display());
                    RunConfig::load(&p)?
                }
                None => RunConfig::default(),
            }
        }
    };
    cli.run.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::config(format!("cannot start {} threads: {e}", cfg.threads)))?;
    }
    match &cli.command {
        Command::Phantom => {
            pipeline::run_phantom(&cfg)?;
            println!("wrote {}", cfg.input_path().display());
        }
        Command::Render => {
            pipeline::run_render(&cfg)?;
            println!("wrote {}", cfg.stage_dir("render").display());
        }
        Command::Doppler => {
            let d = pipeline::run_doppler(&cfg)?;
            println!("wrote {} windows to {}", d.maps.len(), cfg.stage_dir("doppler").display());
        }
        Command::Segment => {
            let s = pipeline::run_segment(&cfg)?;
            println!(
                "{} artery components ({} px) in {}",
                s.artery.sizes.len(),
                s.artery.mask.count(),
                cfg.stage_dir("segment").display()
            );
        }
        Command::Flow => {
            pipeline::run_flow(&cfg)?;
            print!("{}", pipeline::run_report(&cfg)?);
        }
        Command::Run => {
            pipeline::run_all(&cfg)?;
            print!("{}", pipeline::run_report(&cfg)?);
        }
        Command::Bench(b) => bench(&cfg, b, cli.run.input.as_deref())?,
        Command::Report => print!("{}", pipeline::run_report(&cfg)?),
    }
    Ok(())
}

fn bench(cfg: &RunConfig, args: &BenchArgs, input: Option<&Path>) -> Result<()> {
    let bc = BenchConfig {
        width: args.bench_width,
        height: args.bench_height,
        threads: args.bench_threads.clone(),
    };
    let stack = match input {
        Some(p) => io::read_stack(p, &cfg.params)?,
        None => bench_stack(cfg, &bc)?,
    };
    let report = run_bench(&stack, cfg, &bc.thread_counts())?;
    let dir = cfg.stage_dir("bench");
    cfg.store(&dir)?;
    io::write_json(&dir.join("bench.json"), &report)?;
    let table = format_table(&report);
    std::fs::write(dir.join("bench.txt"), &table).map_err(|e| Error::io(dir.join("bench.txt"), e))?;
    print!("{table}");
    Ok(())
}
