use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use safepath::netlink::{bind, serve_plant, ServerOptions};
use safepath::pathgen::{generate, PathKind, PathParams};
use safepath::scenario::{gain_sweep, plant_spec, run_scenario, sweep_table, RunConfig, ScenarioKind, OUTPUT_DIR_ENV};
use safepath::Error;

#[derive(Parser)]
#[command(name = "safepath", version, about = "Constrained tool-path following: scenarios, sweeps and a plant server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// pf-only, rcm-drill or ucm-mastoid.
    #[arg(long)]
    scenario: Option<String>,
    /// Any config key, e.g. `--set beta_prime=-8`. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// CSV log path (the output-directory variable relocates it).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `in-process` or `host:port` of a plant server.
    #[arg(long)]
    transport: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> safepath::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::new(ScenarioKind::PfOnly),
        };
        if let Some(s) = &self.scenario {
            cfg.set("scenario", s)?;
        }
        if let Some(o) = &self.output {
            cfg.output = Some(o.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = &self.transport {
            cfg.set("transport", t)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its summary.
    Run(ConfigArgs),
    /// Grid of pf-only runs over β′ and γ_c.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-4.0, -8.0, -12.0, -16.0])]
        beta_prime: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-2.0])]
        gamma_c: Vec<f64>,
        /// Where to write the sweep table (stdout otherwise).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write a reference path in the curve file format.
    Genpath {
        /// spiral, drill, mastoid, circle or line.
        kind: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        radius: f64,
        #[arg(long, default_value_t = 2.0)]
        pitch: f64,
        #[arg(long, default_value_t = 2.0)]
        turns: f64,
        #[arg(long, default_value_t = 10.0)]
        length: f64,
        #[arg(long, default_value_t = 0.0)]
        lead: f64,
        #[arg(long, default_value_t = 1.0)]
        ramp_turns: f64,
        #[arg(long, default_value_t = 0.1)]
        spacing: f64,
    },
    /// Host the plant of a scenario over TCP.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Exit after this many sessions.
        #[arg(long)]
        sessions: Option<usize>,
    },
}

fn output_path(p: PathBuf) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        Some(d) => PathBuf::from(d).join(p.file_name().unwrap_or(p.as_os_str())),
        None => p,
    }
}

fn real_main(cli: Cli) -> safepath::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = run_scenario(&cfg)?;
            print!("{}", out.summary.to_kv());
            if let Some(e) = out.failure {
                eprintln!("run aborted: {e}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep { cfg, beta_prime, gamma_c, table } => {
            let cfg = cfg.load()?;
            let cells = gain_sweep(&cfg, &beta_prime, &gamma_c)?;
            let text = sweep_table(&cells);
            match table {
                Some(p) => {
                    let p = output_path(p);
                    std::fs::write(&p, text)?;
                    eprintln!("wrote {}", p.display());
                }
                None => print!("{text}"),
            }
        }
        Command::Genpath { kind, output, radius, pitch, turns, length, lead, ramp_turns, spacing } => {
            let kind: PathKind = kind.parse()?;
            let (curve, header) = generate(kind, &PathParams { radius, pitch, turns, length, lead, ramp_turns, spacing })?;
            let p = output_path(output);
            std::fs::write(&p, curve.to_text(&header))?;
            eprintln!("wrote {} ({} points, length {:.3} mm)", p.display(), curve.points().len(), curve.length());
        }
        Command::Serve { cfg, listen, sessions } => {
            let cfg = cfg.load()?;
            let spec = plant_spec(&cfg)?;
            let (listener, addr) = bind(listen.as_str())?;
            eprintln!("serving {} plant on {addr}", cfg.scenario);
            let options = ServerOptions { max_sessions: sessions, ..Default::default() };
            for r in serve_plant(listener, spec, options, Arc::new(AtomicBool::new(false)))? {
                eprintln!("session ended: {:?} after {} steps", r.end, r.steps);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
