use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchguard_core::scenario::{self, RunOptions, Scenario};
use switchguard_core::Error;

#[derive(Parser)]
#[command(
    name = "switchguard",
    version,
    about = "Zero-dynamics attack synthesis and topology-switching detection"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling step override in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Seed for the synthesis probes.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Report admissibility of the running topology set.
    Validate(Common),
    /// Simulate plant and observer and write trace, alarm and summary.
    Run(Common),
    /// Synthesize a stealthy attack and write it as JSON.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Comma-separated topology ids the attack must stay hidden against.
        #[arg(long, value_delimiter = ',')]
        stealth_set: Option<Vec<u32>>,
    },
    /// Run the scenario for each dwell multiple m in 1..=m-max.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        m_max: u32,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NoZda | Error::NoStealthyPrefix => 3,
        Error::Scenario(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::InvalidInput(_)
        | Error::InvalidTopology(_)
        | Error::InvalidParams(_)
        | Error::Disconnected(_)
        | Error::IrrationalRatio { .. }
        | Error::InapplicableDwell { .. } => 2,
        _ => 4,
    }
}

fn out_dir(c: &Common) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, s: &str) -> Result<(), Error> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    Ok(fs::write(path, s)?)
}

fn load(c: &Common) -> Result<(Scenario, RunOptions), Error> {
    let sc = Scenario::load(&c.scenario)?;
    Ok((
        sc,
        RunOptions {
            dt: c.dt,
            seed: c.seed,
        },
    ))
}

fn exec(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Validate(c) => {
            let (sc, _) = load(&c)?;
            let rep = scenario::validate(&sc)?;
            print!("{rep}");
            if let Some(d) = &c.out {
                write(
                    &d.join("validation.json"),
                    &serde_json::to_string_pretty(&rep)?,
                )?;
            }
            Ok(0)
        }
        Cmd::Run(c) => {
            let (sc, opts) = load(&c)?;
            let out = scenario::run(&sc, &opts)?;
            out.write_artifacts(&out_dir(&c))?;
            print!("{}", out.report());
            Ok(if out.summary.overflow.is_some() { 4 } else { 0 })
        }
        Cmd::Synthesize {
            common,
            stealth_set,
        } => {
            let (sc, opts) = load(&common)?;
            let atk = scenario::synthesize_cmd(&sc, stealth_set.as_deref(), opts.seed)?;
            let path = out_dir(&common).join("attack.json");
            write(&path, &serde_json::to_string_pretty(&atk)?)?;
            println!(
                "attack written to {}: eta = {:.6e}{:+.6e}i, rho = {}",
                path.display(),
                atk.eta.re,
                atk.eta.im,
                atk.rho
            );
            Ok(0)
        }
        Cmd::Sweep { common, m_max } => {
            let (sc, opts) = load(&common)?;
            let rows = scenario::sweep(&sc, m_max, &opts)?;
            let dir = out_dir(&common);
            fs::create_dir_all(&dir)?;
            let mut buf = Vec::new();
            scenario::write_sweep_csv(&rows, &mut buf)?;
            fs::File::create(dir.join("sweep.csv"))?.write_all(&buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match exec(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
