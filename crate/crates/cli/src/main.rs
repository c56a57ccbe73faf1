//! `colnav`: simulate, replay, serve and evaluate.
//!
//! Every subcommand except `serve` is a client of the service: with
//! `--server` it talks to a running instance, otherwise it starts one
//! in-process on a loopback port. Exit codes: 0 success, 2 usage or input
//! error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use colnav_client::{Client, ClientError};
use colnav_core::config::Config;
use colnav_proto::api::{ConfigSource, EvalRequest, ReplayRequest, SimulateRequest};

#[derive(Parser)]
#[command(name = "colnav", version, about = "Coverage map and navigation compass for tubular scans")]
struct Cli {
    /// Base URL of a running service; an in-process one is started otherwise.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set unfold.stride=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scripted scan into a frame-stream directory with oracle and
    /// event log.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a frame-stream directory through a session; write the report and
    /// flattened-image export.
    Replay {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write a per-frame compass log.
        #[arg(long)]
        compass: bool,
        /// Leave timing out of the report so that reruns are byte-identical.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Serve the HTTP API and the interactive stream.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Kappa table of predictions against annotations (`clip_id,quadrant,label`).
    Eval {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Also write the table as `kappa.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Input(m) => Failure::Input(m),
            ClientError::Runtime(m) | ClientError::Transport(m) => Failure::Runtime(m),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn absolute(path: &Path) -> Result<String, Failure> {
    std::path::absolute(path)
        .map(|p| p.to_string_lossy().into_owned())
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn config_source(args: &ConfigArgs) -> Result<ConfigSource, Failure> {
    let config_text = args.config.as_deref().map(read_text).transpose()?;
    let overrides = args
        .overrides
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Input(format!("--set {kv:?} is not KEY=VALUE")))
        })
        .collect::<Result<_, _>>()?;
    Ok(ConfigSource { config_text, overrides })
}

fn local_config(args: &ConfigArgs) -> Result<Config, Failure> {
    let src = config_source(args)?;
    let base = match &src.config_text {
        Some(t) => Config::parse(t),
        None => Ok(Config::default()),
    };
    base.and_then(|c| c.with_overrides(src.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str()))))
        .map_err(|e| Failure::Input(e.to_string()))
}

fn print_report(report: &Value, out: &Path) {
    let num = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
    println!(
        "coverage {:.2}% over {:.0} mm, {} frames",
        num(&report["coverage_pct"]),
        num(&report["scanned_length"]),
        report["frames"]
    );
    if let Some(qs) = report["quadrants"].as_array() {
        for q in qs {
            println!(
                "  quadrant {}: {:.2}% {}",
                q["quadrant"],
                num(&q["coverage_pct"]),
                q["category"].as_str().unwrap_or("?").replace('_', " ")
            );
        }
    }
    if let Some(fps) = report["timing"]["fps"].as_f64() {
        println!("  {fps:.1} FPS");
    }
    println!("report written to {}", out.join("report.json").display());
}

async fn run(cli: Cli) -> Outcome {
    if let Command::Serve { config, bind } = &cli.command {
        let cfg = match config {
            Some(p) => Config::parse(&read_text(p)?).map_err(|e| Failure::Input(e.to_string()))?,
            None => Config::default(),
        };
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Failure::Runtime(format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("serving on http://{addr}");
        return colnav_server::serve(listener, cfg)
            .await
            .map_err(|e| Failure::Runtime(e.to_string()));
    }
    if let Command::Config { config } = &cli.command {
        print!("{}", local_config(config)?.to_text());
        return Ok(());
    }

    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let (addr, _) = colnav_server::spawn("127.0.0.1:0", Config::default())
                .await
                .map_err(|e| Failure::Runtime(format!("cannot start the service: {e}")))?;
            Client::new(format!("http://{addr}"))
        }
    };
    match cli.command {
        Command::Simulate { config, out } => {
            let req = SimulateRequest {
                out_dir: absolute(&out)?,
                config: config_source(&config)?,
            };
            let s = client.simulate(&req).await?;
            println!("wrote {} frames and {} events to {}", s["frames"], s["events"], out.display());
        }
        Command::Replay {
            input,
            config,
            out,
            compass,
            omit_timing,
        } => {
            let req = ReplayRequest {
                input_dir: absolute(&input)?,
                out_dir: Some(absolute(&out)?),
                compass,
                omit_timing,
                config: config_source(&config)?,
            };
            let report = client.replay(&req).await?;
            print_report(&report, &out);
        }
        Command::Eval {
            annotations,
            predictions,
            out,
        } => {
            let req = EvalRequest {
                annotations_csv: read_text(&annotations)?,
                predictions_csv: read_text(&predictions)?,
            };
            let table = client.eval(&req).await?;
            println!("{:<14} {:<10} {:>6} {:>8}", "measure", "weighting", "items", "kappa");
            for row in table.as_array().into_iter().flatten() {
                println!(
                    "{:<14} {:<10} {:>6} {:>8.4}",
                    row["measure"].as_str().unwrap_or("?"),
                    row["weighting"].as_str().unwrap_or("?"),
                    row["items"],
                    row["kappa"].as_f64().unwrap_or(f64::NAN)
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .and_then(|_| std::fs::write(dir.join("kappa.json"), format!("{table:#}\n")))
                    .map_err(|e| Failure::Runtime(e.to_string()))?;
            }
        }
        Command::Serve { .. } | Command::Config { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
