use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use drivelab_cli::api;
use drivelab_cli::commands::{self, DriveArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "drivelab", version, about = "Driving environment, affordance learner and corner-case analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a GeoJSON map into a world file.
    Ingest {
        #[arg(long)]
        map: PathBuf,
        /// lat,lon,lat,lon (south-west then north-east corner)
        #[arg(long, allow_hyphen_values = true)]
        bbox: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate episodes and write a labeled image dataset.
    GenerateDataset {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Episode length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the affordance regressor on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for checkpoints and the loss history.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frame downsampling factor.
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one closed-loop episode and write its trace.
    Drive {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Controller gains as JSON.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Drive from camera images through this checkpoint instead of exact affordances.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario over a parameter grid.
    Sweep {
        /// Built-in scenario id or scenario file.
        #[arg(long)]
        scenario: String,
        /// name=min:max:step or name=value; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; .json and .csv are written.
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory of extra scenario files.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { map, bbox, seed, out } => println!("{}", commands::ingest(&map, &bbox, seed, &out)?),
        Command::GenerateDataset {
            world,
            episodes,
            seed,
            duration,
            out,
        } => {
            let m = commands::generate(&world, episodes, seed, duration, &out)?;
            println!(
                "frames train/val/test {}/{}/{}, rejected {} -> {}",
                m.train.records.len(),
                m.val.records.len(),
                m.test.records.len(),
                m.rejected.len(),
                out.display()
            );
        }
        Command::Train {
            dataset,
            out,
            epochs,
            seed,
            factor,
            batch_size,
            learning_rate,
        } => {
            let args = TrainArgs {
                dataset,
                out,
                epochs,
                seed,
                factor,
                batch_size,
                learning_rate,
            };
            let path = commands::train_model(&args, &mut |line| println!("{line}"))?;
            println!("model -> {}", path.display());
        }
        Command::Eval { dataset, model, split, out } => {
            let report = commands::eval_model(&dataset, &model, &split, out.as_deref())?;
            print!("{}", commands::format_eval(&report));
        }
        Command::Drive {
            world,
            seed,
            duration,
            gains,
            model,
            out,
        } => {
            let trace = commands::drive(&DriveArgs {
                world,
                seed,
                duration_s: duration,
                gains,
                model,
                out: out.clone(),
            })?;
            println!(
                "{} snapshots, {} collisions, end {:?} -> {}",
                trace.snapshots.len(),
                trace.collisions.len(),
                trace.end,
                out.display()
            );
        }
        Command::Sweep { scenario, params, seed, out } => {
            let report = commands::sweep(&scenario, &params, seed, &out)?;
            print!("{}", report.to_csv());
        }
        Command::Serve { port, host, scenarios } => {
            let extra = match scenarios {
                Some(dir) => api::load_scenario_dir(&dir)?,
                None => Vec::new(),
            };
            let catalog = api::scenario_catalog(extra)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let addr = SocketAddr::new(host, port);
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, api::app(catalog)).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
