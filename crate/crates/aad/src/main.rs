use std::fs::File;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use aad::config::{Arm, RunConfig};
use aad::harness::{self, read_summaries, write_run};
use aad::metrics::{summarize_curves, write_curve_csv};
use aad::service::{router, AppState, SessionStore};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aad", version, about = "Active anomaly detection experiments and labeling service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set budget=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    arm: Option<Arm>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Box<dyn std::error::Error>> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut overrides = Vec::new();
        if let Some(p) = &self.preset {
            overrides.push(format!("preset={p:?}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        if let Some(arm) = self.arm {
            overrides.push(format!("arm={:?}", arm.as_str()));
        }
        if let Some(b) = self.budget {
            overrides.push(format!("budget={b}"));
        }
        if let Some(d) = &self.dataset {
            overrides.push(format!("dataset={d:?}"));
        }
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        Ok(base.with_overrides(&overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured seed with a simulated analyst and write the results.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Print the angle histogram of anomalies and nominals against uniform weights.
    Angles {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Summarize `runs/<name>/<arm>` into a mean discovery curve with 95% intervals.
    Curves {
        /// Arm directory holding one subdirectory per seed.
        dir: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve labeling sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Persist and replay sessions here; in-memory when absent.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, out } => {
            let config = config.resolve()?;
            let result = harness::run(&config)?;
            let dirs = write_run(&out, &result)?;
            for (o, dir) in result.outcomes.iter().zip(&dirs) {
                println!("seed {}: {}/{} anomalies in {} queries -> {}", o.seed, o.found, o.total_anomalies, o.history.len(), dir.display());
            }
        }
        Command::Angles { config, seed, bins } => {
            let config = config.resolve()?;
            let hist = harness::angle_report(&config, seed, bins)?;
            println!("mean angle: anomalies {:.4} rad, nominals {:.4} rad", hist.anomaly_mean, hist.nominal_mean);
            println!("lo,hi,anomalies,nominals");
            for (i, w) in hist.edges.windows(2).enumerate() {
                println!("{:.4},{:.4},{},{}", w[0], w[1], hist.anomalies[i], hist.nominals[i]);
            }
        }
        Command::Curves { dir, out } => {
            let curves: Vec<(Vec<usize>, usize)> = read_summaries(&dir)?.into_iter().map(|s| (s.curve, s.total_anomalies)).collect();
            let points = summarize_curves(&curves)?;
            match out {
                Some(path) => write_curve_csv(File::create(path)?, &points)?,
                None => write_curve_csv(std::io::stdout().lock(), &points)?,
            }
        }
        Command::Serve { addr, data_dir } => {
            let store = match &data_dir {
                Some(dir) => SessionStore::open(dir)?,
                None => SessionStore::in_memory(),
            };
            let app = router(AppState::new(store));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
    }
    Ok(())
}
