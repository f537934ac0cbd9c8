use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use fastswarm::metrics::{export_plot_data, run_ablation, summarize};
use fastswarm::sim::config::ScenarioConfig;
use fastswarm::sim::plant::training_samples;
use fastswarm::sim::record::read_log;
use fastswarm::sim::run_scenario;
use fastswarm::velest::fit_response_model;

#[derive(Parser)]
#[command(name = "fastswarm", version, about = "Decentralized fast-flocking swarm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log and plot data.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace communicated velocities with onboard estimates.
        #[arg(long)]
        no_comm: bool,
        /// Run agent stages in parallel.
        #[arg(long)]
        parallel: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Paired runs with and without communication.
    Ablate {
        config: PathBuf,
        /// Number of seed pairs, starting at the config seed.
        #[arg(long, default_value_t = 8)]
        pairs: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the velocity response model on generated training profiles.
    FitModel { config: PathBuf },
    /// Recompute metrics from a saved log.
    Metrics { log: PathBuf },
    /// Check a scenario file and list every problem.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> anyhow::Result<ScenarioConfig> {
    Ok(ScenarioConfig::load(path)?)
}

fn run(config: &Path, seed: Option<u64>, no_comm: bool, parallel: bool, out: &Path) -> anyhow::Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_comm {
        cfg.sensors.comm.enabled = false;
    }
    cfg.parallel |= parallel;
    cfg.validate()?;
    let artifacts = run_scenario(&cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join("run.jsonl");
    let mut w = BufWriter::new(File::create(&log_path)?);
    artifacts.write_log(&mut w)?;
    w.flush()?;
    export_plot_data(out, &artifacts.ticks, &artifacts.summary)?;
    let s = &artifacts.summary;
    println!("log: {}", log_path.display());
    println!("ticks: {}  collisions: {}", s.ticks, s.collisions);
    println!(
        "cvr mean: {:.3}  transit: {}",
        s.cvr_mean,
        s.cvr_transit_mean.map_or("n/a".into(), |c| format!("{c:.3}"))
    );
    match &s.neighbor_distance {
        Some(d) => println!("d_n: {:.2} m  sigma_d: {:.2} m", d.mean, d.std),
        None => println!("d_n: no neighbor pairs"),
    }
    let lmin = s.agents.iter().map(|a| a.lambda_min).fold(1.0, f64::min);
    println!("lambda min: {lmin:.3}  position error: {:.2} m", s.position_error);
    if let Some(v) = s.velocity_estimate_rms {
        println!("velocity estimate rms: {v:.3} m/s");
    }
    Ok(())
}

fn ablate(config: &Path, pairs: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let reports = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = cfg.seed + k;
            run_ablation(&c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    println!("seed  sigma_comm  sigma_nocomm  cvr_comm  cvr_nocomm");
    let fmt = |d: Option<f64>| d.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    for r in &reports {
        println!(
            "{:<5} {:>10} {:>13} {:>9.3} {:>11.3}",
            r.seed,
            fmt(r.comm.neighbor_distance.map(|d| d.std)),
            fmt(r.no_comm.neighbor_distance.map(|d| d.std)),
            r.comm.cvr_mean,
            r.no_comm.cvr_mean
        );
    }
    if let Some(path) = out {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &reports {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn fit_model(config: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let samples = training_samples(&cfg.plant, cfg.dt);
    let fit = fit_response_model(&samples)?;
    println!("# {} samples, residual norm {:.3e}", fit.rows, fit.residual_norm);
    println!("[response_model]");
    println!("q1 = {}", fit.model.q1);
    println!("q2 = {}", fit.model.q2);
    Ok(())
}

fn metrics(log: &Path) -> anyhow::Result<()> {
    let parsed = read_log(BufReader::new(File::open(log).with_context(|| format!("opening {}", log.display()))?))?;
    let summary = summarize(&parsed.header, &parsed.ticks);
    if let Some(stored) = &parsed.summary {
        if *stored != summary {
            bail!("recomputed metrics differ from the summary stored in the log");
        }
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn validate(config: &Path) -> anyhow::Result<()> {
    load(config)?;
    println!("{}: ok", config.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            seed,
            no_comm,
            parallel,
            out,
        } => run(config, *seed, *no_comm, *parallel, out),
        Command::Ablate { config, pairs, out } => ablate(config, *pairs, out.as_deref()),
        Command::FitModel { config } => fit_model(config),
        Command::Metrics { log } => metrics(log),
        Command::Validate { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
