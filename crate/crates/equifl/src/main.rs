use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use equifl::checkpoint::Checkpoint;
use equifl::config::Overrides;
use equifl::experiment::{for_seed, parse_values, prepare_clients, run_seed, sweep, sweep_configs};
use equifl::manifest::PartitionManifest;
use equifl::report::{self, summary_line, write_file};
use equifl::{Error, ExperimentConfig, PreparedData, RayonExecutor, Result, SweepParam};
use equifl_core::{MetricsReport, Mode};
use log::info;

/// Fairness-aware federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "equifl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition the data and write one manifest per seed.
    Partition(Common),
    /// Train every seed and write reports and checkpoints.
    Train(Common),
    /// Re-evaluate the checkpoints written by `train`.
    Evaluate(Common),
    /// Run every seed for each value of `mu` or `num_clients`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `mu` or `num_clients`.
        parameter: String,
        /// Comma-separated values, e.g. 0,0.1,1,10.
        values: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, value_parser = ["equifl", "fedavg"])]
    mode: Option<String>,
    #[arg(long)]
    mu: Option<f64>,
    /// Number of clients (symmetric alpha unless the config lists that many).
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    evaluate_every: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            mode: self.mode.as_deref().map(|m| m.parse::<Mode>()).transpose()?,
            mu: self.mu,
            clients: self.clients,
            rounds: self.rounds,
            evaluate_every: self.evaluate_every,
        });
        Ok(cfg)
    }
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("seed-{seed}"))
}

fn cmd_partition(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let data = PreparedData::load(&cfg)?;
    for &seed in &cfg.seeds {
        let (clients, partition) = prepare_clients(&cfg, &data, seed)?;
        let splits: Vec<_> = clients.iter().map(|c| c.rows.clone()).collect();
        let manifest = PartitionManifest::build(&cfg, seed, &data, &partition, &splits);
        let path = seed_dir(&cfg, seed).join("partition.json");
        manifest.write(&path)?;
        print!("{}", manifest.summary());
        println!("  wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let exec = RayonExecutor::from_env()?;
    let data = PreparedData::load(&cfg)?;
    for &seed in &cfg.seeds {
        info!(
            "seed {seed}: {} rounds, {} clients, mode {}",
            cfg.train.rounds, cfg.partition.num_clients, cfg.train.mode
        );
        let run = run_seed(&cfg, &data, seed, &exec)?;
        let dir = seed_dir(&cfg, seed);
        report::write_run(&dir, &run, &data)?;
        println!("seed {seed}: {}", summary_line(run.final_report()));
        println!("  wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_evaluate(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let data = PreparedData::load(&cfg)?;
    for &seed in &cfg.seeds {
        let dir = seed_dir(&cfg, seed);
        let ckpt = Checkpoint::read(&dir)?;
        if ckpt.manifest.config != for_seed(&cfg, seed) {
            return Err(Error::Config(format!(
                "{}: checkpoint was written with a different configuration",
                dir.display()
            )));
        }
        if ckpt.manifest.encoder != data.encoder {
            return Err(Error::Config(format!(
                "{}: data encodes differently from when the checkpoint was written",
                dir.display()
            )));
        }
        let (clients, _) = prepare_clients(&cfg, &data, seed)?;
        if clients.len() != ckpt.clients.len() {
            return Err(Error::Config(format!(
                "{}: checkpoint holds {} clients, config gives {}",
                dir.display(),
                ckpt.clients.len(),
                clients.len()
            )));
        }
        let deployed: Vec<_> = match cfg.train.mode {
            Mode::EquiFl => ckpt.clients.iter().collect(),
            Mode::FedAvg => vec![&ckpt.global; clients.len()],
        };
        let refs: Vec<_> = clients.iter().collect();
        let report = MetricsReport::build(
            ckpt.manifest.round,
            cfg.train.mode,
            cfg.train.mu,
            &refs,
            &deployed,
            &ckpt.global,
        )?;
        report.check_consistency()?;
        let path = dir.join("evaluation.json");
        let mut json = serde_json::to_string_pretty(&serde_json::json!({
            "seed": seed,
            "config": for_seed(&cfg, seed),
            "report": report,
        }))
        .expect("evaluation serializes");
        json.push('\n');
        write_file(&path, json.as_bytes())?;
        println!("seed {seed}: {}", summary_line(&report));
    }
    Ok(())
}

fn cmd_sweep(common: &Common, parameter: &str, values: &str) -> Result<()> {
    let param: SweepParam = parameter.parse()?;
    let values = parse_values(values)?;
    let cfg = common.load()?;
    cfg.validate()?;
    sweep_configs(param, &values, &cfg)?;
    let exec = RayonExecutor::from_env()?;
    let data = PreparedData::load(&cfg)?;
    let rows = sweep(param, &values, &cfg, &data, &exec, &mut |_, _| {})?;
    let path = cfg.output_dir.join(format!("sweep-{param}.csv"));
    write_file(&path, &report::sweep_csv(&cfg, &rows))?;
    let mut json = serde_json::to_string_pretty(&serde_json::json!({
        "config": cfg,
        "parameter": param,
        "rows": rows,
    }))
    .expect("sweep serializes");
    json.push('\n');
    write_file(&path.with_extension("json"), json.as_bytes())?;
    println!(
        "{:>12} {:>10} {:>10} {:>10}",
        param.as_str(),
        "accuracy",
        "delta_dp",
        "delta_eo"
    );
    for r in &rows {
        println!(
            "{:>12} {:>10.4} {:>10.4} {:>10.4}",
            r.value, r.accuracy.median, r.delta_dp.median, r.delta_eo.median
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Partition(c) => cmd_partition(c),
        Command::Train(c) => cmd_train(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Sweep {
            common,
            parameter,
            values,
        } => cmd_sweep(common, parameter, values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
