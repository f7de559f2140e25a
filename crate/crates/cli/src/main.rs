use clap::Parser;
use kinlab_cli::{config::ExperimentConfig, run, worker_count, Command};
use std::path::PathBuf;
use std::process::ExitCode;

/// Hard-disk gas fluctuation experiments.
#[derive(Parser, Debug)]
#[command(name = "kinlab", version)]
struct Cli {
    command: Command,
    /// TOML experiment file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (default: config `out`, else ./out/<command>).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key: --set section.key=value (TOML value syntax).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Final time of the covariance grid.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Cumulants: number of single-particle states.
    #[arg(long)]
    d: Option<usize>,
    /// Cumulants: random instances.
    #[arg(long)]
    trials: Option<usize>,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut s = Vec::new();
        if let Some(v) = self.seed {
            s.push(format!("seed={v}"));
        }
        let ens_or = |key: &str| match self.command {
            Command::Cumulants => format!("cumulants.{key}"),
            _ => format!("ensemble.{key}"),
        };
        if let Some(v) = self.n {
            s.push(format!("{}={v}", ens_or("n")));
        }
        if let Some(v) = self.alpha {
            s.push(format!("ensemble.alpha={v:?}"));
        }
        if let Some(v) = self.beta {
            s.push(format!("ensemble.beta={v:?}"));
        }
        if let Some(v) = self.eps {
            s.push(format!("ensemble.eps={v:?}"));
        }
        if let Some(v) = self.replicas {
            s.push(format!("observables.replicas={v}"));
            s.push(format!("ensemble.replicas={v}"));
        }
        if let Some(v) = self.t_max {
            s.push(format!("observables.t_max={v:?}"));
        }
        if let Some(v) = self.d {
            s.push(format!("cumulants.d={v}"));
        }
        if let Some(v) = self.trials {
            s.push(format!("cumulants.trials={v}"));
        }
        s.extend(self.sets.iter().cloned());
        s
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let base = match &cli.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    let cfg = match base.with_overrides(&cli.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = worker_count(&cfg) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    let start = std::time::Instant::now();
    match run(cli.command, &cfg, &dir) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("{w}");
            }
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            eprintln!("done in {:.2?}", start.elapsed());
            match summary.passed {
                Some(false) => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
