use clap::{Parser, ValueEnum};
use pmdp_cli::runner::{run, Method, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Ccp,
    Scp,
    ScpReg,
    Pso,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Ccp => Method::Ccp,
            MethodArg::Scp => Method::Scp,
            MethodArg::ScpReg => Method::ScpReg,
            MethodArg::Pso => Method::Pso,
        }
    }
}

/// Synthesizes parameter values of a parametric MDP against a probability or
/// expected-cost threshold; every reported valuation is certified by an
/// independent model-checking run.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Model file in the plain-text format
    #[arg(long)]
    model: PathBuf,
    /// Specification, e.g. "P<=0.1 [F target]"
    #[arg(long)]
    spec: String,
    /// Synthesis method
    #[arg(long, value_enum, default_value = "ccp")]
    method: MethodArg,
    /// Graph-preservation bound on transition probabilities
    #[arg(long, default_value_t = 1e-6)]
    eps_graph: f64,
    /// Base random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fan out this many independent seeded runs and merge a summary
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Iteration cap override
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial penalty weight (convex-concave method)
    #[arg(long)]
    tau0: Option<f64>,
    /// Penalty weight cap (convex-concave method)
    #[arg(long)]
    tau_max: Option<f64>,
    /// Initial trust-region size (sequential method)
    #[arg(long)]
    delta0: Option<f64>,
    /// Trust-region growth factor (sequential method)
    #[arg(long)]
    gamma: Option<f64>,
    /// Trust-region floor (sequential method)
    #[arg(long)]
    omega: Option<f64>,
    /// Directory for result.json / summary.json and trace files
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-iteration trace CSVs (requires --out)
    #[arg(long, requires = "out")]
    trace: bool,
    /// Cross-validate the final answer with both model-checking routes
    #[arg(long)]
    oracle_check: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 1; --help and --version exit 0.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let cfg = RunConfig {
        model_path: cli.model,
        spec_text: cli.spec,
        method: cli.method.into(),
        eps_graph: cli.eps_graph,
        seed: cli.seed,
        seeds: cli.seeds.max(1),
        max_iters: cli.max_iters,
        tau0: cli.tau0,
        tau_max: cli.tau_max,
        delta0: cli.delta0,
        gamma: cli.gamma,
        omega: cli.omega,
        out_dir: cli.out.clone(),
        trace: cli.trace,
        oracle_check: cli.oracle_check,
    };
    let artifacts = match run(&cfg) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let rendered = serde_json::to_string_pretty(&artifacts.result).expect("render result");
    if let Some(dir) = &cli.out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return ExitCode::from(1);
        }
        let name = if cfg.seeds > 1 { "summary.json" } else { "result.json" };
        let mut writes = vec![(dir.join(name), rendered.clone())];
        for (stem, csv) in &artifacts.traces {
            writes.push((dir.join(format!("{stem}.csv")), csv.clone()));
        }
        for (path, content) in writes {
            if let Err(e) = std::fs::write(&path, content) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
    }
    println!("{rendered}");
    ExitCode::from(artifacts.exit_code as u8)
}
