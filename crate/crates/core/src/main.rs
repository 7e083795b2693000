use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use orgincent::harness::{
    emit_failures, emit_report, run_scenario, sweep, synthesize_instance, HarnessError, ScenarioConfig, SweepAxis,
    SynthSpec,
};

#[derive(Parser)]
#[command(name = "orgincent", version, about = "Organization-level incentives for congestion reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write reports.
    Solve(SolveArgs),
    /// Solve one scenario per value of an axis.
    Sweep {
        #[command(flatten)]
        common: SolveArgs,
        /// budgets, n_orgs, vot or participation
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated values, e.g. 0,200,800,2000,10000
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Generate a synthetic network, demand and organizations.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// TOML file with any of the options below; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    demand: Option<PathBuf>,
    #[arg(long)]
    orgs: Option<PathBuf>,
    /// Use a synthetic instance with default settings instead of files.
    #[arg(long)]
    synth: bool,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    vot_scale: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file holding a synthesis spec; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    links: Option<usize>,
    #[arg(long)]
    ods: Option<usize>,
    #[arg(long = "n-orgs")]
    n_orgs: Option<usize>,
    #[arg(long)]
    drivers: Option<usize>,
    #[arg(long)]
    participation: Option<f64>,
    #[arg(long)]
    congestion: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

impl SolveArgs {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if self.network.is_some() || self.demand.is_some() || self.orgs.is_some() {
            cfg.network = self.network.clone().or(cfg.network);
            cfg.demand = self.demand.clone().or(cfg.demand);
            cfg.orgs = self.orgs.clone().or(cfg.orgs);
            cfg.synth = None;
        }
        if self.synth && cfg.synth.is_none() {
            cfg.synth = Some(SynthSpec::default());
        }
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        set!(budget => cfg.budget, vot_scale => cfg.vot_scale, rho => cfg.solver.rho,
             lambda => cfg.solver.lambda_tilde, iters => cfg.solver.iters, tol => cfg.solver.tol,
             out => cfg.out);
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        Ok(cfg)
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HarnessError>() {
        Some(e) if e.is_infeasible() => 2,
        Some(e) if e.is_diverged() => 3,
        _ => 1,
    }
}

fn solve(args: &SolveArgs) -> Result<()> {
    let cfg = args.config()?;
    let input = cfg.input()?;
    let settings = cfg.run_settings()?;
    let label = format!("budget={}", settings.budget);
    let report = run_scenario(&input, &label, &settings)?;
    emit_report(std::slice::from_ref(&report), &cfg.out)?;
    println!(
        "{}: decrease {:.4}% cost ${:.2} deviated {} (plan {:?})",
        report.scenario, report.decrease_pct, report.total_cost, report.deviated_count, report.plan_source
    );
    println!("reports written to {}", cfg.out.display());
    Ok(())
}

fn run_sweep(common: &SolveArgs, axis: Option<SweepAxis>, values: Option<Vec<f64>>) -> Result<u8> {
    let cfg = common.config()?;
    let (axis, values) = match (axis, values, &cfg.sweep) {
        (Some(a), Some(v), _) => (a, v),
        (a, v, Some(s)) => (a.unwrap_or(s.axis), v.unwrap_or_else(|| s.values.clone())),
        (Some(SweepAxis::Budgets), None, None) => (SweepAxis::Budgets, vec![0.0, 200.0, 800.0, 2000.0, 10000.0]),
        _ => bail!("sweep needs --axis and --values (or a [sweep] section)"),
    };
    let input = cfg.input()?;
    let settings = cfg.run_settings()?;
    let cells = sweep(&input, axis, &values, &settings)?;
    let reports: Vec<_> = cells.iter().filter_map(|c| c.result.as_ref().ok().cloned()).collect();
    emit_report(&reports, &cfg.out)?;
    emit_failures(&cells, axis, &cfg.out)?;
    let mut code = 0;
    for cell in &cells {
        match &cell.result {
            Ok(r) => println!(
                "{}: decrease {:.4}% cost ${:.2} deviated {} (plan {:?})",
                r.scenario, r.decrease_pct, r.total_cost, r.deviated_count, r.plan_source
            ),
            Err(f) => {
                eprintln!("{}={}: failed: {}", axis.name(), cell.value, f.message);
                let c = if f.infeasible {
                    2
                } else if f.diverged {
                    3
                } else {
                    1
                };
                if code == 0 {
                    code = c;
                }
            }
        }
    }
    println!("reports written to {}", cfg.out.display());
    Ok(code)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag { spec.$field = v; })*
        };
    }
    set!(nodes => nodes, links => links, ods => ods, n_orgs => orgs, drivers => drivers,
         participation => participation, congestion => congestion, seed => seed);
    let inst = synthesize_instance(&spec)?;
    inst.write(&args.out)?;
    let participants: usize = inst.orgs.iter().map(|o| o.drivers.len()).sum();
    println!(
        "wrote {} nodes, {} links, {} demand rows, {} participants in {} organizations to {} (mean v/w {:.3})",
        inst.network.nodes.len(),
        inst.network.links.len(),
        inst.demand.len(),
        participants,
        inst.orgs.len(),
        args.out.display(),
        inst.measured_congestion
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args).map(|()| 0),
        Command::Sweep { common, axis, values } => run_sweep(common, *axis, values.clone()),
        Command::Synth(args) => synth(args).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
