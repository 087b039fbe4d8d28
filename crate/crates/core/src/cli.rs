//! `traffic-eq` command line: `solve` and `compare`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::equilibrium::{solve, ConvergenceRecord, EquilibriumSolution, GammaMode, ModelSpec};
use crate::error::{Error, ParseError};
use crate::frank_wolfe::{fw_run, FwSettings, FwState, StepRule};
use crate::link_cost::CostModel;
use crate::network::{parse_tntp_net, parse_tntp_trips, DemandMatrix, Network};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_DISAGREE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Parser)]
#[command(
    name = "traffic-eq",
    version,
    about = "Traffic equilibria via the dual problem"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one equilibrium problem.
    Solve(SolveArgs),
    /// Run UMST and Frank–Wolfe on deterministic Beckmann and compare.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Beckmann,
    Stable,
}

impl From<ModelArg> for CostModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Beckmann => CostModel::Beckmann,
            ModelArg::Stable => CostModel::StableDynamics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepRuleArg {
    Exact,
    Harmonic,
}

fn parse_gamma(s: &str) -> Result<GammaMode, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(GammaMode::Auto);
    }
    let g: f64 = s
        .parse()
        .map_err(|_| format!("expected a number or `auto`, got `{s}`"))?;
    if g >= 0.0 && g.is_finite() {
        Ok(GammaMode::Fixed(g))
    } else {
        Err(format!("gamma must be finite and >= 0, got {g}"))
    }
}

/// `--walk-cap` value; `None` is `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkCap(pub Option<usize>);

fn parse_walk_cap(s: &str) -> Result<WalkCap, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(WalkCap(None));
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or `auto`, got `{s}`")),
        Ok(h) => Ok(WalkCap(Some(h))),
    }
}

#[derive(Debug, Args)]
pub struct InstanceArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub eps_rel: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long)]
    pub time_limit_s: Option<u64>,
    /// Worker threads for the oracles; defaults to available parallelism.
    #[arg(long, env = "TRAFFIC_EQ_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, value_enum, default_value_t = ModelArg::Beckmann)]
    pub model: ModelArg,
    /// A nonnegative number, `0` for the deterministic model, or `auto`.
    #[arg(long, default_value = "0", value_parser = parse_gamma)]
    pub gamma: GammaMode,
    /// Longest counted route in edges, or `auto` for |V| − 1.
    #[arg(long, default_value = "auto", value_parser = parse_walk_cap)]
    pub walk_cap: WalkCap,
    /// Fixed R̂ for the stable-dynamics feasibility penalty.
    #[arg(long)]
    pub r_hat: Option<f64>,
    #[arg(long)]
    pub out_flows: Option<PathBuf>,
    #[arg(long)]
    pub out_log: Option<PathBuf>,
    #[arg(long)]
    pub out_summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, value_enum, default_value_t = StepRuleArg::Exact)]
    pub step_rule: StepRuleArg,
    #[arg(long)]
    pub out_compare: Option<PathBuf>,
}

/// Parameters and results of a `solve` run.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub net: PathBuf,
    pub trips: PathBuf,
    pub model: CostModel,
    pub gamma_mode: GammaMode,
    pub gamma: f64,
    pub walk_cap: usize,
    pub eps_rel: f64,
    pub eps_rel_inner: f64,
    pub eps_inner: f64,
    pub max_iters: usize,
    pub time_limit_s: Option<u64>,
    pub threads: Option<usize>,
    pub r_hat: Option<f64>,
    pub nodes: usize,
    pub edges: usize,
    pub od_pairs: usize,
    pub total_demand: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gap0: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub gap_unpenalized: f64,
    pub violation: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub entropy_term: f64,
    pub r_tilde: f64,
    pub value_calls: u64,
    pub gradient_calls: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Serialize)]
struct FlowRow {
    edge_index: usize,
    tail: usize,
    head: usize,
    flow: f64,
    time: f64,
    capacity: f64,
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    iteration: usize,
    umst_rel_gap: Option<f64>,
    umst_elapsed_s: Option<f64>,
    fw_rel_gap: Option<f64>,
    fw_elapsed_s: Option<f64>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_instance(net: &Path, trips: &Path) -> Result<(Network, DemandMatrix), CliError> {
    let network = parse_tntp_net(&read(net)?).map_err(|source| CliError::Parse {
        path: net.to_path_buf(),
        source,
    })?;
    let demand = parse_tntp_trips(&read(trips)?).map_err(|source| CliError::Parse {
        path: trips.to_path_buf(),
        source,
    })?;
    demand.check_against(&network)?;
    Ok((network, demand))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let wrap = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_flows(path: &Path, net: &Network, sol: &EquilibriumSolution) -> Result<(), CliError> {
    write_csv(
        path,
        net.edges().iter().enumerate().map(|(i, e)| FlowRow {
            edge_index: i,
            tail: net.external_id(e.tail),
            head: net.external_id(e.head),
            flow: sol.flows[i],
            time: sol.times[i],
            capacity: e.capacity,
        }),
    )
}

pub fn write_log(path: &Path, history: &[ConvergenceRecord]) -> Result<(), CliError> {
    write_csv(path, history)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads.filter(|&n| n > 0) {
        // a second configuration in the same process is harmless
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            log::warn!("thread pool already configured; --threads {n} ignored");
        }
    }
    Ok(())
}

fn base_spec(inst: &InstanceArgs, model: CostModel, gamma: GammaMode) -> ModelSpec {
    let mut spec = ModelSpec::new(model, gamma, inst.eps_rel);
    spec.max_iters = inst.max_iters;
    spec.time_limit = inst.time_limit_s.map(Duration::from_secs);
    spec
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32, CliError> {
    let inst = &args.instance;
    configure_threads(inst.threads)?;
    let (net, dm) = load_instance(&inst.net, &inst.trips)?;
    let mut spec = base_spec(inst, args.model.into(), args.gamma);
    spec.walk_cap = args.walk_cap.0;
    spec.r_hat = args.r_hat;
    let clock = Instant::now();
    let sol = solve(&net, &dm, &spec)?;
    let elapsed_s = clock.elapsed().as_secs_f64();

    if let Some(p) = &args.out_flows {
        write_flows(p, &net, &sol)?;
    }
    if let Some(p) = &args.out_log {
        write_log(p, &sol.history)?;
    }
    let summary = SolveSummary {
        net: inst.net.clone(),
        trips: inst.trips.clone(),
        model: sol.model,
        gamma_mode: args.gamma,
        gamma: sol.gamma,
        walk_cap: sol.walk_cap,
        eps_rel: inst.eps_rel,
        eps_rel_inner: sol.eps_rel,
        eps_inner: sol.eps_inner,
        max_iters: inst.max_iters,
        time_limit_s: inst.time_limit_s,
        threads: inst.threads,
        r_hat: args.r_hat,
        nodes: net.node_count(),
        edges: net.edge_count(),
        od_pairs: dm.len(),
        total_demand: dm.total(),
        iterations: sol.iterations,
        converged: sol.converged,
        gap0: sol.gap0,
        gap: sol.gap,
        rel_gap: sol.rel_gap,
        gap_unpenalized: sol.gap_unpenalized,
        violation: sol.violation,
        primal_objective: sol.primal_objective,
        dual_objective: sol.dual_objective,
        entropy_term: sol.entropy_term,
        r_tilde: sol.r_tilde,
        value_calls: sol.value_calls,
        gradient_calls: sol.gradient_calls,
        elapsed_s,
    };
    if let Some(p) = &args.out_summary {
        write_json(p, &summary)?;
    }
    println!(
        "model={} gamma={:e} iterations={} rel_gap={:e} converged={} elapsed_s={:.3}",
        sol.model, sol.gamma, sol.iterations, sol.rel_gap, sol.converged, elapsed_s
    );
    Ok(if sol.converged {
        EXIT_CONVERGED
    } else {
        EXIT_CAP
    })
}

/// Outcome of running both solvers on one instance.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub umst: EquilibriumSolution,
    pub fw: FwState,
    /// `|Σσ(f_umst) − Σσ(f_fw)|`.
    pub difference: f64,
    /// `2·ε̃·gap₀`.
    pub tolerance: f64,
}

impl Comparison {
    pub fn agrees(&self) -> bool {
        self.difference <= self.tolerance
    }
}

/// UMST and Frank–Wolfe certified to the same absolute accuracy `ε̃·gap₀`.
pub fn compare(
    net: &Network,
    dm: &DemandMatrix,
    spec: &ModelSpec,
    step_rule: StepRule,
) -> Result<Comparison, Error> {
    let umst = solve(net, dm, spec)?;
    let fw = fw_run(
        net,
        dm,
        &FwSettings {
            eps_rel: spec.eps_rel,
            step_rule,
            max_iters: spec.max_iters,
            time_limit: spec.time_limit,
            abs_target: Some(spec.eps_rel * umst.gap0),
        },
    )?;
    let difference = (umst.primal_objective - fw.objective).abs();
    let tolerance = 2.0 * spec.eps_rel * umst.gap0;
    Ok(Comparison {
        umst,
        fw,
        difference,
        tolerance,
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32, CliError> {
    let inst = &args.instance;
    configure_threads(inst.threads)?;
    let (net, dm) = load_instance(&inst.net, &inst.trips)?;
    let spec = base_spec(inst, CostModel::Beckmann, GammaMode::Fixed(0.0));
    let rule = match args.step_rule {
        StepRuleArg::Exact => StepRule::ExactLineSearch,
        StepRuleArg::Harmonic => StepRule::Harmonic,
    };
    let cmp = compare(&net, &dm, &spec, rule)?;
    if let Some(p) = &args.out_compare {
        let umst = &cmp.umst.history;
        let fw = &cmp.fw.history;
        let rows = (0..umst.len().max(fw.len())).map(|i| CompareRow {
            iteration: i,
            umst_rel_gap: umst.get(i).and_then(|r| r.rel_gap),
            umst_elapsed_s: umst.get(i).map(|r| r.elapsed_s),
            fw_rel_gap: fw.get(i).map(|r| r.rel_gap),
            fw_elapsed_s: fw.get(i).map(|r| r.elapsed_s),
        });
        write_csv(p, rows)?;
    }
    println!(
        "umst: iterations={} objective={:?} converged={}",
        cmp.umst.iterations, cmp.umst.primal_objective, cmp.umst.converged
    );
    println!(
        "frank_wolfe: iterations={} objective={:?} converged={}",
        cmp.fw.k, cmp.fw.objective, cmp.fw.converged
    );
    println!(
        "difference={:e} tolerance={:e} agree={}",
        cmp.difference,
        cmp.tolerance,
        cmp.agrees()
    );
    Ok(if !cmp.umst.converged || !cmp.fw.converged {
        EXIT_CAP
    } else if cmp.agrees() {
        EXIT_CONVERGED
    } else {
        EXIT_DISAGREE
    })
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_INPUT
    })
}
