//! Model assembly, duality gaps, and the certified solve driver.
//!
//! Four variants are covered: Beckmann or stable dynamics, each with
//! `γ > 0` (logit route choice, smoothed oracle) or `γ = 0` (Wardrop,
//! shortest-path oracle).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::char_fn::{default_walk_cap, SmoothOracle};
use crate::error::{Error, Result};
use crate::link_cost::{sigma, sigma_conj, travel_time, CostModel};
use crate::network::{validate_reachability, DemandMatrix, Network};
use crate::shortest::{det_value, ShortestPathOracle};
use crate::umst::{Composite, DualOracle, LinkComposite, OracleResult, UmstSettings, UmstState};

/// Choice of the entropy weight `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `0` selects the deterministic limit.
    Fixed(f64),
    /// `γ*` from the target accuracy.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model: CostModel,
    pub gamma: GammaMode,
    /// `None` means `|V| − 1`.
    pub walk_cap: Option<usize>,
    pub eps_rel: f64,
    pub max_iters: usize,
    pub time_limit: Option<Duration>,
    pub lipschitz0: f64,
    /// Overrides `R̂ = ‖t − t̄‖/√2` in the stable-dynamics penalty.
    pub r_hat: Option<f64>,
    /// Overrides the per-pair bound on `ln|P_w|` used by `γ*`.
    pub path_count_log: Option<f64>,
    /// Iterations between gap checks; `None` picks 1 for `|E| ≤ 5000`, else 5.
    pub gap_every: Option<usize>,
    /// Line-search slack of iteration 0 as a fraction of `|Φ(t̄)|`. It is
    /// independent of `eps_rel`, so `gap₀` is the same for every target.
    pub init_slack_rel: f64,
}

impl ModelSpec {
    pub fn new(model: CostModel, gamma: GammaMode, eps_rel: f64) -> Self {
        Self {
            model,
            gamma,
            walk_cap: None,
            eps_rel,
            max_iters: 100_000,
            time_limit: None,
            lipschitz0: 1.0,
            r_hat: None,
            path_count_log: None,
            gap_every: None,
            init_slack_rel: 1e-2,
        }
    }
}

/// One row of the convergence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iteration: usize,
    pub elapsed_s: f64,
    pub a_n: f64,
    pub l_current: f64,
    pub gap: Option<f64>,
    pub rel_gap: Option<f64>,
    pub violation: Option<f64>,
    pub gap_unpenalized: Option<f64>,
    pub value_calls: u64,
    pub gradient_calls: u64,
    pub doublings: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub model: CostModel,
    pub gamma: f64,
    pub walk_cap: usize,
    /// `t^N`.
    pub times: Vec<f64>,
    /// Averaged flows `Σ α_k f^k / A_N`.
    pub flows: Vec<f64>,
    pub gap: f64,
    pub gap0: f64,
    pub rel_gap: f64,
    /// `‖(flows − cap)_+‖₂`; zero for Beckmann.
    pub violation: f64,
    pub gap_unpenalized: f64,
    /// `Φ(t^N) + h(t^N)`.
    pub dual_objective: f64,
    /// `Σ σ(flows)` for Beckmann, `⟨flows, t̄⟩` for stable dynamics, entropy excluded.
    pub primal_objective: f64,
    pub entropy_term: f64,
    pub r_tilde: f64,
    pub eps_rel: f64,
    pub eps_inner: f64,
    pub iterations: usize,
    pub converged: bool,
    pub value_calls: u64,
    pub gradient_calls: u64,
    pub history: Vec<ConvergenceRecord>,
}

/// Gap and feasibility measures at one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub gap: f64,
    pub violation: f64,
    pub gap_unpenalized: f64,
}

/// `Φ(t) + Σσ*(t) + Σσ(flows) + entropy`, where `entropy` is already scaled
/// by `γ` (zero when `γ = 0`).
pub fn gap_beckmann(
    net: &Network,
    phi_t: f64,
    t: &[f64],
    flows: &[f64],
    entropy: f64,
) -> Result<f64> {
    let mut total = phi_t + entropy;
    for ((e, &te), &f) in net.edges().iter().zip(t).zip(flows) {
        total += sigma_conj(CostModel::Beckmann, e, te)? + sigma(e, f)?;
    }
    Ok(total)
}

/// `Φ(t) + ⟨cap, t − t̄⟩ + ⟨flows, t̄⟩ + entropy + 3R̂·‖(flows − cap)_+‖₂`.
///
/// `R̂` defaults to `‖t − t̄‖₂/√2`. With that default the result is
/// nonnegative for any `t ≥ t̄` and any averaged oracle flows.
pub fn gap_stable_dynamics(
    net: &Network,
    phi_t: f64,
    t: &[f64],
    flows: &[f64],
    entropy: f64,
    r_hat: Option<f64>,
) -> Result<GapReport> {
    let mut plain = phi_t + entropy;
    let mut viol_sq = 0.0;
    let mut shift_sq = 0.0;
    for ((e, &te), &f) in net.edges().iter().zip(t).zip(flows) {
        if te < e.free_flow_time {
            return Err(Error::BelowFreeFlow {
                time: te,
                free_flow_time: e.free_flow_time,
            });
        }
        plain += e.capacity * (te - e.free_flow_time) + f * e.free_flow_time;
        viol_sq += (f - e.capacity).max(0.0).powi(2);
        shift_sq += (te - e.free_flow_time).powi(2);
    }
    let violation = viol_sq.sqrt();
    let r = r_hat.unwrap_or((0.5 * shift_sq).sqrt());
    Ok(GapReport {
        gap: plain + 3.0 * r * violation,
        violation,
        gap_unpenalized: plain,
    })
}

/// `γ* = ε / (2 Σ_w d_w·ln|P_w|)`, with `path_count_log` aligned to `dm.entries()`.
pub fn gamma_star(eps_abs: f64, dm: &DemandMatrix, path_count_log: &[f64]) -> Result<f64> {
    if !(eps_abs > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps_abs}"
        )));
    }
    if path_count_log.len() != dm.len() {
        return Err(Error::InvalidArgument(
            "one path-count bound per OD pair is required".into(),
        ));
    }
    let denom: f64 = dm
        .entries()
        .iter()
        .zip(path_count_log)
        .map(|(p, l)| p.demand * l)
        .sum();
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(
            "path-count weights sum to zero".into(),
        ));
    }
    Ok(eps_abs / (2.0 * denom))
}

/// `ln|P_w| ≤ H·ln(max out-degree)`.
pub fn default_path_count_log(net: &Network, walk_cap: usize) -> f64 {
    walk_cap as f64 * (net.max_out_degree() as f64).ln()
}

/// `R̃ = sqrt(½ Σ_e (τ_e(f_e) − t̄_e)²)`.
pub fn r_tilde(net: &Network, flows: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (e, &f) in net.edges().iter().zip(flows) {
        s += (travel_time(e, f)? - e.free_flow_time).powi(2);
    }
    Ok((0.5 * s).sqrt())
}

enum Oracle<'a> {
    Smooth(SmoothOracle<'a>),
    Shortest(ShortestPathOracle<'a>),
}

impl DualOracle for Oracle<'_> {
    fn value(&self, t: &[f64]) -> Result<f64> {
        match self {
            Oracle::Smooth(o) => o.value(t),
            Oracle::Shortest(o) => o.value(t),
        }
    }

    fn evaluate(&self, t: &[f64]) -> Result<OracleResult> {
        match self {
            Oracle::Smooth(o) => o.evaluate(t),
            Oracle::Shortest(o) => o.evaluate(t),
        }
    }
}

/// Gap at the current UMST iterate.
pub fn gap_at(
    net: &Network,
    model: CostModel,
    gamma: f64,
    state: &UmstState,
    r_hat: Option<f64>,
) -> Result<GapReport> {
    let (flows, entropy) = state.averaged_primal();
    let entropy = if gamma > 0.0 { entropy } else { 0.0 };
    match model {
        CostModel::Beckmann => {
            let gap = gap_beckmann(net, state.phi_t, &state.t, &flows, entropy)?;
            Ok(GapReport {
                gap,
                violation: 0.0,
                gap_unpenalized: gap,
            })
        }
        CostModel::StableDynamics => {
            gap_stable_dynamics(net, state.phi_t, &state.t, &flows, entropy, r_hat)
        }
    }
}

fn check_spec(spec: &ModelSpec) -> Result<()> {
    if !(spec.eps_rel > 0.0 && spec.eps_rel < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_rel must lie in (0, 1), got {}",
            spec.eps_rel
        )));
    }
    if let GammaMode::Fixed(g) = spec.gamma {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and >= 0, got {g}"
            )));
        }
    }
    if spec.walk_cap == Some(0) {
        return Err(Error::InvalidArgument("walk cap must be at least 1".into()));
    }
    if !(spec.init_slack_rel >= 0.0 && spec.init_slack_rel.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init_slack_rel must be finite and >= 0, got {}",
            spec.init_slack_rel
        )));
    }
    if spec.gap_every == Some(0) {
        return Err(Error::InvalidArgument(
            "gap cadence must be at least 1".into(),
        ));
    }
    Ok(())
}

/// `γ` actually used by `spec` on this instance, with the relative target
/// for the inner solve.
pub fn resolve_gamma(
    net: &Network,
    dm: &DemandMatrix,
    spec: &ModelSpec,
    walk_cap: usize,
) -> Result<(f64, f64)> {
    match spec.gamma {
        GammaMode::Fixed(g) => Ok((g, spec.eps_rel)),
        GammaMode::Auto => {
            // absolute target: ε̃ times the free-flow total travel cost
            let eps_abs = spec.eps_rel * -det_value(net, &net.free_flow_times(), dm)?;
            let bound = spec
                .path_count_log
                .unwrap_or_else(|| default_path_count_log(net, walk_cap));
            let gamma = gamma_star(eps_abs, dm, &vec![bound; dm.len()])?;
            Ok((gamma, 0.5 * spec.eps_rel))
        }
    }
}

/// Runs UMST until `gap ≤ ε̃·gap₀` or a cap is hit.
///
/// Iteration 0 runs with the slack `init_slack_rel·|Φ(t̄)|`; afterwards the
/// line-search budget is `ε̃·gap₀`.
pub fn solve(net: &Network, dm: &DemandMatrix, spec: &ModelSpec) -> Result<EquilibriumSolution> {
    check_spec(spec)?;
    dm.check_against(net)?;
    let walk_cap = spec.walk_cap.unwrap_or_else(|| default_walk_cap(net));
    let simple_cap = default_walk_cap(net);
    if let Some(&(origin, destination)) = validate_reachability(net, dm, simple_cap).first() {
        return Err(Error::Unreachable {
            origin,
            destination,
        });
    }
    let (gamma, eps_rel) = resolve_gamma(net, dm, spec, walk_cap)?;
    if gamma > 0.0 {
        let missing = validate_reachability(net, dm, walk_cap);
        if !missing.is_empty() {
            return Err(Error::UnreachableWithinCap {
                count: missing.len(),
                walk_cap,
            });
        }
    }
    let oracle = if gamma > 0.0 {
        Oracle::Smooth(SmoothOracle {
            net,
            demand: dm,
            gamma,
            walk_cap,
        })
    } else {
        Oracle::Shortest(ShortestPathOracle { net, demand: dm })
    };
    let composite = LinkComposite::new(net, spec.model);
    let gap_every = spec
        .gap_every
        .unwrap_or(if net.edge_count() <= 5000 { 1 } else { 5 });

    let clock = Instant::now();
    let start = composite.lower().to_vec();
    let phi0 = oracle.value(&start)?;
    let settings = UmstSettings {
        lipschitz0: spec.lipschitz0,
        eps_inner: spec.init_slack_rel * phi0.abs(),
        ..UmstSettings::default()
    };
    let mut state = UmstState::init(&oracle, &composite, start, &settings)?;
    state.value_calls += 1;

    let first = gap_at(net, spec.model, gamma, &state, spec.r_hat)?;
    let gap0 = first.gap;
    let mut last = first;
    let mut history = vec![record(&state, &clock, Some(first), gap0)];
    let mut converged = gap0 <= 0.0;
    if !converged {
        state.eps_inner = eps_rel * gap0;
    }
    log::info!(
        "model={} gamma={gamma:e} walk_cap={walk_cap} gap0={gap0:e} eps_inner={:e}",
        spec.model,
        state.eps_inner
    );
    while !converged && state.k < spec.max_iters {
        if spec.time_limit.is_some_and(|lim| clock.elapsed() >= lim) {
            break;
        }
        state.step(&oracle, &composite)?;
        let report = if state.k % gap_every == 0 || state.k == spec.max_iters {
            let r = gap_at(net, spec.model, gamma, &state, spec.r_hat)?;
            last = r;
            converged = r.gap <= eps_rel * gap0;
            Some(r)
        } else {
            None
        };
        history.push(record(&state, &clock, report, gap0));
        if let Some(r) = report {
            log::debug!(
                "k={} gap={:e} rel={:e} L={:e}",
                state.k,
                r.gap,
                r.gap / gap0,
                state.lipschitz
            );
        }
    }
    // the loop can stop between gap checks
    if history.last().is_some_and(|r| r.gap.is_none()) {
        last = gap_at(net, spec.model, gamma, &state, spec.r_hat)?;
        converged = last.gap <= eps_rel * gap0;
        if let Some(r) = history.last_mut() {
            *r = record(&state, &clock, Some(last), gap0);
        }
    }

    let (flows, entropy) = state.averaged_primal();
    let entropy_term = if gamma > 0.0 { entropy } else { 0.0 };
    let primal_objective = match spec.model {
        CostModel::Beckmann => {
            let mut s = 0.0;
            for (e, &f) in net.edges().iter().zip(&flows) {
                s += sigma(e, f)?;
            }
            s
        }
        CostModel::StableDynamics => net
            .edges()
            .iter()
            .zip(&flows)
            .map(|(e, f)| e.free_flow_time * f)
            .sum(),
    };
    Ok(EquilibriumSolution {
        model: spec.model,
        gamma,
        walk_cap,
        dual_objective: state.objective(&composite)?,
        r_tilde: r_tilde(net, &flows)?,
        times: state.t.clone(),
        flows,
        gap: last.gap,
        gap0,
        rel_gap: if gap0 > 0.0 { last.gap / gap0 } else { 0.0 },
        violation: last.violation,
        gap_unpenalized: last.gap_unpenalized,
        primal_objective,
        entropy_term,
        eps_rel,
        eps_inner: state.eps_inner,
        iterations: state.k,
        converged,
        value_calls: state.value_calls,
        gradient_calls: state.gradient_calls,
        history,
    })
}

fn record(
    state: &UmstState,
    clock: &Instant,
    report: Option<GapReport>,
    gap0: f64,
) -> ConvergenceRecord {
    ConvergenceRecord {
        iteration: state.k,
        elapsed_s: clock.elapsed().as_secs_f64(),
        a_n: state.a,
        l_current: state.lipschitz,
        gap: report.map(|r| r.gap),
        rel_gap: report.map(|r| if gap0 > 0.0 { r.gap / gap0 } else { 0.0 }),
        violation: report.map(|r| r.violation),
        gap_unpenalized: report.map(|r| r.gap_unpenalized),
        value_calls: state.value_calls,
        gradient_calls: state.gradient_calls,
        doublings: state.last.doublings,
    }
}
