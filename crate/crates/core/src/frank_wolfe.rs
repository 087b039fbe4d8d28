//! Frank–Wolfe for the deterministic Beckmann problem, used as a baseline.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link_cost::{sigma, travel_time, travel_time_derivative};
use crate::network::{DemandMatrix, Network};
use crate::shortest::det_oracle;

const LINE_SEARCH_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `s_k = 2/(k + 2)`.
    Harmonic,
    /// Minimizes `Σσ` along the segment.
    ExactLineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwSettings {
    pub eps_rel: f64,
    pub step_rule: StepRule,
    pub max_iters: usize,
    pub time_limit: Option<Duration>,
    /// Absolute gap target; the run stops at the smaller of this and `ε̃·gap₀`.
    pub abs_target: Option<f64>,
}

impl FwSettings {
    pub fn new(eps_rel: f64) -> Self {
        Self {
            eps_rel,
            step_rule: StepRule::ExactLineSearch,
            max_iters: 100_000,
            time_limit: None,
            abs_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwRecord {
    pub iteration: usize,
    pub elapsed_s: f64,
    pub objective: f64,
    pub fw_gap: f64,
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwState {
    pub flows: Vec<f64>,
    pub k: usize,
    pub fw_gap: f64,
    pub fw_gap0: f64,
    pub objective: f64,
    pub converged: bool,
    pub history: Vec<FwRecord>,
}

/// All-or-nothing flows at times `t`.
pub fn aon_assignment(net: &Network, dm: &DemandMatrix, t: &[f64]) -> Result<Vec<f64>> {
    Ok(det_oracle(net, t, dm)?.flows)
}

fn times(net: &Network, flows: &[f64]) -> Result<Vec<f64>> {
    net.edges()
        .iter()
        .zip(flows)
        .map(|(e, &f)| travel_time(e, f))
        .collect()
}

fn objective(net: &Network, flows: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (e, &f) in net.edges().iter().zip(flows) {
        s += sigma(e, f)?;
    }
    Ok(s)
}

/// Minimizer over `s ∈ [0, 1]` of `Σσ(f + s·d)`; the derivative
/// `Σ τ(f + s·d)·d` is nondecreasing in `s`.
fn exact_step(net: &Network, flows: &[f64], dir: &[f64]) -> Result<f64> {
    let slope = |s: f64| -> Result<(f64, f64)> {
        let (mut d1, mut d2) = (0.0, 0.0);
        for ((e, &f), &d) in net.edges().iter().zip(flows).zip(dir) {
            if d == 0.0 {
                continue;
            }
            let x = (f + s * d).max(0.0);
            d1 += travel_time(e, x)? * d;
            d2 += travel_time_derivative(e, x)? * d * d;
        }
        Ok((d1, d2))
    };
    if slope(1.0)?.0 <= 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut s = 0.5;
    for _ in 0..LINE_SEARCH_MAX_ITERATIONS {
        let (d1, d2) = slope(s)?;
        if d1 > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi - lo <= 1e-15 || d1 == 0.0 {
            return Ok(s);
        }
        let newton = if d2 > 0.0 { s - d1 / d2 } else { f64::NAN };
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(s)
}

/// Frank–Wolfe from `aon(t̄)` until `fw_gap ≤ ε̃·fw_gap₀` (or the absolute
/// target, whichever is smaller) or a cap is hit.
pub fn fw_run(net: &Network, dm: &DemandMatrix, settings: &FwSettings) -> Result<FwState> {
    if !(settings.eps_rel > 0.0 && settings.eps_rel < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_rel must lie in (0, 1), got {}",
            settings.eps_rel
        )));
    }
    dm.check_against(net)?;
    let clock = Instant::now();
    let mut flows = aon_assignment(net, dm, &net.free_flow_times())?;
    let mut history = Vec::new();
    let mut fw_gap0 = f64::NAN;
    let mut k = 0;
    loop {
        let t = times(net, &flows)?;
        let target = aon_assignment(net, dm, &t)?;
        let fw_gap: f64 = t
            .iter()
            .zip(flows.iter().zip(&target))
            .map(|(ti, (f, y))| ti * (f - y))
            .sum();
        if k == 0 {
            fw_gap0 = fw_gap;
        }
        let obj = objective(net, &flows)?;
        let rel_gap = if fw_gap0 > 0.0 { fw_gap / fw_gap0 } else { 0.0 };
        history.push(FwRecord {
            iteration: k,
            elapsed_s: clock.elapsed().as_secs_f64(),
            objective: obj,
            fw_gap,
            rel_gap,
        });
        let mut stop_at = settings.eps_rel * fw_gap0;
        if let Some(abs) = settings.abs_target {
            stop_at = stop_at.min(abs);
        }
        let converged = fw_gap0 <= 0.0 || fw_gap <= stop_at;
        let out_of_budget = k >= settings.max_iters
            || settings
                .time_limit
                .is_some_and(|lim| clock.elapsed() >= lim);
        if converged || out_of_budget {
            log::info!("frank-wolfe stopped at k={k} gap={fw_gap:e} converged={converged}");
            return Ok(FwState {
                flows,
                k,
                fw_gap,
                fw_gap0,
                objective: obj,
                converged,
                history,
            });
        }
        let dir: Vec<f64> = target.iter().zip(&flows).map(|(y, f)| y - f).collect();
        let s = match settings.step_rule {
            StepRule::Harmonic => 2.0 / (k as f64 + 2.0),
            StepRule::ExactLineSearch => exact_step(net, &flows, &dir)?,
        };
        for (f, d) in flows.iter_mut().zip(&dir) {
            *f = (*f + s * d).max(0.0);
        }
        k += 1;
    }
}
