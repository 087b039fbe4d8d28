//! Smoothed dual oracle `Φ(t) = γψ(t/γ)` for `γ > 0`.
//!
//! For a fixed source `i`, `a[l][j]` is the soft-min aggregate (in log
//! domain, scaled by `γ`) over walks `i → j` with exactly `l` edges and
//! `b[l][j]` over walks with at most `l` edges:
//!
//! ```text
//! a[l+1][j] = γ·ln Σ_{e=(k→j)} exp((a[l][k] − t_e)/γ)
//! b[l+1][j] = γ·ln(exp(b[l][j]/γ) + exp(a[l+1][j]/γ))
//! ```
//!
//! `Φ(t) = Σ_{(i,j)} d_ij·b[H][j]`. The gradient is obtained by a reverse
//! sweep over the same recursion; edge flows are `f = −∇Φ`. Each source costs
//! `O(H·|E|)` time and `O(H·|V|)` memory, and sources run in parallel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{DemandMatrix, Network, OdPair};
use crate::umst::{DualOracle, OracleResult};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Forward tables for one source. Levels are `1..=walk_cap`.
#[derive(Debug, Clone)]
pub struct PsiTables {
    pub source: usize,
    pub walk_cap: usize,
    pub gamma: f64,
    node_count: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PsiTables {
    pub fn a(&self, level: usize, node: usize) -> f64 {
        assert!(
            (1..=self.walk_cap).contains(&level),
            "level {level} outside 1..={}",
            self.walk_cap
        );
        self.a[(level - 1) * self.node_count + node]
    }

    pub fn b(&self, level: usize, node: usize) -> f64 {
        assert!(
            (1..=self.walk_cap).contains(&level),
            "level {level} outside 1..={}",
            self.walk_cap
        );
        self.b[(level - 1) * self.node_count + node]
    }

    fn a_level(&self, level: usize) -> &[f64] {
        &self.a[(level - 1) * self.node_count..level * self.node_count]
    }

    fn b_level(&self, level: usize) -> &[f64] {
        &self.b[(level - 1) * self.node_count..level * self.node_count]
    }
}

fn check_args(net: &Network, t: &[f64], gamma: f64, walk_cap: usize) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if walk_cap == 0 {
        return Err(Error::InvalidArgument("walk cap must be at least 1".into()));
    }
    if t.len() != net.edge_count() {
        return Err(Error::InvalidArgument(format!(
            "time vector has {} entries for {} edges",
            t.len(),
            net.edge_count()
        )));
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// `γ·ln(e^{x/γ} + e^{y/γ})` shifted by the larger argument.
fn lse2(x: f64, y: f64, gamma: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == NEG_INF {
        return hi;
    }
    hi + gamma * ((lo - hi) / gamma).exp().ln_1p()
}

/// One step of the exact-length recursion: `next[j]` from `prev[k]`.
fn advance(net: &Network, t: &[f64], gamma: f64, prev: &[f64], next: &mut [f64]) {
    for (j, slot) in next.iter_mut().enumerate() {
        let mut m = NEG_INF;
        for &e in net.in_edges(j) {
            let x = prev[net.edge(e).tail] - t[e];
            if x > m {
                m = x;
            }
        }
        if m == NEG_INF {
            *slot = NEG_INF;
            continue;
        }
        let mut s = 0.0;
        for &e in net.in_edges(j) {
            let x = prev[net.edge(e).tail] - t[e];
            if x != NEG_INF {
                s += ((x - m) / gamma).exp();
            }
        }
        *slot = m + gamma * s.ln();
    }
}

fn source_indicator(node_count: usize, source: usize) -> Vec<f64> {
    let mut v = vec![NEG_INF; node_count];
    v[source] = 0.0;
    v
}

/// Full forward pass for one source, keeping every level.
pub fn forward(
    net: &Network,
    t: &[f64],
    gamma: f64,
    walk_cap: usize,
    source: usize,
) -> Result<PsiTables> {
    check_args(net, t, gamma, walk_cap)?;
    let n = net.node_count();
    let mut a = vec![NEG_INF; walk_cap * n];
    let mut b = vec![NEG_INF; walk_cap * n];
    let start = source_indicator(n, source);
    advance(net, t, gamma, &start, &mut a[..n]);
    b[..n].copy_from_slice(&a[..n]);
    for l in 1..walk_cap {
        let (done, rest) = a.split_at_mut(l * n);
        advance(net, t, gamma, &done[(l - 1) * n..], &mut rest[..n]);
        for j in 0..n {
            b[l * n + j] = lse2(b[(l - 1) * n + j], a[l * n + j], gamma);
        }
    }
    Ok(PsiTables {
        source,
        walk_cap,
        gamma,
        node_count: n,
        a,
        b,
    })
}

fn source_value(pairs: &[OdPair], b_last: &[f64]) -> Result<f64> {
    let mut v = 0.0;
    for p in pairs {
        let x = b_last[p.destination];
        if x == NEG_INF {
            return Err(Error::Unreachable {
                origin: p.origin,
                destination: p.destination,
            });
        }
        v += p.demand * x;
    }
    Ok(v)
}

/// `Φ(t)` for one source using two rolling levels.
fn source_value_only(
    net: &Network,
    t: &[f64],
    gamma: f64,
    walk_cap: usize,
    origin: usize,
    pairs: &[OdPair],
) -> Result<f64> {
    let n = net.node_count();
    let mut a = source_indicator(n, origin);
    let mut next = vec![NEG_INF; n];
    advance(net, t, gamma, &a, &mut next);
    std::mem::swap(&mut a, &mut next);
    let mut b = a.clone();
    for _ in 1..walk_cap {
        advance(net, t, gamma, &a, &mut next);
        std::mem::swap(&mut a, &mut next);
        for (bj, &aj) in b.iter_mut().zip(&a) {
            *bj = lse2(*bj, aj, gamma);
        }
    }
    source_value(pairs, &b)
}

/// Reverse sweep: returns this source's value and edge flows `−∂ψ^i/∂t`.
fn source_gradient(
    net: &Network,
    t: &[f64],
    gamma: f64,
    walk_cap: usize,
    origin: usize,
    pairs: &[OdPair],
) -> Result<(f64, Vec<f64>)> {
    let tables = forward(net, t, gamma, walk_cap, origin)?;
    let value = source_value(pairs, tables.b_level(walk_cap))?;
    let n = net.node_count();
    let start = source_indicator(n, origin);

    let mut flows = vec![0.0; net.edge_count()];
    let mut b_adj = vec![0.0; n];
    for p in pairs {
        b_adj[p.destination] += p.demand;
    }
    let mut a_adj = vec![0.0; n];
    let mut a_adj_prev = vec![0.0; n];

    for l in (1..=walk_cap).rev() {
        let a_l = tables.a_level(l);
        if l == 1 {
            for j in 0..n {
                a_adj[j] += b_adj[j];
            }
        } else {
            // b[l] = γ·lse(b[l−1], a[l]); the two partials sum to one.
            let b_l = tables.b_level(l);
            let b_prev = tables.b_level(l - 1);
            for j in 0..n {
                let w = b_adj[j];
                if w == 0.0 {
                    continue;
                }
                let wa = if a_l[j] == NEG_INF {
                    0.0
                } else {
                    ((a_l[j] - b_l[j]) / gamma).exp()
                };
                let wb = if b_prev[j] == NEG_INF {
                    0.0
                } else {
                    ((b_prev[j] - b_l[j]) / gamma).exp()
                };
                a_adj[j] += w * wa;
                b_adj[j] = w * wb;
            }
        }

        let a_prev: &[f64] = if l == 1 {
            &start
        } else {
            tables.a_level(l - 1)
        };
        a_adj_prev.fill(0.0);
        for j in 0..n {
            let w = a_adj[j];
            if w == 0.0 || a_l[j] == NEG_INF {
                continue;
            }
            for &e in net.in_edges(j) {
                let k = net.edge(e).tail;
                if a_prev[k] == NEG_INF {
                    continue;
                }
                let share = w * ((a_prev[k] - t[e] - a_l[j]) / gamma).exp();
                flows[e] += share;
                a_adj_prev[k] += share;
            }
        }
        std::mem::swap(&mut a_adj, &mut a_adj_prev);
    }
    Ok((value, flows))
}

/// `Φ(t) = γψ(t/γ)` over all OD pairs.
pub fn value(
    net: &Network,
    t: &[f64],
    gamma: f64,
    walk_cap: usize,
    dm: &DemandMatrix,
) -> Result<f64> {
    check_args(net, t, gamma, walk_cap)?;
    let groups: Vec<_> = dm.by_origin().collect();
    let parts: Vec<Result<f64>> = groups
        .par_iter()
        .map(|&(origin, pairs)| source_value_only(net, t, gamma, walk_cap, origin, pairs))
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Value, gradient and flows `f = −∇Φ(t)`.
pub fn gradient(
    net: &Network,
    t: &[f64],
    gamma: f64,
    walk_cap: usize,
    dm: &DemandMatrix,
) -> Result<OracleResult> {
    check_args(net, t, gamma, walk_cap)?;
    let groups: Vec<_> = dm.by_origin().collect();
    let parts: Vec<Result<(f64, Vec<f64>)>> = groups
        .par_iter()
        .map(|&(origin, pairs)| source_gradient(net, t, gamma, walk_cap, origin, pairs))
        .collect();
    let mut total = 0.0;
    let mut flows = vec![0.0; net.edge_count()];
    for p in parts {
        let (v, f) = p?;
        total += v;
        for (acc, x) in flows.iter_mut().zip(f) {
            *acc += x;
        }
    }
    Ok(OracleResult::from_flows(total, flows))
}

/// Default walk cap: long enough for every simple path.
pub fn default_walk_cap(net: &Network) -> usize {
    net.node_count().saturating_sub(1).max(1)
}

/// The smoothed oracle as a [`DualOracle`].
#[derive(Debug, Clone, Copy)]
pub struct SmoothOracle<'a> {
    pub net: &'a Network,
    pub demand: &'a DemandMatrix,
    pub gamma: f64,
    pub walk_cap: usize,
}

impl DualOracle for SmoothOracle<'_> {
    fn value(&self, t: &[f64]) -> Result<f64> {
        value(self.net, t, self.gamma, self.walk_cap, self.demand)
    }

    fn evaluate(&self, t: &[f64]) -> Result<OracleResult> {
        gradient(self.net, t, self.gamma, self.walk_cap, self.demand)
    }
}
