//! BPR link costs, their primitives and conjugates, and the per-edge
//! proximal step of the dual composite term.
//!
//! For `τ(f) = t̄·(1 + ρ·(f/f̄)^{1/μ})` the conjugate of `σ(f) = ∫₀^f τ` is
//! `σ*(t) = f̄·((t − t̄)/(t̄ρ))^μ·(t − t̄)/(1 + μ)` on `t ≥ t̄`. In the
//! stable-dynamics limit `μ → 0+` it becomes `f̄·(t − t̄)`.

use crate::error::{Error, Result};
use crate::network::Edge;

/// Which conjugate the dual composite uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// BPR costs with the per-edge exponent from the network.
    Beckmann,
    /// Capacity-constrained limit: free-flow time below capacity.
    StableDynamics,
}

impl std::fmt::Display for CostModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CostModel::Beckmann => "beckmann",
            CostModel::StableDynamics => "stable",
        })
    }
}

const PROX_MAX_ITERATIONS: usize = 200;

fn check_flow(flow: f64) -> Result<()> {
    if flow < 0.0 || flow.is_nan() {
        return Err(Error::NegativeFlow(flow));
    }
    Ok(())
}

fn excess(edge: &Edge, time: f64) -> Result<f64> {
    let s = time - edge.free_flow_time;
    if s < 0.0 || s.is_nan() {
        return Err(Error::BelowFreeFlow {
            time,
            free_flow_time: edge.free_flow_time,
        });
    }
    Ok(s)
}

/// BPR travel time `τ_e(f)`.
pub fn travel_time(edge: &Edge, flow: f64) -> Result<f64> {
    check_flow(flow)?;
    Ok(edge.free_flow_time * (1.0 + edge.rho * (flow / edge.capacity).powf(edge.power)))
}

/// `dτ_e/df`, used by line searches.
pub fn travel_time_derivative(edge: &Edge, flow: f64) -> Result<f64> {
    check_flow(flow)?;
    let p = edge.power;
    Ok(edge.free_flow_time * edge.rho * p * (flow / edge.capacity).powf(p - 1.0) / edge.capacity)
}

/// `σ_e(f) = ∫₀^f τ_e(z) dz`.
pub fn sigma(edge: &Edge, flow: f64) -> Result<f64> {
    check_flow(flow)?;
    let mu = edge.mu();
    Ok(edge.free_flow_time
        * flow
        * (1.0 + edge.rho * (mu / (1.0 + mu)) * (flow / edge.capacity).powf(edge.power)))
}

/// `σ*_e(t)`, defined for `t ≥ t̄_e`.
///
/// A Beckmann edge with `ρ = 0` has constant time, so its conjugate is the
/// indicator of `{t̄_e}` and evaluates to `+∞` above it.
pub fn sigma_conj(model: CostModel, edge: &Edge, time: f64) -> Result<f64> {
    let s = excess(edge, time)?;
    Ok(match model {
        CostModel::StableDynamics => edge.capacity * s,
        CostModel::Beckmann => {
            if s == 0.0 {
                0.0
            } else if edge.rho == 0.0 {
                f64::INFINITY
            } else {
                let mu = edge.mu();
                edge.capacity * (s / (edge.free_flow_time * edge.rho)).powf(mu) * s / (1.0 + mu)
            }
        }
    })
}

/// `dσ*_e/dt`: the flow whose travel time is `t` (Beckmann), or the
/// capacity (stable dynamics).
pub fn sigma_conj_grad(model: CostModel, edge: &Edge, time: f64) -> Result<f64> {
    let s = excess(edge, time)?;
    Ok(match model {
        CostModel::StableDynamics => edge.capacity,
        CostModel::Beckmann => {
            if s == 0.0 {
                0.0
            } else if edge.rho == 0.0 {
                f64::INFINITY
            } else {
                edge.capacity * (s / (edge.free_flow_time * edge.rho)).powf(edge.mu())
            }
        }
    })
}

/// Minimizer over `t ≥ t̄_e` of `½(t − t̄_e)² + g·t + a·σ*_e(t)`.
///
/// Beckmann edges solve `s + a·f̄·(s/(t̄ρ))^μ = −g` for `s = t − t̄`. With
/// `z = s^μ` this reads `z^{1/μ} + c·z = −g`, which is convex and increasing
/// in `z`, so Newton started from the upper end of the bracket decreases
/// monotonically to the root. Bisection guards every step anyway.
pub fn prox_step(model: CostModel, edge: &Edge, g: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) || !g.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "prox_step needs a > 0 and finite g, got a={a}, g={g}"
        )));
    }
    let tbar = edge.free_flow_time;
    let r = -g;
    if r <= 0.0 {
        return Ok(tbar);
    }
    match model {
        CostModel::StableDynamics => Ok(tbar + (r - a * edge.capacity).max(0.0)),
        CostModel::Beckmann => {
            if edge.rho == 0.0 {
                return Ok(tbar);
            }
            let p = edge.power;
            let mu = edge.mu();
            let c = a * edge.capacity * (tbar * edge.rho).powf(-mu);
            let s = solve_power_balance(p, c, r)?;
            Ok(tbar + s)
        }
    }
}

/// Root `s ≥ 0` of `s + c·s^{1/p} = r` for `p ≥ 1`, `c > 0`, `r > 0`.
fn solve_power_balance(p: f64, c: f64, r: f64) -> Result<f64> {
    let psi = |z: f64| z.powf(p) + c * z - r;
    let tol = 1e-13 * (1.0 + r);
    let mut lo = 0.0_f64;
    let mut hi = r.powf(1.0 / p).min(r / c);
    let mut z = hi;
    for _ in 0..PROX_MAX_ITERATIONS {
        let f = psi(z);
        if f.abs() <= tol {
            return Ok(z.powf(p));
        }
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(z.powf(p));
        }
        let slope = p * z.powf(p - 1.0) + c;
        let newton = z - f / slope;
        z = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::RootFinder(PROX_MAX_ITERATIONS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bpr(tbar: f64, cap: f64, rho: f64) -> Edge {
        Edge::new(0, 1, tbar, cap, rho, 4.0)
    }

    /// Composite Simpson quadrature.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    /// `sup_f (t − t̄)f − (σ(f) − t̄f)` by grid search plus local refinement.
    fn conj_by_grid(e: &Edge, t: f64) -> f64 {
        let objective = |f: f64| t * f - sigma(e, f).unwrap();
        let (mut lo, mut hi) = (0.0, 10.0 * e.capacity);
        for _ in 0..60 {
            let n = 200;
            let h = (hi - lo) / n as f64;
            let best = (0..=n)
                .map(|i| lo + i as f64 * h)
                .max_by(|a, b| objective(*a).total_cmp(&objective(*b)))
                .unwrap();
            lo = (best - h).max(0.0);
            hi = best + h;
        }
        objective(0.5 * (lo + hi))
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Golden-section search driven by a sign oracle `less(c, d) ⇔ F(c) < F(d)`.
    fn golden_section(less: impl Fn(f64, f64) -> bool, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if less(c, d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    /// `(y + h)^q − y^q` without cancellation.
    fn pow_diff(y: f64, h: f64, q: f64) -> f64 {
        if y == 0.0 {
            return h.powf(q);
        }
        y.powf(q) * (q * (h / y).ln_1p()).exp_m1()
    }

    /// `F(c) − F(d)` for `F(t) = ½(t − t̄)² + g·t + a·σ*(t)`, formed from
    /// differences so that it stays accurate when `c ≈ d`.
    fn prox_objective_diff(model: CostModel, e: &Edge, g: f64, a: f64, c: f64, d: f64) -> f64 {
        // every term is an exact multiple of h, so the sign survives h → 0
        let h = c - d;
        let (sc, sd) = (c - e.free_flow_time, d - e.free_flow_time);
        let quad = h * (0.5 * (sc + sd) + g);
        let conj = match model {
            CostModel::StableDynamics => e.capacity * h,
            CostModel::Beckmann => {
                let mu = e.mu();
                e.capacity / (1.0 + mu)
                    * (e.free_flow_time * e.rho).powf(-mu)
                    * pow_diff(sd, h, 1.0 + mu)
            }
        };
        quad + a * conj
    }

    #[test]
    fn travel_time_values() {
        let e = bpr(10.0, 100.0, 0.15);
        assert_eq!(travel_time(&e, 0.0).unwrap(), 10.0);
        assert!((travel_time(&e, 100.0).unwrap() - 11.5).abs() < 1e-12);
        assert!((travel_time(&e, 50.0).unwrap() - 10.09375).abs() < 1e-12);
        assert!(matches!(travel_time(&e, -1.0), Err(Error::NegativeFlow(_))));
    }

    #[test]
    fn sigma_matches_quadrature() {
        let e = bpr(10.0, 100.0, 0.15);
        assert_eq!(sigma(&e, 0.0).unwrap(), 0.0);
        let quad = simpson(|z| travel_time(&e, z).unwrap(), 0.0, 100.0, 2000);
        let closed = 10.0 * 100.0 * (1.0 + 0.15 / 5.0);
        assert!((quad - closed).abs() < 1e-9 * closed);
        assert!((sigma(&e, 100.0).unwrap() - closed).abs() < 1e-9 * closed);
        // dσ/df = τ
        for f in [1.0, 30.0, 80.0, 250.0] {
            let h = 1e-4;
            let fd = (sigma(&e, f + h).unwrap() - sigma(&e, f - h).unwrap()) / (2.0 * h);
            assert!((fd - travel_time(&e, f).unwrap()).abs() < 1e-6 * fd);
        }
    }

    #[test]
    fn conjugate_matches_grid_sup() {
        let e = bpr(10.0, 100.0, 0.15);
        assert_eq!(sigma_conj(CostModel::Beckmann, &e, 10.0).unwrap(), 0.0);
        let grid = conj_by_grid(&e, 20.0);
        // frozen from the grid oracle
        assert!((grid - 1285.485470).abs() < 1e-4, "{grid}");
        let closed = sigma_conj(CostModel::Beckmann, &e, 20.0).unwrap();
        assert!((closed - grid).abs() < 1e-6 * grid);

        let sd = bpr(10.0, 100.0, 0.15);
        assert_eq!(
            sigma_conj(CostModel::StableDynamics, &sd, 12.0).unwrap(),
            200.0
        );
        assert!(sigma_conj(CostModel::Beckmann, &e, 9.0).is_err());
        assert!(sigma_conj_grad(CostModel::StableDynamics, &e, 9.0).is_err());
    }

    #[test]
    fn conjugate_gradient() {
        let e = bpr(10.0, 100.0, 0.15);
        assert_eq!(sigma_conj_grad(CostModel::Beckmann, &e, 10.0).unwrap(), 0.0);
        for t in [10.5, 12.0, 20.0, 55.0] {
            let f = sigma_conj_grad(CostModel::Beckmann, &e, t).unwrap();
            assert!((travel_time(&e, f).unwrap() - t).abs() < 1e-10 * t);
            let h = 1e-5;
            let fd = (sigma_conj(CostModel::Beckmann, &e, t + h).unwrap()
                - sigma_conj(CostModel::Beckmann, &e, t - h).unwrap())
                / (2.0 * h);
            assert!((fd - f).abs() < 1e-6 * f);
        }
        assert_eq!(
            sigma_conj_grad(CostModel::StableDynamics, &e, 13.0).unwrap(),
            100.0
        );
    }

    #[test]
    fn zero_rho_is_fixed_time() {
        let e = bpr(3.0, 10.0, 0.0);
        assert_eq!(prox_step(CostModel::Beckmann, &e, -50.0, 2.0).unwrap(), 3.0);
        assert_eq!(sigma_conj(CostModel::Beckmann, &e, 3.0).unwrap(), 0.0);
        assert_eq!(sigma_conj_grad(CostModel::Beckmann, &e, 3.0).unwrap(), 0.0);
        assert_eq!(
            sigma_conj(CostModel::Beckmann, &e, 4.0).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn prox_examples() {
        let e = bpr(1.0, 2.0, 0.15);
        assert_eq!(prox_step(CostModel::Beckmann, &e, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(
            prox_step(CostModel::StableDynamics, &e, 0.0, 1.0).unwrap(),
            1.0
        );
        // t̄ = 1, g = −3, a·f̄ = 2
        assert_eq!(
            prox_step(CostModel::StableDynamics, &e, -3.0, 1.0).unwrap(),
            2.0
        );
        assert!(prox_step(CostModel::Beckmann, &e, -1.0, 0.0).is_err());
    }

    #[test]
    fn prox_matches_bisection_oracle() {
        let e = bpr(7.0, 40.0, 0.3);
        for (g, a) in [
            (-0.5, 0.1),
            (-10.0, 1.0),
            (-1e4, 3.0),
            (-2.0, 1e3),
            (-1e-6, 1e-6),
        ] {
            let t = prox_step(CostModel::Beckmann, &e, g, a).unwrap();
            let s = t - e.free_flow_time;
            let stationarity =
                |s: f64| s + a * e.capacity * (s / (e.free_flow_time * e.rho)).powf(e.mu()) + g;
            // the root brackets between the floats adjacent to t
            let tol = 1e-12 * (1.0 + g.abs());
            let below = (t.next_down() - e.free_flow_time).max(0.0);
            let above = t.next_up() - e.free_flow_time;
            assert!(
                stationarity(below) <= tol && stationarity(above) >= -tol,
                "g={g} a={a} t={t}"
            );
            let oracle = bisect(stationarity, 0.0, -g);
            assert!(
                (s - oracle).abs() <= 1e-9 * (1.0 + oracle),
                "{s} vs {oracle}"
            );
        }
    }

    proptest! {
        #[test]
        fn fenchel_young_equality(
            tbar in 0.1f64..50.0, cap in 1.0f64..1e4, rho in 0.01f64..2.0,
            power in 1.0f64..6.0, excess in 1e-6f64..100.0,
        ) {
            let e = Edge::new(0, 1, tbar, cap, rho, power);
            let t = tbar + excess;
            let f = sigma_conj_grad(CostModel::Beckmann, &e, t).unwrap();
            let lhs = sigma(&e, f).unwrap() + sigma_conj(CostModel::Beckmann, &e, t).unwrap();
            let rhs = t * f;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-300));
        }

        #[test]
        fn prox_matches_golden_section(
            tbar in 0.1f64..20.0, cap in 0.5f64..100.0, rho in 0.01f64..1.0,
            g in -50.0f64..0.0, a in 0.01f64..5.0, stable in any::<bool>(),
        ) {
            let model = if stable { CostModel::StableDynamics } else { CostModel::Beckmann };
            let e = Edge::new(0, 1, tbar, cap, rho, 4.0);
            let t = prox_step(model, &e, g, a).unwrap();
            prop_assert!(t >= tbar);
            let less = |c: f64, d: f64| prox_objective_diff(model, &e, g, a, c, d) < 0.0;
            let gs = golden_section(less, tbar, tbar + 10.0 * (-g) + 1.0);
            prop_assert!((t - gs).abs() <= 1e-8 * (1.0 + gs.abs()), "prox {} golden {}", t, gs);
        }

        #[test]
        fn prox_monotone_in_g(
            g1 in -100.0f64..0.0, g2 in -100.0f64..0.0, a in 0.01f64..5.0, stable in any::<bool>(),
        ) {
            let model = if stable { CostModel::StableDynamics } else { CostModel::Beckmann };
            let e = Edge::new(0, 1, 2.0, 10.0, 0.15, 4.0);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(prox_step(model, &e, lo, a).unwrap() >= prox_step(model, &e, hi, a).unwrap());
        }
    }
}
