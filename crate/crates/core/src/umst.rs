//! Universal method of similar triangles for `min_{t ≥ lower} Φ(t) + h(t)`
//! with an adaptive, inexact line search on the Lipschitz estimate `L`.
//!
//! The state keeps the linear model `Σ α_k ∇Φ(y^k)` as a running vector, so
//! every prox step is a single separable minimization, and it accumulates
//! `Σ α_k f^k` and `Σ α_k e_k` for primal recovery.

use crate::error::{Error, Result};
use crate::link_cost::{prox_step, sigma_conj, CostModel};
use crate::network::Network;

/// Value, and optionally flows, of the dual objective at a point.
///
/// `flows = −∇Φ`; for the traffic oracles they are edge flows and
/// therefore nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub flows: Vec<f64>,
}

impl OracleResult {
    pub fn from_flows(value: f64, flows: Vec<f64>) -> Self {
        Self { value, flows }
    }

    pub fn from_grad(value: f64, mut grad: Vec<f64>) -> Self {
        for g in &mut grad {
            *g = -*g;
        }
        Self { value, flows: grad }
    }

    pub fn grad(&self) -> Vec<f64> {
        self.flows.iter().map(|f| -f).collect()
    }
}

/// First-order oracle for the smooth (or subdifferentiable) part `Φ`.
pub trait DualOracle: Sync {
    fn value(&self, t: &[f64]) -> Result<f64>;
    fn evaluate(&self, t: &[f64]) -> Result<OracleResult>;
}

/// The simple part `h` together with the feasible box `t ≥ lower`.
pub trait Composite {
    fn lower(&self) -> &[f64];
    fn value(&self, t: &[f64]) -> Result<f64>;
    /// Writes `argmin_{t ≥ lower} ½‖t − center‖² + ⟨g, t⟩ + a·h(t)` into `out`.
    fn prox(&self, center: &[f64], g: &[f64], a: f64, out: &mut [f64]) -> Result<()>;
}

/// `h = 0` on a box.
#[derive(Debug, Clone)]
pub struct BoundOnly {
    pub lower: Vec<f64>,
}

impl Composite for BoundOnly {
    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn value(&self, _t: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn prox(&self, center: &[f64], g: &[f64], _a: f64, out: &mut [f64]) -> Result<()> {
        for (((o, c), gi), lo) in out.iter_mut().zip(center).zip(g).zip(&self.lower) {
            *o = (c - gi).max(*lo);
        }
        Ok(())
    }
}

/// `h(t) = Σ_e σ*_e(t_e)` over `t ≥ t̄`.
#[derive(Debug, Clone)]
pub struct LinkComposite<'a> {
    net: &'a Network,
    model: CostModel,
    free_flow: Vec<f64>,
}

impl<'a> LinkComposite<'a> {
    pub fn new(net: &'a Network, model: CostModel) -> Self {
        Self {
            net,
            model,
            free_flow: net.free_flow_times(),
        }
    }

    pub fn model(&self) -> CostModel {
        self.model
    }
}

impl Composite for LinkComposite<'_> {
    fn lower(&self) -> &[f64] {
        &self.free_flow
    }

    fn value(&self, t: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (e, &te) in self.net.edges().iter().zip(t) {
            total += sigma_conj(self.model, e, te)?;
        }
        Ok(total)
    }

    fn prox(&self, center: &[f64], g: &[f64], a: f64, out: &mut [f64]) -> Result<()> {
        for (i, e) in self.net.edges().iter().enumerate() {
            // ½(t − c)² + g·t equals ½(t − t̄)² + (g + t̄ − c)·t up to a constant
            let shifted = g[i] + e.free_flow_time - center[i];
            out[i] = prox_step(self.model, e, shifted, a)?;
        }
        Ok(())
    }
}

/// `argmin_{t ≥ lower} ½‖t − center‖² + ⟨g, t⟩ + a·h(t)`.
pub fn prox_argmin(
    g: &[f64],
    a: f64,
    center: &[f64],
    composite: &impl Composite,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; g.len()];
    composite.prox(center, g, a, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UmstSettings {
    /// Initial Lipschitz estimate.
    pub lipschitz0: f64,
    /// Absolute accuracy `ε` in the line-search slack.
    pub eps_inner: f64,
    /// Doublings of `L` allowed in a single line search.
    pub max_doublings: u32,
}

impl Default for UmstSettings {
    fn default() -> Self {
        Self {
            lipschitz0: 1.0,
            eps_inner: 0.0,
            max_doublings: 64,
        }
    }
}

/// Line-search outcome of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub alpha: f64,
    pub a_new: f64,
    /// Accepted `L`.
    pub lipschitz: f64,
    /// `Φ(t^{k+1})`.
    pub lhs: f64,
    /// Linearization at `y^{k+1}` plus the quadratic and `ε` terms.
    pub rhs: f64,
    pub doublings: u32,
}

#[derive(Debug, Clone)]
pub struct UmstState {
    pub k: usize,
    pub a: f64,
    pub lipschitz: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Prox center `y^0`.
    pub start: Vec<f64>,
    /// `Σ α_k ∇Φ(y^k)`.
    pub grad_accum: Vec<f64>,
    /// `Σ α_k (Φ(y^k) − ⟨∇Φ(y^k), y^k⟩)`.
    pub model_const: f64,
    pub flow_accum: Vec<f64>,
    /// `Σ α_k e_k` with `e_k = −⟨f^k, y^k⟩ − Φ(y^k)`.
    pub entropy_accum: f64,
    /// `Φ(t^k)`, kept from the line search.
    pub phi_t: f64,
    pub eps_inner: f64,
    pub max_doublings: u32,
    /// Evaluations of `Φ`, including those made by gradient calls.
    pub value_calls: u64,
    pub gradient_calls: u64,
    pub last: StepStats,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(α·u + A·t)/(A + α)` written as `t + w·(u − t)`, so coordinates with
/// `u = t` are reproduced exactly; clamped to the box to absorb roundoff.
fn combine(alpha: f64, u: &[f64], a: f64, t: &[f64], lower: &[f64]) -> Vec<f64> {
    let w = alpha / (a + alpha);
    u.iter()
        .zip(t)
        .zip(lower)
        .map(|((ui, ti), lo)| (ti + w * (ui - ti)).max(*lo))
        .collect()
}

/// `Φ(y) + ⟨∇Φ(y), x − y⟩` with `∇Φ = −flows`.
fn linearization(at: &OracleResult, y: &[f64], x: &[f64]) -> f64 {
    at.value
        - at.flows
            .iter()
            .zip(x.iter().zip(y))
            .map(|(f, (xi, yi))| f * (xi - yi))
            .sum::<f64>()
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite)
    }
}

impl UmstState {
    /// Iteration 0 from `y^0 = start`.
    pub fn init(
        oracle: &impl DualOracle,
        composite: &impl Composite,
        start: Vec<f64>,
        settings: &UmstSettings,
    ) -> Result<Self> {
        if !(settings.lipschitz0 > 0.0) || !(settings.eps_inner >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need L0 > 0 and eps >= 0, got L0={}, eps={}",
                settings.lipschitz0, settings.eps_inner
            )));
        }
        if start.len() != composite.lower().len() {
            return Err(Error::InvalidArgument(
                "start point and bound differ in length".into(),
            ));
        }
        let at_y = oracle.evaluate(&start)?;
        check_finite(at_y.value)?;
        let mut value_calls = 1;
        let grad = at_y.grad();
        let mut lipschitz = settings.lipschitz0;
        let mut doublings = 0;
        loop {
            let alpha = 1.0 / lipschitz;
            let scaled: Vec<f64> = grad.iter().map(|g| alpha * g).collect();
            let u = prox_argmin(&scaled, alpha, &start, composite)?;
            let phi_t = check_finite(oracle.value(&u)?)?;
            value_calls += 1;
            let lhs = phi_t;
            let rhs = linearization(&at_y, &start, &u)
                + 0.5 * lipschitz * dist_sq(&u, &start)
                + 0.5 * settings.eps_inner;
            if lhs <= rhs {
                let model_const = alpha * (at_y.value - dot(&grad, &start));
                return Ok(Self {
                    k: 0,
                    a: alpha,
                    lipschitz,
                    t: u.clone(),
                    u,
                    y: start.clone(),
                    start,
                    grad_accum: scaled,
                    model_const,
                    flow_accum: at_y.flows.iter().map(|f| alpha * f).collect(),
                    entropy_accum: -model_const,
                    phi_t,
                    eps_inner: settings.eps_inner,
                    max_doublings: settings.max_doublings,
                    value_calls,
                    gradient_calls: 1,
                    last: StepStats {
                        alpha,
                        a_new: alpha,
                        lipschitz,
                        lhs,
                        rhs,
                        doublings,
                    },
                });
            }
            doublings += 1;
            if doublings > settings.max_doublings {
                return Err(Error::DoublingCap {
                    cap: settings.max_doublings,
                    lipschitz,
                });
            }
            lipschitz *= 2.0;
        }
    }

    /// One accepted step `k → k + 1`. On error the state is unchanged
    /// apart from the call counters.
    pub fn step(
        &mut self,
        oracle: &impl DualOracle,
        composite: &impl Composite,
    ) -> Result<StepStats> {
        let lower = composite.lower();
        let mut lipschitz = self.lipschitz / 2.0;
        let mut doublings = 0;
        loop {
            let alpha =
                0.5 / lipschitz + (0.25 / (lipschitz * lipschitz) + self.a / lipschitz).sqrt();
            let a_new = self.a + alpha;
            if !a_new.is_finite() {
                return Err(Error::Diverged { iterations: self.k });
            }
            let y = combine(alpha, &self.u, self.a, &self.t, lower);
            let at_y = oracle.evaluate(&y)?;
            self.gradient_calls += 1;
            self.value_calls += 1;
            check_finite(at_y.value)?;
            let g_new: Vec<f64> = self
                .grad_accum
                .iter()
                .zip(&at_y.flows)
                .map(|(g, f)| g - alpha * f)
                .collect();
            let u = prox_argmin(&g_new, a_new, &self.start, composite)?;
            let t = combine(alpha, &u, self.a, &self.t, lower);
            let phi_t = check_finite(oracle.value(&t)?)?;
            self.value_calls += 1;
            let lhs = phi_t;
            let rhs = linearization(&at_y, &y, &t)
                + 0.5 * lipschitz * dist_sq(&t, &y)
                + alpha / (2.0 * a_new) * self.eps_inner;
            if lhs <= rhs {
                let e_y = -dot(&at_y.flows, &y) - at_y.value;
                self.k += 1;
                self.a = a_new;
                self.lipschitz = lipschitz;
                self.model_const -= alpha * e_y;
                self.entropy_accum += alpha * e_y;
                for (acc, f) in self.flow_accum.iter_mut().zip(&at_y.flows) {
                    *acc += alpha * f;
                }
                self.grad_accum = g_new;
                self.t = t;
                self.u = u;
                self.y = y;
                self.phi_t = phi_t;
                self.last = StepStats {
                    alpha,
                    a_new,
                    lipschitz,
                    lhs,
                    rhs,
                    doublings,
                };
                return Ok(self.last);
            }
            doublings += 1;
            if doublings > self.max_doublings {
                return Err(Error::DoublingCap {
                    cap: self.max_doublings,
                    lipschitz,
                });
            }
            lipschitz *= 2.0;
        }
    }

    /// `(Σ α_k f^k / A_N, Σ α_k e_k / A_N)`.
    pub fn averaged_primal(&self) -> (Vec<f64>, f64) {
        let flows = self.flow_accum.iter().map(|f| f / self.a).collect();
        (flows, self.entropy_accum / self.a)
    }

    /// `F(t^N) = Φ(t^N) + h(t^N)`.
    pub fn objective(&self, composite: &impl Composite) -> Result<f64> {
        Ok(self.phi_t + composite.value(&self.t)?)
    }

    /// `min_{t ≥ lower} ½‖t − y^0‖² + Σ α_k [Φ(y^k) + ⟨∇Φ(y^k), t − y^k⟩ + h(t)]`,
    /// attained at `u^N`.
    pub fn model_minimum(&self, composite: &impl Composite) -> Result<f64> {
        Ok(0.5 * dist_sq(&self.u, &self.start)
            + self.model_const
            + dot(&self.grad_accum, &self.u)
            + self.a * composite.value(&self.u)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Edge;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `Φ(t) = ½ Σ_i w_i (t_i − c_i)²`.
    struct Quadratic {
        weights: Vec<f64>,
        center: Vec<f64>,
    }

    impl DualOracle for Quadratic {
        fn value(&self, t: &[f64]) -> Result<f64> {
            Ok(0.5
                * t.iter()
                    .zip(&self.center)
                    .zip(&self.weights)
                    .map(|((x, c), w)| w * (x - c) * (x - c))
                    .sum::<f64>())
        }

        fn evaluate(&self, t: &[f64]) -> Result<OracleResult> {
            let grad = t
                .iter()
                .zip(&self.center)
                .zip(&self.weights)
                .map(|((x, c), w)| w * (x - c))
                .collect();
            Ok(OracleResult::from_grad(self.value(t)?, grad))
        }
    }

    fn free(n: usize) -> BoundOnly {
        BoundOnly {
            lower: vec![f64::NEG_INFINITY; n],
        }
    }

    fn settings(l0: f64, eps: f64) -> UmstSettings {
        UmstSettings {
            lipschitz0: l0,
            eps_inner: eps,
            ..UmstSettings::default()
        }
    }

    #[test]
    fn exact_lipschitz_needs_no_doubling() {
        let q = Quadratic {
            weights: vec![4.0, 4.0],
            center: vec![1.0, -2.0],
        };
        let s = UmstState::init(&q, &free(2), vec![0.0, 0.0], &settings(4.0, 1e-12)).unwrap();
        assert_eq!(s.last.doublings, 0);
        // a gradient step with the true constant lands on the minimizer
        assert!((s.t[0] - 1.0).abs() < 1e-12 && (s.t[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn underestimate_doubles_three_times() {
        let q = Quadratic {
            weights: vec![8.0],
            center: vec![3.0],
        };
        let s = UmstState::init(&q, &free(1), vec![0.0], &settings(1.0, 1e-12)).unwrap();
        assert_eq!(s.last.doublings, 3);
        assert_eq!(s.lipschitz, 8.0);
    }

    #[test]
    fn stationary_start() {
        let q = Quadratic {
            weights: vec![2.0],
            center: vec![5.0],
        };
        let s = UmstState::init(&q, &free(1), vec![5.0], &settings(1.0, 0.0)).unwrap();
        assert_eq!(s.last.doublings, 0);
        assert_eq!(s.t, vec![5.0]);
    }

    #[test]
    fn prox_argmin_cases() {
        let bound = BoundOnly {
            lower: vec![1.0, 2.0],
        };
        assert_eq!(
            prox_argmin(&[0.0, 0.0], 1.0, &[1.0, 2.0], &bound).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            prox_argmin(&[-3.0, 4.0], 1.0, &[1.0, 2.0], &bound).unwrap(),
            vec![4.0, 2.0]
        );

        let net = Network::new(2, vec![Edge::new(0, 1, 1.0, 2.0, 0.15, 4.0)]).unwrap();
        let sd = LinkComposite::new(&net, CostModel::StableDynamics);
        let got = prox_argmin(&[-3.0], 1.0, &[1.0], &sd).unwrap();
        assert_eq!(
            got,
            vec![prox_step(CostModel::StableDynamics, &net.edges()[0], -3.0, 1.0).unwrap()]
        );
        assert_eq!(prox_argmin(&[0.0], 1.0, &[1.0], &sd).unwrap(), vec![1.0]);
    }

    #[test]
    fn shifted_center_matches_direct_minimization() {
        // center ≠ t̄: ½(t − 3)² − 2t + a·f̄(t − t̄) on t ≥ 1, minimized at 3 + 2 − a·f̄
        let net = Network::new(2, vec![Edge::new(0, 1, 1.0, 2.0, 0.15, 4.0)]).unwrap();
        let sd = LinkComposite::new(&net, CostModel::StableDynamics);
        let got = prox_argmin(&[-2.0], 0.5, &[3.0], &sd).unwrap();
        assert!((got[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_convergence() {
        let q = Quadratic {
            weights: vec![1.0],
            center: vec![7.0],
        };
        let eps = 1e-8;
        let mut s = UmstState::init(&q, &free(1), vec![-100.0], &settings(1.0, eps)).unwrap();
        for _ in 0..200 {
            s.step(&q, &free(1)).unwrap();
        }
        let r2 = 0.5 * 107.0_f64.powi(2);
        assert!(s.phi_t <= r2 / s.a + eps / 2.0);
        assert!((s.t[0] - 7.0).abs() < 1e-3);
    }

    #[test]
    fn invariants_and_certificate_on_random_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let q = Quadratic {
            weights: (0..n).map(|_| rng.gen_range(0.1..20.0)).collect(),
            center: (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        };
        let bound = BoundOnly {
            lower: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let eps = 1e-6;
        let mut s = UmstState::init(&q, &bound, bound.lower.clone(), &settings(0.3, eps)).unwrap();
        let mut prev_a = s.a;
        for _ in 0..60 {
            let lhs = s.a * s.objective(&bound).unwrap();
            let rhs = s.model_minimum(&bound).unwrap() + s.a * eps / 2.0;
            assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0), "{lhs} > {rhs}");
            let st = s.step(&q, &bound).unwrap();
            assert!((st.lipschitz * st.alpha * st.alpha - st.a_new).abs() <= 1e-10 * st.a_new);
            assert!(st.lhs <= st.rhs);
            assert!(s.a > prev_a);
            prev_a = s.a;
            for ((t, u), lo) in s.t.iter().zip(&s.u).zip(&bound.lower) {
                assert!(t >= lo && u >= lo);
            }
        }
    }

    #[test]
    fn model_minimum_matches_closed_form_when_unconstrained() {
        // with h = 0 and no bound the model is ½‖t − y0‖² + ⟨G, t⟩ + C, minimized at y0 − G
        let q = Quadratic {
            weights: vec![3.0, 0.5, 9.0],
            center: vec![1.0, 2.0, -1.0],
        };
        let mut s = UmstState::init(&q, &free(3), vec![0.0; 3], &settings(1.0, 1e-9)).unwrap();
        for _ in 0..5 {
            s.step(&q, &free(3)).unwrap();
        }
        let argmin: Vec<f64> = s
            .start
            .iter()
            .zip(&s.grad_accum)
            .map(|(y, g)| y - g)
            .collect();
        let direct = 0.5 * dist_sq(&argmin, &s.start) + dot(&s.grad_accum, &argmin) + s.model_const;
        assert!((s.model_minimum(&free(3)).unwrap() - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn averaged_primal_at_iteration_zero() {
        let q = Quadratic {
            weights: vec![2.0],
            center: vec![5.0],
        };
        let s = UmstState::init(&q, &free(1), vec![1.0], &settings(1.0, 0.0)).unwrap();
        let (f, e) = s.averaged_primal();
        // f^0 = −∇Φ(y^0) = 8, e_0 = −⟨f, y⟩ − Φ(y) = −8 − 16
        assert_eq!(f, vec![8.0]);
        assert_eq!(e, -24.0);
    }

    #[test]
    fn doubling_cap_is_reported() {
        let q = Quadratic {
            weights: vec![1e6],
            center: vec![1.0],
        };
        let st = UmstSettings {
            lipschitz0: 1.0,
            eps_inner: 0.0,
            max_doublings: 3,
        };
        assert!(matches!(
            UmstState::init(&q, &free(1), vec![0.0], &st),
            Err(Error::DoublingCap { .. })
        ));
    }

    /// `Φ(t) = −t` on `t ≥ 0`.
    struct Ray;

    impl DualOracle for Ray {
        fn value(&self, t: &[f64]) -> Result<f64> {
            Ok(-t[0])
        }

        fn evaluate(&self, t: &[f64]) -> Result<OracleResult> {
            Ok(OracleResult::from_flows(-t[0], vec![1.0]))
        }
    }

    #[test]
    fn unbounded_objective_is_reported() {
        let bound = BoundOnly { lower: vec![0.0] };
        let mut s = UmstState::init(&Ray, &bound, vec![0.0], &settings(1.0, 0.0)).unwrap();
        let err = (0..5000).find_map(|_| s.step(&Ray, &bound).err());
        assert!(matches!(err, Some(Error::Diverged { .. })), "{err:?}");
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let q = Quadratic {
            weights: vec![3.0, 7.0],
            center: vec![2.0, 1.0],
        };
        let run = || {
            let mut s = UmstState::init(&q, &free(2), vec![0.0; 2], &settings(1.0, 1e-6)).unwrap();
            for _ in 0..20 {
                s.step(&q, &free(2)).unwrap();
            }
            (s.t, s.a)
        };
        assert_eq!(run(), run());
    }
}
