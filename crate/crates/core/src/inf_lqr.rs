//! Infinite-horizon controllers for evolving content.
//!
//! With a diagonal running weight the vector problem splits into `K`
//! scalar problems `ẋ = −λx + u + μN`, cost `∫ q(x − N)² + (u − ū)²`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CostWeights, ModelSpec};
use crate::ode::{rk4_step, TimeGrid};

/// `p = −λ + √(λ² + q)`, the stabilising root of `−2pλ − p² + q = 0`.
pub fn scalar_gain(lambda: f64, q: f64) -> f64 {
    let sigma = lambda.hypot(q.sqrt());
    if lambda >= 0.0 {
        q / (lambda + sigma)
    } else {
        sigma - lambda
    }
}

/// `k = p(μN − λN + ū)/√(λ² + q)`.
pub fn scalar_offset(lambda: f64, mu: f64, n: f64, u_bar: f64, q: f64) -> f64 {
    let sigma = lambda.hypot(q.sqrt());
    scalar_gain(lambda, q) * (mu * n - lambda * n + u_bar) / sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Feasible,
    /// Every failed inequality holds with equality.
    InfeasibleBoundary,
    Infeasible,
}

/// The four strict steady-state inequalities `0 < x∞ < N`, `ū < u∞ < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsCheck {
    pub x_positive: bool,
    pub x_below_population: bool,
    pub u_above_reference: bool,
    pub u_negative: bool,
    pub verdict: Verdict,
}

/// Checks a steady state `(x, u)` against `0 < x < N`, `ū < u < 0`.
pub fn check_bounds(x: f64, u: f64, n: f64, u_bar: f64) -> BoundsCheck {
    let checks = [(x > 0.0, x, 0.0), (x < n, x, n), (u_bar < u, u, u_bar), (u < 0.0, u, 0.0)];
    let verdict = if checks.iter().all(|c| c.0) {
        Verdict::Feasible
    } else if checks
        .iter()
        .filter(|c| !c.0)
        .all(|&(_, v, edge)| (v - edge).abs() <= 1e-12 * n.abs().max(1.0))
    {
        Verdict::InfeasibleBoundary
    } else {
        Verdict::Infeasible
    };
    BoundsCheck {
        x_positive: checks[0].0,
        x_below_population: checks[1].0,
        u_above_reference: checks[2].0,
        u_negative: checks[3].0,
        verdict,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarPolicy {
    pub lambda: f64,
    pub mu: f64,
    pub n: f64,
    pub u_bar: f64,
    pub q: f64,
    pub p: f64,
    pub k_off: f64,
    pub sigma: f64,
    /// Constant of the affine law `u = −px + C`.
    pub constant: f64,
    pub x_inf: f64,
    pub u_inf: f64,
}

impl ScalarPolicy {
    pub fn new(lambda: f64, mu: f64, n: f64, u_bar: f64, q: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("mu", mu), ("q", q)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and >= 0 (got {v})")));
            }
        }
        if lambda == 0.0 && q == 0.0 {
            return Err(Error::invalid("q", "lambda and q cannot both be zero"));
        }
        if !(n.is_finite() && u_bar.is_finite()) {
            return Err(Error::invalid("n", "population and reference must be finite"));
        }
        let sigma = lambda.hypot(q.sqrt());
        let p = scalar_gain(lambda, q);
        let drive = u_bar + (mu - lambda) * n;
        let constant = u_bar + p * n - p * drive / sigma;
        // Fixed point of ẋ = −λx − px + C + μN, written as offsets from
        // (N, ū) so that a zero drive lands exactly on the boundary.
        let sigma2 = lambda * lambda + q;
        Ok(Self {
            lambda,
            mu,
            n,
            u_bar,
            q,
            p,
            k_off: scalar_offset(lambda, mu, n, u_bar, q),
            sigma,
            constant,
            x_inf: n + lambda * drive / sigma2,
            u_inf: u_bar - drive * q / sigma2,
        })
    }

    /// `u = ū − p(x − N + (ū + (μ − λ)N)/(λ + p))`.
    pub fn control(&self, x: f64) -> f64 {
        self.u_bar - self.p * (x - self.n + (self.u_bar + (self.mu - self.lambda) * self.n) / self.sigma)
    }

    pub fn steady_state(&self) -> (f64, f64) {
        (self.x_inf, self.u_inf)
    }

    pub fn bounds_check(&self) -> BoundsCheck {
        check_bounds(self.x_inf, self.u_inf, self.n, self.u_bar)
    }

    /// `α` with `−(p + α) x∞ = u∞`: the affine law rewritten as a purely
    /// linear one that agrees at steady state.
    pub fn linear_form_alpha(&self) -> Result<f64> {
        if self.x_inf == 0.0 {
            return Err(Error::invalid("x_inf", "linear form is undefined at a zero steady state"));
        }
        Ok(-self.constant / self.x_inf)
    }

    /// RK4 rollout of the closed loop `ẋ = −λx + u(x) + μN`.
    pub fn rollout(&self, x0: f64, horizon: f64, steps: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let grid = TimeGrid::new(0.0, horizon, steps);
        let mut x = vec![x0];
        for j in 0..steps {
            let next = rk4_step(grid.time(j), &x[j], grid.step(), |_, &y| {
                -self.lambda * y + self.control(y) + self.mu * self.n
            });
            x.push(next);
        }
        let u = x.iter().map(|&v| self.control(v)).collect();
        (grid.times(), x, u)
    }
}

/// One policy per class with `λ = λ_d`, `μ = λ_s`.
pub fn decoupled_policies(m: &ModelSpec, cw: &CostWeights) -> Result<Vec<ScalarPolicy>> {
    cw.check_classes(m)?;
    let q = cw
        .q
        .as_ref()
        .ok_or_else(|| Error::invalid("q", "infinite-horizon solvers need per-class weights"))?;
    (0..m.classes())
        .map(|i| ScalarPolicy::new(m.lambda_d()[i], m.lambda_s()[i], m.population()[i], cw.u_bar[i], q[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn gain_examples() {
        assert_eq!(scalar_gain(3.0, 16.0), 2.0);
        assert_eq!(scalar_gain(3.0, 0.0), 0.0);
        assert_eq!(scalar_gain(0.0, 4.0), 2.0);
    }

    #[test]
    fn offset_examples() {
        assert_eq!(scalar_offset(2.0, 2.0, 7.0, 0.0, 1.0), 0.0);
        assert!((scalar_offset(3.0, 3.0, 10.0, -1.0, 16.0) + 0.4).abs() < 1e-15);
        assert!((scalar_offset(3.0, 1.0, 10.0, -1.0, 16.0) + 8.4).abs() < 1e-14);
    }

    #[test]
    fn control_law_examples() {
        let p = ScalarPolicy::new(2.0, 2.0, 10.0, 0.0, 5.0).unwrap();
        assert_eq!(p.control(10.0), 0.0);
        let p = ScalarPolicy::new(3.0, 3.0, 10.0, -1.0, 16.0).unwrap();
        assert!((p.control(10.0) + 0.6).abs() < 1e-14);
        let p = ScalarPolicy::new(3.0, 1.0, 10.0, -1.0, 16.0).unwrap();
        assert!((p.control(10.0) - 7.4).abs() < 1e-14);
    }

    #[test]
    fn steady_states_and_verdicts() {
        let p = ScalarPolicy::new(0.5, 0.5, 10.0, 0.0, 2.0).unwrap();
        assert!((p.x_inf - 10.0).abs() < 1e-14 && p.u_inf.abs() < 1e-14);
        assert_eq!(p.bounds_check().verdict, Verdict::InfeasibleBoundary);

        let p = ScalarPolicy::new(3.0, 3.0, 10.0, -1.0, 16.0).unwrap();
        assert!((p.x_inf - 9.88).abs() < 1e-12 && (p.u_inf + 0.36).abs() < 1e-12);
        assert!((p.constant - 19.4).abs() < 1e-12);
        assert_eq!(p.bounds_check().verdict, Verdict::Feasible);

        let p = ScalarPolicy::new(3.0, 1.0, 10.0, -1.0, 16.0).unwrap();
        assert!((p.x_inf - 7.48).abs() < 1e-12 && (p.u_inf - 12.44).abs() < 1e-12);
        let b = p.bounds_check();
        assert!(!b.u_negative && b.verdict == Verdict::Infeasible);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let p = ScalarPolicy::new(3.0, 3.0, 10.0, -1.0, 16.0).unwrap();
        assert!((-p.lambda * p.x_inf + p.control(p.x_inf) + p.mu * p.n).abs() < 1e-12);
        let (_, x, _) = p.rollout(0.0, 10.0, 10_000);
        assert!((x.last().unwrap() - 9.88).abs() < 1e-12);
    }

    #[test]
    fn linear_form() {
        let p = ScalarPolicy::new(3.0, 3.0, 10.0, -1.0, 16.0).unwrap();
        let alpha = p.linear_form_alpha().unwrap();
        assert!((alpha + 19.4 / 9.88).abs() < 1e-12);
        assert!((-(p.p + alpha) * p.x_inf - p.u_inf).abs() < 1e-12);
        let p = ScalarPolicy::new(0.5, 0.5, 10.0, 0.0, 2.0).unwrap();
        assert!((p.linear_form_alpha().unwrap() + p.p).abs() < 1e-14);
    }

    #[test]
    fn decoupling_solves_the_joint_equation() {
        let m = ModelSpec::new(vec![0.3, 1.0, 2.0], vec![1.0, 0.5, 3.0], vec![10.0, 20.0, 5.0]).unwrap();
        let cw = CostWeights::new(0.0, 1.0, 0.0, vec![-0.1, 0.0, -1.0]).unwrap().with_q(vec![1.0, 4.0, 9.0]).unwrap();
        let pols = decoupled_policies(&m, &cw).unwrap();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(m.lambda_d()));
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 9.0]));
        let p = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, pols.iter().map(|p| p.p)));
        let residual = -&p * &lam - &lam * &p - &p * &p + q;
        assert!(residual.amax() < 1e-12);
        assert!((-(lam + p)).symmetric_eigen().eigenvalues.max() < 0.0);
        assert!(decoupled_policies(&m, &CostWeights::new(0.0, 1.0, 0.0, vec![0.0; 3]).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn are_residual(lambda in 0.0f64..100.0, q in 1e-6f64..1e4) {
            let p = scalar_gain(lambda, q);
            prop_assert!((-2.0 * p * lambda - p * p + q).abs() <= 1e-12 * q.max(1.0));
            prop_assert!(lambda + p > 0.0);
        }

        #[test]
        fn rollout_converges_at_rate_sigma(lambda in 0.1f64..5.0, q in 0.1f64..20.0, mu in 0.0f64..5.0, x0 in 0.0f64..20.0) {
            let p = ScalarPolicy::new(lambda, mu, 10.0, -0.5, q).unwrap();
            let horizon = 2.0;
            let (_, x, _) = p.rollout(x0, horizon, 4000);
            let bound = (x0 - p.x_inf).abs() * (-p.sigma * horizon).exp() * (1.0 + 1e-6);
            prop_assert!((x.last().unwrap() - p.x_inf).abs() <= bound + 1e-13);
        }

        #[test]
        fn equal_rates_without_reference_sit_on_the_boundary(lambda in 0.01f64..5.0, q in 0.01f64..20.0, n in 1.0f64..100.0) {
            let p = ScalarPolicy::new(lambda, lambda, n, 0.0, q).unwrap();
            let b = p.bounds_check();
            prop_assert!(b.verdict != Verdict::Feasible);
        }
    }
}
