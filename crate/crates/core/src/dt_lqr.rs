//! Sampled-data discretisation and discrete-time LQ control.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_len, ControlledTrajectory, CostWeights, ModelSpec};
use crate::special::exp_neg_ramp;

/// `Z_{ℓ+1} = F Z_ℓ + B̃ w_ℓ + n` with `n = ñ + B̃ū`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub delta: f64,
    pub f: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub n_tilde: DVector<f64>,
    pub n: DVector<f64>,
    pub u_bar: DVector<f64>,
}

impl DiscreteSystem {
    pub fn classes(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.f * z + &self.b * w + &self.n
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("delta", format!("must be finite and >= 0 (got {delta})")))
    }
}

fn assemble(m: &ModelSpec, cw: &CostWeights, delta: f64, f: DMatrix<f64>, b: DMatrix<f64>) -> Result<DiscreteSystem> {
    cw.check_classes(m)?;
    let u_bar = cw.u_bar_vector();
    let n_tilde = &b * m.inflow();
    let n = &n_tilde + &b * &u_bar;
    Ok(DiscreteSystem {
        delta,
        f,
        b,
        n_tilde,
        n,
        u_bar,
    })
}

/// Zero-order-hold discretisation, exact for constant `w` over a step.
pub fn exact_discretize(m: &ModelSpec, cw: &CostWeights, delta: f64) -> Result<DiscreteSystem> {
    check_delta(delta)?;
    let k = m.classes();
    let mut f = DMatrix::identity(2 * k, 2 * k);
    let mut b = DMatrix::zeros(2 * k, k);
    for (i, &l) in m.lambda_d().iter().enumerate() {
        let one_minus_y = -(-l * delta).exp_m1();
        f[(i, i)] = 1.0 - one_minus_y;
        f[(k + i, i)] = one_minus_y / l;
        b[(i, i)] = one_minus_y / l;
        // Λ⁻¹(ΔI − Λ⁻¹(I − Y))
        b[(k + i, i)] = exp_neg_ramp(l * delta) / (l * l);
    }
    assemble(m, cw, delta, f, b)
}

/// Euler form `F = I + AΔ`, `B̃ = BΔ`, `ñ = c̃Δ`.
pub fn first_order_discretize(m: &ModelSpec, cw: &CostWeights, delta: f64) -> Result<DiscreteSystem> {
    check_delta(delta)?;
    let k = m.classes();
    let mut f = DMatrix::identity(2 * k, 2 * k);
    let mut b = DMatrix::zeros(2 * k, k);
    for (i, &l) in m.lambda_d().iter().enumerate() {
        f[(i, i)] = 1.0 - l * delta;
        f[(k + i, i)] = delta;
        b[(i, i)] = delta;
    }
    assemble(m, cw, delta, f, b)
}

/// Per-step weight `r` on `wᵀw` and `ZᵀQZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageWeighting {
    /// `r = 1`: the stage cost is `wᵀw + ZᵀQZ` per step.
    PerStep,
    /// `r = Δ`: the sum approximates `∫ wᵀw + ZᵀQZ dt`, so costs converge to
    /// the continuous problem as `Δ → 0`.
    #[default]
    SampledData,
}

impl StageWeighting {
    pub fn weight(self, delta: f64) -> f64 {
        match self {
            StageWeighting::PerStep => 1.0,
            StageWeighting::SampledData => delta,
        }
    }
}

/// Backward recursion results for steps `ℓ = 0 .. L−1` plus the terminal
/// `S_L = Q_f`, `s_L = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePolicy {
    pub s_mat: Vec<DMatrix<f64>>,
    pub s_vec: Vec<DVector<f64>>,
    /// `P_ℓ S_{ℓ+1} F`.
    pub gain: Vec<DMatrix<f64>>,
    /// `P_ℓ (s_{ℓ+1} + S_{ℓ+1} n)`.
    pub offset: Vec<DVector<f64>>,
    /// Constant of the value function at `ℓ = 0`.
    pub rho0: f64,
    pub weight: f64,
    pub q: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
}

impl DiscretePolicy {
    pub fn steps(&self) -> usize {
        self.gain.len()
    }

    pub fn control(&self, step: usize, z: &DVector<f64>) -> DVector<f64> {
        -(&self.gain[step] * z) - &self.offset[step]
    }

    /// `Z₀ᵀS₀Z₀ + 2s₀ᵀZ₀ + ρ₀`.
    pub fn optimal_cost(&self, z0: &DVector<f64>) -> f64 {
        z0.dot(&(&self.s_mat[0] * z0)) + 2.0 * self.s_vec[0].dot(z0) + self.rho0
    }
}

fn symmetrize(s: &mut DMatrix<f64>) {
    let t = s.transpose();
    *s += t;
    *s *= 0.5;
}

/// `P_ℓ = [rI + B̃ᵀS B̃]⁻¹B̃ᵀ`,
/// `S_ℓ = rQ + FᵀS[I − B̃P_ℓS]F`,
/// `s_ℓ = Fᵀ[I − SB̃P_ℓ](s + Sn)`.
///
/// Fails with [`Error::BlowUp`] once `rI + B̃ᵀSB̃` stops being positive
/// definite, which is where the one-step problem loses its minimum.
pub fn finite_horizon_policy(
    ds: &DiscreteSystem,
    q: &DMatrix<f64>,
    q_f: &DMatrix<f64>,
    steps: usize,
    weighting: StageWeighting,
) -> Result<DiscretePolicy> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be >= 1"));
    }
    let dim = ds.f.nrows();
    for (what, mat) in [("Q", q), ("Q_f", q_f)] {
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::Dimension {
                what,
                expected: dim,
                got: mat.nrows(),
            });
        }
    }
    let r = weighting.weight(ds.delta);
    let k = ds.classes();
    let eye = DMatrix::<f64>::identity(dim, dim);
    let mut s_mat = vec![DMatrix::zeros(dim, dim); steps + 1];
    let mut s_vec = vec![DVector::zeros(dim); steps + 1];
    let mut gain = vec![DMatrix::zeros(k, dim); steps];
    let mut offset = vec![DVector::zeros(k); steps];
    s_mat[steps] = q_f.clone();
    let mut rho = 0.0;
    for l in (0..steps).rev() {
        let s = &s_mat[l + 1];
        let g = DMatrix::identity(k, k) * r + ds.b.transpose() * s * &ds.b;
        let chol = g.clone().cholesky().ok_or(Error::BlowUp {
            time: l as f64 * ds.delta,
            norm: s.norm(),
        })?;
        let p = chol.solve(&ds.b.transpose());
        let drive = &s_vec[l + 1] + s * &ds.n;
        let bp = &ds.b * &p;
        let mut s_next = q * r + ds.f.transpose() * s * (&eye - &bp * s) * &ds.f;
        symmetrize(&mut s_next);
        let v = (&eye - s * &bp) * &drive;
        let bt_drive = ds.b.transpose() * &drive;
        rho += ds.n.dot(&(s * &ds.n)) + 2.0 * s_vec[l + 1].dot(&ds.n) - bt_drive.dot(&chol.solve(&bt_drive));
        gain[l] = &p * s * &ds.f;
        offset[l] = &p * &drive;
        s_vec[l] = ds.f.transpose() * v;
        s_mat[l] = s_next;
    }
    Ok(DiscretePolicy {
        s_mat,
        s_vec,
        gain,
        offset,
        rho0: rho,
        weight: r,
        q: q.clone(),
        q_f: q_f.clone(),
    })
}

/// Forward recursion under the policy. The terminal sample carries
/// `u = ū`; the cost is `r Σ (wᵀw + ZᵀQZ) + Z_LᵀQ_f Z_L`.
pub fn dt_rollout(m: &ModelSpec, ds: &DiscreteSystem, policy: &DiscretePolicy, z0: &DVector<f64>) -> Result<ControlledTrajectory> {
    check_len("z0", ds.f.nrows(), z0.len())?;
    let steps = policy.steps();
    let mut z = vec![z0.clone()];
    let mut w = Vec::with_capacity(steps + 1);
    let mut cost = 0.0;
    for l in 0..steps {
        let wl = policy.control(l, &z[l]);
        cost += policy.weight * (wl.dot(&wl) + z[l].dot(&(&policy.q * &z[l])));
        z.push(ds.step(&z[l], &wl));
        w.push(wl);
    }
    w.push(DVector::zeros(ds.classes()));
    cost += z[steps].dot(&(&policy.q_f * &z[steps]));
    let t = (0..=steps).map(|l| l as f64 * ds.delta).collect();
    let mut traj = ControlledTrajectory::from_samples(t, &z, &w, m, ds.u_bar.as_slice());
    traj.cost = cost;
    Ok(traj)
}

/// Stabilising root of `S = q + g²S/(1 + Sb²)`, with `a = b²q + g² − 1`
/// supplied by the caller.
fn dare_root(a: f64, b: f64, q: f64) -> f64 {
    let disc = (a * a + 4.0 * q * b * b).sqrt();
    if a >= 0.0 {
        (a + disc) / (2.0 * b * b)
    } else {
        2.0 * q / (disc - a)
    }
}

fn check_dare_inputs(g: f64, b: f64, q: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid("b", format!("must be finite and > 0 (got {b})")));
    }
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::invalid("q", format!("must be finite and >= 0 (got {q})")));
    }
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::invalid("g", format!("must lie in (0, 1) (got {g})")));
    }
    Ok(())
}

/// `S = [b²q + g² − 1 + √((b²q + g² − 1)² + 4qb²)] / (2b²)`.
pub fn scalar_dare(g: f64, b: f64, q: f64) -> Result<f64> {
    check_dare_inputs(g, b, q)?;
    Ok(dare_root(b * b * q + (g - 1.0) * (g + 1.0), b, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtScalarPolicy {
    pub lambda: f64,
    pub mu: f64,
    pub n_pop: f64,
    pub u_bar: f64,
    pub q: f64,
    pub delta: f64,
    pub g: f64,
    pub b: f64,
    pub n: f64,
    pub s: f64,
    /// `bSg / (1 + Sb²)`.
    pub feedback_gain: f64,
    /// `bS / (1 − g + b²S)`.
    pub feedforward: f64,
    /// `g / (1 + Sb²)`.
    pub closed_loop: f64,
    pub z_inf: f64,
    pub x_inf: f64,
    pub u_inf: f64,
}

impl DtScalarPolicy {
    /// Deviation control `w` for `z = x − N`.
    pub fn control(&self, z: f64) -> f64 {
        -self.feedback_gain * z - self.feedforward * self.n
    }

    /// `z_{ℓ+1} = g/(1 + Sb²) z_ℓ + (1 − g)/(1 − g + Sb²) n`.
    pub fn next_state(&self, z: f64) -> f64 {
        let sb2 = self.s * self.b * self.b;
        self.closed_loop * z + (1.0 - self.g) / (1.0 - self.g + sb2) * self.n
    }
}

/// Scalar problem `z_{ℓ+1} = g z + b w + n`, cost `Σ q z² + w²`, with
/// `g = e^{−λΔ}`, `b = (1 − g)/λ`, `n = b[(μ − λ)N + ū]`.
pub fn dt_scalar_policy(lambda: f64, mu: f64, n_pop: f64, u_bar: f64, q: f64, delta: f64) -> Result<DtScalarPolicy> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", format!("must be finite and > 0 (got {lambda})")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", format!("must be finite and > 0 (got {delta})")));
    }
    let one_minus_g = -(-lambda * delta).exp_m1();
    let g = (-lambda * delta).exp();
    let b = one_minus_g / lambda;
    check_dare_inputs(g, b, q)?;
    let s = dare_root(b * b * q + (-2.0 * lambda * delta).exp_m1(), b, q);
    let n = b * ((mu - lambda) * n_pop + u_bar);
    let sb2 = s * b * b;
    let feedback_gain = b * s * g / (1.0 + sb2);
    let feedforward = b * s / (one_minus_g + sb2);
    let z_inf = one_minus_g * (1.0 + sb2) / (one_minus_g + sb2).powi(2) * n;
    Ok(DtScalarPolicy {
        lambda,
        mu,
        n_pop,
        u_bar,
        q,
        delta,
        g,
        b,
        n,
        s,
        feedback_gain,
        feedforward,
        closed_loop: g / (1.0 + sb2),
        z_inf,
        x_inf: z_inf + n_pop,
        u_inf: u_bar - feedback_gain * z_inf - feedforward * n,
    })
}

/// Small-step asymptotics of the scalar discrete solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallDeltaLimits {
    /// Limit of `SΔ`, `−λ + √(q + λ²)`.
    pub s_delta: f64,
    /// Coefficient of `ū` in the limiting law, `λ/√(q + λ²)`.
    pub reference_coeff: f64,
    /// Constant of the limiting law `u = −(SΔ)x + C`.
    pub constant: f64,
    /// `N + λ(μ − λ)NΔ/√(q + λ²) + λūΔ/√(q + λ²)`.
    pub x_inf: f64,
}

impl SmallDeltaLimits {
    pub fn control(&self, x: f64) -> f64 {
        -self.s_delta * x + self.constant
    }
}

pub fn small_delta_limits(lambda: f64, mu: f64, n_pop: f64, u_bar: f64, q: f64, delta: f64) -> SmallDeltaLimits {
    let sigma = lambda.hypot(q.sqrt());
    let ratio = lambda / sigma;
    SmallDeltaLimits {
        s_delta: crate::inf_lqr::scalar_gain(lambda, q),
        reference_coeff: ratio,
        constant: ratio * u_bar - ((1.0 - ratio) * (mu - lambda) + lambda - sigma) * n_pop,
        x_inf: n_pop + ratio * (mu - lambda) * n_pop * delta + ratio * u_bar * delta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct_lqr;
    use crate::inf_lqr::ScalarPolicy;
    use crate::model::AugmentedState;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(ls: f64, ld: f64, n: f64) -> (ModelSpec, CostWeights) {
        (
            ModelSpec::new(vec![ls], vec![ld], vec![n]).unwrap(),
            CostWeights::new(0.0, 1.0, 0.0, vec![0.0]).unwrap(),
        )
    }

    #[test]
    fn exact_transition_example() {
        let (m, cw) = scalar_model(1.0, 2.0, 10.0);
        let ds = exact_discretize(&m, &cw, 0.5).unwrap();
        let y = (-1.0f64).exp();
        assert!((ds.f[(0, 0)] - y).abs() < 1e-15);
        assert!((ds.f[(1, 0)] - (1.0 - y) / 2.0).abs() < 1e-15);
        assert!((ds.f[(1, 0)] - 0.316060).abs() < 1e-6);
        assert_eq!((ds.f[(0, 1)], ds.f[(1, 1)]), (0.0, 1.0));
        assert!((ds.b[(1, 0)] - (0.5 - (1.0 - y) / 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_step_is_identity() {
        let (m, cw) = scalar_model(1.0, 2.0, 10.0);
        for ds in [exact_discretize(&m, &cw, 0.0).unwrap(), first_order_discretize(&m, &cw, 0.0).unwrap()] {
            assert_eq!(ds.f, DMatrix::identity(2, 2));
            assert_eq!(ds.b.amax(), 0.0);
            assert_eq!(ds.n.amax(), 0.0);
        }
    }

    #[test]
    fn euler_example_and_order() {
        let (m, cw) = scalar_model(1.0, 2.0, 10.0);
        let ds = first_order_discretize(&m, &cw, 0.01).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.98, 0.0, 0.01, 1.0]);
        assert!((ds.f - expect).amax() < 1e-15);
        let gap = |d: f64| {
            let e = exact_discretize(&m, &cw, d).unwrap();
            let f = first_order_discretize(&m, &cw, d).unwrap();
            (e.f - f.f).amax() / (d * d)
        };
        let (c1, c2) = (gap(1e-2), gap(1e-3));
        assert!((c1 / c2 - 1.0).abs() < 0.05, "{c1} {c2}");
    }

    #[test]
    fn exact_form_tends_to_generator() {
        let m = ModelSpec::new(vec![0.5, 1.0], vec![2.0, 0.3], vec![10.0, 20.0]).unwrap();
        let cw = CostWeights::new(0.0, 1.0, 0.0, vec![-0.1, -0.2]).unwrap();
        let sys = ct_lqr::build_system(&m, &cw, &DMatrix::identity(2, 2)).unwrap();
        let err = |d: f64| {
            let ds = exact_discretize(&m, &cw, d).unwrap();
            let ef = ((&ds.f - DMatrix::identity(4, 4)) / d - &sys.a).amax();
            let eb = (&ds.b / d - &sys.b).amax();
            let en = (&ds.n / d - &sys.c).amax();
            ef.max(eb).max(en) / d
        };
        let (c1, c2) = (err(1e-2), err(1e-3));
        assert!(c2 <= c1 * 1.05 && c2 > 0.5 * c1, "{c1} {c2}");
    }

    #[test]
    fn zero_weights_give_reference_control() {
        let (m, cw) = scalar_model(1.0, 2.0, 10.0);
        let ds = exact_discretize(&m, &cw, 0.1).unwrap();
        let pol = finite_horizon_policy(&ds, &DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2), 20, StageWeighting::PerStep).unwrap();
        assert!(pol.s_mat.iter().all(|s| s.amax() == 0.0));
        assert!(pol.s_vec.iter().all(|s| s.amax() == 0.0));
        let traj = dt_rollout(&m, &ds, &pol, &DVector::zeros(2)).unwrap();
        assert!(traj.u.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn one_step_update_by_hand() {
        let (m, cw) = scalar_model(1.0, 2.0, 10.0);
        let ds = exact_discretize(&m, &cw, 0.5).unwrap();
        let q_f = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 3.0]);
        let pol = finite_horizon_policy(&ds, &DMatrix::zeros(2, 2), &q_f, 1, StageWeighting::PerStep).unwrap();
        // Scalar-input algebra: G = 1 + 3 b2², P = B̃ᵀ/G.
        let b2 = ds.b[(1, 0)];
        let g = 1.0 + 3.0 * b2 * b2;
        let (f10, n1) = (ds.f[(1, 0)], ds.n[1]);
        let s00 = 3.0 * f10 * f10 / g;
        assert!((pol.s_mat[0][(0, 0)] - s00).abs() < 1e-12);
        assert!((pol.s_mat[0][(1, 1)] - 3.0 / g).abs() < 1e-12);
        let w_expect = -(3.0 * b2 * (f10 * 0.7 + 1.1 + n1)) / g;
        let z0 = DVector::from_vec(vec![0.7, 1.1]);
        assert!((pol.control(0, &z0)[0] - w_expect).abs() < 1e-12);
    }

    #[test]
    fn uncontrolled_rollout_is_exact() {
        let (m, cw) = scalar_model(0.01, 0.01, 50.0);
        let ds = exact_discretize(&m, &cw, 25.0).unwrap();
        let pol = finite_horizon_policy(&ds, &DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2), 40, StageWeighting::SampledData).unwrap();
        let traj = dt_rollout(&m, &ds, &pol, &DVector::zeros(2)).unwrap();
        for (t, x) in traj.t.iter().zip(&traj.x) {
            assert!((x[0] - 50.0 * (1.0 - (-0.01 * t).exp())).abs() < 1e-11);
        }
        let traj = dt_rollout(&m, &ds, &pol, &DVector::from_vec(vec![50.0, 0.0])).unwrap();
        assert!(traj.x.iter().all(|x| (x[0] - 50.0).abs() < 1e-12));
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> (ModelSpec, CostWeights, DMatrix<f64>) {
        let ld: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..2.0)).collect();
        let m = ModelSpec::new(vec![0.5; 3], ld, vec![10.0, 20.0, 30.0]).unwrap();
        let cw = CostWeights::new(0.0, 1.0, 0.0, vec![-0.1; 3]).unwrap();
        let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        (m, cw, &g * g.transpose() + DMatrix::identity(3, 3) * 0.1)
    }

    #[test]
    fn min_cost_identity_holds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, cw, r) = random_problem(&mut rng);
        let sys = ct_lqr::build_system(&m, &cw, &r).unwrap();
        let ds = exact_discretize(&m, &cw, 0.05).unwrap();
        let q = DMatrix::identity(6, 6) * 0.3;
        for weighting in [StageWeighting::PerStep, StageWeighting::SampledData] {
            let pol = finite_horizon_policy(&ds, &q, &sys.q_f, 60, weighting).unwrap();
            let z0 = DVector::from_vec(vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
            let traj = dt_rollout(&m, &ds, &pol, &z0).unwrap();
            assert_relative_eq!(traj.cost, pol.optimal_cost(&z0), max_relative = 1e-10);
        }
    }

    #[test]
    fn discrete_cost_converges_to_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, cw, r) = random_problem(&mut rng);
        let sys = ct_lqr::build_system(&m, &cw, &r).unwrap();
        let horizon = 3.0;
        let ct = ct_lqr::solve(&sys, horizon, &ct_lqr::SolverConfig::default()).unwrap();
        let z0 = AugmentedState::zero(3).stacked();
        let target = ct.optimal_cost(&z0);
        let gap = |steps: usize| {
            let ds = exact_discretize(&m, &cw, horizon / steps as f64).unwrap();
            let pol = finite_horizon_policy(&ds, &DMatrix::zeros(6, 6), &sys.q_f, steps, StageWeighting::SampledData).unwrap();
            (pol.optimal_cost(&z0) - target).abs()
        };
        let (g1, g2, g3) = (gap(64), gap(128), gap(256));
        assert!((g1 / g2).log2() >= 0.9 && (g2 / g3).log2() >= 0.9, "{g1} {g2} {g3}");
        assert!(gap(4096) <= 0.01 * target.abs());
    }

    #[test]
    fn indefinite_terminal_weight_is_reported() {
        let m = ModelSpec::uniform(3, crate::LAMBDA_0, 50.0).unwrap();
        let cw = CostWeights::new(crate::LAMBDA_0.powi(-2), 1.0, 0.05, vec![0.0; 3]).unwrap();
        let sys = ct_lqr::build_system(&m, &cw, &crate::feasibility::build_r(&cw, &m)).unwrap();
        let ds = exact_discretize(&m, &cw, 3600.0 / 1024.0).unwrap();
        let res = finite_horizon_policy(&ds, &DMatrix::zeros(6, 6), &sys.q_f, 1024, StageWeighting::SampledData);
        assert!(matches!(res, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn dare_examples() {
        assert_eq!(scalar_dare(0.5, 0.1, 0.0).unwrap(), 0.0);
        let pol = dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, 0.01).unwrap();
        assert!((pol.s - 208.115).abs() < 1e-3, "{}", pol.s);
        let res = pol.s - (16.0 + pol.g * pol.g * pol.s / (1.0 + pol.s * pol.b * pol.b));
        assert!(res.abs() <= 1e-10 * pol.s);
        for (d, expect) in [(1e-1, 2.913), (1e-2, 2.081), (1e-3, 2.008)] {
            let p = dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, d).unwrap();
            assert!((p.s * d - expect).abs() < 5e-4, "{d}: {}", p.s * d);
        }
        let p = dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, 1e-4).unwrap();
        assert!((p.s * 1e-4 - 2.0).abs() <= 0.01);
        assert!(scalar_dare(1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn dare_matches_value_iteration() {
        let (g, b, q) = (0.9, 0.3, 2.0);
        let mut s = q;
        for _ in 0..500 {
            s = q + g * g * s / (1.0 + s * b * b);
        }
        assert_relative_eq!(scalar_dare(g, b, q).unwrap(), s, max_relative = 1e-9);
    }

    #[test]
    fn scalar_policy_steady_states() {
        let p = dt_scalar_policy(2.0, 2.0, 10.0, 0.0, 5.0, 0.1).unwrap();
        assert_eq!((p.n, p.z_inf, p.x_inf), (0.0, 0.0, 10.0));
        let cont = ScalarPolicy::new(3.0, 3.0, 10.0, -1.0, 16.0).unwrap();
        for d in [1e-1, 1e-2, 1e-3] {
            let p = dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, d).unwrap();
            assert!((p.next_state(p.z_inf) - p.z_inf).abs() < 1e-12);
            // The closed-loop map agrees with the dynamics under the policy.
            let z = 0.3;
            let direct = p.g * z + p.b * p.control(z) + p.n;
            assert!((direct - p.next_state(z)).abs() < 1e-12);
            assert!((p.x_inf - cont.x_inf).abs() < 1e-9, "{d}: {}", p.x_inf);
            assert!((p.u_inf - cont.u_inf).abs() < 1e-9, "{d}: {}", p.u_inf);
        }
    }

    #[test]
    fn small_delta_limits_examples() {
        let lim = small_delta_limits(3.0, 3.0, 10.0, -1.0, 16.0, 0.0);
        assert_eq!(lim.x_inf, 10.0);
        let lim = small_delta_limits(3.0, 3.0, 10.0, -1.0, 16.0, 1e-3);
        assert!((lim.x_inf - 9.9994).abs() < 1e-12);
        assert_eq!(lim.s_delta, 2.0);
        // The limiting law coincides with the continuous one.
        let cont = ScalarPolicy::new(3.0, 1.0, 10.0, -1.0, 16.0).unwrap();
        let lim = small_delta_limits(3.0, 1.0, 10.0, -1.0, 16.0, 1e-3);
        for x in [0.0, 5.0, 10.0] {
            assert!((lim.control(x) - cont.control(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_law_approaches_limit() {
        let lim = small_delta_limits(3.0, 1.0, 10.0, -1.0, 16.0, 0.0);
        let err = |d: f64| {
            let p = dt_scalar_policy(3.0, 1.0, 10.0, -1.0, 16.0, d).unwrap();
            // u = ū + w(x − N)
            let u = |x: f64| p.u_bar + p.control(x - p.n_pop);
            (u(0.0) - lim.control(0.0)).abs() + (u(10.0) - lim.control(10.0)).abs()
        };
        assert!(err(1e-4) < err(1e-3) && err(1e-3) < err(1e-2));
        assert!(err(1e-4) < 1e-2);
    }

    proptest! {
        #[test]
        fn dare_residual(g in 0.01f64..0.999, b in 1e-3f64..10.0, q in 0.0f64..1e3) {
            let s = scalar_dare(g, b, q).unwrap();
            let res = s - (q + g * g * s / (1.0 + s * b * b));
            prop_assert!(res.abs() <= 1e-10 * s.max(1.0));
        }

        #[test]
        fn closed_loop_coefficient_is_contracting(lambda in 1e-3f64..10.0, q in 1e-3f64..100.0, delta in 1e-4f64..10.0) {
            let p = dt_scalar_policy(lambda, 1.0, 10.0, -0.1, q, delta).unwrap();
            prop_assert!(p.closed_loop > 0.0 && p.closed_loop < 1.0);
            prop_assert!(1.0 - p.g + p.b * p.b * p.s != 0.0);
        }
    }
}
