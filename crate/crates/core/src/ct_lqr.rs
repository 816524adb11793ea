//! Continuous-time finite-horizon affine-quadratic control.
//!
//! Minimises `∫₀^τ wᵀw dt + Z(τ)ᵀ Q_f Z(τ)` subject to `dZ/dt = AZ + Bw + c`.
//! The value function is `ZᵀPZ + 2kᵀZ + 2m` with
//!
//! ```text
//! Ṗ + PA + AᵀP − PBBᵀP = 0,             P(τ) = Q_f
//! k̇ + Aᵀk + Pc − PBBᵀk = 0,             k(τ) = 0
//! ṁ + kᵀc − ½ kᵀBBᵀk = 0,               m(τ) = 0
//! ```
//!
//! and the optimal control is `w = −Bᵀ(PZ + k)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{check_len, evaluate_cost, ControlledTrajectory, CostWeights, ModelSpec};
use crate::ode::{hermite_midpoint, rk4_step, TimeGrid};
use crate::special::{cosh_minus_one, hamiltonian_gram, sinh_minus_id};

/// Condition number above which `M_x` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e13;

/// The constant arrays of the augmented problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LqSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub q_f: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lambda_out: Vec<f64>,
    pub u_bar: DVector<f64>,
    bbt: DMatrix<f64>,
}

impl LqSystem {
    pub fn classes(&self) -> usize {
        self.lambda_out.len()
    }

    /// `Ṗ` on the Riccati flow.
    pub fn riccati_rate(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let pa = p * &self.a;
        let quad = p * &self.bbt * p;
        -(pa.transpose() + pa - quad)
    }

    /// `k̇` given `P` at the same time.
    pub fn offset_rate(&self, p: &DMatrix<f64>, k: &DVector<f64>) -> DVector<f64> {
        -(self.a.tr_mul(k) + p * &self.c - p * (&self.bbt * k))
    }

    pub fn drift(&self, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * z + &self.b * w + &self.c
    }
}

/// `A = [[−Λout, 0], [I, 0]]`, `B = [I; 0]`, `c = [Λin N + ū; 0]`,
/// `Q_f = blockdiag(0, R)`.
pub fn build_system(m: &ModelSpec, cw: &CostWeights, r: &DMatrix<f64>) -> Result<LqSystem> {
    let k = m.classes();
    cw.check_classes(m)?;
    if r.nrows() != k || r.ncols() != k {
        return Err(Error::Dimension {
            what: "R",
            expected: k,
            got: r.nrows(),
        });
    }
    let mut a = DMatrix::zeros(2 * k, 2 * k);
    let mut b = DMatrix::zeros(2 * k, k);
    for i in 0..k {
        a[(i, i)] = -m.lambda_d()[i];
        a[(k + i, i)] = 1.0;
        b[(i, i)] = 1.0;
    }
    let mut c = DVector::zeros(2 * k);
    c.rows_mut(0, k).copy_from(&(m.inflow() + cw.u_bar_vector()));
    let mut q_f = DMatrix::zeros(2 * k, 2 * k);
    q_f.view_mut((k, k), (k, k)).copy_from(r);
    let bbt = &b * b.transpose();
    Ok(LqSystem {
        a,
        b,
        c,
        q_f,
        r: r.clone(),
        lambda_out: m.lambda_d().to_vec(),
        u_bar: cw.u_bar_vector(),
        bbt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Number of RK4 steps over `[0, τ]`.
    pub steps: usize,
    /// `‖P‖` above which the backward solve stops with a blow-up.
    pub blow_up_guard: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: 4096,
            blow_up_guard: 1e12,
        }
    }
}

/// Finite escape of the backward Riccati solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUp {
    pub time: f64,
    pub norm: f64,
    /// First grid index at which `P` is still available.
    pub valid_from: usize,
}

/// `P` on the grid, ascending in time. Entries before `blow_up.valid_from`
/// are not computed.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiPath {
    pub grid: TimeGrid,
    pub p: Vec<DMatrix<f64>>,
    pub blow_up: Option<BlowUp>,
    /// Largest `h·L` over the grid intervals, before substepping.
    pub stiffness: f64,
}

impl RiccatiPath {
    pub fn valid_from(&self) -> usize {
        self.blow_up.map_or(0, |b| b.valid_from)
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Target for `h·L` per RK4 substep, with `L` the Lipschitz bound of the
/// Riccati right-hand side.
pub const STIFFNESS_TARGET: f64 = 0.05;

/// Largest `h·L` per grid interval that [`solve`] accepts before refining the
/// grid for `k`, `m` and the rollout.
pub const REFINEMENT_TARGET: f64 = 0.2;

/// Largest uniform refinement [`solve`] applies to the requested grid.
pub const MAX_REFINEMENT: usize = 256;

/// `2(‖A‖ + ‖BBᵀ‖‖P‖)` with Frobenius norms (`‖BBᵀ‖₂ = 1`).
fn lipschitz(sys: &LqSystem, p: &DMatrix<f64>) -> f64 {
    2.0 * (sys.a.norm() + p.norm())
}

/// Backward RK4 from `P(τ) = Q_f`, symmetrising after every step. Each grid
/// interval is split into substeps with `h·L <= STIFFNESS_TARGET`.
pub fn solve_riccati_backward(sys: &LqSystem, horizon: f64, cfg: &SolverConfig) -> Result<RiccatiPath> {
    check_horizon(horizon, cfg)?;
    let grid = TimeGrid::new(0.0, horizon, cfg.steps);
    let n = sys.q_f.nrows();
    let mut p = vec![DMatrix::from_element(n, n, f64::NAN); cfg.steps + 1];
    p[cfg.steps] = sys.q_f.clone();
    let mut stiffness: f64 = 0.0;
    for j in (0..cfg.steps).rev() {
        let t0 = grid.time(j);
        let mut t = grid.time(j + 1);
        let mut y = p[j + 1].clone();
        stiffness = stiffness.max((t - t0) * lipschitz(sys, &y));
        while t > t0 {
            let left = ((t - t0) * lipschitz(sys, &y) / STIFFNESS_TARGET).ceil().max(1.0);
            let hs = if left <= 1.0 { t - t0 } else { (t - t0) / left };
            y = rk4_step(t, &y, -hs, |_, y| sys.riccati_rate(y));
            symmetrize(&mut y);
            t = if left <= 1.0 { t0 } else { t - hs };
            let norm = y.norm();
            if !(norm <= cfg.blow_up_guard) {
                return Ok(RiccatiPath {
                    grid,
                    p,
                    blow_up: Some(BlowUp {
                        time: t,
                        norm,
                        valid_from: j + 1,
                    }),
                    stiffness,
                });
            }
        }
        p[j] = y;
    }
    Ok(RiccatiPath {
        grid,
        p,
        blow_up: None,
        stiffness,
    })
}

fn check_horizon(horizon: f64, cfg: &SolverConfig) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("horizon", format!("must be finite and > 0 (got {horizon})")));
    }
    if cfg.steps == 0 {
        return Err(Error::invalid("steps", "must be >= 1"));
    }
    Ok(())
}

/// How [`closed_form_p`] assembles `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormRoute {
    /// The four final blocks `P11 .. P22` through `M_x`.
    Blocks,
    /// `P = P2 P1⁻¹` from the exponential of the Hamiltonian.
    Hamiltonian,
}

/// Closed-form `P(t)` for diagonal `Λout > 0`, with `x = t − τ <= 0`.
pub fn closed_form_p(lambda_out: &[f64], r: &DMatrix<f64>, x: f64, route: ClosedFormRoute) -> Result<DMatrix<f64>> {
    let k = lambda_out.len();
    if r.nrows() != k || r.ncols() != k {
        return Err(Error::Dimension {
            what: "R",
            expected: k,
            got: r.nrows(),
        });
    }
    if let Some(i) = lambda_out.iter().position(|l| !(*l > 0.0)) {
        return Err(Error::invalid(format!("lambda_out[{i}]"), "must be > 0"));
    }
    if !(x <= 0.0) {
        return Err(Error::invalid("x", format!("must be <= 0 (got {x})")));
    }
    let diag = |f: &dyn Fn(f64) -> f64| DMatrix::from_diagonal(&DVector::from_iterator(k, lambda_out.iter().map(|&l| f(l))));
    // E34 = −Λ⁻¹(e^{Λx} − I)
    let t = diag(&|l| -(l * x).exp_m1() / l);
    match route {
        ClosedFormRoute::Blocks => {
            let m = DMatrix::identity(k, k) + diag(&|l| hamiltonian_gram(l * x) / l.powi(3)) * r;
            let m_inv = invert_checked(&m, "M_x")?;
            let rm = r * m_inv;
            let mut p = DMatrix::zeros(2 * k, 2 * k);
            p.view_mut((0, 0), (k, k)).copy_from(&(&t * &rm * &t));
            p.view_mut((0, k), (k, k)).copy_from(&(&t * &rm));
            p.view_mut((k, 0), (k, k)).copy_from(&(&rm * &t));
            p.view_mut((k, k), (k, k)).copy_from(&rm);
            Ok(p)
        }
        ClosedFormRoute::Hamiltonian => {
            let e11 = diag(&|l| (-l * x).exp());
            let e14 = diag(&|l| cosh_minus_one(l * x) / (l * l));
            let e21 = diag(&|l| -(-l * x).exp_m1() / l);
            let e24 = diag(&|l| sinh_minus_id(l * x) / l.powi(3));
            let mut p1 = DMatrix::zeros(2 * k, 2 * k);
            p1.view_mut((0, 0), (k, k)).copy_from(&e11);
            p1.view_mut((0, k), (k, k)).copy_from(&(e14 * r));
            p1.view_mut((k, 0), (k, k)).copy_from(&e21);
            p1.view_mut((k, k), (k, k)).copy_from(&(DMatrix::identity(k, k) + e24 * r));
            let mut p2 = DMatrix::zeros(2 * k, 2 * k);
            p2.view_mut((0, k), (k, k)).copy_from(&(t * r));
            p2.view_mut((k, k), (k, k)).copy_from(r);
            let p1_inv = invert_checked(&p1, "P1")?;
            Ok(p2 * p1_inv)
        }
    }
}

fn invert_checked(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let sv = m.clone().svd(false, false).singular_values;
    let condition = sv.max() / sv.min();
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::Singular { what, condition });
    }
    m.clone().try_inverse().ok_or(Error::Singular { what, condition })
}

/// `k` on the Riccati grid by backward RK4. `P` at step midpoints comes
/// from cubic Hermite interpolation with the exact `Ṗ`.
pub fn solve_k_backward(sys: &LqSystem, path: &RiccatiPath) -> Result<Vec<DVector<f64>>> {
    if let Some(b) = path.blow_up {
        return Err(Error::BlowUp { time: b.time, norm: b.norm });
    }
    let n = sys.c.len();
    let steps = path.grid.steps;
    let h = path.grid.step();
    let mut k = vec![DVector::zeros(n); steps + 1];
    for j in (0..steps).rev() {
        let (p0, p1) = (&path.p[j], &path.p[j + 1]);
        let p_mid = hermite_midpoint(p0, &sys.riccati_rate(p0), p1, &sys.riccati_rate(p1), h);
        let t1 = path.grid.time(j + 1);
        let t_mid = t1 - 0.5 * h;
        let p_at = |t: f64| {
            if t == t1 {
                p1
            } else if t == t_mid {
                &p_mid
            } else {
                p0
            }
        };
        k[j] = rk4_step(t1, &k[j + 1], -h, |t, y| sys.offset_rate(p_at(t), y));
    }
    Ok(k)
}

/// `m(0) = ∫₀^τ (kᵀc − ½ kᵀBBᵀk) dt` by composite Simpson (3/8 rule on the
/// last three intervals when the step count is odd).
pub fn solve_m_backward(sys: &LqSystem, grid: &TimeGrid, k: &[DVector<f64>]) -> Result<f64> {
    check_len("k", grid.steps + 1, k.len())?;
    let f: Vec<f64> = k.iter().map(|k| k.dot(&sys.c) - 0.5 * k.dot(&(&sys.bbt * k))).collect();
    Ok(simpson(&f, grid.step()))
}

fn simpson(f: &[f64], h: f64) -> f64 {
    let n = f.len() - 1;
    match n {
        0 => 0.0,
        1 => 0.5 * h * (f[0] + f[1]),
        _ => {
            let even_end = if n % 2 == 0 { n } else { n - 3 };
            let mut s = 0.0;
            for i in (0..even_end).step_by(2) {
                s += h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
            }
            if even_end < n {
                let i = even_end;
                s += 3.0 * h / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]);
            }
            s
        }
    }
}

/// `w = −Bᵀ(PZ + k)` and `u = w + ū`.
pub fn feedback(p: &DMatrix<f64>, k: &DVector<f64>, z: &DVector<f64>, u_bar: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let classes = u_bar.len();
    let w: DVector<f64> = -(p * z + k).rows(0, classes);
    let u = &w + u_bar;
    (w, u)
}

/// Solved problem: `P`, `k` on the grid and `m(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSolution {
    pub grid: TimeGrid,
    pub p: Vec<DMatrix<f64>>,
    pub k: Vec<DVector<f64>>,
    pub m0: f64,
    /// Factor by which `grid` refines the requested step count.
    pub refinement: usize,
}

impl CtSolution {
    /// `Z(0)ᵀP(0)Z(0) + 2k(0)ᵀZ(0) + 2m(0)`.
    pub fn optimal_cost(&self, z0: &DVector<f64>) -> f64 {
        z0.dot(&(&self.p[0] * z0)) + 2.0 * self.k[0].dot(z0) + 2.0 * self.m0
    }

    pub fn smallest_eigenvalue_p0(&self) -> f64 {
        self.p[0].clone().symmetric_eigen().eigenvalues.min()
    }

    /// Linear interpolation of `(P, k)` at `t`.
    pub fn interpolate(&self, t: f64) -> (DMatrix<f64>, DVector<f64>) {
        let h = self.grid.step();
        let s = ((t - self.grid.start) / h).clamp(0.0, self.grid.steps as f64);
        let j = (s.floor() as usize).min(self.grid.steps - 1);
        let a = s - j as f64;
        if a == 0.0 {
            return (self.p[j].clone(), self.k[j].clone());
        }
        (
            &self.p[j] * (1.0 - a) + &self.p[j + 1] * a,
            &self.k[j] * (1.0 - a) + &self.k[j + 1] * a,
        )
    }
}

/// Riccati, offset and scalar solves in sequence. A blow-up is an error.
///
/// When the requested grid is too coarse for the Riccati dynamics
/// (`h·L > REFINEMENT_TARGET` somewhere), the grid is refined by a power of
/// two so that `k`, `m` and the rollout resolve the fast modes as well.
pub fn solve(sys: &LqSystem, horizon: f64, cfg: &SolverConfig) -> Result<CtSolution> {
    let mut path = solve_riccati_backward(sys, horizon, cfg)?;
    if let Some(b) = path.blow_up {
        return Err(Error::BlowUp { time: b.time, norm: b.norm });
    }
    let mut refinement = 1;
    while refinement < MAX_REFINEMENT && path.stiffness / (refinement as f64) > REFINEMENT_TARGET {
        refinement *= 2;
    }
    if refinement > 1 {
        let fine = SolverConfig {
            steps: cfg.steps * refinement,
            ..*cfg
        };
        path = solve_riccati_backward(sys, horizon, &fine)?;
    }
    let k = solve_k_backward(sys, &path)?;
    let m0 = solve_m_backward(sys, &path.grid, &k)?;
    Ok(CtSolution {
        grid: path.grid,
        p: path.p,
        k,
        m0,
        refinement,
    })
}

/// Forward RK4 of the closed loop on the solution grid, with `P` and `k`
/// linearly interpolated inside each step.
pub fn rollout(m: &ModelSpec, sys: &LqSystem, sol: &CtSolution, z0: &DVector<f64>) -> Result<ControlledTrajectory> {
    rollout_perturbed(m, sys, sol, z0, |_| None)
}

/// As [`rollout`] with an additive open-loop term `δ(t)` on `w`.
pub fn rollout_perturbed<F>(m: &ModelSpec, sys: &LqSystem, sol: &CtSolution, z0: &DVector<f64>, delta: F) -> Result<ControlledTrajectory>
where
    F: Fn(f64) -> Option<DVector<f64>>,
{
    check_len("z0", sys.c.len(), z0.len())?;
    let control = |t: f64, z: &DVector<f64>| {
        let (p, k) = sol.interpolate(t);
        let (mut w, _) = feedback(&p, &k, z, &sys.u_bar);
        if let Some(d) = delta(t) {
            w += d;
        }
        w
    };
    let grid = sol.grid;
    let h = grid.step();
    let mut z = vec![z0.clone()];
    let mut w = Vec::with_capacity(grid.steps + 1);
    for j in 0..grid.steps {
        let t = grid.time(j);
        w.push(control(t, &z[j]));
        let next = rk4_step(t, &z[j], h, |t, y| sys.drift(y, &control(t, y)));
        z.push(next);
    }
    w.push(control(grid.end, &z[grid.steps]));
    let mut traj = ControlledTrajectory::from_samples(grid.times(), &z, &w, m, sys.u_bar.as_slice());
    traj.cost = evaluate_cost(&traj, &sys.r);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::build_r;
    use crate::model::AugmentedState;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_system(lambda: f64, r: f64, n: f64) -> (ModelSpec, LqSystem) {
        let m = ModelSpec::new(vec![lambda], vec![lambda], vec![n]).unwrap();
        let cw = CostWeights::new(0.0, 1.0, 0.0, vec![0.0]).unwrap();
        let sys = build_system(&m, &cw, &DMatrix::from_element(1, 1, r)).unwrap();
        (m, sys)
    }

    fn random_psd_system(rng: &mut ChaCha8Rng) -> (ModelSpec, LqSystem) {
        let ld: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..2.0)).collect();
        let m = ModelSpec::new(vec![0.5; 3], ld, vec![10.0, 20.0, 30.0]).unwrap();
        let cw = CostWeights::new(0.0, 1.0, 0.0, vec![-0.1; 3]).unwrap();
        let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = &g * g.transpose() + DMatrix::identity(3, 3) * 0.1;
        let sys = build_system(&m, &cw, &r).unwrap();
        (m, sys)
    }

    fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn system_blocks() {
        let (_, sys) = scalar_system(2.0, 1.0, 10.0);
        assert_eq!(sys.a, DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 1.0, 0.0]));
        let (_, sys) = scalar_system(1.0, 1.0, 10.0);
        assert_eq!(sys.c.as_slice(), &[10.0, 0.0]);
        let m = ModelSpec::uniform(3, crate::LAMBDA_0, 50.0).unwrap();
        let cw = CostWeights::new(crate::LAMBDA_0.powi(-2), 1.0, 0.05, vec![0.0; 3]).unwrap();
        let r = build_r(&cw, &m);
        let sys = build_system(&m, &cw, &r).unwrap();
        assert_eq!(sys.q_f.view((3, 3), (3, 3)), r);
        assert_eq!(sys.q_f.view((0, 0), (3, 6)).amax(), 0.0);
    }

    #[test]
    fn zero_terminal_weight_gives_zero_solution() {
        let (_, sys) = scalar_system(1.0, 0.0, 10.0);
        let sol = solve(&sys, 1.0, &SolverConfig { steps: 64, ..Default::default() }).unwrap();
        assert!(sol.p.iter().all(|p| p.amax() == 0.0));
        assert!(sol.k.iter().all(|k| k.amax() == 0.0));
        assert_eq!(sol.m0, 0.0);
    }

    #[test]
    fn terminal_condition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, sys) = random_psd_system(&mut rng);
        let path = solve_riccati_backward(&sys, 2.0, &SolverConfig { steps: 100, ..Default::default() }).unwrap();
        assert_eq!(path.p[100], sys.q_f);
        let k = solve_k_backward(&sys, &path).unwrap();
        assert_eq!(k[100].amax(), 0.0);
    }

    #[test]
    fn closed_form_limits() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        for route in [ClosedFormRoute::Blocks, ClosedFormRoute::Hamiltonian] {
            let p = closed_form_p(&[1.0, 3.0], &r, 0.0, route).unwrap();
            let mut q_f = DMatrix::zeros(4, 4);
            q_f.view_mut((2, 2), (2, 2)).copy_from(&r);
            assert!((p - q_f).amax() < 1e-15);
            let z = closed_form_p(&[1.0, 3.0], &DMatrix::zeros(2, 2), -2.0, route).unwrap();
            assert_eq!(z.amax(), 0.0);
        }
    }

    #[test]
    fn closed_form_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (_, sys) = random_psd_system(&mut rng);
            for x in [-1e-6, -0.01, -0.5, -2.0, -5.0] {
                let a = closed_form_p(&sys.lambda_out, &sys.r, x, ClosedFormRoute::Blocks).unwrap();
                let b = closed_form_p(&sys.lambda_out, &sys.r, x, ClosedFormRoute::Hamiltonian).unwrap();
                assert!(rel_diff(&a, &b) < 1e-10, "x = {x}: {}", rel_diff(&a, &b));
                assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax());
            }
        }
    }

    #[test]
    fn scalar_closed_form_matches_ode() {
        let (_, sys) = scalar_system(1.0, 1.0, 10.0);
        let path = solve_riccati_backward(&sys, 1.0, &SolverConfig::default()).unwrap();
        let cf = closed_form_p(&sys.lambda_out, &sys.r, -1.0, ClosedFormRoute::Blocks).unwrap();
        assert!(rel_diff(&path.p[0], &cf) < 1e-6);
    }

    #[test]
    fn indefinite_terminal_weight_blows_up() {
        let m = ModelSpec::uniform(3, crate::LAMBDA_0, 50.0).unwrap();
        let cw = CostWeights::new(crate::LAMBDA_0.powi(-2), 1.0, 0.05, vec![0.0; 3]).unwrap();
        let sys = build_system(&m, &cw, &build_r(&cw, &m)).unwrap();
        let path = solve_riccati_backward(&sys, 3600.0, &SolverConfig::default()).unwrap();
        let b = path.blow_up.expect("indefinite R must escape");
        assert!(b.time > 3590.0 && b.time < 3600.0, "{}", b.time);
        assert!(matches!(solve(&sys, 3600.0, &SolverConfig::default()), Err(Error::BlowUp { .. })));
        // det(M_x) changes sign where the closed form loses invertibility.
        let det_m = |x: f64| {
            let d = DMatrix::from_diagonal(&DVector::from_iterator(3, sys.lambda_out.iter().map(|&l| hamiltonian_gram(l * x) / l.powi(3))));
            (DMatrix::identity(3, 3) + d * &sys.r).determinant()
        };
        let escape = (0..20_000)
            .map(|i| -i as f64 * 1e-4)
            .find(|&x| det_m(x) <= 0.0)
            .expect("closed form must escape");
        assert!(escape < -0.879 && escape > -1.758, "{escape}");
        assert!((b.time - 3600.0 - escape).abs() < 0.01, "{} vs {escape}", b.time);
    }

    #[test]
    fn riccati_residual_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, sys) = random_psd_system(&mut rng);
        let residual = |steps| {
            let path = solve_riccati_backward(&sys, 2.0, &SolverConfig { steps, ..Default::default() }).unwrap();
            let h = path.grid.step();
            (1..steps)
                .map(|j| {
                    let dp = (&path.p[j + 1] - &path.p[j - 1]) / (2.0 * h);
                    (dp - sys.riccati_rate(&path.p[j])).norm()
                })
                .fold(0.0, f64::max)
        };
        let (r1, r2) = (residual(64), residual(128));
        let order = (r1 / r2).log2();
        assert!(order > 1.8 && order < 2.2, "{order}");
    }

    #[test]
    fn k_converges_under_refinement() {
        let (_, sys) = scalar_system(1.0, 1.0, 10.0);
        let k_at = |steps| {
            let path = solve_riccati_backward(&sys, 1.0, &SolverConfig { steps, ..Default::default() }).unwrap();
            solve_k_backward(&sys, &path).unwrap()[0].clone()
        };
        let (coarse, fine) = (k_at(4096), k_at(40960));
        assert!((&coarse - &fine).norm() <= 1e-6 * fine.norm());
    }

    #[test]
    fn m_is_nonpositive_without_drift() {
        let (_, mut sys) = scalar_system(1.0, 1.0, 10.0);
        let path = solve_riccati_backward(&sys, 1.0, &SolverConfig { steps: 256, ..Default::default() }).unwrap();
        let k = solve_k_backward(&sys, &path).unwrap();
        sys.c.fill(0.0);
        assert!(solve_m_backward(&sys, &path.grid, &k).unwrap() < 0.0);
        let zeros = vec![DVector::zeros(2); 257];
        assert_eq!(solve_m_backward(&sys, &path.grid, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        for n in [2usize, 3, 5, 8] {
            let h = 1.0 / n as f64;
            let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).powi(3)).collect();
            assert!((simpson(&f, h) - 0.25).abs() < 1e-14, "{n}");
        }
    }

    #[test]
    fn feedback_examples() {
        let u_bar = DVector::from_vec(vec![-0.5]);
        let (w, u) = feedback(&DMatrix::zeros(2, 2), &DVector::zeros(2), &DVector::from_vec(vec![3.0, 4.0]), &u_bar);
        assert_eq!((w[0], u[0]), (0.0, -0.5));
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let (w, _) = feedback(&p, &DVector::zeros(2), &DVector::zeros(2), &u_bar);
        assert_eq!(w[0], 0.0);
        // At τ, P = Q_f has zero top rows, so u = ū.
        let mut q_f = DMatrix::zeros(2, 2);
        q_f[(1, 1)] = 7.0;
        let (_, u) = feedback(&q_f, &DVector::zeros(2), &DVector::from_vec(vec![3.0, 4.0]), &u_bar);
        assert_eq!(u[0], -0.5);
    }

    #[test]
    fn uncontrolled_rollout_matches_closed_form() {
        let (m, sys) = scalar_system(0.01, 0.0, 50.0);
        let sol = solve(&sys, 500.0, &SolverConfig { steps: 500, ..Default::default() }).unwrap();
        let traj = rollout(&m, &sys, &sol, &AugmentedState::zero(1).stacked()).unwrap();
        for (t, x) in traj.t.iter().zip(&traj.x) {
            assert!((x[0] - 50.0 * (1.0 - (-0.01 * t).exp())).abs() < 1e-7);
            assert!((0.0..=50.0).contains(&x[0]));
        }
        assert_eq!(traj.cost, 0.0);
    }

    #[test]
    fn min_j_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let (m, sys) = random_psd_system(&mut rng);
            let sol = solve(&sys, 3.0, &SolverConfig::default()).unwrap();
            let z0 = DVector::from_fn(6, |i, _| if i < 3 { rng.random_range(0.0..5.0) } else { 0.0 });
            let traj = rollout(&m, &sys, &sol, &z0).unwrap();
            assert_relative_eq!(traj.cost, sol.optimal_cost(&z0), max_relative = 1e-6);
        }
    }

    #[test]
    fn perturbations_increase_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (m, sys) = random_psd_system(&mut rng);
        let sol = solve(&sys, 3.0, &SolverConfig::default()).unwrap();
        let z0 = DVector::zeros(6);
        let best = rollout(&m, &sys, &sol, &z0).unwrap().cost;
        for _ in 0..5 {
            let centre = rng.random_range(0.3..2.7);
            let class = rng.random_range(0..3);
            for eps in [1e-2, -1e-2] {
                let bump = |t: f64| {
                    let s = (t - centre) / 0.2;
                    (s.abs() < 1.0).then(|| {
                        let mut d = DVector::zeros(3);
                        d[class] = eps * (1.0 - s * s).powi(2);
                        d
                    })
                };
                let cost = rollout_perturbed(&m, &sys, &sol, &z0, bump).unwrap().cost;
                assert!(cost > best, "bump at {centre} in class {class}: {cost} <= {best}");
            }
        }
    }
}
