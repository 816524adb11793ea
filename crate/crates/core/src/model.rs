//! Two-hop relay dynamics, the delivery functional and constraint reporting.
//!
//! With `X_i(t)` the expected number of class-`i` relays holding a copy, the
//! controlled mean dynamics are
//!
//! ```text
//! dX/dt = Λin N - Λout X + u,        u = E[-M ξ] <= 0
//! ```
//!
//! and the augmented state `Z = (X, X̂)` with `dX̂/dt = X` turns the delivery
//! and energy objectives into a terminal quadratic cost on `X̂`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::trapezoid;

/// Default absolute tolerance for constraint reports.
pub const DEFAULT_CONSTRAINT_TOL: f64 = 1e-9;

/// Class structure and contact intensities of the network.
///
/// `lambda_d` is both the vector `Λd` of destination-contact intensities and
/// the diagonal of `Λout`; `lambda_s` is the diagonal of `Λin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    lambda_s: Vec<f64>,
    lambda_d: Vec<f64>,
    population: Vec<f64>,
    /// Class of the source node. Informational only.
    pub source_class: usize,
    /// Class of the destination node. Informational only.
    pub dest_class: usize,
}

impl ModelSpec {
    pub fn new(lambda_s: Vec<f64>, lambda_d: Vec<f64>, population: Vec<f64>) -> Result<Self> {
        let k = lambda_d.len();
        if k == 0 {
            return Err(Error::invalid("lambda_d", "at least one class is required"));
        }
        check_len("lambda_s", k, lambda_s.len())?;
        check_len("n", k, population.len())?;
        for (i, &l) in lambda_s.iter().enumerate() {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::invalid(format!("lambda_s[{i}]"), format!("must be finite and >= 0 (got {l})")));
            }
        }
        for (i, &l) in lambda_d.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid(format!("lambda_d[{i}]"), format!("must be finite and > 0 (got {l})")));
            }
        }
        for (i, &n) in population.iter().enumerate() {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::invalid(format!("n[{i}]"), format!("must be finite and > 0 (got {n})")));
            }
        }
        Ok(Self {
            lambda_s,
            lambda_d,
            population,
            source_class: 0,
            dest_class: 0,
        })
    }

    /// `classes` identical classes with `λ_s = λ_d = lambda`.
    pub fn uniform(classes: usize, lambda: f64, population: f64) -> Result<Self> {
        Self::new(vec![lambda; classes], vec![lambda; classes], vec![population; classes])
    }

    pub fn classes(&self) -> usize {
        self.lambda_d.len()
    }

    pub fn lambda_s(&self) -> &[f64] {
        &self.lambda_s
    }

    pub fn lambda_d(&self) -> &[f64] {
        &self.lambda_d
    }

    pub fn population(&self) -> &[f64] {
        &self.population
    }

    /// `Λin N`.
    pub fn inflow(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.classes(),
            self.lambda_s.iter().zip(&self.population).map(|(l, n)| l * n),
        )
    }
}

/// Weights of the cost `∫ (u - ū)ᵀ(u - ū) + X̂(τ)ᵀ R X̂(τ)` with
/// `R = -c1 Λd Λdᵀ + c3 I + c4 Λout²`. The control weight `c2` is normalised
/// to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub c1: f64,
    pub c3: f64,
    pub c4: f64,
    /// Reference control, componentwise `<= 0`.
    pub u_bar: Vec<f64>,
    /// Per-class running weights of the infinite-horizon problems.
    pub q: Option<Vec<f64>>,
    /// Running weight on the augmented state for the discrete-time solver.
    pub q_matrix: Option<DMatrix<f64>>,
}

impl CostWeights {
    pub const C2: f64 = 1.0;

    pub fn new(c1: f64, c3: f64, c4: f64, u_bar: Vec<f64>) -> Result<Self> {
        for (name, v) in [("c1", c1), ("c3", c3), ("c4", c4)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and >= 0 (got {v})")));
            }
        }
        for (i, &u) in u_bar.iter().enumerate() {
            if !(u.is_finite() && u <= 0.0) {
                return Err(Error::invalid(format!("u_bar[{i}]"), format!("must be finite and <= 0 (got {u})")));
            }
        }
        Ok(Self {
            c1,
            c3,
            c4,
            u_bar,
            q: None,
            q_matrix: None,
        })
    }

    pub fn with_q(mut self, q: Vec<f64>) -> Result<Self> {
        for (i, &v) in q.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("q[{i}]"), format!("must be finite and > 0 (got {v})")));
            }
        }
        self.q = Some(q);
        Ok(self)
    }

    pub fn check_classes(&self, model: &ModelSpec) -> Result<()> {
        let k = model.classes();
        check_len("u_bar", k, self.u_bar.len())?;
        if let Some(q) = &self.q {
            check_len("q", k, q.len())?;
        }
        if let Some(q) = &self.q_matrix {
            if q.nrows() != 2 * k || q.ncols() != 2 * k {
                return Err(Error::Dimension {
                    what: "q_matrix",
                    expected: 2 * k,
                    got: q.nrows(),
                });
            }
        }
        Ok(())
    }

    pub fn u_bar_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_bar)
    }
}

/// `Z = (X, X̂)`: expected infected counts and their time integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
}

impl AugmentedState {
    pub fn zero(classes: usize) -> Self {
        Self {
            x: vec![0.0; classes],
            xhat: vec![0.0; classes],
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.x.len() * 2, self.x.iter().chain(&self.xhat).copied())
    }

    pub fn from_stacked(z: &DVector<f64>) -> Self {
        let k = z.len() / 2;
        Self {
            x: z.rows(0, k).iter().copied().collect(),
            xhat: z.rows(k, k).iter().copied().collect(),
        }
    }
}

/// `dZ/dt = A Z + B w + c` with `c = (Λin N + ū, 0)`.
pub fn drift(z: &AugmentedState, w: &[f64], model: &ModelSpec, weights: &CostWeights) -> Result<AugmentedState> {
    let k = model.classes();
    check_len("x", k, z.x.len())?;
    check_len("xhat", k, z.xhat.len())?;
    check_len("w", k, w.len())?;
    check_len("u_bar", k, weights.u_bar.len())?;
    let dx = (0..k)
        .map(|i| -model.lambda_d[i] * z.x[i] + w[i] + model.lambda_s[i] * model.population[i] + weights.u_bar[i])
        .collect();
    Ok(AugmentedState { x: dx, xhat: z.x.clone() })
}

/// `D = 1 - exp(-Λdᵀ X̂)`, the deterministic surrogate of the delivery
/// probability built from the mean trajectory.
pub fn delivery_lower_bound(xhat: &[f64], lambda_d: &[f64]) -> Result<f64> {
    check_len("xhat", lambda_d.len(), xhat.len())?;
    if let Some(i) = xhat.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(format!("xhat[{i}]"), format!("must be >= 0 (got {})", xhat[i])));
    }
    Ok(delivery_functional(xhat, lambda_d))
}

/// Unchecked form used on trajectories that may leave the feasible set.
pub(crate) fn delivery_functional(xhat: &[f64], lambda_d: &[f64]) -> f64 {
    let exponent: f64 = xhat.iter().zip(lambda_d).map(|(x, l)| x * l).sum();
    -(-exponent).exp_m1()
}

/// Per-class timer rates realising an expected discard flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TimerRates {
    /// `M_i = -u_i / X_i`.
    pub total: Vec<f64>,
    /// `M̄_i = M_i - λ_s,i + λ_d,i`, the rate at which a relay drops its copy.
    pub discard: Vec<f64>,
    /// Classes whose discard rate came out negative (clamped to zero when
    /// clamping is enabled).
    pub negative: Vec<usize>,
}

/// Inverts `u = -M X` at the mean. Classes with `X_i = 0` and `u_i = 0` get
/// no discards.
pub fn timer_rates_from_control(u: &[f64], x: &[f64], model: &ModelSpec, clamp_negative: bool) -> Result<TimerRates> {
    let k = model.classes();
    check_len("u", k, u.len())?;
    check_len("x", k, x.len())?;
    let mut rates = TimerRates {
        total: Vec::with_capacity(k),
        discard: Vec::with_capacity(k),
        negative: Vec::new(),
    };
    for i in 0..k {
        let (ls, ld) = (model.lambda_s[i], model.lambda_d[i]);
        let (m, mut m_bar) = if x[i] > 0.0 {
            let m = -u[i] / x[i];
            (m, m + (ld - ls))
        } else if x[i] == 0.0 && u[i] == 0.0 {
            (ls - ld, 0.0)
        } else {
            return Err(Error::InfeasibleControl { class: i, x: x[i], u: u[i] });
        };
        if m_bar < 0.0 {
            rates.negative.push(i);
            if clamp_negative {
                m_bar = 0.0;
            }
        }
        rates.total.push(m);
        rates.discard.push(m_bar);
    }
    Ok(rates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    /// `X_i < 0`
    NegativeState,
    /// `X_i > N_i`
    ExceedsPopulation,
    /// `u_i > 0`
    PositiveControl,
    /// implied `M̄_i < 0`
    NegativeTimer,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::NegativeState => "X<0",
            ViolationKind::ExceedsPopulation => "X>N",
            ViolationKind::PositiveControl => "u>0",
            ViolationKind::NegativeTimer => "timer<0",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub step: usize,
    pub time: f64,
    pub class: usize,
    pub kind: ViolationKind,
    pub value: f64,
}

/// Sampled controlled trajectory. All per-time arrays are indexed
/// `[time][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledTrajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub delivery: Vec<f64>,
    pub cost: f64,
    pub violations: Vec<Violation>,
}

impl ControlledTrajectory {
    /// Builds a trajectory from stacked states and deviation controls; fills
    /// `u = w + ū`, the delivery functional and the constraint report. The
    /// cost is left for the caller.
    pub fn from_samples(t: Vec<f64>, z: &[DVector<f64>], w: &[DVector<f64>], model: &ModelSpec, u_bar: &[f64]) -> Self {
        let k = model.classes();
        let x: Vec<Vec<f64>> = z.iter().map(|z| z.rows(0, k).iter().copied().collect()).collect();
        let xhat: Vec<Vec<f64>> = z.iter().map(|z| z.rows(k, k).iter().copied().collect()).collect();
        let w: Vec<Vec<f64>> = w.iter().map(|w| w.iter().copied().collect()).collect();
        let u = w.iter().map(|w| w.iter().zip(u_bar).map(|(w, b)| w + b).collect()).collect();
        let delivery = xhat.iter().map(|xh: &Vec<f64>| delivery_functional(xh, model.lambda_d())).collect();
        let mut traj = Self {
            t,
            x,
            xhat,
            u,
            w,
            delivery,
            cost: f64::NAN,
            violations: Vec::new(),
        };
        traj.violations = check_constraints(&traj, model, DEFAULT_CONSTRAINT_TOL);
        traj
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Every `stride`-th sample plus the last one. Cost and violations still
    /// describe the full trajectory.
    pub fn subsample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let n = self.len();
        let keep: Vec<usize> = (0..n).filter(|j| j % stride == 0 || *j + 1 == n).collect();
        let pick = |v: &[Vec<f64>]| keep.iter().map(|&j| v[j].clone()).collect();
        Self {
            t: keep.iter().map(|&j| self.t[j]).collect(),
            x: pick(&self.x),
            xhat: pick(&self.xhat),
            u: pick(&self.u),
            w: pick(&self.w),
            delivery: keep.iter().map(|&j| self.delivery[j]).collect(),
            cost: self.cost,
            violations: self.violations.clone(),
        }
    }

    /// Linear interpolation of `(X, u)` at time `t`.
    pub fn interpolate(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let j = match self.t.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(j) => return (self.x[j].clone(), self.u[j].clone()),
            Err(j) => j.clamp(1, self.t.len() - 1),
        };
        let (t0, t1) = (self.t[j - 1], self.t[j]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let lerp = |v0: &[f64], v1: &[f64]| v0.iter().zip(v1).map(|(p, q)| p + a * (q - p)).collect();
        (lerp(&self.x[j - 1], &self.x[j]), lerp(&self.u[j - 1], &self.u[j]))
    }
}

/// Lists every grid point where `X_i < -tol`, `X_i > N_i + tol`,
/// `u_i > tol` or the implied discard rate is below `-tol`. An empty report
/// means the trajectory is feasible.
pub fn check_constraints(traj: &ControlledTrajectory, model: &ModelSpec, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (step, &time) in traj.t.iter().enumerate() {
        for class in 0..model.classes() {
            let x = traj.x[step][class];
            let u = traj.u[step][class];
            let mut push = |kind, value| {
                out.push(Violation {
                    step,
                    time,
                    class,
                    kind,
                    value,
                })
            };
            if x < -tol {
                push(ViolationKind::NegativeState, x);
            }
            if x > model.population[class] + tol {
                push(ViolationKind::ExceedsPopulation, x);
            }
            if u > tol {
                push(ViolationKind::PositiveControl, u);
            }
            if x > tol {
                let m_bar = -u / x - model.lambda_s[class] + model.lambda_d[class];
                if m_bar < -tol {
                    push(ViolationKind::NegativeTimer, m_bar);
                }
            }
        }
    }
    out
}

/// `∫ wᵀw dt + X̂(τ)ᵀ R X̂(τ)` by the trapezoidal rule on the trajectory grid.
pub fn evaluate_cost(traj: &ControlledTrajectory, r: &DMatrix<f64>) -> f64 {
    let energy: Vec<f64> = traj.w.iter().map(|w| w.iter().map(|v| v * v).sum()).collect();
    let running = CostWeights::C2 * trapezoid(&traj.t, &energy);
    let terminal = match traj.xhat.last() {
        Some(xh) => {
            let v = DVector::from_column_slice(xh);
            (v.transpose() * r * &v)[(0, 0)]
        }
        None => 0.0,
    };
    running + terminal
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
