//! Stochastic contact-process simulator.
//!
//! Each class-`i` relay without a copy is infected at rate `λ_s,i`; each
//! holder discards at the timer rate `M̄_i(t)` and returns to the
//! susceptible pool. Rates are piecewise constant on a schedule grid, and
//! events inside a step are drawn exactly with competing exponentials. The
//! destination meets holders at rate `λ_d,i` each; the first such meeting
//! is the delivery time `T_d` and does not affect the relays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result, TimerViolation};
use crate::model::{timer_rates_from_control, ControlledTrajectory, ModelSpec};
use crate::ode::TimeGrid;

const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub runs: usize,
    pub base_seed: u64,
    /// Initial holders per class; all zero when absent.
    pub initial: Option<Vec<u64>>,
    /// Run chunks on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            runs: 1000,
            base_seed: 0,
            initial: None,
            parallel: true,
        }
    }
}

/// Per-step discard rates `M̄` (step × class).
#[derive(Debug, Clone, PartialEq)]
pub struct TimerSchedule {
    pub grid: TimeGrid,
    pub discard: Vec<Vec<f64>>,
    /// Steps whose rate was negative and clamped to zero.
    pub clamped: Vec<TimerViolation>,
}

impl TimerSchedule {
    /// No timers: `M̄ ≡ 0`.
    pub fn uncontrolled(m: &ModelSpec, grid: TimeGrid) -> Self {
        Self {
            grid,
            discard: vec![vec![0.0; m.classes()]; grid.steps],
            clamped: Vec::new(),
        }
    }

    /// Timer rates realising the mean control of `traj`, evaluated at each
    /// step midpoint. Negative rates are an error unless `clamp` is set.
    pub fn from_trajectory(traj: &ControlledTrajectory, m: &ModelSpec, grid: TimeGrid, clamp: bool) -> Result<Self> {
        let mut discard = Vec::with_capacity(grid.steps);
        let mut negative = Vec::new();
        for j in 0..grid.steps {
            let mid = 0.5 * (grid.time(j) + grid.time(j + 1));
            let (x, u) = traj.interpolate(mid);
            let rates = timer_rates_from_control(&u, &x, m, clamp)?;
            for &class in &rates.negative {
                negative.push(TimerViolation {
                    step: j,
                    time: mid,
                    class,
                    rate: -u[class] / x[class] - m.lambda_s()[class] + m.lambda_d()[class],
                });
            }
            discard.push(rates.discard);
        }
        if !clamp && !negative.is_empty() {
            return Err(Error::NegativeTimer { steps: negative });
        }
        Ok(Self {
            grid,
            discard,
            clamped: negative,
        })
    }

    fn check(&self, m: &ModelSpec) -> Result<()> {
        if self.discard.len() != self.grid.steps {
            return Err(Error::GridMismatch {
                left: self.discard.len(),
                right: self.grid.steps,
            });
        }
        for (step, row) in self.discard.iter().enumerate() {
            if row.len() != m.classes() {
                return Err(Error::Dimension {
                    what: "discard",
                    expected: m.classes(),
                    got: row.len(),
                });
            }
            if let Some(class) = row.iter().position(|r| !(*r >= 0.0 && r.is_finite())) {
                return Err(Error::NegativeTimer {
                    steps: vec![TimerViolation {
                        step,
                        time: self.grid.time(step),
                        class,
                        rate: row[class],
                    }],
                });
            }
        }
        Ok(())
    }
}

/// One realisation sampled on the schedule grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub xi: Vec<Vec<u64>>,
    /// `H(t) = Σ λ_d,i ∫ ξ_i`.
    pub hazard: Vec<f64>,
    pub delivery_time: Option<f64>,
}

fn integral_population(m: &ModelSpec) -> Result<Vec<u64>> {
    m.population()
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if (n - n.round()).abs() > 1e-9 || n > u32::MAX as f64 {
                Err(Error::invalid(format!("n[{i}]"), format!("simulation needs an integral population (got {n})")))
            } else {
                Ok(n.round() as u64)
            }
        })
        .collect()
}

fn initial_state(m: &ModelSpec, cfg: &SimConfig, pop: &[u64]) -> Result<Vec<u64>> {
    match &cfg.initial {
        None => Ok(vec![0; m.classes()]),
        Some(v) => {
            if v.len() != m.classes() {
                return Err(Error::Dimension {
                    what: "initial",
                    expected: m.classes(),
                    got: v.len(),
                });
            }
            if let Some(i) = v.iter().zip(pop).position(|(x, n)| x > n) {
                return Err(Error::invalid(format!("initial[{i}]"), "exceeds the class population"));
            }
            Ok(v.clone())
        }
    }
}

/// Unit-mean exponential variate.
fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

struct Prepared<'a> {
    m: &'a ModelSpec,
    schedule: &'a TimerSchedule,
    pop: Vec<u64>,
    x0: Vec<u64>,
    base_seed: u64,
}

impl Prepared<'_> {
    fn new<'a>(m: &'a ModelSpec, schedule: &'a TimerSchedule, cfg: &SimConfig) -> Result<Prepared<'a>> {
        schedule.check(m)?;
        let pop = integral_population(m)?;
        let x0 = initial_state(m, cfg, &pop)?;
        Ok(Prepared {
            m,
            schedule,
            pop,
            x0,
            base_seed: cfg.base_seed,
        })
    }

    fn run(&self, run_index: u64) -> SamplePath {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(run_index);
        let k = self.m.classes();
        let (ls, ld) = (self.m.lambda_s(), self.m.lambda_d());
        let grid = self.schedule.grid;
        let mut xi = self.x0.clone();
        let mut h_total = 0.0;
        let threshold = exp1(&mut rng);
        let mut delivery_time = None;
        let mut path_xi = Vec::with_capacity(grid.steps + 1);
        let mut hazard = Vec::with_capacity(grid.steps + 1);
        path_xi.push(xi.clone());
        hazard.push(0.0);
        let mut rates = vec![0.0; 2 * k];
        for j in 0..grid.steps {
            let (mut t, end) = (grid.time(j), grid.time(j + 1));
            let discard = &self.schedule.discard[j];
            loop {
                let mut total = 0.0;
                for i in 0..k {
                    rates[i] = ls[i] * (self.pop[i] - xi[i]) as f64;
                    rates[k + i] = discard[i] * xi[i] as f64;
                    total += rates[i] + rates[k + i];
                }
                let dt = if total > 0.0 { exp1(&mut rng) / total } else { f64::INFINITY };
                let seg_end = if t + dt < end { t + dt } else { end };
                let slope: f64 = (0..k).map(|i| ld[i] * xi[i] as f64).sum();
                let gained = slope * (seg_end - t);
                if delivery_time.is_none() && h_total + gained >= threshold && slope > 0.0 {
                    delivery_time = Some(t + (threshold - h_total) / slope);
                }
                h_total += gained;
                if seg_end >= end {
                    break;
                }
                t = seg_end;
                let mut pick = rng.random::<f64>() * total;
                let mut event = 2 * k - 1;
                for (e, &r) in rates.iter().enumerate() {
                    if pick < r {
                        event = e;
                        break;
                    }
                    pick -= r;
                }
                // Guard against rounding selecting a zero-rate event.
                while rates[event] == 0.0 {
                    event -= 1;
                }
                if event < k {
                    xi[event] += 1;
                } else {
                    xi[event - k] -= 1;
                }
            }
            path_xi.push(xi.clone());
            hazard.push(h_total);
        }
        SamplePath {
            xi: path_xi,
            hazard,
            delivery_time,
        }
    }
}

/// A single realisation for stream `run_index` of `cfg.base_seed`.
pub fn simulate_once(m: &ModelSpec, schedule: &TimerSchedule, cfg: &SimConfig, run_index: u64) -> Result<SamplePath> {
    Ok(Prepared::new(m, schedule, cfg)?.run(run_index))
}

/// Ensemble statistics on the schedule grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEnsemble {
    pub runs: usize,
    pub times: Vec<f64>,
    pub mean_xi: Vec<Vec<f64>>,
    pub se_xi: Vec<Vec<f64>>,
    /// Mean of `Ψ(t) = 1 − e^{−H(t)}`.
    pub mean_psi: Vec<f64>,
    pub se_psi: Vec<f64>,
    /// Fraction of runs with `T_d <= t`.
    pub cdf_td: Vec<f64>,
    pub se_cdf: Vec<f64>,
    /// `H(τ)` per run, in run order.
    pub final_hazard: Vec<f64>,
    /// Sorted delivery times of the runs that delivered within the horizon.
    pub delivery_times: Vec<f64>,
}

struct Sums {
    xi: Vec<u64>,
    xi2: Vec<u64>,
    psi: Vec<f64>,
    psi2: Vec<f64>,
    final_hazard: Vec<f64>,
    delivery: Vec<Option<f64>>,
}

impl Sums {
    fn new(points: usize, k: usize) -> Self {
        Self {
            xi: vec![0; points * k],
            xi2: vec![0; points * k],
            psi: vec![0.0; points],
            psi2: vec![0.0; points],
            final_hazard: Vec::new(),
            delivery: Vec::new(),
        }
    }

    fn add_path(&mut self, p: &SamplePath) {
        let k = p.xi[0].len();
        for (j, row) in p.xi.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                self.xi[j * k + i] += x;
                self.xi2[j * k + i] += x * x;
            }
        }
        for (j, &h) in p.hazard.iter().enumerate() {
            let psi = -(-h).exp_m1();
            self.psi[j] += psi;
            self.psi2[j] += psi * psi;
        }
        self.final_hazard.push(*p.hazard.last().unwrap());
        self.delivery.push(p.delivery_time);
    }

    fn merge(mut self, other: Sums) -> Self {
        for (a, b) in self.xi.iter_mut().zip(&other.xi) {
            *a += b;
        }
        for (a, b) in self.xi2.iter_mut().zip(&other.xi2) {
            *a += b;
        }
        for (a, b) in self.psi.iter_mut().zip(&other.psi) {
            *a += b;
        }
        for (a, b) in self.psi2.iter_mut().zip(&other.psi2) {
            *a += b;
        }
        self.final_hazard.extend(other.final_hazard);
        self.delivery.extend(other.delivery);
        self
    }
}

fn mean_se(sum: f64, sum2: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sum2 - sum * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

/// Aggregates `cfg.runs` independent realisations. Runs are grouped in
/// fixed chunks whose partial sums are combined in chunk order, so the
/// result does not depend on scheduling.
pub fn monte_carlo(m: &ModelSpec, schedule: &TimerSchedule, cfg: &SimConfig) -> Result<SimEnsemble> {
    if cfg.runs == 0 {
        return Err(Error::invalid("runs", "must be >= 1"));
    }
    let prep = Prepared::new(m, schedule, cfg)?;
    let points = schedule.grid.steps + 1;
    let k = m.classes();
    let chunks = cfg.runs.div_ceil(CHUNK);
    let chunk_sums = |c: usize| {
        let mut s = Sums::new(points, k);
        for run in c * CHUNK..((c + 1) * CHUNK).min(cfg.runs) {
            s.add_path(&prep.run(run as u64));
        }
        s
    };
    let parts: Vec<Sums> = if cfg.parallel {
        (0..chunks).into_par_iter().map(chunk_sums).collect()
    } else {
        (0..chunks).map(chunk_sums).collect()
    };
    let total = parts.into_iter().reduce(Sums::merge).expect("at least one chunk");

    let n = cfg.runs as f64;
    let times = schedule.grid.times();
    let mut mean_xi = Vec::with_capacity(points);
    let mut se_xi = Vec::with_capacity(points);
    for j in 0..points {
        let (mut mr, mut sr) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for i in 0..k {
            let (mu, se) = mean_se(total.xi[j * k + i] as f64, total.xi2[j * k + i] as f64, n);
            mr.push(mu);
            sr.push(se);
        }
        mean_xi.push(mr);
        se_xi.push(sr);
    }
    let (mean_psi, se_psi) = (0..points).map(|j| mean_se(total.psi[j], total.psi2[j], n)).unzip();
    let mut delivery_times: Vec<f64> = total.delivery.iter().flatten().copied().collect();
    delivery_times.sort_by(f64::total_cmp);
    let mut cdf_td = Vec::with_capacity(points);
    let mut se_cdf = Vec::with_capacity(points);
    for &t in &times {
        let hits = delivery_times.partition_point(|&d| d <= t) as f64;
        let (p, se) = mean_se(hits, hits, n);
        cdf_td.push(p);
        se_cdf.push(se);
    }
    Ok(SimEnsemble {
        runs: cfg.runs,
        times,
        mean_xi,
        se_xi,
        mean_psi,
        se_psi,
        cdf_td,
        se_cdf,
        final_hazard: total.final_hazard,
        delivery_times,
    })
}

/// Mean dynamics `dX/dt = λ_s(N − X) − M̄X` under the same schedule,
/// solved exactly per step, with `X̂` and `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub delivery: Vec<f64>,
}

/// `(1 − e^{−z})/z`, continuous at zero.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

/// `(z − 1 + e^{−z})/z²`, continuous at zero.
fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 - z / 6.0 + z * z / 24.0
    } else {
        ((-z).exp_m1() + z) / (z * z)
    }
}

pub fn mean_field_ode(m: &ModelSpec, schedule: &TimerSchedule, x0: &[f64]) -> Result<MeanField> {
    schedule.check(m)?;
    let k = m.classes();
    crate::model::check_len("x0", k, x0.len())?;
    let h = schedule.grid.step();
    let mut x = vec![x0.to_vec()];
    let mut xhat = vec![vec![0.0; k]];
    for j in 0..schedule.grid.steps {
        let (mut xn, mut xh) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for i in 0..k {
            let a = m.lambda_s()[i] + schedule.discard[j][i];
            let inflow = m.lambda_s()[i] * m.population()[i];
            let x_prev = x[j][i];
            let rate = inflow - a * x_prev;
            xn.push(x_prev + rate * h * phi1(a * h));
            xh.push(xhat[j][i] + x_prev * h + rate * h * h * phi2(a * h));
        }
        x.push(xn);
        xhat.push(xh);
    }
    let delivery = xhat.iter().map(|v| crate::model::delivery_functional(v, m.lambda_d())).collect();
    Ok(MeanField { x, xhat, delivery })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JensenRow {
    pub t: f64,
    pub mean_psi: f64,
    pub d: f64,
    pub difference: f64,
    pub se: f64,
    /// `+1` or `−1` when `|difference| > 3 SE`.
    pub flag: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JensenReport {
    pub rows: Vec<JensenRow>,
    /// Rows where `mean Ψ > D + 3 SE`, which would contradict `E[Ψ] <= D`.
    pub violations: usize,
    pub max_abs_difference: f64,
}

pub fn jensen_report(ens: &SimEnsemble, d_curve: &[f64]) -> Result<JensenReport> {
    if d_curve.len() != ens.times.len() {
        return Err(Error::GridMismatch {
            left: ens.times.len(),
            right: d_curve.len(),
        });
    }
    let rows: Vec<JensenRow> = (0..d_curve.len())
        .map(|j| {
            let difference = ens.mean_psi[j] - d_curve[j];
            let se = ens.se_psi[j];
            let flag = if difference.abs() > 3.0 * se && difference != 0.0 {
                difference.signum() as i8
            } else {
                0
            };
            JensenRow {
                t: ens.times[j],
                mean_psi: ens.mean_psi[j],
                d: d_curve[j],
                difference,
                se,
                flag,
            }
        })
        .collect();
    Ok(JensenReport {
        violations: rows.iter().filter(|r| r.flag > 0).count(),
        max_abs_difference: rows.iter().fold(0.0, |a, r| a.max(r.difference.abs())),
        rows,
    })
}
