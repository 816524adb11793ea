use std::fmt;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use dtn_lqr::ct_lqr::{self, SolverConfig};
use dtn_lqr::dt_lqr::{self, StageWeighting};
use dtn_lqr::feasibility::{self, Geometry, DEFAULT_PD_TOL};
use dtn_lqr::inf_lqr::{self, check_bounds};
use dtn_lqr::mc_sim::{self, SimConfig, TimerSchedule};
use dtn_lqr::model::{check_constraints, DEFAULT_CONSTRAINT_TOL};
use dtn_lqr::ode::TimeGrid;
use dtn_lqr::scenario::{parse_scenario, Scenario, ScenarioError};
use dtn_lqr::table::{parse_sweep_range, trajectory_table, Table};
use dtn_lqr::{ControlledTrajectory, CostWeights, Error};

use crate::output::{num, nums, Sink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Feasibility,
    SolveCt,
    SolveDt,
    SolveInf,
    SolveDtInf,
    Simulate,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Feasibility => "feasibility",
            Command::SolveCt => "solve-ct",
            Command::SolveDt => "solve-dt",
            Command::SolveInf => "solve-inf",
            Command::SolveDtInf => "solve-dt-inf",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub scenario: PathBuf,
    pub out: Option<PathBuf>,
    pub sweep: Option<String>,
    pub uncontrolled: bool,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub delta: Option<f64>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    MissingFile(String),
    Schema(String),
    BlowUp(String),
    InfeasibleTimers(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Io(_) => 1,
            Failure::MissingFile(_) => 2,
            Failure::Schema(_) => 3,
            Failure::BlowUp(_) => 4,
            Failure::InfeasibleTimers(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::MissingFile(m) | Failure::Schema(m) | Failure::BlowUp(m) | Failure::InfeasibleTimers(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::NotFound(_) | ScenarioError::Io { .. } => Failure::MissingFile(e.to_string()),
            ScenarioError::Json(_) | ScenarioError::Schema(_) => Failure::Schema(e.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::BlowUp { .. } => Failure::BlowUp(e.to_string()),
            Error::NegativeTimer { steps } => {
                let listed: Vec<String> = steps
                    .iter()
                    .take(20)
                    .map(|s| format!("step {} (t = {}, class {}, rate {:e})", s.step, s.time, s.class + 1, s.rate))
                    .collect();
                let more = steps.len().saturating_sub(listed.len());
                let tail = if more > 0 { format!("\n  ... and {more} more") } else { String::new() };
                Failure::InfeasibleTimers(format!("{e}:\n  {}{tail}", listed.join("\n  ")))
            }
            Error::InfeasibleControl { class, x, u } => Failure::InfeasibleTimers(format!(
                "infeasible timer schedule: class {} has X = {x}, which cannot realise u = {u}",
                class + 1
            )),
            Error::InvalidParameter { .. } | Error::Dimension { .. } => Failure::Schema(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(format!("cannot write output: {e}"))
    }
}

pub fn run(cmd: Command, opts: &Options) -> Result<(), Failure> {
    let s = parse_scenario(&opts.scenario)?;
    s.weights.check_classes(&s.model).map_err(|e| Failure::Schema(format!("weights: {e}")))?;
    let stem = s
        .name
        .clone()
        .or_else(|| opts.scenario.file_stem().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scenario".into());
    let dir = opts.out.clone().or_else(|| s.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let sink = Sink::new(dir, format!("{stem}-{}", cmd.name()))?;
    let ctx = Context { s: &s, opts, sink: &sink, name: stem };
    match cmd {
        Command::Feasibility => ctx.feasibility(),
        Command::SolveCt => ctx.solve_ct(),
        Command::SolveDt => ctx.solve_dt(),
        Command::SolveInf => ctx.solve_inf(),
        Command::SolveDtInf => ctx.solve_dt_inf(),
        Command::Simulate => ctx.simulate(),
        Command::Sweep => ctx.sweep(),
    }
}

struct Context<'a> {
    s: &'a Scenario,
    opts: &'a Options,
    sink: &'a Sink,
    name: String,
}

struct CtRun {
    traj: ControlledTrajectory,
    optimal_cost: f64,
    steps: usize,
    refinement: usize,
}

fn solve_ct(s: &Scenario, cw: &CostWeights) -> Result<CtRun, Error> {
    let r = feasibility::build_r(cw, &s.model);
    let sys = ct_lqr::build_system(&s.model, cw, &r)?;
    let cfg = SolverConfig {
        steps: TimeGrid::steps_for(s.horizon, s.grids.ode_step),
        ..SolverConfig::default()
    };
    let sol = ct_lqr::solve(&sys, s.horizon, &cfg)?;
    let z0 = DVector::zeros(2 * s.model.classes());
    let traj = ct_lqr::rollout(&s.model, &sys, &sol, &z0)?;
    Ok(CtRun {
        traj,
        optimal_cost: sol.optimal_cost(&z0),
        steps: cfg.steps,
        refinement: sol.refinement,
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn last(v: &[Vec<f64>]) -> Value {
    nums(v.last().map_or(&[][..], Vec::as_slice))
}

fn parse_delta(value: f64, horizon: f64) -> Result<(f64, usize), Failure> {
    if !(value > 0.0 && value.is_finite() && value <= horizon) {
        return Err(Failure::Usage(format!("--delta must lie in (0, {horizon}] (got {value})")));
    }
    let steps = TimeGrid::steps_for(horizon, value);
    Ok((horizon / steps as f64, steps))
}

fn verdict_word(report: &feasibility::FeasibilityReport) -> &'static str {
    if report.is_pd {
        "positive-definite"
    } else if report.is_psd {
        "positive-semidefinite"
    } else {
        "indefinite"
    }
}

impl Context<'_> {
    fn header(&self, command: &str) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("command".into(), json!(command));
        m.insert("scenario".into(), json!(self.name));
        m.insert("classes".into(), json!(self.s.model.classes()));
        m.insert("horizon".into(), num(self.s.horizon));
        m
    }

    fn trajectory_summary(&self, m: &mut serde_json::Map<String, Value>, traj: &ControlledTrajectory, optimal: f64) {
        let violations = check_constraints(traj, &self.s.model, DEFAULT_CONSTRAINT_TOL);
        m.insert("cost".into(), num(traj.cost));
        m.insert("optimal_cost".into(), num(optimal));
        m.insert("min_j_residual".into(), num(relative_gap(traj.cost, optimal)));
        m.insert("violations".into(), json!(violations.len()));
        m.insert(
            "violation_samples".into(),
            Value::Array(
                violations
                    .iter()
                    .take(10)
                    .map(|v| json!({"time": num(v.time), "class": v.class + 1, "kind": v.kind.to_string(), "value": num(v.value)}))
                    .collect(),
            ),
        );
        m.insert("blow_up".into(), Value::Null);
        m.insert("delivery_final".into(), num(traj.delivery.last().copied().unwrap_or(f64::NAN)));
        m.insert("x_final".into(), last(&traj.x));
        m.insert("u_final".into(), last(&traj.u));
    }

    /// Writes a summary that records the escape, then reports exit code 4.
    fn blow_up(&self, mut m: serde_json::Map<String, Value>, time: f64, norm: f64) -> Result<(), Failure> {
        m.insert("blow_up".into(), json!({"time": num(time), "norm": num(norm)}));
        self.sink.summary(&Value::Object(m))?;
        Err(Failure::BlowUp(format!("Riccati solution blew up: finite escape at t = {time} (norm {norm:e})")))
    }

    fn feasibility(&self) -> Result<(), Failure> {
        let s = self.s;
        let g = Geometry::new(
            s.model.lambda_d().to_vec(),
            s.lambda_out.clone().unwrap_or_else(|| s.model.lambda_d().to_vec()),
        )?;
        let report = feasibility::feasibility_report(&s.weights, &g, DEFAULT_PD_TOL)?;
        let verdict = verdict_word(&report);
        println!("R eigenvalues: {:?}", report.eigenvalues);
        println!("verdict: {verdict}");
        println!("sufficient c4 bound: {} (alpha form: {})", report.sufficient_bound, report.alpha_form_bound);
        if let Some(r) = report.min_c4_ratio {
            println!("minimum c4/c3 for R > 0: {r}");
        }
        let mut m = self.header("feasibility");
        m.insert("eigenvalues".into(), nums(&report.eigenvalues));
        m.insert("smallest_eigenvalue".into(), num(report.eigenvalues[0]));
        m.insert("is_pd".into(), json!(report.is_pd));
        m.insert("is_psd".into(), json!(report.is_psd));
        m.insert("verdict".into(), json!(verdict));
        m.insert("sufficient_bound".into(), num(report.sufficient_bound));
        m.insert("alpha_form_bound".into(), num(report.alpha_form_bound));
        m.insert("min_c4_over_c3".into(), report.min_c4_ratio.map_or(Value::Null, num));
        if let Some(spec) = &self.opts.sweep {
            let ratios = parse_sweep_range(spec).map_err(|e| Failure::Usage(e.to_string()))?;
            if let Some(bad) = ratios.iter().find(|r| **r < 0.0) {
                return Err(Failure::Usage(format!("c1/c3 must be >= 0 (got {bad})")));
            }
            let points = feasibility::frontier(&ratios, &g, 1e-10)?;
            let mut t = Table::new(["c1_over_c3", "min_c4_over_c3", "sufficient_bound"]);
            for p in &points {
                t.push(vec![p.c1_over_c3, p.min_c4_over_c3, p.sufficient_bound]);
            }
            let path = self.sink.csv(&t.to_csv())?;
            let counter = feasibility::sufficiency_counterexamples(&ratios, &g, 1e-8)?;
            m.insert("sweep_points".into(), json!(points.len()));
            m.insert("counterexamples".into(), serde_json::to_value(&counter).expect("serialises"));
            println!("frontier: {}", path.display());
        }
        self.sink.summary(&Value::Object(m))?;
        Ok(())
    }

    fn solve_ct(&self) -> Result<(), Failure> {
        let mut m = self.header("solve-ct");
        match solve_ct(self.s, &self.s.weights) {
            Ok(run) => {
                m.insert("steps".into(), json!(run.steps));
                m.insert("refinement".into(), json!(run.refinement));
                self.trajectory_summary(&mut m, &run.traj, run.optimal_cost);
                self.sink.csv(&trajectory_table(&run.traj.subsample(run.refinement)).to_csv())?;
                self.sink.summary(&Value::Object(m))?;
                Ok(())
            }
            Err(Error::BlowUp { time, norm }) => self.blow_up(m, time, norm),
            Err(e) => Err(e.into()),
        }
    }

    fn solve_dt(&self) -> Result<(), Failure> {
        let s = self.s;
        let k = s.model.classes();
        let (delta, steps) = parse_delta(self.opts.delta.unwrap_or(s.grids.delta), s.horizon)?;
        let mut m = self.header("solve-dt");
        m.insert("delta".into(), num(delta));
        m.insert("steps".into(), json!(steps));
        let ds = dt_lqr::exact_discretize(&s.model, &s.weights, delta)?;
        let r = feasibility::build_r(&s.weights, &s.model);
        let sys = ct_lqr::build_system(&s.model, &s.weights, &r)?;
        let q = s.weights.q_matrix.clone().unwrap_or_else(|| DMatrix::zeros(2 * k, 2 * k));
        let policy = match dt_lqr::finite_horizon_policy(&ds, &q, &sys.q_f, steps, StageWeighting::SampledData) {
            Ok(p) => p,
            Err(Error::BlowUp { time, norm }) => return self.blow_up(m, time, norm),
            Err(e) => return Err(e.into()),
        };
        let z0 = DVector::zeros(2 * k);
        let traj = dt_lqr::dt_rollout(&s.model, &ds, &policy, &z0)?;
        self.trajectory_summary(&mut m, &traj, policy.optimal_cost(&z0));
        self.sink.csv(&trajectory_table(&traj).to_csv())?;
        self.sink.summary(&Value::Object(m))?;
        Ok(())
    }

    fn require_q(&self) -> Result<&[f64], Failure> {
        self.s
            .weights
            .q
            .as_deref()
            .ok_or_else(|| Failure::Schema("weights.q: required by the infinite-horizon solvers".into()))
    }

    fn solve_inf(&self) -> Result<(), Failure> {
        self.require_q()?;
        let policies = inf_lqr::decoupled_policies(&self.s.model, &self.s.weights)?;
        let mut t = Table::new(["class", "p", "k", "alpha", "x_inf", "u_inf", "sigma"]);
        let mut classes = Vec::new();
        for (i, p) in policies.iter().enumerate() {
            let alpha = p.linear_form_alpha().unwrap_or(f64::NAN);
            t.push(vec![(i + 1) as f64, p.p, p.k_off, alpha, p.x_inf, p.u_inf, p.sigma]);
            let bounds = p.bounds_check();
            println!("class {}: x_inf = {}, u_inf = {}, verdict {:?}", i + 1, p.x_inf, p.u_inf, bounds.verdict);
            classes.push(json!({
                "class": i + 1,
                "p": num(p.p),
                "k": num(p.k_off),
                "alpha": num(alpha),
                "constant": num(p.constant),
                "sigma": num(p.sigma),
                "x_inf": num(p.x_inf),
                "u_inf": num(p.u_inf),
                "bounds": serde_json::to_value(bounds).expect("serialises"),
            }));
        }
        let mut m = self.header("solve-inf");
        m.insert("policies".into(), Value::Array(classes));
        self.sink.csv(&t.to_csv())?;
        self.sink.summary(&Value::Object(m))?;
        Ok(())
    }

    fn solve_dt_inf(&self) -> Result<(), Failure> {
        let s = self.s;
        let q = self.require_q()?;
        let (delta, _) = parse_delta(self.opts.delta.unwrap_or(s.grids.delta), s.horizon)?;
        let mut t = Table::new(["class", "s", "s_delta", "feedback_gain", "feedforward", "closed_loop", "x_inf", "u_inf"]);
        let mut classes = Vec::new();
        for i in 0..s.model.classes() {
            let (ld, ls, n, ub) = (s.model.lambda_d()[i], s.model.lambda_s()[i], s.model.population()[i], s.weights.u_bar[i]);
            let p = dt_lqr::dt_scalar_policy(ld, ls, n, ub, q[i], delta)?;
            let limits = dt_lqr::small_delta_limits(ld, ls, n, ub, q[i], delta);
            let bounds = check_bounds(p.x_inf, p.u_inf, n, ub);
            t.push(vec![(i + 1) as f64, p.s, p.s * delta, p.feedback_gain, p.feedforward, p.closed_loop, p.x_inf, p.u_inf]);
            println!("class {}: x_inf = {}, u_inf = {}, verdict {:?}", i + 1, p.x_inf, p.u_inf, bounds.verdict);
            classes.push(json!({
                "class": i + 1,
                "policy": serde_json::to_value(p).expect("serialises"),
                "small_delta": serde_json::to_value(limits).expect("serialises"),
                "bounds": serde_json::to_value(bounds).expect("serialises"),
            }));
        }
        let mut m = self.header("solve-dt-inf");
        m.insert("delta".into(), num(delta));
        m.insert("policies".into(), Value::Array(classes));
        self.sink.csv(&t.to_csv())?;
        self.sink.summary(&Value::Object(m))?;
        Ok(())
    }

    fn simulate(&self) -> Result<(), Failure> {
        let s = self.s;
        let k = s.model.classes();
        let grid = TimeGrid::new(0.0, s.horizon, TimeGrid::steps_for(s.horizon, s.sim.rate_grid));
        let mut m = self.header("simulate");
        let schedule = if self.opts.uncontrolled {
            TimerSchedule::uncontrolled(&s.model, grid)
        } else {
            let run = match solve_ct(s, &s.weights) {
                Ok(run) => run,
                Err(Error::BlowUp { time, norm }) => return self.blow_up(m, time, norm),
                Err(e) => return Err(e.into()),
            };
            TimerSchedule::from_trajectory(&run.traj, &s.model, grid, s.sim.clamp_negative_timer)?
        };
        let runs = self.opts.runs.unwrap_or(s.sim.runs);
        if runs == 0 {
            return Err(Failure::Usage("--runs must be >= 1".into()));
        }
        let cfg = SimConfig {
            runs,
            base_seed: self.opts.seed.unwrap_or(s.sim.base_seed),
            initial: None,
            parallel: true,
        };
        let ens = mc_sim::monte_carlo(&s.model, &schedule, &cfg)?;
        let mf = mc_sim::mean_field_ode(&s.model, &schedule, &vec![0.0; k])?;
        let jensen = mc_sim::jensen_report(&ens, &mf.delivery)?;

        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|i| format!("meanxi_{i}")));
        header.extend((1..=k).map(|i| format!("se_{i}")));
        header.extend((1..=k).map(|i| format!("ode_X_{i}")));
        header.extend(["mean_psi", "D", "cdf_Td"].map(String::from));
        let mut t = Table::new(header);
        let mut worst_z: f64 = 0.0;
        for j in 0..ens.times.len() {
            let mut row = vec![ens.times[j]];
            row.extend(&ens.mean_xi[j]);
            row.extend(&ens.se_xi[j]);
            row.extend(&mf.x[j]);
            row.extend([ens.mean_psi[j], mf.delivery[j], ens.cdf_td[j]]);
            t.push(row);
            for i in 0..k {
                let gap = (ens.mean_xi[j][i] - mf.x[j][i]).abs();
                if ens.se_xi[j][i] > 0.0 {
                    worst_z = worst_z.max(gap / ens.se_xi[j][i]);
                }
            }
        }
        m.insert("runs".into(), json!(cfg.runs));
        m.insert("base_seed".into(), json!(cfg.base_seed));
        m.insert("uncontrolled".into(), json!(self.opts.uncontrolled));
        m.insert("rate_steps".into(), json!(grid.steps));
        m.insert("clamped_timer_steps".into(), json!(schedule.clamped.len()));
        m.insert("delivered_fraction".into(), num(ens.delivery_times.len() as f64 / cfg.runs as f64));
        m.insert("max_mean_field_z".into(), num(worst_z));
        m.insert("jensen".into(), serde_json::to_value(&jensen).expect("serialises"));
        self.sink.csv(&t.to_csv())?;
        self.sink.summary(&Value::Object(m))?;
        println!(
            "{} runs, mean-field gap at most {worst_z:.3} SE, {} Jensen violation(s)",
            cfg.runs, jensen.violations
        );
        Ok(())
    }

    fn sweep(&self) -> Result<(), Failure> {
        let s = self.s;
        let spec = self.opts.sweep.as_deref().ok_or_else(|| Failure::Usage("sweep requires --sweep lo:hi:step (values of c4)".into()))?;
        let values = parse_sweep_range(spec).map_err(|e| Failure::Usage(e.to_string()))?;
        let mut t = Table::new(["c4", "min_eig_r", "blow_up", "escape_time", "cost", "delivery_final", "violations"]);
        let mut blow_ups = 0;
        for &c4 in &values {
            let cw = CostWeights {
                c4,
                ..s.weights.clone()
            };
            if !(c4 >= 0.0) {
                return Err(Failure::Usage(format!("c4 must be >= 0 (got {c4})")));
            }
            let r = feasibility::build_r(&cw, &s.model);
            let min_eig = feasibility::classify(&r, DEFAULT_PD_TOL)?.smallest();
            match solve_ct(s, &cw) {
                Ok(run) => {
                    let v = check_constraints(&run.traj, &s.model, DEFAULT_CONSTRAINT_TOL).len();
                    let d = run.traj.delivery.last().copied().unwrap_or(f64::NAN);
                    t.push(vec![c4, min_eig, 0.0, f64::NAN, run.traj.cost, d, v as f64]);
                }
                Err(Error::BlowUp { time, .. }) => {
                    blow_ups += 1;
                    t.push(vec![c4, min_eig, 1.0, time, f64::NAN, f64::NAN, f64::NAN]);
                }
                Err(e) => return Err(e.into()),
            }
        }
        let mut m = self.header("sweep");
        m.insert("points".into(), json!(values.len()));
        m.insert("blow_ups".into(), json!(blow_ups));
        self.sink.csv(&t.to_csv())?;
        self.sink.summary(&Value::Object(m))?;
        println!("{} point(s), {blow_ups} blow-up(s)", values.len());
        Ok(())
    }
}
