//! Scenario files: one JSON object describing the model, weights, horizon,
//! grids and simulation settings. See `docs/scenario-schema.md`.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{Map, Value};

use crate::error::Error;
use crate::model::{CostWeights, ModelSpec};

/// Default number of solver steps over the horizon.
pub const DEFAULT_STEPS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub ode_step: f64,
    pub control_step: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub runs: usize,
    pub base_seed: u64,
    pub rate_grid: f64,
    pub clamp_negative_timer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub model: ModelSpec,
    /// Overrides `Λout` in the feasibility analysis only.
    pub lambda_out: Option<Vec<f64>>,
    pub weights: CostWeights,
    pub horizon: f64,
    pub grids: Grids,
    pub sim: SimSettings,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("cannot read {}: {}", .path.display(), .reason)]
    Io { path: PathBuf, reason: String },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("invalid scenario:\n  {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Schema(Vec<Issue>),
}

impl ScenarioError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ScenarioError::Schema(v) => v,
            _ => &[],
        }
    }
}

const ROOT_KEYS: &[&str] = &["name", "model", "weights", "horizon", "grids", "sim", "outputs"];
const MODEL_KEYS: &[&str] = &["lambda_s", "lambda_d", "n", "lambda_out", "source_class", "dest_class"];
const WEIGHT_KEYS: &[&str] = &["c1", "c2", "c3", "c4", "u_bar", "q", "q_matrix"];
const GRID_KEYS: &[&str] = &["ode_step", "control_step", "delta"];
const SIM_KEYS: &[&str] = &["runs", "base_seed", "rate_grid", "clamp_negative_timer"];
const OUTPUT_KEYS: &[&str] = &["dir"];

#[derive(Default)]
struct Checker {
    issues: Vec<Issue>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.push(path, "expected an object");
            return None;
        };
        let unknown: Vec<&str> = map.keys().map(String::as_str).filter(|k| !allowed.contains(k)).collect();
        if !unknown.is_empty() {
            let at = if path.is_empty() { "<root>" } else { path };
            self.push(at, format!("unknown key(s): {}", unknown.join(", ")));
        }
        Some(map)
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.push(path, "expected a finite number");
                None
            }
        }
    }

    fn vector(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Some(arr) = v.as_array() else {
            self.push(path, "expected an array of numbers");
            return None;
        };
        if arr.is_empty() {
            self.push(path, "must not be empty");
            return None;
        }
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, e) in arr.iter().enumerate() {
            match self.number(e, &format!("{path}[{i}]")) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    /// A number broadcast to `k` classes, or an array.
    fn per_class(&mut self, v: &Value, path: &str, k: Option<usize>) -> Option<Vec<f64>> {
        if v.is_number() {
            let x = self.number(v, path)?;
            return k.map(|k| vec![x; k]);
        }
        let out = self.vector(v, path)?;
        if let Some(k) = k {
            if out.len() != k {
                self.push(path, format!("expected {k} entries, got {}", out.len()));
                return None;
            }
        }
        Some(out)
    }

    fn positive(&mut self, v: &Value, path: &str) -> Option<f64> {
        let x = self.number(v, path)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.push(path, format!("must be > 0 (got {x})"));
            None
        }
    }

    fn unsigned(&mut self, v: &Value, path: &str) -> Option<u64> {
        let out = v.as_u64();
        if out.is_none() {
            self.push(path, "expected a non-negative integer");
        }
        out
    }
}

fn require<'a>(missing: &mut Vec<String>, map: Option<&'a Map<String, Value>>, section: &str, key: &str) -> Option<&'a Value> {
    let v = child(map, key);
    if v.is_none() {
        missing.push(if section.is_empty() { key.to_string() } else { format!("{section}.{key}") });
    }
    v
}

fn child<'a>(map: Option<&'a Map<String, Value>>, key: &str) -> Option<&'a Value> {
    map.and_then(|m| m.get(key))
}

/// Parses and validates a scenario held in memory.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))?;
    let mut c = Checker::default();
    let Some(root) = c.object(&root, "", ROOT_KEYS) else {
        return Err(ScenarioError::Schema(c.issues));
    };

    let mut missing = Vec::new();

    let model_map = root.get("model");
    let model = model_map.and_then(|v| c.object(v, "model", MODEL_KEYS));
    let weights_map = root.get("weights");
    let weights = weights_map.and_then(|v| c.object(v, "weights", WEIGHT_KEYS));

    let lambda_s_v = require(&mut missing, model, "model", "lambda_s");
    let lambda_d_v = require(&mut missing, model, "model", "lambda_d");
    let n_v = require(&mut missing, model, "model", "n");
    let c1_v = require(&mut missing, weights, "weights", "c1");
    let c3_v = require(&mut missing, weights, "weights", "c3");
    let c4_v = require(&mut missing, weights, "weights", "c4");
    let u_bar_v = require(&mut missing, weights, "weights", "u_bar");
    let horizon_v = require(&mut missing, Some(root), "", "horizon");
    for path in missing {
        c.push(path, "required field is missing");
    }

    let name = match root.get("name") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            c.push("name", "expected a string");
            None
        }
    };

    let lambda_d = lambda_d_v.and_then(|v| c.vector(v, "model.lambda_d"));
    let k = lambda_d.as_ref().map(Vec::len);
    let lambda_s = lambda_s_v.and_then(|v| c.per_class(v, "model.lambda_s", k));
    let n = n_v.and_then(|v| c.per_class(v, "model.n", k));
    let lambda_out = child(model, "lambda_out").and_then(|v| c.per_class(v, "model.lambda_out", k));
    let class_index = |c: &mut Checker, key: &str| -> usize {
        match child(model, key) {
            None => 0,
            Some(v) => {
                let path = format!("model.{key}");
                match (c.unsigned(v, &path), k) {
                    (Some(i), Some(k)) if (i as usize) < k => i as usize,
                    (Some(i), Some(k)) => {
                        c.push(path, format!("class index {i} out of range for {k} classes"));
                        0
                    }
                    _ => 0,
                }
            }
        }
    };
    let source_class = class_index(&mut c, "source_class");
    let dest_class = class_index(&mut c, "dest_class");

    let c1 = c1_v.and_then(|v| c.number(v, "weights.c1"));
    let c3 = c3_v.and_then(|v| c.number(v, "weights.c3"));
    let c4 = c4_v.and_then(|v| c.number(v, "weights.c4"));
    if let Some(v) = child(weights, "c2") {
        if c.number(v, "weights.c2").is_some_and(|x| x != 1.0) {
            c.push("weights.c2", "the control weight is normalised; c2 must be 1");
        }
    }
    let u_bar = u_bar_v.and_then(|v| c.per_class(v, "weights.u_bar", k));
    let q = child(weights, "q").and_then(|v| c.per_class(v, "weights.q", k));
    let q_matrix = child(weights, "q_matrix").and_then(|v| parse_matrix(&mut c, v, "weights.q_matrix", k.map(|k| 2 * k)));

    let horizon = horizon_v.and_then(|v| c.positive(v, "horizon"));

    let grids_obj = root.get("grids").and_then(|v| c.object(v, "grids", GRID_KEYS));
    let default_step = horizon.map_or(1.0, |t| t / DEFAULT_STEPS as f64);
    let grid_step = |c: &mut Checker, key: &str| -> f64 {
        match child(grids_obj, key) {
            None => default_step,
            Some(v) => {
                let path = format!("grids.{key}");
                match (c.positive(v, &path), horizon) {
                    (Some(s), Some(t)) if s > t => {
                        c.push(path, format!("step {s} exceeds the horizon {t}"));
                        default_step
                    }
                    (Some(s), _) => s,
                    (None, _) => default_step,
                }
            }
        }
    };
    let ode_step = grid_step(&mut c, "ode_step");
    let control_step = grid_step(&mut c, "control_step");
    let delta = grid_step(&mut c, "delta");

    let sim_obj = root.get("sim").and_then(|v| c.object(v, "sim", SIM_KEYS));
    let runs = match child(sim_obj, "runs") {
        None => 1000,
        Some(v) => match c.unsigned(v, "sim.runs") {
            Some(0) => {
                c.push("sim.runs", "must be >= 1");
                1
            }
            Some(r) => r as usize,
            None => 1,
        },
    };
    let base_seed = child(sim_obj, "base_seed").map_or(0, |v| c.unsigned(v, "sim.base_seed").unwrap_or(0));
    let rate_grid = child(sim_obj, "rate_grid").map_or(control_step, |v| c.positive(v, "sim.rate_grid").unwrap_or(control_step));
    let clamp_negative_timer = match child(sim_obj, "clamp_negative_timer") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            c.push("sim.clamp_negative_timer", "expected a boolean");
            false
        }
    };

    let outputs = root.get("outputs").and_then(|v| c.object(v, "outputs", OUTPUT_KEYS));
    let output_dir = match child(outputs, "dir") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => {
            c.push("outputs.dir", "expected a string");
            None
        }
    };

    let model = match (lambda_s, lambda_d, n) {
        (Some(ls), Some(ld), Some(n)) => match ModelSpec::new(ls, ld, n) {
            Ok(mut m) => {
                m.source_class = source_class;
                m.dest_class = dest_class;
                Some(m)
            }
            Err(e) => {
                push_domain(&mut c, "model", e);
                None
            }
        },
        _ => None,
    };
    if let Some(lo) = &lambda_out {
        for (i, v) in lo.iter().enumerate() {
            if *v < 0.0 {
                c.push(format!("model.lambda_out[{i}]"), format!("must be >= 0 (got {v})"));
            }
        }
    }
    let weights = match (c1, c3, c4, u_bar) {
        (Some(c1), Some(c3), Some(c4), Some(u_bar)) => {
            let built = CostWeights::new(c1, c3, c4, u_bar).and_then(|w| match q {
                Some(q) => w.with_q(q),
                None => Ok(w),
            });
            match built {
                Ok(mut w) => {
                    w.q_matrix = q_matrix;
                    Some(w)
                }
                Err(e) => {
                    push_domain(&mut c, "weights", e);
                    None
                }
            }
        }
        _ => None,
    };

    match (model, weights, horizon) {
        (Some(model), Some(weights), Some(horizon)) if c.issues.is_empty() => Ok(Scenario {
            name,
            model,
            lambda_out,
            weights,
            horizon,
            grids: Grids {
                ode_step,
                control_step,
                delta,
            },
            sim: SimSettings {
                runs,
                base_seed,
                rate_grid,
                clamp_negative_timer,
            },
            output_dir,
        }),
        _ => Err(ScenarioError::Schema(c.issues)),
    }
}

fn parse_matrix(c: &mut Checker, v: &Value, path: &str, dim: Option<usize>) -> Option<DMatrix<f64>> {
    let Some(rows) = v.as_array() else {
        c.push(path, "expected an array of rows");
        return None;
    };
    let dim = dim?;
    if rows.len() != dim {
        c.push(path, format!("expected {dim} rows, got {}", rows.len()));
        return None;
    }
    let mut data = Vec::with_capacity(dim * dim);
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let r = c.vector(row, &rp)?;
        if r.len() != dim {
            c.push(rp, format!("expected {dim} entries, got {}", r.len()));
            return None;
        }
        data.extend(r);
    }
    let m = DMatrix::from_row_slice(dim, dim, &data);
    if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        c.push(path, "must be symmetric");
        return None;
    }
    Some(m)
}

fn push_domain(c: &mut Checker, section: &str, e: Error) {
    match e {
        Error::InvalidParameter { name, reason } => c.push(format!("{section}.{name}"), reason),
        Error::Dimension { what, expected, got } => c.push(format!("{section}.{what}"), format!("expected {expected} entries, got {got}")),
        other => c.push(section, other.to_string()),
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ScenarioError::NotFound(path.to_path_buf())
        } else {
            ScenarioError::Io {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }
        }
    })?;
    parse_scenario_str(&text)
}

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1_uniform", include_str!("../scenarios/fig1_uniform.json")),
    ("fig1_nonuniform", include_str!("../scenarios/fig1_nonuniform.json")),
    ("fig2_c4_005", include_str!("../scenarios/fig2_c4_005.json")),
    ("fig2_c4_001", include_str!("../scenarios/fig2_c4_001.json")),
    ("fig2_c4_05", include_str!("../scenarios/fig2_c4_05.json")),
    ("fig4", include_str!("../scenarios/fig4.json")),
    ("fig5", include_str!("../scenarios/fig5.json")),
    ("fig6", include_str!("../scenarios/fig6.json")),
    ("inf_example", include_str!("../scenarios/inf_example.json")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario_str(text).expect("bundled scenarios are valid"))
}
