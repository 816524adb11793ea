//! Numeric CSV tables with a header row and 17-significant-digit floats.

use crate::model::ControlledTrajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}, column {col}: cannot parse `{text}` as a number")]
    Value { row: usize, col: usize, text: String },
    #[error("row {row} has {got} fields, expected {expected}")]
    Width { row: usize, expected: usize, got: usize },
    #[error("bad range `{0}`: {1}")]
    Range(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Round-trip exact: 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("write to memory");
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_float(*v))).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("ASCII output")
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| TableError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().any(String::is_empty) {
            return Err(TableError::Header("empty column name".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
            if rec.len() != header.len() {
                return Err(TableError::Width {
                    row: i + 1,
                    expected: header.len(),
                    got: rec.len(),
                });
            }
            let row = rec
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    f.trim().parse::<f64>().map_err(|_| TableError::Value {
                        row: i + 1,
                        col: j,
                        text: f.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

fn trajectory_header(k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=k).map(|i| format!("X_{i}")));
    h.extend((1..=k).map(|i| format!("Xhat_{i}")));
    h.extend((1..=k).map(|i| format!("u_{i}")));
    h.push("D".into());
    h
}

/// `t, X_1..X_K, Xhat_1..Xhat_K, u_1..u_K, D`.
pub fn trajectory_table(traj: &ControlledTrajectory) -> Table {
    let mut t = Table::new(trajectory_header(traj.classes()));
    for j in 0..traj.len() {
        let mut row = vec![traj.t[j]];
        row.extend(&traj.x[j]);
        row.extend(&traj.xhat[j]);
        row.extend(&traj.u[j]);
        row.push(traj.delivery[j]);
        t.push(row);
    }
    t
}

/// Sampled columns of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryColumns {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub delivery: Vec<f64>,
}

pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryColumns, TableError> {
    let table = Table::from_csv(text)?;
    let cols = table.header.len();
    if cols < 5 || (cols - 2) % 3 != 0 {
        return Err(TableError::Header(format!("{cols} columns do not form t, X, Xhat, u, D")));
    }
    let k = (cols - 2) / 3;
    let expected = trajectory_header(k);
    if table.header != expected {
        return Err(TableError::Header(format!("expected {}", expected.join(","))));
    }
    let mut out = TrajectoryColumns {
        t: Vec::new(),
        x: Vec::new(),
        xhat: Vec::new(),
        u: Vec::new(),
        delivery: Vec::new(),
    };
    for row in table.rows {
        out.t.push(row[0]);
        out.x.push(row[1..=k].to_vec());
        out.xhat.push(row[k + 1..=2 * k].to_vec());
        out.u.push(row[2 * k + 1..=3 * k].to_vec());
        out.delivery.push(row[3 * k + 1]);
    }
    Ok(out)
}

/// Upper limit on the number of sweep points.
pub const MAX_SWEEP_POINTS: usize = 1_000_000;

/// `lo:hi:step` to the points `lo, lo + step, ...` up to `hi` inclusive.
pub fn parse_sweep_range(spec: &str) -> Result<Vec<f64>, TableError> {
    let bad = |why: &str| TableError::Range(spec.to_string(), why.to_string());
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(bad("expected lo:hi:step"));
    };
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let (Some(lo), Some(hi), Some(step)) = (num(lo), num(hi), num(step)) else {
        return Err(bad("bounds and step must be finite numbers"));
    };
    if !(step > 0.0) {
        return Err(bad("step must be positive"));
    }
    if hi < lo {
        return Err(bad("hi must not be below lo"));
    }
    let count = ((hi - lo) / step * (1.0 + 1e-12) + 1e-9).floor();
    if !(count < MAX_SWEEP_POINTS as f64) {
        return Err(bad("too many points"));
    }
    let points: Vec<f64> = (0..=count as usize).map(|i| if i == 0 { lo } else { lo + i as f64 * step }).collect();
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("step is below the floating-point resolution of the range"));
    }
    Ok(points)
}
