//! The terminal weight `R = -c1 Λd Λdᵀ + c3 I + c4 Λout²` and its
//! definiteness.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_len, CostWeights, ModelSpec};

/// Default relative tolerance for definiteness verdicts.
pub const DEFAULT_PD_TOL: f64 = 1e-10;

const MAX_DOUBLINGS: usize = 60;

/// Destination-contact vector `Λd` and the diagonal of `Λout`.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    lambda_d: Vec<f64>,
    lambda_out: Vec<f64>,
}

impl Geometry {
    pub fn new(lambda_d: Vec<f64>, lambda_out: Vec<f64>) -> Result<Self> {
        if lambda_d.is_empty() {
            return Err(Error::invalid("lambda_d", "at least one class is required"));
        }
        check_len("lambda_out", lambda_d.len(), lambda_out.len())?;
        if lambda_d.iter().chain(&lambda_out).any(|v| !v.is_finite()) {
            return Err(Error::invalid("lambda_d", "entries must be finite"));
        }
        Ok(Self { lambda_d, lambda_out })
    }

    /// `Λout = diag(Λd)`, as in the dynamics.
    pub fn from_model(m: &ModelSpec) -> Self {
        Self {
            lambda_d: m.lambda_d().to_vec(),
            lambda_out: m.lambda_d().to_vec(),
        }
    }

    pub fn lambda_d(&self) -> &[f64] {
        &self.lambda_d
    }

    pub fn lambda_out(&self) -> &[f64] {
        &self.lambda_out
    }

    fn d_norm2(&self) -> f64 {
        self.lambda_d.iter().map(|v| v * v).sum()
    }

    fn out_d_norm2(&self) -> f64 {
        self.lambda_d.iter().zip(&self.lambda_out).map(|(d, o)| (d * o).powi(2)).sum()
    }
}

pub fn build_r_geometry(c1: f64, c3: f64, c4: f64, g: &Geometry) -> DMatrix<f64> {
    let k = g.lambda_d.len();
    let d = DVector::from_column_slice(&g.lambda_d);
    let mut r = &d * d.transpose() * -c1;
    for i in 0..k {
        r[(i, i)] += c3 + c4 * g.lambda_out[i] * g.lambda_out[i];
    }
    r
}

/// `R` for the model's own `Λout = diag(Λd)`.
pub fn build_r(cw: &CostWeights, m: &ModelSpec) -> DMatrix<f64> {
    build_r_geometry(cw.c1, cw.c3, cw.c4, &Geometry::from_model(m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Definiteness {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub is_pd: bool,
    pub is_psd: bool,
}

impl Definiteness {
    pub fn smallest(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// Eigenvalue verdicts with `tol` relative to the largest `|eigenvalue|`.
pub fn classify(r: &DMatrix<f64>, tol: f64) -> Result<Definiteness> {
    if !r.is_square() {
        return Err(Error::Dimension {
            what: "R",
            expected: r.nrows(),
            got: r.ncols(),
        });
    }
    let asymmetry = (r - r.transpose()).amax();
    if asymmetry > tol * r.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(r.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let scale = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let smallest = eigenvalues[0];
    Ok(Definiteness {
        is_pd: smallest > tol * scale,
        is_psd: smallest >= -tol * scale,
        eigenvalues,
    })
}

pub fn is_positive_definite(r: &DMatrix<f64>, tol: f64) -> Result<bool> {
    classify(r, tol).map(|d| d.is_pd)
}

/// Bounds on `c4` from the quadratic form of `R` along `Λd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SufficientBound {
    /// `(c1 - c3) ‖Λd‖² / ‖Λout Λd‖²`.
    pub generalized: f64,
    /// `α (c1 - c3)` with `α = Σ λd² / Σ λd⁴`; equals `generalized` when
    /// `Λout = diag(Λd)`.
    pub alpha_form: f64,
    pub alpha: f64,
}

/// For unit `‖Λd‖` the generalized bound is where `R` stops being positive
/// along `Λd`; it is exact for uniform classes and a lower bound on the
/// frontier otherwise.
pub fn sufficient_c4_bound(c1: f64, c3: f64, g: &Geometry) -> Result<SufficientBound> {
    let out_d = g.out_d_norm2();
    if !(out_d > 0.0) {
        return Err(Error::invalid("lambda_out", "‖Λout Λd‖ must be positive"));
    }
    let d2 = g.d_norm2();
    let d4: f64 = g.lambda_d.iter().map(|v| v.powi(4)).sum();
    let alpha = d2 / d4;
    Ok(SufficientBound {
        generalized: (c1 - c3) * d2 / out_d,
        alpha_form: alpha * (c1 - c3),
        alpha,
    })
}

fn pd_at(c1_over_c3: f64, ratio: f64, g: &Geometry) -> bool {
    let r = build_r_geometry(c1_over_c3, 1.0, ratio, g);
    SymmetricEigen::new(r).eigenvalues.min() > 0.0
}

/// Smallest `c4/c3` making `R` positive definite at the given `c1/c3`, by
/// bisection to within `tol`.
pub fn min_c4_ratio(c1_over_c3: f64, g: &Geometry, tol: f64) -> Result<f64> {
    if !(c1_over_c3.is_finite() && c1_over_c3 >= 0.0) {
        return Err(Error::invalid("c1_over_c3", format!("must be finite and >= 0 (got {c1_over_c3})")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if pd_at(c1_over_c3, 0.0, g) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut doublings = 0;
    while !pd_at(c1_over_c3, hi, g) {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Bracket { upper: hi });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pd_at(c1_over_c3, mid, g) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub c1_over_c3: f64,
    pub min_c4_over_c3: f64,
    /// Generalized bound in units of `c3`.
    pub sufficient_bound: f64,
}

pub fn frontier(ratios: &[f64], g: &Geometry, tol: f64) -> Result<Vec<FrontierPoint>> {
    ratios
        .iter()
        .map(|&r| {
            Ok(FrontierPoint {
                c1_over_c3: r,
                min_c4_over_c3: min_c4_ratio(r, g, tol)?,
                sufficient_bound: sufficient_c4_bound(r, 1.0, g)?.generalized,
            })
        })
        .collect()
}

/// A frontier point where `c4/c3` just above the bound still leaves `R`
/// indefinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SufficiencyCounterexample {
    pub c1_over_c3: f64,
    pub bound: f64,
    pub frontier: f64,
}

/// Checks the bound against the bisected frontier and returns every ratio
/// at which the bound is not sufficient.
pub fn sufficiency_counterexamples(ratios: &[f64], g: &Geometry, tol: f64) -> Result<Vec<SufficiencyCounterexample>> {
    Ok(frontier(ratios, g, tol)?
        .into_iter()
        .filter(|p| p.sufficient_bound.max(0.0) < p.min_c4_over_c3 - tol)
        .map(|p| SufficiencyCounterexample {
            c1_over_c3: p.c1_over_c3,
            bound: p.sufficient_bound,
            frontier: p.min_c4_over_c3,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    #[serde(skip)]
    pub r: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub is_pd: bool,
    pub is_psd: bool,
    pub sufficient_bound: f64,
    pub alpha_form_bound: f64,
    pub min_c4_ratio: Option<f64>,
}

pub fn feasibility_report(cw: &CostWeights, g: &Geometry, tol: f64) -> Result<FeasibilityReport> {
    let r = build_r_geometry(cw.c1, cw.c3, cw.c4, g);
    let def = classify(&r, tol)?;
    let bound = sufficient_c4_bound(cw.c1, cw.c3, g)?;
    let min_c4_ratio = if cw.c3 > 0.0 {
        Some(min_c4_ratio(cw.c1 / cw.c3, g, 1e-10)?)
    } else {
        None
    };
    Ok(FeasibilityReport {
        r,
        eigenvalues: def.eigenvalues,
        is_pd: def.is_pd,
        is_psd: def.is_psd,
        sufficient_bound: bound.generalized,
        alpha_form_bound: bound.alpha_form,
        min_c4_ratio,
    })
}
