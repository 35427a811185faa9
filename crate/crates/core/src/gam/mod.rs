//! Penalized additive models: a Gumbel location fitter for dependence
//! projections and a GEV fitter for covariate-dependent margins.
//!
//! Both share the same design machinery: an explicit intercept, plain
//! linear terms, and cubic B-spline smooths that are sum-to-zero
//! constrained with second-order difference penalties. Smoothing strength
//! is either fixed per smooth or chosen on a grid of
//! log10(lambda) in {-4, ..., 6}; the Gumbel family scores candidates by
//! deviance GCV, the GEV family by a penalized-likelihood information
//! criterion (its saturated deviance is not defined).

mod basis;
mod gev;
mod gumbel;

pub use basis::{SmoothBasisSpec, DEFAULT_BASIS_SIZE};
pub use gev::{fit_gev_margin, margin_pit};
pub use gumbel::{fit_gumbel_location, location_standard_errors, objective_and_gradient};

use crate::error::{Error, Result};
use crate::projection::EULER_GAMMA;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// One smooth term: which covariate column it applies to and how many
/// basis functions it requests (capped at the number of distinct values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub covariate: usize,
    pub basis_size: usize,
}

impl SmoothTerm {
    pub fn new(covariate: usize) -> Self {
        SmoothTerm {
            covariate,
            basis_size: DEFAULT_BASIS_SIZE,
        }
    }
}

/// Additive predictor structure: intercept (always present) plus linear
/// terms plus smooth terms, referencing covariate columns by index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SmoothFormula {
    pub linear: Vec<usize>,
    pub smooths: Vec<SmoothTerm>,
}

impl SmoothFormula {
    pub fn intercept_only() -> Self {
        SmoothFormula::default()
    }

    pub fn with_linear(mut self, covariate: usize) -> Self {
        self.linear.push(covariate);
        self
    }

    pub fn with_smooth(mut self, covariate: usize) -> Self {
        self.smooths.push(SmoothTerm::new(covariate));
        self
    }

    pub fn with_smooth_sized(mut self, covariate: usize, basis_size: usize) -> Self {
        self.smooths.push(SmoothTerm {
            covariate,
            basis_size,
        });
        self
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        for &c in &self.linear {
            if c >= n_covariates {
                return Err(Error::Validation(format!(
                    "linear term references covariate {c} but the data has {n_covariates} columns"
                )));
            }
        }
        for t in &self.smooths {
            if t.covariate >= n_covariates {
                return Err(Error::Validation(format!(
                    "smooth term references covariate {} but the data has {n_covariates} columns",
                    t.covariate
                )));
            }
            if t.basis_size < 4 {
                return Err(Error::Validation(format!(
                    "smooth on covariate {} requests basis size {}; minimum is 4",
                    t.covariate, t.basis_size
                )));
            }
            if self.linear.contains(&t.covariate) {
                return Err(Error::Validation(format!(
                    "covariate {} appears both as a linear and a smooth term",
                    t.covariate
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.smooths {
            if !seen.insert(t.covariate) {
                return Err(Error::Validation(format!(
                    "covariate {} appears in two smooth terms",
                    t.covariate
                )));
            }
        }
        Ok(())
    }

    pub fn is_intercept_only(&self) -> bool {
        self.linear.is_empty() && self.smooths.is_empty()
    }
}

/// Smoothing-strength policy for a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    /// One fixed lambda per smooth term, in formula order.
    Fixed(Vec<f64>),
    /// Data-driven selection on the log10 grid {-4, ..., 6}.
    Gcv,
}

/// The grid searched by `Smoothing::Gcv`.
pub fn lambda_grid() -> Vec<f64> {
    (-4..=6).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    GumbelLocation,
    Gev,
}

/// One fitted additive predictor (location for the Gumbel family; mu or
/// sigma for the GEV family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPredictor {
    pub formula: SmoothFormula,
    /// Coefficients in design order: intercept, linear terms, then one
    /// constrained block per smooth.
    pub coefficients: Vec<f64>,
    pub bases: Vec<SmoothBasisSpec>,
    /// One smoothing parameter per smooth term, formula order.
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    /// Final penalized objective (log-likelihood minus penalty).
    pub penalized_objective: f64,
    pub log_likelihood: f64,
    pub edf: f64,
    /// Smoothing-selection score of the fit: deviance GCV for the Gumbel
    /// family, the log-n information criterion for the GEV family.
    pub gcv: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothModel {
    pub family: Family,
    /// `[location]` for GumbelLocation, `[mu, sigma]` for Gev.
    pub predictors: Vec<FittedPredictor>,
    /// GEV shape, constant across covariates.
    pub shape: Option<f64>,
    pub fit: FitInfo,
}

/// A point prediction of log theta together with an extrapolation flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub log_theta: f64,
    /// exp(log_theta) clamped to the valid range [1, 2]; display only.
    pub theta_display: f64,
    pub extrapolated: bool,
}

impl SmoothModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s)
            .map_err(|e| Error::parse("smooth model json", e.to_string()))
    }
}

impl FittedPredictor {
    /// Evaluate the additive predictor at one covariate row; the flag is
    /// true when any smooth covariate falls outside its training hull.
    pub fn eval(&self, row: &[f64]) -> Result<(f64, bool)> {
        let needed = self
            .formula
            .linear
            .iter()
            .chain(self.formula.smooths.iter().map(|t| &t.covariate))
            .max()
            .map_or(0, |&m| m + 1);
        if row.len() < needed {
            return Err(Error::Validation(format!(
                "prediction row has {} covariates; the formula needs {needed}",
                row.len()
            )));
        }
        let mut eta = self.coefficients[0];
        let mut idx = 1;
        for &c in &self.formula.linear {
            eta += self.coefficients[idx] * row[c];
            idx += 1;
        }
        let mut outside = false;
        for spec in &self.bases {
            let x = row[spec.covariate];
            outside |= spec.is_outside_hull(x);
            for v in spec.row(x) {
                eta += self.coefficients[idx] * v;
                idx += 1;
            }
        }
        Ok((eta, outside))
    }

    /// Model-matrix row at one covariate row, in coefficient order, with
    /// the extrapolation flag.
    pub fn design_row(&self, row: &[f64]) -> Result<(Vec<f64>, bool)> {
        let needed = self
            .formula
            .linear
            .iter()
            .chain(self.formula.smooths.iter().map(|t| &t.covariate))
            .max()
            .map_or(0, |&m| m + 1);
        if row.len() < needed {
            return Err(Error::Validation(format!(
                "prediction row has {} covariates; the formula needs {needed}",
                row.len()
            )));
        }
        let mut out = Vec::with_capacity(self.coefficients.len());
        out.push(1.0);
        for &c in &self.formula.linear {
            out.push(row[c]);
        }
        let mut outside = false;
        for spec in &self.bases {
            let x = row[spec.covariate];
            outside |= spec.is_outside_hull(x);
            out.extend(spec.row(x));
        }
        Ok((out, outside))
    }
}

/// Fitted location plus the projection offset: log theta(x) = eta(x) + gamma.
pub fn predict_log_theta(model: &SmoothModel, row: &[f64]) -> Result<Prediction> {
    if model.family != Family::GumbelLocation {
        return Err(Error::Validation(
            "log theta prediction requires a Gumbel location model".into(),
        ));
    }
    let (eta, extrapolated) = model.predictors[0].eval(row)?;
    let log_theta = eta + EULER_GAMMA;
    Ok(Prediction {
        log_theta,
        theta_display: log_theta.exp().clamp(1.0, 2.0),
        extrapolated,
    })
}

/// Location-scale residuals y_i - eta(x_i) for a Gumbel location model.
/// Under a correct model these are Gumbel with unit scale, centered gamma
/// above zero; only differences across groups matter downstream, so the
/// constant offset is left in place.
pub fn residuals(model: &SmoothModel, y: &[f64], x: &[Vec<f64>]) -> Result<Vec<f64>> {
    if model.family != Family::GumbelLocation {
        return Err(Error::Validation(
            "residuals require a Gumbel location model".into(),
        ));
    }
    if y.len() != x.len() {
        return Err(Error::Validation(format!(
            "residuals need matching lengths, got {} responses and {} rows",
            y.len(),
            x.len()
        )));
    }
    y.iter()
        .zip(x.iter())
        .map(|(&yi, row)| Ok(yi - model.predictors[0].eval(row)?.0))
        .collect()
}

/// GEV parameters implied by a fitted margin model at one covariate row.
pub fn gev_params_at(model: &SmoothModel, row: &[f64]) -> Result<(crate::evt::GevParams, bool)> {
    if model.family != Family::Gev {
        return Err(Error::Validation(
            "parameter evaluation requires a GEV margin model".into(),
        ));
    }
    let (mu, out1) = model.predictors[0].eval(row)?;
    let (sigma, out2) = model.predictors[1].eval(row)?;
    if sigma <= 0.0 {
        return Err(Error::OutOfSupport(format!(
            "fitted scale is non-positive ({sigma}) at this covariate row"
        )));
    }
    let params = crate::evt::GevParams::new(mu, sigma, model.shape.unwrap_or(0.0))?;
    Ok((params, out1 || out2))
}

// ---------------------------------------------------------------------------
// Internal design assembly shared by both fitters.

pub(crate) struct PenaltyBlock {
    pub start: usize,
    pub dim: usize,
    pub s: DMatrix<f64>,
}

pub(crate) struct Design {
    pub x: DMatrix<f64>,
    pub bases: Vec<SmoothBasisSpec>,
    pub blocks: Vec<PenaltyBlock>,
    /// Human-readable term name per column, for rank diagnostics.
    pub col_terms: Vec<String>,
}

pub(crate) fn build_design(
    rows: &[Vec<f64>],
    formula: &SmoothFormula,
) -> Result<Design> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("no rows to fit".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Validation("ragged covariate rows".into()));
    }
    formula.validate(d)?;

    let mut bases = Vec::with_capacity(formula.smooths.len());
    for t in &formula.smooths {
        let values: Vec<f64> = rows.iter().map(|r| r[t.covariate]).collect();
        bases.push(SmoothBasisSpec::from_data(
            t.covariate,
            &values,
            t.basis_size,
        )?);
    }

    let p = 1
        + formula.linear.len()
        + bases.iter().map(|b| b.constrained_size()).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    let mut col_terms = Vec::with_capacity(p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    col_terms.push("intercept".to_string());
    let mut col = 1;
    for &c in &formula.linear {
        for i in 0..n {
            let v = rows[i][c];
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "covariate {c} has a non-finite value at row {i}"
                )));
            }
            x[(i, col)] = v;
        }
        col_terms.push(format!("linear(x{c})"));
        col += 1;
    }
    let mut blocks = Vec::with_capacity(bases.len());
    for spec in &bases {
        let width = spec.constrained_size();
        for i in 0..n {
            let row = spec.row(rows[i][spec.covariate]);
            for (j, v) in row.iter().enumerate() {
                x[(i, col + j)] = *v;
            }
        }
        for _ in 0..width {
            col_terms.push(format!("smooth(x{})", spec.covariate));
        }
        blocks.push(PenaltyBlock {
            start: col,
            dim: width,
            s: spec.penalty(),
        });
        col += width;
    }
    Ok(Design {
        x,
        bases,
        blocks,
        col_terms,
    })
}

/// Modified Gram-Schmidt scan naming terms whose columns are linearly
/// dependent on earlier ones; used when a fit's normal matrix is not
/// positive definite.
pub(crate) fn collinear_terms(design: &Design) -> Vec<String> {
    let n = design.x.nrows();
    let p = design.x.ncols();
    let mut basis_cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..p {
        let mut v = design.x.column(j).clone_owned();
        let orig = v.norm();
        for b in &basis_cols {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let rn = v.norm();
        if rn <= 1e-8 * orig.max(1e-300) || orig == 0.0 {
            let t = design.col_terms[j].clone();
            if !bad.contains(&t) {
                bad.push(t);
            }
        } else if basis_cols.len() < n {
            basis_cols.push(v / rn);
        }
    }
    bad
}
