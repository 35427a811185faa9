//! Cubic B-spline bases with difference penalties and sum-to-zero
//! constraints; the building blocks of every smooth term.
//!
//! Knots sit at empirical quantiles of the covariate, with the boundary
//! knots repeated so the basis is clamped to the data hull. Outside the
//! hull the basis extends linearly (value and first derivative at the
//! boundary), which keeps predictions tame and lets callers flag
//! extrapolation. The quadratic penalty is the second-order coefficient
//! difference form; its null space holds constant and linearly varying
//! coefficient sequences, so heavy penalization shrinks a smooth toward a
//! straight line rather than toward zero.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const DEGREE: usize = 3;
pub const DEFAULT_BASIS_SIZE: usize = 10;

/// Everything needed to rebuild a fitted smooth term's design columns for
/// new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBasisSpec {
    pub covariate: usize,
    /// Full clamped knot vector, length basis_size + DEGREE + 1.
    pub knots: Vec<f64>,
    /// Number of unconstrained basis functions.
    pub basis_size: usize,
    /// Sum-to-zero constraint transform, basis_size x (basis_size - 1);
    /// design columns are the raw basis times this matrix.
    pub z: Vec<Vec<f64>>,
    /// Training hull; evaluations outside it are linear extrapolations.
    pub x_min: f64,
    pub x_max: f64,
}

/// Evaluate all `basis_size` raw cubic B-splines at `x` inside the hull.
fn raw_row_inside(knots: &[f64], basis_size: usize, x: f64) -> Vec<f64> {
    let lo = knots[DEGREE];
    let hi = knots[knots.len() - DEGREE - 1];
    debug_assert!(x >= lo && x <= hi);
    // Locate the knot span; the last interval is closed on the right.
    let mut span = DEGREE;
    while span + 1 < basis_size && x >= knots[span + 1] {
        span += 1;
    }
    // de Boor triangular scheme for the nonzero entries on this span.
    let mut vals = vec![0.0f64; DEGREE + 1];
    vals[0] = 1.0;
    let mut left = vec![0.0f64; DEGREE + 1];
    let mut right = vec![0.0f64; DEGREE + 1];
    for j in 1..=DEGREE {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    let mut row = vec![0.0f64; basis_size];
    for (r, &v) in vals.iter().enumerate() {
        let idx = span - DEGREE + r;
        if idx < basis_size {
            row[idx] = v;
        }
    }
    row
}

/// First derivatives of the raw basis at `x` inside the hull, via the
/// standard degree-reduction formula.
fn raw_row_derivative_inside(knots: &[f64], basis_size: usize, x: f64) -> Vec<f64> {
    let h = 1e-6 * (knots[knots.len() - DEGREE - 1] - knots[DEGREE]).max(1.0);
    let lo = knots[DEGREE];
    let hi = knots[knots.len() - DEGREE - 1];
    // Central differences pulled inside the hull at the boundaries; the
    // basis is piecewise cubic so this is accurate to ~1e-9 of scale.
    let a = (x - h).max(lo);
    let b = (x + h).min(hi);
    let ra = raw_row_inside(knots, basis_size, a);
    let rb = raw_row_inside(knots, basis_size, b);
    ra.iter()
        .zip(rb.iter())
        .map(|(&va, &vb)| (vb - va) / (b - a))
        .collect()
}

impl SmoothBasisSpec {
    /// Build a basis from training values. The requested size is capped at
    /// the number of distinct covariate values; interior knots sit at
    /// quantiles, deduplicated so the knot vector stays valid.
    pub fn from_data(covariate: usize, values: &[f64], requested_size: usize) -> Result<Self> {
        if requested_size < 4 {
            return Err(Error::InvalidParameter(format!(
                "smooth basis size must be at least 4, got {requested_size}"
            )));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "covariate {covariate} contains non-finite values"
            )));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = 1usize;
        for i in 1..sorted.len() {
            if sorted[i] != sorted[i - 1] {
                distinct += 1;
            }
        }
        if distinct < 4 {
            return Err(Error::InvalidParameter(format!(
                "covariate {covariate} has only {distinct} distinct values; a smooth needs at least 4 (use a linear term)"
            )));
        }
        let size = requested_size.min(distinct);
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        let interior_target = size - DEGREE - 1;
        let mut interior: Vec<f64> = Vec::with_capacity(interior_target);
        for i in 1..=interior_target {
            let q = i as f64 / (interior_target + 1) as f64;
            let pos = q * (sorted.len() - 1) as f64;
            let base = pos.floor() as usize;
            let frac = pos - base as f64;
            let v = if base + 1 < sorted.len() {
                sorted[base] * (1.0 - frac) + sorted[base + 1] * frac
            } else {
                sorted[base]
            };
            if v > lo && v < hi && interior.last() != Some(&v) {
                interior.push(v);
            }
        }
        let basis_size = interior.len() + DEGREE + 1;
        let mut knots = Vec::with_capacity(basis_size + DEGREE + 1);
        knots.extend(std::iter::repeat(lo).take(DEGREE + 1));
        knots.extend(interior.iter());
        knots.extend(std::iter::repeat(hi).take(DEGREE + 1));
        let mut spec = SmoothBasisSpec {
            covariate,
            knots,
            basis_size,
            z: Vec::new(),
            x_min: lo,
            x_max: hi,
        };
        spec.z = spec.constraint_from(values);
        Ok(spec)
    }

    /// Raw (unconstrained) basis row with linear extrapolation outside the
    /// hull.
    pub fn raw_row(&self, x: f64) -> Vec<f64> {
        if x < self.x_min {
            let base = raw_row_inside(&self.knots, self.basis_size, self.x_min);
            let d = raw_row_derivative_inside(&self.knots, self.basis_size, self.x_min);
            base.iter()
                .zip(d.iter())
                .map(|(&b, &g)| b + g * (x - self.x_min))
                .collect()
        } else if x > self.x_max {
            let base = raw_row_inside(&self.knots, self.basis_size, self.x_max);
            let d = raw_row_derivative_inside(&self.knots, self.basis_size, self.x_max);
            base.iter()
                .zip(d.iter())
                .map(|(&b, &g)| b + g * (x - self.x_max))
                .collect()
        } else {
            raw_row_inside(&self.knots, self.basis_size, x)
        }
    }

    /// Constrained design row: raw row times the sum-to-zero transform.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let raw = self.raw_row(x);
        self.z
            .iter()
            .map(|col| col.iter().zip(raw.iter()).map(|(&c, &r)| c * r).sum())
            .collect()
    }

    pub fn constrained_size(&self) -> usize {
        self.basis_size - 1
    }

    pub fn is_outside_hull(&self, x: f64) -> bool {
        x < self.x_min || x > self.x_max
    }

    /// Householder null-space basis of the training column-mean vector:
    /// columns z_j with mean(B z_j) = 0, stored column-major.
    fn constraint_from(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let k = self.basis_size;
        let n = values.len() as f64;
        let mut c = vec![0.0f64; k];
        for &x in values {
            for (j, v) in raw_row_inside(
                &self.knots,
                k,
                x.clamp(self.x_min, self.x_max),
            )
            .iter()
            .enumerate()
            {
                c[j] += v / n;
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Householder vector h = c + sign(c0) ||c|| e1 maps c to a multiple
        // of e1; the remaining columns of H span the null space of c^T.
        let mut h = c.clone();
        h[0] += norm * c[0].signum();
        let hh: f64 = h.iter().map(|v| v * v).sum();
        let mut cols = Vec::with_capacity(k - 1);
        for j in 1..k {
            let mut col = vec![0.0f64; k];
            for i in 0..k {
                let e = if i == j { 1.0 } else { 0.0 };
                col[i] = e - 2.0 * h[i] * h[j] / hh;
            }
            cols.push(col);
        }
        cols
    }

    /// Transformed second-difference penalty Z^T D^T D Z for this basis.
    pub fn penalty(&self) -> DMatrix<f64> {
        let k = self.basis_size;
        let mut d = DMatrix::zeros(k.saturating_sub(2), k);
        for r in 0..k.saturating_sub(2) {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        let s = d.transpose() * d;
        let z = DMatrix::from_fn(k, k - 1, |i, j| self.z[j][i]);
        z.transpose() * s * z
    }

    /// Unconstrained second-difference matrix D; rows are coefficient
    /// second differences.
    pub fn difference_matrix(&self) -> DMatrix<f64> {
        let k = self.basis_size;
        let mut d = DMatrix::zeros(k.saturating_sub(2), k);
        for r in 0..k.saturating_sub(2) {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        d
    }

    /// Map constrained coefficients back to raw basis coefficients.
    pub fn expand_coefficients(&self, beta: &[f64]) -> Vec<f64> {
        let k = self.basis_size;
        let mut full = vec![0.0f64; k];
        for (j, &b) in beta.iter().enumerate() {
            for i in 0..k {
                full[i] += self.z[j][i] * b;
            }
        }
        full
    }
}
