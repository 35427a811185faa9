//! Penalized GEV margin fitter with additive location and scale.
//!
//! mu(x) gets an identity link and sigma(x) a log link, each with its own
//! additive formula, while the shape is a single scalar. The log link is
//! load bearing, not cosmetic: with an identity-link scale, an affine
//! tilt of sigma(x), which costs nothing under a wiggliness penalty,
//! reaches sigma = 0 at an isolated extreme covariate value at finite
//! coefficients, where the likelihood diverges. On the log scale that
//! tilt multiplies every interior scale by an exponential factor, so the
//! degenerate attractor disappears. The penalized log likelihood is
//! maximized by BFGS with backtracking; steps that leave the support
//! evaluate to minus infinity and are halved away.
//!
//! Smoothing selection cannot reuse the deviance GCV of the location
//! fitter because the saturated GEV deviance is undefined, so candidates
//! are compared on a penalized-likelihood information criterion
//! -2 loglik + ln(n) EDF, where the effective degrees of freedom come
//! from an empirical-Fisher curvature with the penalty added back.

use super::{
    build_design, collinear_terms, gev_params_at, lambda_grid, Design, Family, FitInfo,
    FittedPredictor, Smoothing, SmoothFormula, SmoothModel,
};
use crate::error::{Error, Result};
use crate::evt::{gev_cdf, FrechetValue};
use crate::projection::EULER_GAMMA;
use nalgebra::{Cholesky, DMatrix, DVector};

const MAX_ITER: usize = 500;
const MAX_HALVINGS: usize = 60;
/// Shape magnitudes below this use the Gumbel limit of the likelihood.
const SHAPE_LIMIT_EPS: f64 = 1e-5;
/// Reject steps whose log scale leaves this band; far outside it the
/// likelihood has long since collapsed and exp would lose precision.
const MAX_LOG_SCALE: f64 = 200.0;

struct Problem<'a> {
    y: &'a [f64],
    mu: &'a Design,
    sigma: &'a Design,
    lambdas_mu: &'a [f64],
    lambdas_sigma: &'a [f64],
    /// Zero the shape component of the gradient so the optimizer keeps
    /// the shape where it started; used for the stabilizing first stage
    /// of a cold start.
    freeze_shape: bool,
}

impl<'a> Problem<'a> {
    fn p_mu(&self) -> usize {
        self.mu.x.ncols()
    }

    fn p_sigma(&self) -> usize {
        self.sigma.x.ncols()
    }

    fn dim(&self) -> usize {
        self.p_mu() + self.p_sigma() + 1
    }

    /// Penalized log likelihood and its gradient; None when any
    /// observation is outside the support or a scale is non-positive.
    fn objective_grad(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let pm = self.p_mu();
        let ps = self.p_sigma();
        let xi = theta[pm + ps];
        if xi.abs() >= 1.0 {
            return None;
        }
        let n = self.y.len();
        let mut ll = 0.0;
        let mut grad = DVector::zeros(self.dim());
        for i in 0..n {
            let mut mu = 0.0;
            for j in 0..pm {
                mu += self.mu.x[(i, j)] * theta[j];
            }
            let mut eta = 0.0;
            for j in 0..ps {
                eta += self.sigma.x[(i, j)] * theta[pm + j];
            }
            if eta.abs() > MAX_LOG_SCALE {
                return None;
            }
            let sigma = eta.exp();
            let s = (self.y[i] - mu) / sigma;
            let (li, dmu, dsigma, dxi) = if xi.abs() < SHAPE_LIMIT_EPS {
                let es = (-s).exp();
                let li = -eta - s - es;
                if !li.is_finite() {
                    return None;
                }
                let dmu = (1.0 - es) / sigma;
                let dsigma = -1.0 / sigma + s * (1.0 - es) / sigma;
                let dxi = -s + 0.5 * s * s * (1.0 - es);
                (li, dmu, dsigma, dxi)
            } else {
                let t = 1.0 + xi * s;
                if t <= 1e-10 {
                    return None;
                }
                let lt = t.ln();
                let tpow = (-lt / xi).exp();
                let li = -eta - (1.0 + 1.0 / xi) * lt - tpow;
                if !li.is_finite() {
                    return None;
                }
                let common = (xi + 1.0) / t - tpow / t;
                let dmu = common / sigma;
                let dsigma = -1.0 / sigma + common * s / sigma;
                let dxi = lt / (xi * xi)
                    - (1.0 + 1.0 / xi) * (s / t)
                    - tpow * (lt - xi * s / t) / (xi * xi);
                (li, dmu, dsigma, dxi)
            };
            ll += li;
            // The scale predictor is on the log scale, so its gradient
            // picks up a factor sigma from the chain rule.
            let dsig_eta = dsigma * sigma;
            for j in 0..pm {
                grad[j] += dmu * self.mu.x[(i, j)];
            }
            for j in 0..ps {
                grad[pm + j] += dsig_eta * self.sigma.x[(i, j)];
            }
            grad[pm + ps] += dxi;
        }

        for (block, &lam) in self.mu.blocks.iter().zip(self.lambdas_mu) {
            let b = theta.rows(block.start, block.dim).clone_owned();
            let sb = &block.s * &b;
            ll -= lam * sb.dot(&b);
            for j in 0..block.dim {
                grad[block.start + j] -= 2.0 * lam * sb[j];
            }
        }
        for (block, &lam) in self.sigma.blocks.iter().zip(self.lambdas_sigma) {
            let b = theta.rows(pm + block.start, block.dim).clone_owned();
            let sb = &block.s * &b;
            ll -= lam * sb.dot(&b);
            for j in 0..block.dim {
                grad[pm + block.start + j] -= 2.0 * lam * sb[j];
            }
        }
        if !ll.is_finite() {
            return None;
        }
        if self.freeze_shape {
            grad[pm + ps] = 0.0;
        }
        Some((ll, grad))
    }

    /// Per-observation score vectors at theta, for the curvature proxy.
    fn scores(&self, theta: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        let pm = self.p_mu();
        let ps = self.p_sigma();
        let xi = theta[pm + ps];
        let n = self.y.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut mu = 0.0;
            for j in 0..pm {
                mu += self.mu.x[(i, j)] * theta[j];
            }
            let mut eta = 0.0;
            for j in 0..ps {
                eta += self.sigma.x[(i, j)] * theta[pm + j];
            }
            if eta.abs() > MAX_LOG_SCALE {
                return None;
            }
            let sigma = eta.exp();
            let s = (self.y[i] - mu) / sigma;
            let (dmu, dsigma, dxi) = if xi.abs() < SHAPE_LIMIT_EPS {
                let es = (-s).exp();
                (
                    (1.0 - es) / sigma,
                    -1.0 / sigma + s * (1.0 - es) / sigma,
                    -s + 0.5 * s * s * (1.0 - es),
                )
            } else {
                let t = 1.0 + xi * s;
                if t <= 1e-10 {
                    return None;
                }
                let lt = t.ln();
                let tpow = (-lt / xi).exp();
                let common = (xi + 1.0) / t - tpow / t;
                (
                    common / sigma,
                    -1.0 / sigma + common * s / sigma,
                    lt / (xi * xi)
                        - (1.0 + 1.0 / xi) * (s / t)
                        - tpow * (lt - xi * s / t) / (xi * xi),
                )
            };
            let dsig_eta = dsigma * sigma;
            let mut g = DVector::zeros(self.dim());
            for j in 0..pm {
                g[j] = dmu * self.mu.x[(i, j)];
            }
            for j in 0..ps {
                g[pm + j] = dsig_eta * self.sigma.x[(i, j)];
            }
            g[pm + ps] = dxi;
            out.push(g);
        }
        Some(out)
    }
}

struct GevFit {
    theta: DVector<f64>,
    log_likelihood: f64,
    penalized: f64,
    edf: f64,
    /// Smoothing-selection score: -2 ll + ln(n) edf. The log-n weight
    /// penalizes effective dof hard enough to flatten spurious wiggle,
    /// which the constant 2 of the AIC form does not on heavy-tailed
    /// responses.
    ic: f64,
    iterations: usize,
}

struct LoopState {
    theta: DVector<f64>,
    obj: f64,
    iterations: usize,
}

fn bfgs_fit(problem: &Problem, init: Option<&DVector<f64>>) -> Result<GevFit> {
    let theta0 = match init {
        Some(t) => t.clone(),
        None => {
            // A cold start walks a long way through parameter space, and
            // free-shape steps along that walk keep putting observations
            // on the support boundary, where the gradient blows up. Fit
            // the Gumbel limit first (its support is the whole line) and
            // release the shape from that solution, which is close enough
            // to the optimum that the boundary stays out of play.
            let frozen = Problem {
                freeze_shape: true,
                ..*problem
            };
            let mut start = initial_theta(problem);
            start[problem.dim() - 1] = 0.0;
            match bfgs_loop(&frozen, start.clone()) {
                Ok(state) => state.theta,
                Err(_) => start,
            }
        }
    };
    let state = bfgs_loop(problem, theta0)?;
    let theta = state.theta;

    // Unpenalized likelihood at the optimum.
    let zero_mu = vec![0.0; problem.lambdas_mu.len()];
    let zero_sigma = vec![0.0; problem.lambdas_sigma.len()];
    let no_penalty = Problem {
        lambdas_mu: &zero_mu,
        lambdas_sigma: &zero_sigma,
        ..*problem
    };
    let (ll, _) = no_penalty
        .objective_grad(&theta)
        .ok_or_else(|| Error::NonConvergence("fit ended at an infeasible point".into()))?;

    let edf = effective_dof(problem, &theta)?;
    Ok(GevFit {
        log_likelihood: ll,
        penalized: state.obj,
        edf,
        ic: -2.0 * ll + (problem.y.len() as f64).ln() * edf,
        iterations: state.iterations,
        theta,
    })
}

fn bfgs_loop(problem: &Problem, theta0: DVector<f64>) -> Result<LoopState> {
    let dim = problem.dim();
    let n = problem.y.len() as f64;
    let mut theta = theta0;
    let (mut obj, mut grad) = problem
        .objective_grad(&theta)
        .ok_or_else(|| Error::NonConvergence("infeasible starting point for the margin fit".into()))?;

    let mut hinv = DMatrix::identity(dim, dim);
    let grad_tol = 1e-5 * n;
    let mut iterations = 0;

    for iter in 1..=MAX_ITER {
        iterations = iter;
        if grad.norm() <= grad_tol {
            iterations = iter - 1;
            break;
        }
        let mut dir = &hinv * &grad;
        if dir.dot(&grad) <= 0.0 {
            // Curvature approximation went bad; reset to steepest ascent.
            hinv = DMatrix::identity(dim, dim);
            dir = grad.clone();
        }
        let slope = dir.dot(&grad);
        // A fresh or badly scaled curvature guess can propose a jump far
        // past the support; start the search at a bounded displacement.
        let mut step = (1.0f64).min((1.0 + theta.norm()) / dir.norm());
        let mut accepted = None;
        let mut fallback: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &dir * step;
            if let Some((cobj, cgrad)) = problem.objective_grad(&cand) {
                if cobj >= obj + 1e-4 * step * slope {
                    accepted = Some((cand, cobj, cgrad));
                    break;
                }
                if cobj > obj && fallback.as_ref().is_none_or(|f| cobj > f.1) {
                    fallback = Some((cand, cobj, cgrad));
                }
            }
            step *= 0.5;
        }
        // Near the support boundary the slope is so large that the
        // sufficient-increase test cannot be met at any feasible step;
        // plain improvement still gets the iterate away from the edge.
        let (new_theta, new_obj, new_grad) = match accepted.or(fallback) {
            Some(v) => v,
            None => {
                if grad.norm() <= 10.0 * grad_tol {
                    break;
                }
                return Err(Error::NonConvergence(format!(
                    "margin fit stalled at iteration {iter} with gradient norm {:.3e} [{}]",
                    grad.norm(),
                    diagnose(problem, &theta)
                )));
            }
        };
        let sdiff = &new_theta - &theta;
        let ydiff = &new_grad - &grad;
        let sy = sdiff.dot(&ydiff);
        if sy.abs() > 1e-12 * sdiff.norm() * ydiff.norm() && sy < 0.0 {
            // Maximization: s'y negative means curvature is concave along
            // the step, exactly what BFGS on the negated problem expects.
            let rho = 1.0 / -sy;
            let hy = &hinv * &ydiff;
            let yhy = ydiff.dot(&hy);
            let c = rho * rho * yhy + rho;
            hinv += &sdiff * sdiff.transpose() * c;
            let outer = &hy * sdiff.transpose();
            hinv += (&outer + outer.transpose()) * rho;
        }
        theta = new_theta;
        obj = new_obj;
        grad = new_grad;
        if iter == MAX_ITER && grad.norm() > grad_tol {
            return Err(Error::NonConvergence(format!(
                "margin fit did not converge in {MAX_ITER} iterations (gradient norm {:.3e})",
                grad.norm()
            )));
        }
    }

    Ok(LoopState {
        theta,
        obj,
        iterations,
    })
}

fn diagnose(problem: &Problem, theta: &DVector<f64>) -> String {
    let pm = problem.p_mu();
    let ps = problem.p_sigma();
    let xi = theta[pm + ps];
    let mut min_sigma = f64::INFINITY;
    let mut min_t = f64::INFINITY;
    let mut arg_t = 0usize;
    for i in 0..problem.y.len() {
        let mut mu = 0.0;
        for j in 0..pm {
            mu += problem.mu.x[(i, j)] * theta[j];
        }
        let mut sigma = 0.0;
        for j in 0..ps {
            sigma += problem.sigma.x[(i, j)] * theta[pm + j];
        }
        min_sigma = min_sigma.min(sigma);
        let t = 1.0 + xi * (problem.y[i] - mu) / sigma;
        if t < min_t {
            min_t = t;
            arg_t = i;
        }
    }
    format!("xi={xi:.4} min_sigma={min_sigma:.3e} min_t={min_t:.3e} at row {arg_t} y={:.3}", problem.y[arg_t])
}

fn initial_theta(problem: &Problem) -> DVector<f64> {
    let n = problem.y.len() as f64;
    let mean = problem.y.iter().sum::<f64>() / n;
    let var = problem.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sigma0 = (var.sqrt() * 6f64.sqrt() / std::f64::consts::PI).max(1e-3);
    let mu0 = mean - EULER_GAMMA * sigma0;
    let mut theta = DVector::zeros(problem.dim());
    theta[0] = mu0;
    theta[problem.p_mu()] = sigma0.ln();
    theta[problem.dim() - 1] = 0.1;
    theta
}

/// EDF = tr((F + P)^{-1} F) with F the empirical Fisher curvature and P
/// the penalty curvature, both clamped by a small ridge so the inverse is
/// defined even for degenerate score configurations.
fn effective_dof(problem: &Problem, theta: &DVector<f64>) -> Result<f64> {
    let dim = problem.dim();
    let scores = problem
        .scores(theta)
        .ok_or_else(|| Error::NonConvergence("fit ended at an infeasible point".into()))?;
    let mut f = DMatrix::zeros(dim, dim);
    for g in &scores {
        f.syger(1.0, g, g, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for r in 0..dim {
        for c in (r + 1)..dim {
            f[(r, c)] = f[(c, r)];
        }
    }
    let pm = problem.p_mu();
    let mut a = f.clone();
    for (block, &lam) in problem.mu.blocks.iter().zip(problem.lambdas_mu) {
        for r in 0..block.dim {
            for c in 0..block.dim {
                a[(block.start + r, block.start + c)] += 2.0 * lam * block.s[(r, c)];
            }
        }
    }
    for (block, &lam) in problem.sigma.blocks.iter().zip(problem.lambdas_sigma) {
        for r in 0..block.dim {
            for c in 0..block.dim {
                a[(pm + block.start + r, pm + block.start + c)] += 2.0 * lam * block.s[(r, c)];
            }
        }
    }
    let ridge = 1e-10 * (0..dim).map(|j| a[(j, j)]).sum::<f64>().max(1e-12) / dim as f64;
    for j in 0..dim {
        a[(j, j)] += ridge;
    }
    match Cholesky::new(a) {
        Some(chol) => Ok(chol.solve(&f).trace().clamp(0.0, dim as f64)),
        None => Ok(dim as f64),
    }
}

/// Fit a GEV margin with additive location and scale and constant shape.
///
/// `Smoothing::Fixed` expects one lambda per smooth, location smooths
/// first, then scale smooths.
pub fn fit_gev_margin(
    y: &[f64],
    rows: &[Vec<f64>],
    mu_formula: &SmoothFormula,
    sigma_formula: &SmoothFormula,
    smoothing: &Smoothing,
) -> Result<SmoothModel> {
    if y.len() != rows.len() {
        return Err(Error::Validation(format!(
            "got {} responses and {} covariate rows",
            y.len(),
            rows.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "response has a non-finite value at row {i}"
        )));
    }
    let mu_design = build_design(rows, mu_formula)?;
    let sigma_design = build_design(rows, sigma_formula)?;
    let dim = mu_design.x.ncols() + sigma_design.x.ncols() + 1;
    if y.len() <= dim + 1 {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot support {dim} parameters",
            y.len()
        )));
    }
    let mut bad = collinear_terms(&mu_design);
    for t in collinear_terms(&sigma_design) {
        let labelled = format!("scale {t}");
        if !bad.contains(&labelled) {
            bad.push(labelled);
        }
    }
    if !bad.is_empty() {
        return Err(Error::RankDeficient(format!(
            "design matrix is rank deficient; linearly dependent terms: {}",
            bad.join(", ")
        )));
    }
    let k_mu = mu_design.blocks.len();
    let k_sigma = sigma_design.blocks.len();

    let (lambdas_mu, lambdas_sigma, fit) = match smoothing {
        Smoothing::Fixed(l) => {
            if l.len() != k_mu + k_sigma {
                return Err(Error::Validation(format!(
                    "{} smoothing parameters supplied for {} smooth terms",
                    l.len(),
                    k_mu + k_sigma
                )));
            }
            if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(
                    "smoothing parameters must be finite and non-negative".into(),
                ));
            }
            let lm = l[..k_mu].to_vec();
            let ls = l[k_mu..].to_vec();
            let problem = Problem {
                y,
                mu: &mu_design,
                sigma: &sigma_design,
                lambdas_mu: &lm,
                lambdas_sigma: &ls,
                freeze_shape: false,
            };
            let fit = run_with_diagnosis(&problem, None, &mu_design, &sigma_design)?;
            (lm, ls, fit)
        }
        Smoothing::Gcv => {
            let mut lm = vec![1.0; k_mu];
            let mut ls = vec![1.0; k_sigma];
            let mut best = {
                let problem = Problem {
                    y,
                    mu: &mu_design,
                    sigma: &sigma_design,
                    lambdas_mu: &lm,
                    lambdas_sigma: &ls,
                    freeze_shape: false,
                };
                run_with_diagnosis(&problem, None, &mu_design, &sigma_design)?
            };
            let grid = lambda_grid();
            for _pass in 0..2 {
                let mut changed = false;
                for slot in 0..(k_mu + k_sigma) {
                    let current = if slot < k_mu { lm[slot] } else { ls[slot - k_mu] };
                    let mut best_lam = current;
                    let mut improved: Option<GevFit> = None;
                    for &cand in &grid {
                        if cand == current {
                            continue;
                        }
                        let mut tlm = lm.clone();
                        let mut tls = ls.clone();
                        if slot < k_mu {
                            tlm[slot] = cand;
                        } else {
                            tls[slot - k_mu] = cand;
                        }
                        let problem = Problem {
                            y,
                            mu: &mu_design,
                            sigma: &sigma_design,
                            lambdas_mu: &tlm,
                            lambdas_sigma: &tls,
                            freeze_shape: false,
                        };
                        let fit = match bfgs_fit(&problem, Some(&best.theta)) {
                            Ok(f) => f,
                            Err(Error::NonConvergence(_)) => continue,
                            Err(e) => return Err(e),
                        };
                        let incumbent = improved.as_ref().map_or(best.ic, |f| f.ic);
                        if fit.ic + 1e-9 < incumbent {
                            best_lam = cand;
                            improved = Some(fit);
                        }
                    }
                    if let Some(fit) = improved {
                        if slot < k_mu {
                            lm[slot] = best_lam;
                        } else {
                            ls[slot - k_mu] = best_lam;
                        }
                        best = fit;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            (lm, ls, best)
        }
    };

    let pm = mu_design.x.ncols();
    let xi = fit.theta[dim - 1];
    let mut warnings = Vec::new();
    if xi < -0.5 {
        warnings.push(format!(
            "fitted shape {xi:.3} is below -0.5; maximum-likelihood regularity fails there and standard errors are unreliable"
        ));
    }

    Ok(SmoothModel {
        family: Family::Gev,
        predictors: vec![
            FittedPredictor {
                formula: mu_formula.clone(),
                coefficients: fit.theta.rows(0, pm).iter().copied().collect(),
                bases: mu_design.bases,
                lambdas: lambdas_mu,
            },
            FittedPredictor {
                formula: sigma_formula.clone(),
                coefficients: fit
                    .theta
                    .rows(pm, sigma_design.x.ncols())
                    .iter()
                    .copied()
                    .collect(),
                bases: sigma_design.bases,
                lambdas: lambdas_sigma,
            },
        ],
        shape: Some(xi),
        fit: FitInfo {
            iterations: fit.iterations,
            converged: true,
            penalized_objective: fit.penalized,
            log_likelihood: fit.log_likelihood,
            edf: fit.edf,
            gcv: Some(fit.ic),
            warnings,
        },
    })
}

fn run_with_diagnosis(
    problem: &Problem,
    init: Option<&DVector<f64>>,
    mu_design: &Design,
    sigma_design: &Design,
) -> Result<GevFit> {
    match bfgs_fit(problem, init) {
        Ok(f) => Ok(f),
        Err(Error::NonConvergence(msg)) => {
            let mut bad = collinear_terms(mu_design);
            for t in collinear_terms(sigma_design) {
                let labelled = format!("scale {t}");
                if !bad.contains(&labelled) {
                    bad.push(labelled);
                }
            }
            if bad.is_empty() {
                Err(Error::NonConvergence(msg))
            } else {
                Err(Error::RankDeficient(format!(
                    "{msg}; linearly dependent terms: {}",
                    bad.join(", ")
                )))
            }
        }
        Err(e) => Err(e),
    }
}

/// Transform observations to the unit Frechet scale through their fitted
/// covariate-dependent margins.
pub fn margin_pit(model: &SmoothModel, y: &[f64], rows: &[Vec<f64>]) -> Result<Vec<FrechetValue>> {
    if model.family != Family::Gev {
        return Err(Error::Validation(
            "the probability integral transform needs a GEV margin model".into(),
        ));
    }
    if y.len() != rows.len() {
        return Err(Error::Validation(format!(
            "got {} responses and {} covariate rows",
            y.len(),
            rows.len()
        )));
    }
    let mut out = Vec::with_capacity(y.len());
    let mut offending = Vec::new();
    for (i, (&yi, row)) in y.iter().zip(rows).enumerate() {
        let (params, _) = gev_params_at(model, row)?;
        let u = gev_cdf(yi, &params).clamp(1e-300, 1.0 - 1e-16);
        let z = -1.0 / u.ln();
        if z <= 0.0 || !z.is_finite() {
            if offending.len() < 10 {
                offending.push(i);
            }
            continue;
        }
        out.push(FrechetValue::new(z)?);
    }
    if !offending.is_empty() {
        return Err(Error::OutOfSupport(format!(
            "{} observations could not be transformed (first rows: {:?})",
            y.len() - out.len(),
            offending
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::{gev_quantile, GevParams};
    use crate::seed::rng_from;
    use crate::stats::ks_statistic;
    use rand::Rng as _;

    fn sample_gev(rng: &mut crate::seed::Rng, params: &GevParams) -> f64 {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        gev_quantile(u, params).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = rng_from(70, &[0]);
        let n = 150;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let truth = GevParams::new(2.0, 1.5, 0.15).unwrap();
        let y: Vec<f64> = (0..n).map(|_| sample_gev(&mut rng, &truth)).collect();
        let mu_formula = SmoothFormula::default().with_smooth_sized(0, 6);
        let sigma_formula = SmoothFormula::default().with_linear(1);
        let mu_design = build_design(&rows, &mu_formula).unwrap();
        let sigma_design = build_design(&rows, &sigma_formula).unwrap();
        let lambdas_mu = vec![2.5];
        let lambdas_sigma = vec![];
        let problem = Problem {
            y: &y,
            mu: &mu_design,
            sigma: &sigma_design,
            lambdas_mu: &lambdas_mu,
            lambdas_sigma: &lambdas_sigma,
            freeze_shape: false,
        };
        let dim = problem.dim();
        let mut theta = DVector::zeros(dim);
        theta[0] = 2.1;
        for j in 1..problem.p_mu() {
            theta[j] = 0.05 * (j as f64).sin();
        }
        theta[problem.p_mu()] = 1.6;
        theta[problem.p_mu() + 1] = 0.02;
        theta[dim - 1] = 0.12;

        let (_, grad) = problem.objective_grad(&theta).unwrap();
        let h = 1e-6;
        for j in 0..dim {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let (fp, _) = problem.objective_grad(&tp).unwrap();
            let (fm, _) = problem.objective_grad(&tm).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let scale = grad[j].abs().max(fd.abs()).max(1e-3);
            assert!(
                (grad[j] - fd).abs() / scale < 1e-5,
                "parameter {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
    }

    #[test]
    fn gradient_matches_in_gumbel_limit_branch() {
        let mut rng = rng_from(71, &[0]);
        let n = 100;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let truth = GevParams::new(0.0, 1.0, 0.0).unwrap();
        let y: Vec<f64> = (0..n).map(|_| sample_gev(&mut rng, &truth)).collect();
        let mu_formula = SmoothFormula::default().with_linear(0);
        let sigma_formula = SmoothFormula::intercept_only();
        let mu_design = build_design(&rows, &mu_formula).unwrap();
        let sigma_design = build_design(&rows, &sigma_formula).unwrap();
        let problem = Problem {
            y: &y,
            mu: &mu_design,
            sigma: &sigma_design,
            lambdas_mu: &[],
            lambdas_sigma: &[],
            freeze_shape: false,
        };
        let dim = problem.dim();
        let mut theta = DVector::zeros(dim);
        theta[0] = 0.1;
        theta[1] = -0.05;
        theta[2] = 1.1;
        theta[dim - 1] = 0.0;

        // The shape gradient in the limit branch must agree with finite
        // differences taken across the branch boundary.
        let (_, grad) = problem.objective_grad(&theta).unwrap();
        let h = 5e-5;
        let mut tp = theta.clone();
        tp[dim - 1] += h;
        let mut tm = theta.clone();
        tm[dim - 1] -= h;
        let (fp, _) = problem.objective_grad(&tp).unwrap();
        let (fm, _) = problem.objective_grad(&tm).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let scale = grad[dim - 1].abs().max(fd.abs()).max(1e-3);
        assert!(
            (grad[dim - 1] - fd).abs() / scale < 1e-3,
            "shape gradient {} vs fd {fd}",
            grad[dim - 1]
        );
    }

    #[test]
    fn recovers_linear_location_and_constant_scale() {
        let mut rng = rng_from(72, &[0]);
        let n = 2000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..2.0)]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p = GevParams::new(1.0 + 2.0 * r[0], 2.0, 0.2).unwrap();
                sample_gev(&mut rng, &p)
            })
            .collect();
        let model = fit_gev_margin(
            &y,
            &rows,
            &SmoothFormula::default().with_linear(0),
            &SmoothFormula::intercept_only(),
            &Smoothing::Fixed(vec![]),
        )
        .unwrap();
        let c = &model.predictors[0].coefficients;
        assert!((c[0] - 1.0).abs() < 0.2, "mu intercept {}", c[0]);
        assert!((c[1] - 2.0).abs() < 0.15, "mu slope {}", c[1]);
        let s0 = model.predictors[1].coefficients[0];
        assert!((s0 - 2.0).abs() < 0.2, "sigma {s0}");
        let xi = model.shape.unwrap();
        assert!((xi - 0.2).abs() < 0.06, "shape {xi}");
        assert!(model.fit.warnings.is_empty());
    }

    #[test]
    fn pit_gives_uniform_margins() {
        let mut rng = rng_from(73, &[0]);
        let n = 2000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p = GevParams::new(0.5 + r[0], 1.0 + 0.5 * r[0], 0.1).unwrap();
                sample_gev(&mut rng, &p)
            })
            .collect();
        let model = fit_gev_margin(
            &y,
            &rows,
            &SmoothFormula::default().with_linear(0),
            &SmoothFormula::default().with_linear(0),
            &Smoothing::Fixed(vec![]),
        )
        .unwrap();
        let z = margin_pit(&model, &y, &rows).unwrap();
        assert_eq!(z.len(), n);
        // Z unit Frechet implies exp(-1/Z) uniform on (0, 1).
        let u: Vec<f64> = z.iter().map(|v| (-1.0 / v.value()).exp()).collect();
        let ks = ks_statistic(&u, |x| x.clamp(0.0, 1.0));
        assert!(ks < 0.025, "pit uniformity ks {ks}");
    }

    #[test]
    fn selection_flattens_smooth_when_truth_is_constant() {
        let mut rng = rng_from(74, &[0]);
        let n = 600;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let truth = GevParams::new(3.0, 1.0, 0.1).unwrap();
        let y: Vec<f64> = (0..n).map(|_| sample_gev(&mut rng, &truth)).collect();
        let model = fit_gev_margin(
            &y,
            &rows,
            &SmoothFormula::default().with_smooth_sized(0, 8),
            &SmoothFormula::intercept_only(),
            &Smoothing::Gcv,
        )
        .unwrap();
        let grid: Vec<f64> = (0..21).map(|i| 0.05 + 0.9 * i as f64 / 20.0).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&g| model.predictors[0].eval(&[g]).unwrap().0)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(sd < 0.25, "location wiggle sd {sd} for constant truth");
    }

    #[test]
    fn strongly_negative_shape_raises_warning() {
        let mut rng = rng_from(75, &[0]);
        let n = 3000;
        let truth = GevParams::new(0.0, 1.0, -0.7).unwrap();
        let y: Vec<f64> = (0..n).map(|_| sample_gev(&mut rng, &truth)).collect();
        let rows = vec![vec![0.0]; n];
        let model = fit_gev_margin(
            &y,
            &rows,
            &SmoothFormula::intercept_only(),
            &SmoothFormula::intercept_only(),
            &Smoothing::Fixed(vec![]),
        )
        .unwrap();
        let xi = model.shape.unwrap();
        assert!(xi < -0.5, "expected a strongly negative shape, got {xi}");
        assert!(
            model.fit.warnings.iter().any(|w| w.contains("-0.5")),
            "warnings: {:?}",
            model.fit.warnings
        );
    }
}

