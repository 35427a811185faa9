//! Invariance scan over covariate subsets.
//!
//! For each subset S of covariates, the data from all environments is
//! pooled, a Gumbel location model on X_S is fitted, and the
//! per-environment residual vectors are compared with the k-sample
//! Anderson-Darling test. Subsets whose residual distributions look
//! invariant (p >= alpha) are accepted, and the final estimate is the
//! intersection of all accepted subsets. Strict supersets of an accepted
//! set may be pruned: their acceptance would only intersect away to
//! something the accepted subset already implies.

use crate::adtest::ad_k_sample;
use crate::error::{Error, Result};
use crate::gam::{fit_gumbel_location, SmoothFormula, SmoothModel, Smoothing};
use crate::projection::logmax_series;
use crate::scm::{gen_environment, ScmConfig, Study};
use crate::seed::rng_from;
use serde::{Deserialize, Serialize};

/// Hard cap on the subset enumeration.
pub const MAX_COVARIATES: usize = 20;
/// Environments smaller than this still run but carry a warning.
pub const SMALL_ENV_WARNING: usize = 30;

/// One environment: covariates and projection responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub id: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Canonical display of a covariate subset with 1-based indices,
/// matching the numbering used in reports: {}, {1}, {1,3}.
pub fn format_subset(s: &[usize]) -> String {
    if s.is_empty() {
        return "{}".to_string();
    }
    let inner: Vec<String> = s.iter().map(|c| (c + 1).to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// How to map a covariate subset to an additive formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaPolicy {
    /// Covariates with few distinct values (binary indicators and the
    /// like) enter linearly, everything else as a smooth.
    Auto,
    /// Every covariate enters linearly.
    AllLinear,
}

/// Distinct-value threshold below which Auto falls back to a linear
/// term; a cubic spline needs at least four distinct values.
const AUTO_LINEAR_MAX_DISTINCT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetStatus {
    Accepted,
    Rejected,
    /// Skipped as a strict superset of an accepted set.
    Pruned,
    /// The pooled fit or the residual test failed; treated as rejected.
    FitFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    /// Zero-based covariate column indices, sorted.
    pub subset: Vec<usize>,
    pub p_value: Option<f64>,
    /// True when the p-value fell outside the critical-value table and
    /// was clamped.
    pub p_clamped: bool,
    pub status: SubsetStatus,
    pub error: Option<String>,
    pub fitted: Option<SmoothModel>,
}

impl SubsetResult {
    pub fn accepted(&self) -> bool {
        self.status == SubsetStatus::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub per_subset: Vec<SubsetResult>,
    /// Intersection of the accepted subsets (empty when none accepted).
    pub s_hat: Vec<usize>,
    pub alpha: f64,
    /// No subset was accepted: the invariance assumption looks violated
    /// for every candidate set.
    pub all_rejected: bool,
    pub warnings: Vec<String>,
}

impl IcpResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("icp result json", e.to_string()))
    }
}

fn validate_environments(envs: &[Environment]) -> Result<usize> {
    if envs.len() < 2 {
        return Err(Error::Validation(format!(
            "invariance testing needs at least 2 environments, got {}",
            envs.len()
        )));
    }
    let d = envs[0].x.first().map_or(0, |r| r.len());
    for env in envs {
        if env.x.len() != env.y.len() {
            return Err(Error::Validation(format!(
                "environment {}: {} covariate rows but {} responses",
                env.id,
                env.x.len(),
                env.y.len()
            )));
        }
        if env.x.is_empty() {
            return Err(Error::InsufficientData(format!(
                "environment {} is empty",
                env.id
            )));
        }
        if env.x.iter().any(|r| r.len() != d) {
            return Err(Error::Validation(format!(
                "environment {} has rows with inconsistent covariate counts",
                env.id
            )));
        }
    }
    if d > MAX_COVARIATES {
        return Err(Error::Validation(format!(
            "{d} covariates exceed the subset-scan cap of {MAX_COVARIATES}"
        )));
    }
    Ok(d)
}

fn count_distinct(envs: &[Environment], col: usize) -> usize {
    let mut values: Vec<f64> = envs
        .iter()
        .flat_map(|e| e.x.iter().map(move |r| r[col]))
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    values.len()
}

/// Build the additive formula for a covariate subset under the policy.
pub fn formula_for_subset(
    subset: &[usize],
    envs: &[Environment],
    policy: FormulaPolicy,
) -> SmoothFormula {
    let mut formula = SmoothFormula::default();
    for &c in subset {
        let smooth = match policy {
            FormulaPolicy::AllLinear => false,
            FormulaPolicy::Auto => count_distinct(envs, c) > AUTO_LINEAR_MAX_DISTINCT,
        };
        if smooth {
            formula = formula.with_smooth(c);
        } else {
            formula = formula.with_linear(c);
        }
    }
    formula
}

/// Test the invariance hypothesis for one covariate subset.
pub fn test_subset(
    subset: &[usize],
    envs: &[Environment],
    policy: FormulaPolicy,
    alpha: f64,
) -> Result<SubsetResult> {
    let d = validate_environments(envs)?;
    let mut sorted: Vec<usize> = subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != subset.len() {
        return Err(Error::Validation("subset contains duplicate indices".into()));
    }
    if let Some(&c) = sorted.iter().find(|&&c| c >= d) {
        return Err(Error::Validation(format!(
            "subset index {c} is out of range for {d} covariates"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }

    let pooled_y: Vec<f64> = envs.iter().flat_map(|e| e.y.iter().copied()).collect();
    let pooled_x: Vec<Vec<f64>> = envs.iter().flat_map(|e| e.x.iter().cloned()).collect();
    let formula = formula_for_subset(&sorted, envs, policy);

    let outcome = fit_gumbel_location(&pooled_y, &pooled_x, &formula, &Smoothing::Gcv)
        .and_then(|model| {
            let residuals: Vec<Vec<f64>> = envs
                .iter()
                .map(|e| crate::gam::residuals(&model, &e.y, &e.x))
                .collect::<Result<_>>()?;
            let test = ad_k_sample(&residuals)?;
            Ok((model, test))
        });

    Ok(match outcome {
        Ok((model, test)) => {
            let accepted = test.p_value >= alpha;
            SubsetResult {
                subset: sorted,
                p_value: Some(test.p_value),
                p_clamped: test.clamped,
                status: if accepted {
                    SubsetStatus::Accepted
                } else {
                    SubsetStatus::Rejected
                },
                error: None,
                fitted: Some(model),
            }
        }
        Err(e) => SubsetResult {
            subset: sorted,
            p_value: None,
            p_clamped: false,
            status: SubsetStatus::FitFailed,
            error: Some(e.to_string()),
            fitted: None,
        },
    })
}

/// All subsets of {0..d-1}, ordered by cardinality, lexicographic within
/// a cardinality level. The empty set comes first.
fn subsets_by_cardinality(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(1usize << d);
    out.push(Vec::new());
    for k in 1..=d {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            out.push(comb.clone());
            // Rightmost position that can still advance.
            let mut i = k as isize - 1;
            while i >= 0 && comb[i as usize] == d - k + i as usize {
                i -= 1;
            }
            if i < 0 {
                break;
            }
            let i = i as usize;
            comb[i] += 1;
            for j in (i + 1)..k {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    out
}

fn intersect_accepted(accepted: &[&[usize]]) -> Vec<usize> {
    match accepted.split_first() {
        None => Vec::new(),
        Some((first, rest)) => first
            .iter()
            .copied()
            .filter(|c| rest.iter().all(|s| s.contains(c)))
            .collect(),
    }
}

/// Scan every covariate subset and intersect the accepted ones.
pub fn icp_scan(
    envs: &[Environment],
    alpha: f64,
    prune: bool,
    policy: FormulaPolicy,
) -> Result<IcpResult> {
    let d = validate_environments(envs)?;
    let mut warnings = Vec::new();
    for env in envs {
        if env.y.len() < SMALL_ENV_WARNING {
            warnings.push(format!(
                "environment {} has only {} observations; the asymptotic test level is unreliable",
                env.id,
                env.y.len()
            ));
        }
    }

    let mut per_subset: Vec<SubsetResult> = Vec::with_capacity(1usize << d);
    for subset in subsets_by_cardinality(d) {
        let superset_of_accepted = prune
            && per_subset.iter().any(|r| {
                r.accepted()
                    && r.subset.len() < subset.len()
                    && r.subset.iter().all(|c| subset.contains(c))
            });
        if superset_of_accepted {
            per_subset.push(SubsetResult {
                subset,
                p_value: None,
                p_clamped: false,
                status: SubsetStatus::Pruned,
                error: None,
                fitted: None,
            });
            continue;
        }
        per_subset.push(test_subset(&subset, envs, policy, alpha)?);
    }

    let accepted: Vec<&[usize]> = per_subset
        .iter()
        .filter(|r| r.accepted())
        .map(|r| r.subset.as_slice())
        .collect();
    let all_rejected = accepted.is_empty();
    let s_hat = intersect_accepted(&accepted);

    Ok(IcpResult {
        per_subset,
        s_hat,
        alpha,
        all_rejected,
        warnings,
    })
}

/// Outcome of a repeated-simulation coverage check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    /// Fraction of repetitions with s_hat contained in the true causal set.
    pub coverage: f64,
    pub s_hat_per_rep: Vec<Vec<usize>>,
}

/// Repeatedly generate environment families from a structural config,
/// run the scan, and report how often s_hat is contained in `s_star`.
/// Supports the studies whose generators emit dependent pairs directly
/// (the block-maxima study needs margin fitting and lives in the study
/// runners).
pub fn level_check(
    config: &ScmConfig,
    n: usize,
    reps: usize,
    alpha: f64,
    s_star: &[usize],
    master_seed: u64,
    policy: FormulaPolicy,
) -> Result<LevelCheck> {
    if reps == 0 {
        return Err(Error::Validation("need at least one repetition".into()));
    }
    let study = config.study();
    if study == Study::S43 {
        return Err(Error::Validation(
            "the block-maxima study runs through its study runner, not the generic level check"
                .into(),
        ));
    }
    let mut s_hat_per_rep = Vec::with_capacity(reps);
    let mut hits = 0usize;
    for rep in 0..reps {
        let mut envs = Vec::with_capacity(study.environment_count());
        for env_index in 1..=study.environment_count() {
            let mut rng = rng_from(master_seed, &[1, rep as u64, env_index as u64]);
            let ds = gen_environment(config, env_index, n, &mut rng)?;
            let y = logmax_series(&ds.pairs)?;
            envs.push(Environment {
                id: ds.env_id,
                x: ds.x,
                y,
            });
        }
        let result = icp_scan(&envs, alpha, true, policy)?;
        if result.s_hat.iter().all(|c| s_star.contains(c)) {
            hits += 1;
        }
        s_hat_per_rep.push(result.s_hat);
    }
    Ok(LevelCheck {
        coverage: hits as f64 / reps as f64,
        s_hat_per_rep,
    })
}
