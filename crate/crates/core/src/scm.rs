//! Structural data generators for the three simulation studies.
//!
//! Each generator produces one environment of covariates together with
//! the dependent extreme pair (or, for the block-maxima study, the raw
//! pre-maxima series from which maxima and fitted margins are built
//! downstream). Interventions across environments follow the study
//! definitions exactly; callers pass a per-environment random stream.

use crate::copula::{BivariatePair, CopulaSpec};
use crate::error::{Error, Result};
use crate::projection::logmax;
use crate::stats::norm_quantile;
use serde::{Deserialize, Serialize};

/// Floor applied to dependence parameters that the structural equations
/// can drive to their degenerate boundary (lambda = 0, alpha = 0).
const PARAM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    S41,
    S42,
    S43,
}

impl Study {
    pub fn environment_count(self) -> usize {
        match self {
            Study::S41 => 4,
            Study::S42 => 2,
            Study::S43 => 3,
        }
    }

    pub fn covariate_count(self) -> usize {
        match self {
            Study::S41 => 3,
            Study::S42 | Study::S43 => 2,
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Study::S41 => write!(f, "s41"),
            Study::S42 => write!(f, "s42"),
            Study::S43 => write!(f, "s43"),
        }
    }
}

/// Generator settings; the variant selects the study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum ScmConfig {
    /// Logistic dependence driven by X1; p is the intervention strength
    /// on X1, q the X1-X2 coupling, beta the causal strength on the
    /// dependence parameter.
    S41 { p: f64, q: f64, beta: f64 },
    /// Husler-Reiss dependence driven by X2 and a hidden confounder.
    S42,
    /// Pre-maxima with margins shifted by a*X2 and logistic coupling
    /// 1/X1; tau raw observations per block.
    S43 { a: f64, tau: usize },
}

impl ScmConfig {
    pub fn study(&self) -> Study {
        match self {
            ScmConfig::S41 { .. } => Study::S41,
            ScmConfig::S42 => Study::S42,
            ScmConfig::S43 { .. } => Study::S43,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScmConfig::S41 { p, q, beta } => {
                for (name, v) in [("p", p), ("q", q), ("beta", beta)] {
                    if !v.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "{name} must be finite, got {v}"
                        )));
                    }
                }
                Ok(())
            }
            ScmConfig::S42 => Ok(()),
            ScmConfig::S43 { a, tau } => {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "margin effect a must be non-negative, got {a}"
                    )));
                }
                if tau == 0 {
                    return Err(Error::InvalidParameter(
                        "block size tau must be at least 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Raw pre-maxima rows for the block-maxima study, block-major: block b
/// occupies rows b*tau .. (b+1)*tau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreMaxima {
    pub tau: usize,
    pub rows: Vec<(f64, f64)>,
}

/// One environment of generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmDataset {
    pub env_id: String,
    /// n rows by d observed covariates.
    pub x: Vec<Vec<f64>>,
    /// Unit-Frechet dependent pairs, one per row; empty for the
    /// block-maxima study, whose extremes live in `premaxima`.
    pub pairs: Vec<BivariatePair>,
    pub premaxima: Option<PreMaxima>,
}

impl ScmDataset {
    /// Componentwise block maxima of the raw pre-maxima series, one pair
    /// per covariate row.
    pub fn block_maxima_raw(&self) -> Option<Vec<(f64, f64)>> {
        let pm = self.premaxima.as_ref()?;
        Some(
            pm.rows
                .chunks_exact(pm.tau)
                .map(|block| {
                    block.iter().fold(
                        (f64::NEG_INFINITY, f64::NEG_INFINITY),
                        |(m1, m2), &(a, b)| (m1.max(a), m2.max(b)),
                    )
                })
                .collect(),
        )
    }
}

fn draw_uniform(rng: &mut impl rand::Rng) -> f64 {
    rng.gen_range(f64::MIN_POSITIVE..1.0)
}

fn draw_normal(rng: &mut impl rand::Rng) -> f64 {
    norm_quantile(draw_uniform(rng))
}

fn draw_exp(rng: &mut impl rand::Rng) -> f64 {
    -(1.0 - rng.gen_range(0.0f64..1.0)).ln()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Generate one environment of the requested study. `env_index` is
/// 1-based and must be valid for the study.
pub fn gen_environment(
    config: &ScmConfig,
    env_index: usize,
    n: usize,
    rng: &mut crate::seed::Rng,
) -> Result<ScmDataset> {
    config.validate()?;
    let study = config.study();
    if env_index == 0 || env_index > study.environment_count() {
        return Err(Error::InvalidParameter(format!(
            "environment {env_index} does not exist for study {study} (valid: 1..={})",
            study.environment_count()
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientData("environment size must be positive".into()));
    }
    let env_id = format!("e{env_index}");

    match *config {
        ScmConfig::S41 { p, q, beta } => {
            let mut x = Vec::with_capacity(n);
            let mut pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let x1 = if env_index == 2 {
                    p + draw_normal(rng)
                } else {
                    draw_normal(rng)
                };
                let x2 = if env_index == 3 {
                    -10.0
                } else {
                    q * x1 + draw_exp(rng)
                };
                let alpha = sigmoid(beta * x1).clamp(PARAM_FLOOR, 1.0);
                let spec = CopulaSpec::logistic(alpha)?;
                let pair = spec.sample_pair(rng);
                let y = logmax(pair.z1, pair.z2)?;
                let x3 = if env_index == 4 {
                    y + x1 + draw_normal(rng)
                } else {
                    y + draw_normal(rng)
                };
                x.push(vec![x1, x2, x3]);
                pairs.push(pair);
            }
            Ok(ScmDataset {
                env_id,
                x,
                pairs,
                premaxima: None,
            })
        }
        ScmConfig::S42 => {
            let mut x = Vec::with_capacity(n);
            let mut pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let h = draw_exp(rng) - 1.0;
                let x1 = if env_index == 2 {
                    draw_normal(rng) + 5.0
                } else {
                    draw_normal(rng)
                };
                let x2 = x1 + h + draw_normal(rng);
                let lambda = ((x2 + 3.0 * h).abs() / 5.0).max(PARAM_FLOOR);
                let spec = CopulaSpec::husler_reiss(lambda)?;
                let pair = spec.sample_pair(rng);
                x.push(vec![x1, x2]);
                pairs.push(pair);
            }
            Ok(ScmDataset {
                env_id,
                x,
                pairs,
                premaxima: None,
            })
        }
        ScmConfig::S43 { a, tau } => {
            let mut x = Vec::with_capacity(n);
            let mut rows = Vec::with_capacity(n * tau);
            for _ in 0..n {
                let x1: f64 = if env_index == 2 { 5.0 } else { 1.0 };
                let x2 = if env_index == 3 { 1.0 } else { draw_exp(rng) };
                let alpha = (1.0 / x1).clamp(PARAM_FLOOR, 1.0);
                let spec = CopulaSpec::logistic(alpha)?;
                for _ in 0..tau {
                    let w = spec.sample_pair(rng);
                    // Frechet pair -> uniform -> standard normal noise,
                    // preserving the logistic copula on the margins.
                    let e1 = norm_quantile((-1.0 / w.z1).exp().clamp(1e-300, 1.0 - 1e-16));
                    let e2 = norm_quantile((-1.0 / w.z2).exp().clamp(1e-300, 1.0 - 1e-16));
                    rows.push((a * x2 + e1, a * x2 + e2));
                }
                x.push(vec![x1, x2]);
            }
            Ok(ScmDataset {
                env_id,
                x,
                pairs: Vec::new(),
                premaxima: Some(PreMaxima { tau, rows }),
            })
        }
    }
}
