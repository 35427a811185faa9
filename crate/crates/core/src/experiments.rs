//! Simulation-study harness: grids, repetitions, seed bookkeeping, and
//! CSV/JSON summaries for the three studies.
//!
//! Per-repetition seeds derive from `(master_seed, [study_no, cell,
//! rep, env])` through the crate's seed mixer, so any cell is
//! independently reproducible. Failed repetitions are counted per cell
//! and never abort the grid.

use crate::error::{Error, Result};
use crate::gam::{fit_gev_margin, margin_pit, SmoothFormula, Smoothing};
use crate::icp::{icp_scan, Environment, FormulaPolicy, IcpResult};
use crate::projection::{logmax, logmax_series};
use crate::scm::{gen_environment, ScmConfig, Study};
use crate::seed::rng_from;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Grid and replication settings for one study run. Omitted grids fall
/// back to desk-scale defaults documented on each accessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: Study,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Per-environment sample size for the first study, block count for
    /// the third; the second study takes its sizes from `n_grid`.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub p_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub q_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub beta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub a_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub tau_grid: Option<Vec<usize>>,
}

fn default_reps() -> usize {
    20
}
fn default_seed() -> u64 {
    1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_n() -> usize {
    500
}

impl StudyConfig {
    pub fn new(study: Study) -> Self {
        StudyConfig {
            study,
            reps: default_reps(),
            master_seed: default_seed(),
            alpha: default_alpha(),
            n: default_n(),
            p_grid: None,
            q_grid: None,
            beta_grid: None,
            n_grid: None,
            a_grid: None,
            tau_grid: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig =
            toml::from_str(text).map_err(|e| Error::parse("study config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn p_grid(&self) -> Vec<f64> {
        self.p_grid.clone().unwrap_or_else(|| vec![0.0, 2.0, 4.0])
    }
    pub fn q_grid(&self) -> Vec<f64> {
        self.q_grid.clone().unwrap_or_else(|| vec![0.0, 0.25, 1.0])
    }
    pub fn beta_grid(&self) -> Vec<f64> {
        self.beta_grid.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0])
    }
    pub fn n_grid(&self) -> Vec<usize> {
        self.n_grid.clone().unwrap_or_else(|| match self.study {
            Study::S41 => vec![500, 1500],
            Study::S42 => vec![200, 500, 1000, 2000, 5000],
            Study::S43 => vec![self.n],
        })
    }
    pub fn a_grid(&self) -> Vec<f64> {
        self.a_grid.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0])
    }
    pub fn tau_grid(&self) -> Vec<usize> {
        self.tau_grid.clone().unwrap_or_else(|| vec![50])
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Validation("reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        let nonempty = |name: &str, len: usize| -> Result<()> {
            if len == 0 {
                Err(Error::Validation(format!("{name} grid is empty")))
            } else {
                Ok(())
            }
        };
        match self.study {
            Study::S41 => {
                nonempty("p", self.p_grid().len())?;
                nonempty("q", self.q_grid().len())?;
                nonempty("beta", self.beta_grid().len())?;
                nonempty("n", self.n_grid().len())?;
            }
            Study::S42 => nonempty("n", self.n_grid().len())?,
            Study::S43 => {
                nonempty("a", self.a_grid().len())?;
                nonempty("tau", self.tau_grid().len())?;
                if self.a_grid().iter().any(|&a| !(a.is_finite() && a >= 0.0)) {
                    return Err(Error::Validation(
                        "margin-effect grid entries must be non-negative".into(),
                    ));
                }
                if self.tau_grid().contains(&0) {
                    return Err(Error::Validation("block sizes must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

pub use crate::icp::format_subset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    /// Ordered (column, value) descriptors of the grid point.
    pub labels: Vec<(String, String)>,
    pub reps: usize,
    /// Repetitions where the estimate equalled the study's target set.
    pub correct: usize,
    /// Count of each distinct estimate, plus an "error" key for failed
    /// repetitions; values sum to `reps`.
    pub shat_counts: BTreeMap<String, usize>,
    pub errors: usize,
}

impl CellOutcome {
    pub fn fraction_correct(&self) -> f64 {
        self.correct as f64 / self.reps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub study: Study,
    pub cells: Vec<CellOutcome>,
}

impl StudyOutcome {
    /// One row per cell; grid columns first, then the aggregate columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.cells.first() {
            for (name, _) in &first.labels {
                out.push_str(name);
                out.push(',');
            }
        }
        out.push_str("reps,fraction_correct,errors,shat_counts\n");
        for cell in &self.cells {
            for (_, value) in &cell.labels {
                out.push_str(value);
                out.push(',');
            }
            let counts: Vec<String> = cell
                .shat_counts
                .iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                cell.reps,
                cell.fraction_correct(),
                cell.errors,
                counts.join(";")
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serialization cannot fail")
    }
}

struct CellAccumulator {
    reps: usize,
    correct: usize,
    counts: BTreeMap<String, usize>,
    errors: usize,
}

impl CellAccumulator {
    fn new() -> Self {
        CellAccumulator {
            reps: 0,
            correct: 0,
            counts: BTreeMap::new(),
            errors: 0,
        }
    }

    fn record(&mut self, outcome: Result<IcpResult>, target: &[usize]) {
        self.reps += 1;
        match outcome {
            Ok(res) => {
                if res.s_hat == target {
                    self.correct += 1;
                }
                *self.counts.entry(format_subset(&res.s_hat)).or_insert(0) += 1;
            }
            Err(_) => {
                self.errors += 1;
                *self.counts.entry("error".to_string()).or_insert(0) += 1;
            }
        }
    }

    fn finish(self, labels: Vec<(String, String)>) -> CellOutcome {
        CellOutcome {
            labels,
            reps: self.reps,
            correct: self.correct,
            shat_counts: self.counts,
            errors: self.errors,
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // Plain decimal labels for CSV cells (grid values are human-chosen).
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// First study: logistic dependence caused by X1, interventions over a
/// (p, q, beta, n) grid, four environments per repetition.
pub fn run_s41(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    if config.study != Study::S41 {
        return Err(Error::Validation("config is not for the first study".into()));
    }
    let target = vec![0usize];
    let mut cells = Vec::new();
    let mut cell_index = 0u64;
    for &p in &config.p_grid() {
        for &q in &config.q_grid() {
            for &beta in &config.beta_grid() {
                for &n in &config.n_grid() {
                    let scm = ScmConfig::S41 { p, q, beta };
                    let mut acc = CellAccumulator::new();
                    for rep in 0..config.reps {
                        let outcome = (|| {
                            let mut envs = Vec::with_capacity(4);
                            for e in 1..=4usize {
                                let mut rng = rng_from(
                                    config.master_seed,
                                    &[41, cell_index, rep as u64, e as u64],
                                );
                                let ds = gen_environment(&scm, e, n, &mut rng)?;
                                envs.push(Environment {
                                    id: ds.env_id.clone(),
                                    y: logmax_series(&ds.pairs)?,
                                    x: ds.x,
                                });
                            }
                            icp_scan(&envs, config.alpha, true, FormulaPolicy::Auto)
                        })();
                        acc.record(outcome, &target);
                    }
                    cells.push(acc.finish(vec![
                        ("p".into(), fmt_f64(p)),
                        ("q".into(), fmt_f64(q)),
                        ("beta".into(), fmt_f64(beta)),
                        ("n".into(), n.to_string()),
                    ]));
                    cell_index += 1;
                }
            }
        }
    }
    Ok(StudyOutcome {
        study: Study::S41,
        cells,
    })
}

/// Second study: Husler-Reiss dependence caused by X2 with a hidden
/// confounder; two environments; the estimate drifts from the empty set
/// to the ancestor {X1} as n grows.
pub fn run_s42(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    if config.study != Study::S42 {
        return Err(Error::Validation(
            "config is not for the second study".into(),
        ));
    }
    let target = vec![0usize];
    let mut cells = Vec::new();
    for (cell_index, &n) in config.n_grid().iter().enumerate() {
        let mut acc = CellAccumulator::new();
        for rep in 0..config.reps {
            let outcome = (|| {
                let mut envs = Vec::with_capacity(2);
                for e in 1..=2usize {
                    let mut rng = rng_from(
                        config.master_seed,
                        &[42, cell_index as u64, rep as u64, e as u64],
                    );
                    let ds = gen_environment(&ScmConfig::S42, e, n, &mut rng)?;
                    envs.push(Environment {
                        id: ds.env_id.clone(),
                        y: logmax_series(&ds.pairs)?,
                        x: ds.x,
                    });
                }
                icp_scan(&envs, config.alpha, true, FormulaPolicy::Auto)
            })();
            acc.record(outcome, &target);
        }
        cells.push(acc.finish(vec![("n".into(), n.to_string())]));
    }
    Ok(StudyOutcome {
        study: Study::S42,
        cells,
    })
}

/// Margin-modelling policy for the block-maxima study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginPolicy {
    /// GEV location and scale smooth in X2.
    WithX2,
    /// Intercept-only margins, ignoring X2.
    WithoutX2,
}

impl MarginPolicy {
    fn label(self) -> &'static str {
        match self {
            MarginPolicy::WithX2 => "with_x2",
            MarginPolicy::WithoutX2 => "without_x2",
        }
    }
}

/// Fit pooled GEV margins to block maxima under a policy, transform to
/// unit Frechet, and return the per-environment projection responses.
fn s43_environments(
    datasets: &[crate::scm::ScmDataset],
    policy: MarginPolicy,
) -> Result<Vec<Environment>> {
    // Pool maxima across environments; the marginal law of a block
    // maximum depends only on X2, not on the dependence parameter, so a
    // single pooled margin model per component is well specified.
    let mut pooled_rows: Vec<Vec<f64>> = Vec::new();
    let mut maxima: Vec<Vec<(f64, f64)>> = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let m = ds
            .block_maxima_raw()
            .ok_or_else(|| Error::Validation("dataset carries no pre-maxima".into()))?;
        for row in &ds.x {
            pooled_rows.push(vec![row[1]]);
        }
        maxima.push(m);
    }
    let pooled_z1: Vec<f64> = maxima.iter().flatten().map(|p| p.0).collect();
    let pooled_z2: Vec<f64> = maxima.iter().flatten().map(|p| p.1).collect();

    let (mu_f, sigma_f) = match policy {
        MarginPolicy::WithX2 => (
            SmoothFormula::default().with_smooth(0),
            SmoothFormula::default().with_smooth(0),
        ),
        MarginPolicy::WithoutX2 => (
            SmoothFormula::intercept_only(),
            SmoothFormula::intercept_only(),
        ),
    };
    let smoothing = Smoothing::Gcv;
    let margin1 = fit_gev_margin(&pooled_z1, &pooled_rows, &mu_f, &sigma_f, &smoothing)?;
    let margin2 = fit_gev_margin(&pooled_z2, &pooled_rows, &mu_f, &sigma_f, &smoothing)?;

    let mut envs = Vec::with_capacity(datasets.len());
    let mut offset = 0usize;
    for (ds, m) in datasets.iter().zip(&maxima) {
        let rows = &pooled_rows[offset..offset + m.len()];
        let z1: Vec<f64> = m.iter().map(|p| p.0).collect();
        let z2: Vec<f64> = m.iter().map(|p| p.1).collect();
        let f1 = margin_pit(&margin1, &z1, rows)?;
        let f2 = margin_pit(&margin2, &z2, rows)?;
        let y: Vec<f64> = f1
            .iter()
            .zip(&f2)
            .map(|(a, b)| logmax(a.value(), b.value()))
            .collect::<Result<_>>()?;
        envs.push(Environment {
            id: ds.env_id.clone(),
            x: ds.x.clone(),
            y,
        });
        offset += m.len();
    }
    Ok(envs)
}

/// Third study: block maxima whose margins depend on X2 while the
/// dependence is caused by X1; run under both margin policies.
pub fn run_s43(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    if config.study != Study::S43 {
        return Err(Error::Validation("config is not for the third study".into()));
    }
    let target = vec![0usize];
    let mut cells = Vec::new();
    let mut cell_index = 0u64;
    for &a in &config.a_grid() {
        for &tau in &config.tau_grid() {
            let scm = ScmConfig::S43 { a, tau };
            let mut accs = [CellAccumulator::new(), CellAccumulator::new()];
            for rep in 0..config.reps {
                let datasets: Result<Vec<_>> = (1..=3usize)
                    .map(|e| {
                        let mut rng = rng_from(
                            config.master_seed,
                            &[43, cell_index, rep as u64, e as u64],
                        );
                        gen_environment(&scm, e, config.n, &mut rng)
                    })
                    .collect();
                match datasets {
                    Err(e) => {
                        // A generator failure costs the repetition under
                        // both policies.
                        let msg = e.to_string();
                        for acc in accs.iter_mut() {
                            acc.record(Err(Error::Validation(msg.clone())), &target);
                        }
                    }
                    Ok(ds) => {
                        for (slot, policy) in [MarginPolicy::WithX2, MarginPolicy::WithoutX2]
                            .into_iter()
                            .enumerate()
                        {
                            let outcome = s43_environments(&ds, policy).and_then(|envs| {
                                icp_scan(&envs, config.alpha, true, FormulaPolicy::Auto)
                            });
                            accs[slot].record(outcome, &target);
                        }
                    }
                }
            }
            for (slot, policy) in [MarginPolicy::WithX2, MarginPolicy::WithoutX2]
                .into_iter()
                .enumerate()
            {
                let acc = std::mem::replace(&mut accs[slot], CellAccumulator::new());
                cells.push(acc.finish(vec![
                    ("a".into(), fmt_f64(a)),
                    ("tau".into(), tau.to_string()),
                    ("n".into(), config.n.to_string()),
                    ("policy".into(), policy.label().to_string()),
                ]));
            }
            cell_index += 1;
        }
    }
    Ok(StudyOutcome {
        study: Study::S43,
        cells,
    })
}

/// Dispatch on the study named in the config.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    match config.study {
        Study::S41 => run_s41(config),
        Study::S42 => run_s42(config),
        Study::S43 => run_s43(config),
    }
}
