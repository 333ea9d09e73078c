//! Monte Carlo verification harness.
//!
//! Every check simulates independent replicas in parallel, collects per-path
//! results in index order and aggregates them sequentially, so a report is a
//! function of `(mechanism, sim config, harness config)` only. Each check
//! carries at least one cell whose oracle depends on `α`, which makes the
//! `oracle_alpha_offset` negative control bite.

mod example;
mod noise;
mod ray_knight;
mod reflected;
mod residuals;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::levy_path::{PathError, SimConfig};
use crate::local_time::LevelGrid;
use crate::mechanism::BranchingMechanism;
use crate::stats;

pub use example::brownian_example_check;
pub use noise::{poisson_marks_check, white_noise_check, MarkBox, TestFunctionSpec};
pub use ray_knight::ray_knight_report;
pub use reflected::{bridge_supremum, reflected_supremum_check};
pub use residuals::{tanaka_refinement_study, theorem1_report, theorem1_residual};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("check `{check}` cannot run: {reason}")]
    Precondition { check: &'static str, reason: String },
    #[error("invalid harness config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Path(#[from] PathError),
}

/// How a cell's statistic is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `|stat - oracle| <= tol`
    AbsDiff,
    /// `stat <= tol`
    AtMost,
    /// `stat < tol`
    LessThan,
    /// `stat >= tol`
    AtLeast,
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportCell {
    pub params: Value,
    pub stat: f64,
    pub oracle: f64,
    pub stderr: f64,
    pub tol: f64,
    pub rule: Rule,
    pub pass: bool,
}

impl ReportCell {
    pub fn new(params: Value, stat: f64, oracle: f64, stderr: f64, tol: f64, rule: Rule) -> Self {
        let pass = match rule {
            Rule::AbsDiff => (stat - oracle).abs() <= tol,
            Rule::AtMost => stat <= tol,
            Rule::LessThan => stat < tol,
            Rule::AtLeast => stat >= tol,
            Rule::Info => true,
        };
        Self { params, stat, oracle, stderr, tol, rule, pass }
    }

    /// `|stat - oracle| <= k·stderr + budget·|oracle|`.
    pub fn z_test(params: Value, stat: f64, oracle: f64, stderr: f64, k: f64, budget: f64) -> Self {
        Self::new(params, stat, oracle, stderr, k * stderr + budget * oracle.abs(), Rule::AbsDiff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub check: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub cells: Vec<ReportCell>,
    pub discarded: usize,
    pub config: Value,
    pub warnings: Vec<String>,
    pub pass: bool,
}

impl MonteCarloReport {
    pub fn new(check: &str, m: usize, cells: Vec<ReportCell>, discarded: usize, config: Value) -> Self {
        let pass = !cells.is_empty() && cells.iter().all(|c| c.pass);
        Self { check: check.to_string(), m, cells, discarded, config, warnings: Vec::new(), pass }
    }

    /// Marks the report as failed with a reason.
    pub fn invalidate(&mut self, reason: String) {
        self.warnings.push(reason);
        self.pass = false;
    }

    pub fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    pub fn failing_cells(&self) -> impl Iterator<Item = &ReportCell> {
        self.cells.iter().filter(|c| !c.pass)
    }
}

fn default_x() -> f64 {
    1.0
}
fn default_levels() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_lambdas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_paths() -> usize {
    4000
}
fn default_dts() -> Vec<f64> {
    vec![1e-3, 5e-4, 2.5e-4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub test_function: TestFunctionSpec,
    pub variance_budget: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { test_function: TestFunctionSpec::indicator(1.0, 1.0), variance_budget: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarksConfig {
    /// Mechanism used instead of the main one, e.g. when the main one has no
    /// jumps.
    pub mechanism: Option<BranchingMechanism>,
    pub boxes: Vec<MarkBox>,
    pub min_coverage: f64,
    pub fano_tolerance: f64,
}

impl Default for MarksConfig {
    fn default() -> Self {
        Self {
            mechanism: None,
            boxes: vec![MarkBox { a: [0.0, 1.0], z: [0.5, 1.5], u: [0.0, 1.0] }],
            min_coverage: 0.9,
            fano_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectedConfig {
    pub t: f64,
    /// Second mechanism with jumps, checked alongside the main one.
    pub jump_mechanism: Option<BranchingMechanism>,
    pub budget: f64,
}

impl Default for ReflectedConfig {
    fn default() -> Self {
        Self { t: 1.0, jump_mechanism: None, budget: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleConfig {
    pub t: f64,
    pub paths: usize,
    pub dt: f64,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self { t: 1.0, paths: 5000, dt: 2.5e-5 }
    }
}

/// Parameters shared by the statistical checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub x: f64,
    pub levels: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub paths: usize,
    /// Step ladder for refinement studies, coarse to fine.
    pub dts: Vec<f64>,
    /// Level bin width; defaults to `max(dt^{1/3}, 4·β^{-1}·dt^{1/2})`.
    pub level_width: Option<f64>,
    pub budget_mean: f64,
    pub budget_laplace: f64,
    /// Bound on the mean absolute local time identity residual, as a fraction of `x`.
    pub residual_budget: f64,
    pub max_discard_fraction: f64,
    /// Added to `α` in every oracle; nonzero values are negative controls.
    pub oracle_alpha_offset: f64,
    pub noise: NoiseConfig,
    pub marks: MarksConfig,
    pub reflected: ReflectedConfig,
    pub example: ExampleConfig,
    pub output_dir: Option<String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            x: default_x(),
            levels: default_levels(),
            lambdas: default_lambdas(),
            paths: default_paths(),
            dts: default_dts(),
            level_width: None,
            budget_mean: 0.02,
            budget_laplace: 0.05,
            residual_budget: 0.05,
            max_discard_fraction: 0.05,
            oracle_alpha_offset: 0.0,
            noise: NoiseConfig::default(),
            marks: MarksConfig::default(),
            reflected: ReflectedConfig::default(),
            example: ExampleConfig::default(),
            output_dir: None,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |field, reason: &str| Err(VerifyError::Config { field, reason: reason.to_string() });
        if !(self.x > 0.0 && self.x.is_finite()) {
            return bad("x", "must be > 0");
        }
        if self.levels.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("levels", "levels must be finite and >= 0");
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambdas", "lambdas must be finite and >= 0");
        }
        if self.paths < 2 {
            return bad("paths", "need at least 2 paths");
        }
        if self.dts.is_empty() || self.dts.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad("dts", "need at least one positive step");
        }
        if self.level_width.is_some_and(|w| !(w.is_finite() && w > 0.0)) {
            return bad("level_width", "must be > 0");
        }
        if !self.oracle_alpha_offset.is_finite() {
            return bad("oracle_alpha_offset", "must be finite");
        }
        self.noise.test_function.validate()?;
        for b in &self.marks.boxes {
            b.validate()?;
        }
        if !(self.reflected.t > 0.0) {
            return bad("reflected.t", "must be > 0");
        }
        if !(self.example.t > 0.0 && self.example.dt > 0.0 && self.example.dt < self.example.t) {
            return bad("example", "need 0 < dt < t");
        }
        if self.example.paths < 2 {
            return bad("example.paths", "need at least 2 paths");
        }
        Ok(())
    }

    pub fn level_width(&self, dt: f64, beta: f64) -> f64 {
        self.level_width.unwrap_or_else(|| LevelGrid::default_width(dt, beta))
    }

    pub fn oracle(&self, mech: &BranchingMechanism) -> BranchingMechanism {
        mech.with_alpha_offset(self.oracle_alpha_offset)
    }
}

/// The runnable checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    RayKnight,
    Theorem1,
    Tanaka,
    Noise,
    PoissonMarks,
    Reflected,
    Example,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::RayKnight,
        Suite::Theorem1,
        Suite::Tanaka,
        Suite::Noise,
        Suite::PoissonMarks,
        Suite::Reflected,
        Suite::Example,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::RayKnight => "ray-knight",
            Suite::Theorem1 => "theorem1",
            Suite::Tanaka => "tanaka",
            Suite::Noise => "noise",
            Suite::PoissonMarks => "poisson-marks",
            Suite::Reflected => "reflected",
            Suite::Example => "example",
        }
    }

    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Checks the suite's preconditions without simulating anything.
    pub fn precondition(self, mech: &BranchingMechanism, harness: &HarnessConfig) -> Result<(), VerifyError> {
        let need_beta = |check, m: &BranchingMechanism| {
            if m.beta > 0.0 {
                Ok(())
            } else {
                Err(VerifyError::Precondition { check, reason: format!("needs beta > 0, got {}", m.beta) })
            }
        };
        match self {
            Suite::RayKnight => {
                need_beta("ray-knight", mech)?;
                if !mech.grey_holds() {
                    return Err(VerifyError::Precondition {
                        check: "ray-knight",
                        reason: "Grey's condition fails".into(),
                    });
                }
                Ok(())
            }
            Suite::Theorem1 => need_beta("theorem1", mech),
            Suite::Tanaka => need_beta("tanaka", mech),
            Suite::Noise => need_beta("noise", mech),
            Suite::PoissonMarks => {
                let m = harness.marks.mechanism.as_ref().unwrap_or(mech);
                need_beta("poisson-marks", m)?;
                if m.jumps.is_zero() {
                    return Err(VerifyError::Precondition {
                        check: "poisson-marks",
                        reason: "the mechanism has no jumps".into(),
                    });
                }
                Ok(())
            }
            Suite::Reflected => {
                need_beta("reflected", mech)?;
                if let Some(m) = &harness.reflected.jump_mechanism {
                    need_beta("reflected", m)?;
                }
                Ok(())
            }
            Suite::Example => Ok(()),
        }
    }

    pub fn run(
        self,
        mech: &BranchingMechanism,
        sim: &SimConfig,
        harness: &HarnessConfig,
    ) -> Result<MonteCarloReport, VerifyError> {
        harness.validate()?;
        sim.validate()?;
        mech.validate().map_err(PathError::from)?;
        self.precondition(mech, harness)?;
        match self {
            Suite::RayKnight => ray_knight_report(mech, sim, harness),
            Suite::Theorem1 => theorem1_report(mech, sim, harness),
            Suite::Tanaka => tanaka_refinement_study(mech, sim, harness),
            Suite::Noise => white_noise_check(mech, sim, harness),
            Suite::PoissonMarks => {
                poisson_marks_check(harness.marks.mechanism.as_ref().unwrap_or(mech), sim, harness)
            }
            Suite::Reflected => reflected_supremum_check(mech, sim, harness),
            Suite::Example => brownian_example_check(sim, harness),
        }
    }
}

/// Runs `f(i)` for `i in 0..n` on the current rayon pool, in index order.
pub(crate) fn par_map<T: Send, F: Fn(u64) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Mean and standard error of a sample.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    (stats::mean(xs), stats::std_error(xs))
}

pub(crate) fn sim_echo(mech: &BranchingMechanism, sim: &SimConfig, extra: Value) -> Value {
    json!({ "mechanism": mech, "sim": sim, "seed": sim.seed, "extra": extra })
}

/// Cells for a refinement ladder: one informational cell per step, plus a
/// cell asserting strict decrease.
pub(crate) fn refinement_cells(label: &str, dts: &[f64], devs: &[(f64, f64)]) -> Vec<ReportCell> {
    let mut cells: Vec<ReportCell> = dts
        .iter()
        .zip(devs)
        .map(|(dt, (d, se))| ReportCell::new(json!({ "quantity": label, "dt": dt }), *d, 0.0, *se, f64::INFINITY, Rule::Info))
        .collect();
    let worst_ratio = devs.windows(2).map(|w| w[1].0 / w[0].0).fold(0.0, f64::max);
    cells.push(ReportCell::new(
        json!({ "quantity": format!("{label} decreasing"), "dts": dts }),
        worst_ratio,
        0.0,
        0.0,
        1.0,
        Rule::LessThan,
    ));
    cells
}
