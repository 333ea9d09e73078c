use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{mean_se, par_map, sim_echo, HarnessConfig, MonteCarloReport, ReportCell, Rule, VerifyError};
use crate::exploration::HeightTracker;
use crate::levy_path::{sample_until, SimConfig};
use crate::local_time::LevelGrid;
use crate::mechanism::BranchingMechanism;
use crate::stats;

/// Piecewise-constant `f(s, u)` on the rectangles
/// `(a_i, a_{i+1}] × (u_j, u_{j+1}]`, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionSpec {
    pub a_edges: Vec<f64>,
    pub u_edges: Vec<f64>,
    /// `values[i][j]` on rectangle `(i, j)`.
    pub values: Vec<Vec<f64>>,
}

impl TestFunctionSpec {
    /// `1` on `(0, a] × (0, u_max]`.
    pub fn indicator(a: f64, u_max: f64) -> Self {
        Self { a_edges: vec![0.0, a], u_edges: vec![0.0, u_max], values: vec![vec![1.0]] }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |reason: &str| Err(VerifyError::Config { field: "noise.test_function", reason: reason.into() });
        let sorted = |e: &[f64]| e.len() >= 2 && e[0] >= 0.0 && e.windows(2).all(|w| w[0] < w[1]) && e.iter().all(|v| v.is_finite());
        if !sorted(&self.a_edges) || !sorted(&self.u_edges) {
            return bad("edges must be finite, nonnegative and strictly increasing");
        }
        if self.values.len() != self.a_edges.len() - 1
            || self.values.iter().any(|r| r.len() != self.u_edges.len() - 1 || r.iter().any(|v| !v.is_finite()))
        {
            return bad("values must be a finite (a-bins × u-bins) matrix");
        }
        Ok(())
    }

    fn locate(edges: &[f64], v: f64) -> Option<usize> {
        if v <= edges[0] || v > *edges.last().unwrap() {
            return None;
        }
        Some(edges.partition_point(|&e| e < v) - 1)
    }

    pub fn eval(&self, s: f64, u: f64) -> f64 {
        match (Self::locate(&self.a_edges, s), Self::locate(&self.u_edges, u)) {
            (Some(i), Some(j)) => self.values[i][j],
            _ => 0.0,
        }
    }

    /// `∫∫ f(s, u)² ds du`.
    pub fn l2_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                acc += v * v * (self.a_edges[i + 1] - self.a_edges[i]) * (self.u_edges[j + 1] - self.u_edges[j]);
            }
        }
        acc
    }

    pub fn a_max(&self) -> f64 {
        *self.a_edges.last().unwrap()
    }

    pub fn u_max(&self) -> f64 {
        *self.u_edges.last().unwrap()
    }
}

/// A box `(a0, a1] × (z0, z1] × (u0, u1]` in (height, jump size, local time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkBox {
    pub a: [f64; 2],
    pub z: [f64; 2],
    pub u: [f64; 2],
}

impl MarkBox {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let ok = |r: [f64; 2]| r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite();
        if ok(self.a) && ok(self.z) && ok(self.u) {
            Ok(())
        } else {
            Err(VerifyError::Config { field: "marks.boxes", reason: format!("bad box {self:?}") })
        }
    }

    fn contains(&self, h: f64, z: f64, u: f64) -> bool {
        let inside = |r: [f64; 2], v: f64| v > r[0] && v <= r[1];
        inside(self.a, h) && inside(self.z, z) && inside(self.u, u)
    }

    pub fn intensity(&self, mech: &BranchingMechanism) -> f64 {
        (self.a[1] - self.a[0]) * mech.jumps.mass_between(self.z[0], self.z[1]) * (self.u[1] - self.u[0])
    }
}

/// Bins of width close to the default that tile `(0, top]` exactly.
fn tiling_grid(top: f64, dt: f64, harness: &HarnessConfig, beta: f64) -> LevelGrid {
    let target = harness.level_width(dt, beta);
    let bins = ((top / target).round() as usize).max(1);
    LevelGrid::new(0.0, top / bins as f64, bins).expect("positive width")
}

/// Reconstructs the Brownian increments of each path from `ξ` (using the
/// oracle's drift and diffusion coefficient) and evaluates
/// `Ŵ = Σ 1_{H_s ≤ a} f(H_s, L̂_s(H_s)) ΔB_s`, running every path until each
/// level in `(0, a]` has accumulated local time beyond the support of `f`.
pub fn white_noise_check(
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
) -> Result<MonteCarloReport, VerifyError> {
    let spec = &harness.noise.test_function;
    let grid = tiling_grid(spec.a_max(), sim.dt, harness, mech.beta);
    let u_max = spec.u_max();
    let oracle = harness.oracle(mech);
    let t_oracle = oracle.truncated(sim.truncation_delta, false);
    let drift_o = -t_oracle.alpha - t_oracle.jumps.first_moment_above(0.0);
    let g_o = (2.0 * t_oracle.beta).sqrt();
    let w = grid.width;

    let results: Vec<Option<f64>> = par_map(harness.paths, |i| {
        let mut tracker = HeightTracker::new(mech.beta).expect("beta > 0");
        let mut prof = vec![0.0; grid.bins];
        let mut covered = 0usize;
        let mut terms = Vec::new();
        let (_, done) = sample_until(mech, sim, i, |path| {
            let cell = path.last_cell().expect("at least one cell");
            let hk = tracker.height();
            if let Some(b) = grid.bin_of(hk) {
                let u = prof[b] + 0.5 * cell.duration / w;
                let f = spec.eval(hk, u);
                if f != 0.0 {
                    let cont = cell.end_value - cell.start_value - cell.jump_total();
                    terms.push(f * (cont - drift_o * cell.duration) / g_o);
                }
                let before = prof[b];
                prof[b] += cell.duration / w;
                if before < u_max && prof[b] >= u_max {
                    covered += 1;
                }
            }
            tracker.push_cell(cell, path.time(cell.index + 1));
            covered == grid.bins
        })
        .expect("validated config");
        done.then(|| stats::sum(terms))
    });
    let samples: Vec<f64> = results.iter().flatten().copied().collect();
    let discarded = harness.paths - samples.len();
    let m = samples.len();
    let mo = stats::moments(&samples);
    let var_oracle = spec.l2_norm_sq();
    let se_mean = (mo.variance / m as f64).sqrt();
    let skew_tol = 3.0 * (6.0 / m as f64).sqrt();
    let kurt_tol = 3.0 * (24.0 / m as f64).sqrt();
    let cells = vec![
        ReportCell::z_test(json!({"quantity": "mean"}), mo.mean, 0.0, se_mean, 3.0, 0.0),
        ReportCell::z_test(json!({"quantity": "variance"}), mo.variance, var_oracle, mo.variance_se, 3.0, harness.noise.variance_budget),
        ReportCell::new(json!({"quantity": "|skewness|"}), mo.skewness.abs(), 0.0, (6.0 / m as f64).sqrt(), skew_tol, Rule::AtMost),
        ReportCell::new(json!({"quantity": "|excess kurtosis|"}), mo.excess_kurtosis.abs(), 0.0, (24.0 / m as f64).sqrt(), kurt_tol, Rule::AtMost),
    ];
    let config = sim_echo(mech, sim, json!({"level_width": w, "test_function": spec}));
    let mut report = MonteCarloReport::new("noise", harness.paths, cells, discarded, config);
    if discarded > 0 {
        report.warn(format!("{discarded} paths did not cover the test function support before the horizon"));
    }
    if discarded as f64 > harness.max_discard_fraction * harness.paths as f64 {
        report.invalidate(format!("coverage failed on {discarded} of {} paths", harness.paths));
    }
    Ok(report)
}

struct MarkCounts {
    per_box: Vec<f64>,
    jumps_before_hit: f64,
}

/// Counts the marks `(H_{t_i}, z_i, L̂_{t_i}(H_{t_i}))` in each box and
/// compares with the intensity `ds π(dz) du`. Paths run until they have hit
/// `-x` and every level under the boxes has local time beyond the boxes'
/// `u`-ranges.
pub fn poisson_marks_check(
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
) -> Result<MonteCarloReport, VerifyError> {
    let boxes = &harness.marks.boxes;
    if boxes.is_empty() {
        return Err(VerifyError::Config { field: "marks.boxes", reason: "need at least one box".into() });
    }
    if boxes.iter().any(|b| b.z[0] < sim.truncation_delta) {
        return Err(VerifyError::Precondition {
            check: "poisson-marks",
            reason: "box z-ranges must lie above the truncation level".into(),
        });
    }
    let top = boxes.iter().map(|b| b.a[1]).fold(0.0, f64::max);
    let u_top = boxes.iter().map(|b| b.u[1]).fold(0.0, f64::max);
    let grid = tiling_grid(top.max(sim.dt), sim.dt, harness, mech.beta);
    let w = grid.width;
    let x = harness.x;

    let results: Vec<Option<MarkCounts>> = par_map(harness.paths, |i| {
        let mut tracker = HeightTracker::new(mech.beta).expect("beta > 0");
        let mut prof = vec![0.0; grid.bins];
        let mut covered = 0usize;
        let mut counts = vec![0.0; boxes.len()];
        let mut seen_jumps = 0usize;
        let mut hit_jumps: Option<usize> = None;
        let (_, done) = sample_until(mech, sim, i, |path| {
            let cell = path.last_cell().expect("at least one cell");
            let bk = grid.bin_of(tracker.height());
            let first = tracker.jump_heights().len();
            tracker.push_cell(cell, path.time(cell.index + 1));
            for (j, jr) in cell.jumps.iter().enumerate() {
                let hj = tracker.jump_heights()[first + j];
                let u = match grid.bin_of(hj) {
                    Some(b) => prof[b] + if Some(b) == bk { jr.offset / w } else { 0.0 },
                    None => 0.0,
                };
                for (c, bx) in counts.iter_mut().zip(boxes) {
                    if bx.contains(hj, jr.size, u) {
                        *c += 1.0;
                    }
                }
            }
            seen_jumps += cell.jumps.len();
            if let Some(b) = bk {
                let before = prof[b];
                prof[b] += cell.duration / w;
                if before < u_top && prof[b] >= u_top {
                    covered += 1;
                }
            }
            if hit_jumps.is_none() && cell.end_value <= -x {
                hit_jumps = Some(seen_jumps);
            }
            covered == grid.bins && hit_jumps.is_some()
        })
        .expect("validated config");
        done.then(|| MarkCounts { per_box: counts, jumps_before_hit: hit_jumps.unwrap_or(0) as f64 })
    });
    let kept: Vec<&MarkCounts> = results.iter().flatten().collect();
    let m = kept.len();
    let discarded = harness.paths - m;
    let coverage = m as f64 / harness.paths as f64;
    let mut cells = Vec::new();
    for (j, bx) in boxes.iter().enumerate() {
        let col: Vec<f64> = kept.iter().map(|k| k.per_box[j]).collect();
        let (mean, se) = mean_se(&col);
        let oracle = bx.intensity(mech);
        let params = |q: &str| json!({"box": bx, "quantity": q});
        cells.push(ReportCell::z_test(params("mean count"), mean, oracle, se, 3.0, 0.0));
        let fano = if mean > 0.0 { stats::variance(&col) / mean } else { f64::NAN };
        let fano_se = (2.0 / (m as f64 - 1.0)).sqrt();
        cells.push(ReportCell::new(params("fano"), fano, 1.0, fano_se, harness.marks.fano_tolerance, Rule::AbsDiff));
        cells.push(ReportCell::new(params("coverage"), coverage, 1.0, 0.0, harness.marks.min_coverage, Rule::AtLeast));
    }
    let oracle = harness.oracle(mech);
    let rate = mech.jumps.mass_above(sim.truncation_delta);
    let wald: Vec<f64> = kept.iter().map(|k| k.jumps_before_hit).collect();
    let (mean, se) = mean_se(&wald);
    let target = rate * x / oracle.alpha;
    cells.push(ReportCell::z_test(json!({"quantity": "jumps before T_x"}), mean, target, se, 3.0, harness.budget_mean));
    let config = sim_echo(mech, sim, json!({"x": x, "level_width": w, "boxes": boxes}));
    let mut report = MonteCarloReport::new("poisson-marks", harness.paths, cells, discarded, config);
    if coverage < harness.marks.min_coverage {
        report.warn(format!("coverage {coverage:.3} below {}: boxes unreliable", harness.marks.min_coverage));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_lookup() {
        let f = TestFunctionSpec {
            a_edges: vec![0.0, 0.5, 1.0],
            u_edges: vec![0.0, 2.0],
            values: vec![vec![1.0], vec![3.0]],
        };
        f.validate().unwrap();
        assert_eq!(f.eval(0.25, 1.0), 1.0);
        assert_eq!(f.eval(0.75, 2.0), 3.0);
        assert_eq!(f.eval(0.0, 1.0), 0.0);
        assert_eq!(f.eval(0.75, 2.5), 0.0);
        assert!((f.l2_norm_sq() - (0.5 * 2.0 + 9.0 * 0.5 * 2.0)).abs() < 1e-12);
        assert_eq!(TestFunctionSpec::indicator(1.0, 1.0).l2_norm_sq(), 1.0);
        let bad = TestFunctionSpec { values: vec![vec![1.0, 2.0]], ..TestFunctionSpec::indicator(1.0, 1.0) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn box_intensity() {
        let mech = BranchingMechanism::new(0.5, 0.5, crate::mechanism::JumpMeasureSpec::single_atom(1.0, 1.0)).unwrap();
        let b = MarkBox { a: [0.0, 1.0], z: [0.5, 1.5], u: [0.0, 1.0] };
        assert_eq!(b.intensity(&mech), 1.0);
        let empty = MarkBox { z: [2.0, 3.0], ..b };
        assert_eq!(empty.intensity(&mech), 0.0);
        assert!(b.contains(0.5, 1.0, 0.5));
        assert!(!b.contains(0.0, 1.0, 0.5));
    }
}
