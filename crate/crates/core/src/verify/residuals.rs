use serde_json::json;

use super::{mean_se, par_map, refinement_cells, sim_echo, HarnessConfig, MonteCarloReport, ReportCell, Rule, VerifyError};
use crate::exploration::{height_trajectory, HeightTrajectory};
use crate::levy_path::{sample_until_hit, LevyPath, SimConfig};
use crate::local_time::{hitting_integral, occupation_profile, tanaka_local_time, LevelGrid, LevelKernel, TanakaVariant};
use crate::mechanism::BranchingMechanism;

/// Occupation estimate over the bin `(a, a + width]` at the end of the path.
fn bin_estimate(h: &HeightTrajectory, a: f64, width: f64) -> f64 {
    let grid = LevelGrid::new(a, width, 1).expect("positive width");
    occupation_profile(h, &grid, h.len() - 1)[0]
}

/// `L̂_{T_x}(t) - x - ∫_0^{T_x} 1_{H_s ≤ t} dξ_s` for each level, on a path
/// stopped at `T_x`. Both sides are averaged over the level bin
/// `(t, t + width]`, which is what the occupation estimator measures.
pub fn theorem1_residual(stopped: &LevyPath, h: &HeightTrajectory, x: f64, levels: &[f64], width: f64) -> Vec<f64> {
    levels
        .iter()
        .map(|&a| bin_estimate(h, a, width) - hitting_integral(stopped, h, LevelKernel::Window { a, width }, x))
        .collect()
}

struct LadderStep {
    dt: f64,
    width: f64,
    discarded: usize,
    /// per kept path: (mean |deviation| over levels, sharp-level statistic per level)
    rows: Vec<(f64, Vec<f64>)>,
    worst_identity: f64,
}

fn run_ladder<F>(mech: &BranchingMechanism, sim: &SimConfig, harness: &HarnessConfig, per_path: F) -> Vec<LadderStep>
where
    F: Fn(&LevyPath, &HeightTrajectory, f64) -> (f64, Vec<f64>, f64) + Sync + Send,
{
    harness
        .dts
        .iter()
        .map(|&dt| {
            let cfg = SimConfig { dt, ..sim.clone() };
            let width = harness.level_width(dt, mech.beta);
            let results: Vec<Option<(f64, Vec<f64>, f64)>> = par_map(harness.paths, |i| {
                let path = sample_until_hit(mech, &cfg, i, harness.x).expect("validated config")?;
                let h = height_trajectory(&path, mech.beta).expect("beta > 0");
                Some(per_path(&path, &h, width))
            });
            let kept: Vec<(f64, Vec<f64>, f64)> = results.into_iter().flatten().collect();
            let discarded = harness.paths - kept.len();
            let worst_identity = kept.iter().map(|r| r.2).fold(0.0, f64::max);
            LadderStep { dt, width, discarded, rows: kept.into_iter().map(|(d, s, _)| (d, s)).collect(), worst_identity }
        })
        .collect()
}

fn finish(
    check: &str,
    label: &str,
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
    steps: &[LadderStep],
    mut extra_cells: Vec<ReportCell>,
) -> MonteCarloReport {
    let devs: Vec<(f64, f64)> = steps
        .iter()
        .map(|s| mean_se(&s.rows.iter().map(|r| r.0).collect::<Vec<_>>()))
        .collect();
    let mut cells = refinement_cells(label, &harness.dts, &devs);
    cells.append(&mut extra_cells);

    // α-sensitive cells at the finest step: the sharp-level statistics have
    // mean E[L_{T_x}(a)] = x e^{-αa}.
    let oracle = harness.oracle(mech);
    let finest = steps.last().expect("nonempty ladder");
    for (j, &a) in harness.levels.iter().enumerate() {
        let col: Vec<f64> = finest.rows.iter().map(|r| r.1[j]).collect();
        let (m, se) = mean_se(&col);
        let target = oracle.cb_mean(harness.x, a).unwrap_or(f64::NAN);
        cells.push(ReportCell::z_test(json!({"quantity": "sharp-level mean", "a": a, "dt": finest.dt}), m, target, se, 3.0, harness.budget_mean));
    }
    let discarded: usize = steps.iter().map(|s| s.discarded).sum();
    let config = sim_echo(
        mech,
        sim,
        json!({"x": harness.x, "levels": harness.levels, "dts": harness.dts,
               "level_widths": steps.iter().map(|s| s.width).collect::<Vec<_>>()}),
    );
    let mut report = MonteCarloReport::new(check, harness.paths, cells, discarded, config);
    for s in steps {
        if s.discarded as f64 > harness.max_discard_fraction * harness.paths as f64 {
            report.invalidate(format!("dt={}: {} paths did not reach -x", s.dt, s.discarded));
        } else if s.discarded > 0 {
            report.warn(format!("dt={}: {} paths did not reach -x", s.dt, s.discarded));
        }
    }
    report
}

/// Local time identity residual study along the step ladder: mean absolute residual
/// must decrease strictly and end below `residual_budget · x`.
pub fn theorem1_report(
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
) -> Result<MonteCarloReport, VerifyError> {
    let x = harness.x;
    let levels = harness.levels.clone();
    let steps = run_ladder(mech, sim, harness, |path, h, width| {
        let res = theorem1_residual(path, h, x, &levels, width);
        let mean_abs = res.iter().map(|r| r.abs()).sum::<f64>() / res.len() as f64;
        let sharp = levels.iter().map(|&a| hitting_integral(path, h, LevelKernel::Point { a }, x)).collect();
        (mean_abs, sharp, 0.0)
    });
    let finest = steps.last().expect("nonempty ladder");
    let (m, se) = mean_se(&finest.rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let bound = ReportCell::new(
        json!({"quantity": "mean |residual| at finest dt", "dt": finest.dt}),
        m,
        0.0,
        se,
        harness.residual_budget * x,
        Rule::AtMost,
    );
    Ok(finish("theorem1", "mean |residual|", mech, sim, harness, &steps, vec![bound]))
}

/// Tanaka (plus form) against the occupation estimator along the step
/// ladder, plus the pathwise plus/minus identity.
pub fn tanaka_refinement_study(
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
) -> Result<MonteCarloReport, VerifyError> {
    let beta = mech.beta;
    let levels = harness.levels.clone();
    let steps = run_ladder(mech, sim, harness, |path, h, width| {
        let n = path.num_cells();
        let mut dev = 0.0;
        let mut identity: f64 = 0.0;
        let mut sharp = Vec::with_capacity(levels.len());
        for &a in &levels {
            let kernel = LevelKernel::Window { a, width };
            let plus = tanaka_local_time(path, h, kernel, n, TanakaVariant::Plus, beta);
            let minus = tanaka_local_time(path, h, kernel, n, TanakaVariant::Minus, beta);
            dev += (plus - bin_estimate(h, a, width)).abs();
            identity = identity.max((plus - minus).abs());
            let point = LevelKernel::Point { a };
            let p = tanaka_local_time(path, h, point, n, TanakaVariant::Plus, beta);
            let q = tanaka_local_time(path, h, point, n, TanakaVariant::Minus, beta);
            identity = identity.max((p - q).abs());
            sharp.push(p);
        }
        (dev / levels.len() as f64, sharp, identity)
    });
    let worst = steps.iter().map(|s| s.worst_identity).fold(0.0, f64::max);
    let identity = ReportCell::new(json!({"quantity": "max |plus - minus|"}), worst, 0.0, 0.0, 1e-9, Rule::AtMost);
    Ok(finish("tanaka", "mean |tanaka - occupation|", mech, sim, harness, &steps, vec![identity]))
}
