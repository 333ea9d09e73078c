use serde_json::json;

use super::{mean_se, par_map, sim_echo, HarnessConfig, MonteCarloReport, ReportCell, VerifyError};
use crate::cb_flow::simulate_cb;
use crate::exploration::height_trajectory;
use crate::levy_path::{sample_until_hit, SimConfig};
use crate::mechanism::BranchingMechanism;
use crate::stats;

/// Occupation estimate of `L_t(a)` from a bin of width `width` centred on `a`
/// (shifted up to `(0, width]` near the origin).
pub(crate) fn centred_bin_estimate(heights: &[f64], times: &[f64], a: f64, width: f64) -> f64 {
    let lo = (a - 0.5 * width).max(0.0);
    let hi = lo + width;
    let occ = stats::sum(
        (0..heights.len() - 1).filter(|&k| heights[k] > lo && heights[k] <= hi).map(|k| times[k + 1] - times[k]),
    );
    occ / width
}

/// Compares `a ↦ L̂_{T_x}(a)` with the CB-process started at `x`: empirical
/// Laplace transforms and means from the height side and from Euler CB runs,
/// against `e^{-x v_a(λ)}` and `x e^{-αa}`.
pub fn ray_knight_report(
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
) -> Result<MonteCarloReport, VerifyError> {
    let x = harness.x;
    let m = harness.paths;
    let width = harness.level_width(sim.dt, mech.beta);
    let levels = &harness.levels;
    let oracle = harness.oracle(mech);

    let height_side: Vec<Option<Vec<f64>>> = par_map(m, |i| {
        let path = sample_until_hit(mech, sim, i, x).expect("validated config")?;
        let h = height_trajectory(&path, mech.beta).expect("beta > 0");
        Some(levels.iter().map(|&a| centred_bin_estimate(&h.heights, h.times(), a, width)).collect())
    });
    let max_level = levels.iter().copied().fold(0.0, f64::max);
    let cb_sim = SimConfig { horizon: max_level.max(sim.dt * 2.0), ..sim.clone() };
    let cb_side: Vec<Vec<f64>> = par_map(m, |i| {
        let tr = simulate_cb(mech, x, &cb_sim, i).expect("validated config");
        levels.iter().map(|&a| tr.value_at(a)).collect()
    });

    let kept: Vec<&Vec<f64>> = height_side.iter().flatten().collect();
    let discarded = m - kept.len();
    let mut cells = Vec::new();
    for (j, &a) in levels.iter().enumerate() {
        let lh: Vec<f64> = kept.iter().map(|v| v[j]).collect();
        let lc: Vec<f64> = cb_side.iter().map(|v| v[j]).collect();
        for &lam in &harness.lambdas {
            let exact = oracle.cb_laplace(x, a, lam).map_err(crate::levy_path::PathError::from)?;
            let eh: Vec<f64> = lh.iter().map(|l| (-lam * l).exp()).collect();
            let ec: Vec<f64> = lc.iter().map(|l| (-lam * l).exp()).collect();
            let (mh, sh) = mean_se(&eh);
            let (mc, sc) = mean_se(&ec);
            let b = harness.budget_laplace;
            cells.push(ReportCell::z_test(json!({"side": "height", "a": a, "lambda": lam}), mh, exact, sh, 3.0, b));
            cells.push(ReportCell::z_test(json!({"side": "cb", "a": a, "lambda": lam}), mc, exact, sc, 3.0, b));
            let se = sh.hypot(sc);
            let mut cross = ReportCell::z_test(json!({"side": "height-vs-cb", "a": a, "lambda": lam}), mh, mc, se, 3.0, 0.0);
            cross.tol += b * exact;
            cross.pass = (mh - mc).abs() <= cross.tol;
            cells.push(cross);
        }
        let mean_oracle = oracle.cb_mean(x, a).map_err(crate::levy_path::PathError::from)?;
        let (mh, sh) = mean_se(&lh);
        let (mc, sc) = mean_se(&lc);
        let b = harness.budget_mean;
        cells.push(ReportCell::z_test(json!({"side": "height", "a": a, "quantity": "mean"}), mh, mean_oracle, sh, 3.0, b));
        cells.push(ReportCell::z_test(json!({"side": "cb", "a": a, "quantity": "mean"}), mc, mean_oracle, sc, 3.0, b));
    }
    let config = sim_echo(mech, sim, json!({"x": x, "level_width": width, "levels": levels, "lambdas": harness.lambdas}));
    let mut report = MonteCarloReport::new("ray-knight", m, cells, discarded, config);
    if discarded > 0 {
        report.warn(format!("{discarded} of {m} paths did not reach -x before the horizon"));
    }
    if discarded as f64 > harness.max_discard_fraction * m as f64 {
        report.invalidate(format!("discard rate {:.3} exceeds {}", discarded as f64 / m as f64, harness.max_discard_fraction));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_bin_shifts_at_origin() {
        let heights = [0.05, 0.15, 0.25, 0.0];
        let times = [0.0, 1.0, 2.0, 3.0];
        assert!((centred_bin_estimate(&heights, &times, 0.0, 0.1) - 10.0).abs() < 1e-12);
        assert!((centred_bin_estimate(&heights, &times, 0.2, 0.1) - 10.0).abs() < 1e-12);
        assert_eq!(centred_bin_estimate(&heights, &times, 1.0, 0.1), 0.0);
    }
}
