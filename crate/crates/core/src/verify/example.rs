use serde_json::json;

use super::{mean_se, par_map, sim_echo, HarnessConfig, MonteCarloReport, ReportCell, Rule, VerifyError};
use crate::exploration::HeightTracker;
use crate::levy_path::{sample_until, SimConfig};
use crate::mechanism::BranchingMechanism;
use crate::quad;
use crate::stats::{self, normal_cdf};

/// CDF of `sup_{s ≤ t} (σB_s + μs)` at `y ≥ 0`.
pub(crate) fn drifted_sup_cdf(y: f64, mu: f64, sigma: f64, t: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let st = sigma * t.sqrt();
    let reflected = (2.0 * mu * y / (sigma * sigma)).exp() * normal_cdf((-y - mu * t) / st);
    (normal_cdf((y - mu * t) / st) - reflected).clamp(0.0, 1.0)
}

/// `H_t` for `ξ_t = -αt + √(2β)B_t` without jumps has the law of `S_t/β`.
/// With `α = 0`, `β = 1/2` this is the law of `2|B_t|`.
pub fn brownian_example_check(sim: &SimConfig, harness: &HarnessConfig) -> Result<MonteCarloReport, VerifyError> {
    let mech = BranchingMechanism::feller(0.0, 0.5);
    let ex = &harness.example;
    let cfg = SimConfig { dt: ex.dt, horizon: ex.t, ..sim.clone() };
    cfg.validate()?;
    let samples: Vec<f64> = par_map(ex.paths, |i| {
        let mut tracker = HeightTracker::new(mech.beta).expect("beta > 0");
        let mut last = 0.0;
        sample_until(&mech, &cfg, i, |path| {
            let cell = path.last_cell().expect("at least one cell");
            tracker.push_cell_light(cell);
            last = tracker.height();
            false
        })
        .expect("validated config");
        last
    });
    let oracle = harness.oracle(&mech);
    let (mu, sigma, beta) = (-oracle.alpha, (2.0 * oracle.beta).sqrt(), oracle.beta);
    let cdf = |h: f64| drifted_sup_cdf(beta * h, mu, sigma, ex.t);
    let ks = stats::ks_distance(&samples, cdf);
    let crit = stats::ks_critical_1pct(samples.len());
    let upper = 40.0 * sigma * ex.t.sqrt() / beta;
    let mean_oracle = quad::integrate(|h| 1.0 - cdf(h), 0.0, upper, 1e-10, 1e-12);
    let (m, se) = mean_se(&samples);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let cells = vec![
        ReportCell::new(json!({"quantity": "ks distance", "t": ex.t}), ks, 0.0, 0.0, crit, Rule::AtMost),
        ReportCell::z_test(json!({"quantity": "mean H_t", "t": ex.t}), m, mean_oracle, se, 3.0, 0.0),
        ReportCell::new(json!({"quantity": "min H_t"}), min, 0.0, 0.0, 0.0, Rule::AtLeast),
    ];
    let config = sim_echo(&mech, &cfg, json!({"t": ex.t}));
    Ok(MonteCarloReport::new("example", ex.paths, cells, 0, config))
}
