use serde_json::json;

use super::{par_map, refinement_cells, sim_echo, HarnessConfig, MonteCarloReport, ReportCell, Rule, VerifyError};
use crate::levy_path::{sample_path_indexed, LevyPath, PathEvent, SimConfig};
use crate::mechanism::BranchingMechanism;
use crate::rng::{self, PathRng, Purpose};
use crate::stats;

/// Supremum of `ξ` on `[0, horizon]` with the maximum of every continuous
/// piece drawn from its Brownian bridge, and the sum of the supremum jumps
/// `ΔS_{t_i} = (ξ_{t_i} - S_{t_i-})^+` computed against that supremum.
/// Returns `(S_t, Σ ΔS_{t_i})`.
pub fn bridge_supremum(path: &LevyPath, rng: &mut PathRng) -> (f64, f64) {
    let (running, jumps) = bridge_running_supremum(path, rng);
    (*running.last().expect("nonempty path"), jumps)
}

/// As [`bridge_supremum`], but returns the running supremum at every grid
/// time instead of only the final value.
pub fn bridge_running_supremum(path: &LevyPath, rng: &mut PathRng) -> (Vec<f64>, f64) {
    let g2 = path.gaussian_coeff() * path.gaussian_coeff();
    let mut sup = path.values()[0].max(0.0);
    let mut running = Vec::with_capacity(path.num_cells() + 1);
    running.push(sup);
    let mut jumps = Vec::new();
    for cell in path.cells() {
        let mut piece = |from: f64, to: f64, duration: f64, sup: &mut f64| {
            let top = if g2 > 0.0 && duration > 0.0 {
                let u = crate::levy_path::open_unit(rng);
                let d = to - from;
                0.5 * (from + to + (d * d - 2.0 * g2 * duration * u.ln()).sqrt())
            } else {
                from.max(to)
            };
            *sup = sup.max(top);
        };
        if cell.jumps.is_empty() {
            piece(cell.start_value, cell.end_value, cell.duration, &mut sup);
            running.push(sup);
            continue;
        }
        for ev in cell.events() {
            match ev {
                PathEvent::Continuous { from, to, duration } => piece(from, to, duration, &mut sup),
                PathEvent::Jump { size, pre, .. } => {
                    let post = pre + size;
                    jumps.push((post - sup).max(0.0));
                    sup = sup.max(post);
                }
            }
        }
        running.push(sup);
    }
    (running, stats::sum(jumps))
}

/// Occupation estimate of `β·L_t(0, R)` with bin `[0, eps]`, where
/// `R = S - ξ` on the grid for the supplied running supremum `sup`.
pub fn reflected_occupation(path: &LevyPath, sup: &[f64], beta: f64, eps: f64) -> f64 {
    let r: Vec<f64> = sup.iter().zip(path.values()).map(|(s, v)| s - v).collect();
    let occ = stats::sum((0..path.num_cells()).filter(|&k| r[k] <= eps).map(|k| path.cell_duration(k)));
    beta * occ / eps
}

struct Leg {
    name: &'static str,
    devs: Vec<(f64, f64)>,
    xi_end: Vec<f64>,
}

fn run_leg(name: &'static str, mech: &BranchingMechanism, sim: &SimConfig, harness: &HarnessConfig) -> Leg {
    let t = harness.reflected.t;
    let mut devs = Vec::new();
    let mut xi_end = Vec::new();
    for &dt in &harness.dts {
        let cfg = SimConfig { dt, horizon: t, ..sim.clone() };
        let eps = dt.cbrt();
        let rows: Vec<(f64, f64, f64)> = par_map(harness.paths, |i| {
            let path = sample_path_indexed(mech, &cfg, i).expect("validated config");
            let mut rng = rng::stream(cfg.seed, Purpose::BridgeMaxima, i);
            let (sup, jumps) = bridge_running_supremum(&path, &mut rng);
            let s = *sup.last().expect("nonempty path");
            (reflected_occupation(&path, &sup, mech.beta, eps), s - jumps, path.final_value())
        });
        let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let diff: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
        let scale = stats::mean(&rhs);
        let rel = (stats::mean(&lhs) - scale).abs() / scale;
        devs.push((rel, stats::std_error(&diff) / scale));
        xi_end = rows.iter().map(|r| r.2).collect();
    }
    Leg { name, devs, xi_end }
}

/// `βL̂_t(0, R)` against `S_t - Σ ΔS_{t_i}` along the step ladder, for the
/// main mechanism and optionally a second one with jumps. The deviation is
/// the relative gap between the Monte Carlo means.
pub fn reflected_supremum_check(
    mech: &BranchingMechanism,
    sim: &SimConfig,
    harness: &HarnessConfig,
) -> Result<MonteCarloReport, VerifyError> {
    let mut legs = vec![run_leg("main", mech, sim, harness)];
    if let Some(j) = &harness.reflected.jump_mechanism {
        legs.push(run_leg("jumps", j, sim, harness));
    }
    let t = harness.reflected.t;
    let mut cells = Vec::new();
    for (leg, m) in legs.iter().zip([Some(mech), harness.reflected.jump_mechanism.as_ref()]) {
        let m = m.expect("leg has a mechanism");
        let label = format!("{}: relative bias of beta*L(0,R)", leg.name);
        cells.extend(refinement_cells(&label, &harness.dts, &leg.devs));
        let (fin, se) = *leg.devs.last().expect("nonempty ladder");
        cells.push(ReportCell::new(
            json!({"leg": leg.name, "quantity": "relative bias at finest dt"}),
            fin,
            0.0,
            se,
            harness.reflected.budget,
            Rule::AtMost,
        ));
        let (mean, se) = (stats::mean(&leg.xi_end), stats::std_error(&leg.xi_end));
        let target = -harness.oracle(m).alpha * t;
        cells.push(ReportCell::z_test(json!({"leg": leg.name, "quantity": "mean xi_t", "t": t}), mean, target, se, 3.0, 0.0));
    }
    let config = sim_echo(mech, sim, json!({"t": t, "dts": harness.dts, "jump_mechanism": harness.reflected.jump_mechanism}));
    Ok(MonteCarloReport::new("reflected", harness.paths, cells, 0, config))
}
