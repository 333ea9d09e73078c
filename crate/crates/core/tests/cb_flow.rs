use cbheight_core::stats;
use cbheight_core::{simulate_cb, simulate_flow, BranchingMechanism, JumpMeasureSpec, SimConfig};

fn jump_mech() -> BranchingMechanism {
    BranchingMechanism::new(0.5, 0.5, JumpMeasureSpec::single_atom(1.0, 0.5)).unwrap()
}

fn within(stat: f64, oracle: f64, se: f64, budget: f64) -> bool {
    (stat - oracle).abs() <= 3.0 * se + budget * oracle.abs()
}

#[test]
fn cb_mean_and_laplace() {
    for m in [BranchingMechanism::feller(0.5, 1.0), jump_mech()] {
        let cfg = SimConfig::new(1e-3, 1.0, 21);
        let xs: Vec<f64> = (0..4000).map(|i| simulate_cb(&m, 1.0, &cfg, i).unwrap().value_at(1.0)).collect();
        let (mean, se) = (stats::mean(&xs), stats::std_error(&xs));
        let target = m.cb_mean(1.0, 1.0).unwrap();
        assert!(within(mean, target, se, 0.02), "mean {mean} vs {target}");
        for lam in [0.5, 1.0, 2.0] {
            let e: Vec<f64> = xs.iter().map(|x| (-lam * x).exp()).collect();
            let (le, lse) = (stats::mean(&e), stats::std_error(&e));
            let exact = m.cb_laplace(1.0, 1.0, lam).unwrap();
            assert!(within(le, exact, lse, 0.02), "lambda {lam}: {le} vs {exact}");
        }
        assert!(xs.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn flow_increments_have_cb_law_and_are_independent() {
    let m = jump_mech();
    let cfg = SimConfig::new(1e-3, 0.5, 22);
    let (lam, t) = (1.0, 0.5);
    let rows: Vec<(f64, f64)> = (0..4000)
        .map(|i| {
            let f = simulate_flow(&m, &[1.0, 1.5], &cfg, i).unwrap();
            let (lo, hi) = (f.trajectories[0].value_at(t), f.trajectories[1].value_at(t));
            assert!(hi >= lo, "flow must stay ordered");
            (lo, hi - lo)
        })
        .collect();
    let inc: Vec<f64> = rows.iter().map(|r| (-lam * r.1).exp()).collect();
    let (m_inc, se) = (stats::mean(&inc), stats::std_error(&inc));
    let exact = m.cb_laplace(0.5, t, lam).unwrap();
    assert!(within(m_inc, exact, se, 0.02), "{m_inc} vs {exact}");

    let lo: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (ml, md) = (stats::mean(&lo), stats::mean(&d));
    let cov: Vec<f64> = rows.iter().map(|r| (r.0 - ml) * (r.1 - md)).collect();
    let (c, cse) = (stats::mean(&cov), stats::std_error(&cov));
    assert!(c.abs() <= 4.0 * cse, "covariance {c} se {cse}");
}

#[test]
fn single_mass_flow_is_simulate_cb() {
    let m = jump_mech();
    let cfg = SimConfig::new(1e-2, 2.0, 23);
    let a = simulate_cb(&m, 0.7, &cfg, 3).unwrap();
    let b = simulate_flow(&m, &[0.7], &cfg, 3).unwrap();
    assert_eq!(a, b.trajectories[0]);
}
