use cbheight_core::exploration::height_brute_force;
use cbheight_core::levy_path::sample_path_indexed;
use cbheight_core::local_time::{
    occupation_profile, tanaka_local_time, LevelGrid, LevelKernel, TanakaVariant,
};
use cbheight_core::mechanism::Atom;
use cbheight_core::{height_trajectory, BranchingMechanism, ExplorationStack, JumpMeasureSpec, PowerLaw, SimConfig};
use proptest::prelude::*;

fn mixed() -> BranchingMechanism {
    BranchingMechanism::new(
        0.3,
        0.5,
        JumpMeasureSpec {
            atoms: vec![Atom { z: 0.4, w: 2.0 }],
            power_law: Some(PowerLaw { c: 0.5, sigma: 1.5, z_min: 0.01, z_max: Some(5.0) }),
        },
    )
    .unwrap()
}

#[test]
fn stack_matches_brute_force() {
    for (m, seed) in [(BranchingMechanism::feller(0.5, 1.0), 1u64), (mixed(), 2)] {
        let cfg = SimConfig::new(1e-3, 0.5, seed);
        for i in 0..20 {
            let p = sample_path_indexed(&m, &cfg, i).unwrap();
            let h = height_trajectory(&p, m.beta).unwrap();
            for n in 0..=p.num_cells() {
                let b = height_brute_force(&p, m.beta, n);
                assert!((h.heights[n] - b).abs() < 1e-9, "path {i} point {n}: {} vs {b}", h.heights[n]);
            }
        }
    }
}

#[test]
fn concatenation_decomposition() {
    // ρ_{s+t} = [k_{-I} ρ_s, ρ^{(s)}_t] with I the infimum of the shifted path
    let m = mixed();
    let cfg = SimConfig::new(1e-3, 1.0, 3);
    for i in 0..50 {
        let p = sample_path_indexed(&m, &cfg, i).unwrap();
        let s = p.time(400);
        let (pre, suf) = (p.prefix(s).unwrap(), p.suffix(s).unwrap());

        let mut whole = ExplorationStack::new(m.beta).unwrap();
        whole.run(&p, p.num_cells());
        let mut lower = ExplorationStack::new(m.beta).unwrap();
        lower.run(&pre, pre.num_cells());
        let mut upper = ExplorationStack::new(m.beta).unwrap();
        upper.run(&suf, suf.num_cells());
        let inf = suf.running_infimum(0.0, suf.horizon()).unwrap().min(0.0);
        let joined = ExplorationStack::concatenate(&lower.truncate_mass(-inf), &upper);

        assert!((joined.height() - whole.height()).abs() < 1e-9, "path {i}");
        assert!((joined.total_mass() - whole.total_mass()).abs() < 1e-9, "path {i}");
        for level in [0.05, 0.2, 0.5, 1.0] {
            assert!((joined.mass_below(level) - whole.mass_below(level)).abs() < 1e-9, "path {i} level {level}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stack_mass_is_xi_minus_infimum(seed in any::<u64>()) {
        let m = mixed();
        let p = sample_path_indexed(&m, &SimConfig::new(1e-2, 2.0, seed), 0).unwrap();
        let h = height_trajectory(&p, m.beta).unwrap();
        let mut inf: f64 = 0.0;
        for n in 0..=p.num_cells() {
            if n > 0 {
                inf = inf.min(p.running_infimum(p.time(n - 1), p.time(n)).unwrap());
            }
            let expect = p.values()[n] - inf;
            prop_assert!((h.masses[n] - expect).abs() < 1e-9);
            prop_assert!(h.heights[n] >= 0.0);
        }
    }

    #[test]
    fn tanaka_plus_equals_minus(seed in any::<u64>(), a in 0.0f64..1.0, w in 0.01f64..0.3) {
        let m = mixed();
        let p = sample_path_indexed(&m, &SimConfig::new(1e-2, 3.0, seed), 0).unwrap();
        let h = height_trajectory(&p, m.beta).unwrap();
        let n = p.num_cells();
        for k in [LevelKernel::Point { a }, LevelKernel::Window { a, width: w }] {
            let plus = tanaka_local_time(&p, &h, k, n, TanakaVariant::Plus, m.beta);
            let minus = tanaka_local_time(&p, &h, k, n, TanakaVariant::Minus, m.beta);
            prop_assert!((plus - minus).abs() < 1e-9, "{plus} vs {minus}");
        }
    }

    #[test]
    fn occupation_profile_integrates_to_time(seed in any::<u64>()) {
        let m = BranchingMechanism::feller(0.5, 1.0);
        let p = sample_path_indexed(&m, &SimConfig::new(1e-3, 1.0, seed), 0).unwrap();
        let h = height_trajectory(&p, m.beta).unwrap();
        let width = 0.05;
        // bins are (a, a + w]; time spent at height exactly 0 is not counted
        let grid = LevelGrid::covering(width, h.max_height() + width).unwrap();
        let prof = occupation_profile(&h, &grid, h.len() - 1);
        let total: f64 = prof.iter().map(|l| l * width).sum();
        let at_zero: f64 = (0..h.len() - 1).filter(|&k| h.heights[k] <= 0.0).map(|k| h.duration(k)).sum();
        prop_assert!((total + at_zero - p.horizon()).abs() < 1e-9);
    }
}
