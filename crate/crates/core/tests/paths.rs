use cbheight_core::levy_path::{sample_path_indexed, sample_until_hit};
use cbheight_core::mechanism::Atom;
use cbheight_core::stats;
use cbheight_core::{BranchingMechanism, JumpMeasureSpec, PowerLaw, SimConfig};
use proptest::prelude::*;

fn atom_mech() -> BranchingMechanism {
    BranchingMechanism::new(0.5, 0.5, JumpMeasureSpec::single_atom(1.0, 0.5)).unwrap()
}

fn power_mech() -> BranchingMechanism {
    BranchingMechanism::new(
        0.2,
        0.3,
        JumpMeasureSpec { atoms: vec![Atom { z: 0.3, w: 1.0 }], power_law: Some(PowerLaw { c: 0.4, sigma: 1.2, z_min: 0.0, z_max: Some(4.0) }) },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reconstruction_is_exact(seed in any::<u64>(), index in 0u64..1000) {
        let cfg = SimConfig::new(0.01, 3.0, seed);
        let p = sample_path_indexed(&atom_mech(), &cfg, index).unwrap();
        prop_assert_eq!(p.reconstruct_values(), p.values().to_vec());
    }

    #[test]
    fn reversal_is_an_involution(seed in any::<u64>()) {
        let mut cfg = SimConfig::new(0.01, 2.0, seed);
        cfg.truncation_delta = 0.05;
        let p = sample_path_indexed(&power_mech(), &cfg, 0).unwrap();
        let t = p.horizon();
        let back = p.time_reverse(t).unwrap().time_reverse(t).unwrap();
        prop_assert_eq!(back.values(), p.values());
        let r = p.time_reverse(t).unwrap();
        // ξ̂_s = ξ_t - ξ_{(t-s)-}
        prop_assert!((r.final_value() - p.final_value()).abs() < 1e-12);
    }

    #[test]
    fn prefix_and_suffix_split_the_path(seed in any::<u64>(), k in 1usize..199) {
        let cfg = SimConfig::new(0.01, 2.0, seed);
        let p = sample_path_indexed(&atom_mech(), &cfg, 0).unwrap();
        let s = p.time(k);
        let (pre, suf) = (p.prefix(s).unwrap(), p.suffix(s).unwrap());
        prop_assert_eq!(pre.num_cells() + suf.num_cells(), p.num_cells());
        prop_assert!((pre.final_value() + suf.final_value() - p.final_value()).abs() < 1e-12);
    }
}

#[test]
fn mean_and_variance_of_xi() {
    // E ξ_t = -αt, Var ξ_t = (2β + ∫z²π) t
    let m = atom_mech();
    let cfg = SimConfig::new(0.01, 1.0, 3);
    let xs: Vec<f64> = (0..4000).map(|i| sample_path_indexed(&m, &cfg, i).unwrap().final_value()).collect();
    let (mean, se) = (stats::mean(&xs), stats::std_error(&xs));
    assert!((mean + 0.5).abs() < 4.0 * se, "mean {mean} se {se}");
    let var = stats::variance(&xs);
    assert!((var - 1.5).abs() < 0.1, "variance {var}");
}

#[test]
fn big_jump_counts_are_poisson() {
    let m = atom_mech();
    let cfg = SimConfig::new(0.01, 4.0, 4);
    let counts: Vec<f64> = (0..4000).map(|i| sample_path_indexed(&m, &cfg, i).unwrap().jumps().len() as f64).collect();
    let (mean, se) = (stats::mean(&counts), stats::std_error(&counts));
    assert!((mean - 2.0).abs() < 4.0 * se, "mean {mean}");
    let fano = stats::variance(&counts) / mean;
    assert!((fano - 1.0).abs() < 0.1, "fano {fano}");
}

#[test]
fn expected_hitting_time() {
    // E T_x = x/α for a spectrally positive process drifting to -∞
    let m = atom_mech();
    let cfg = SimConfig::new(1e-3, 200.0, 5);
    let ts: Vec<f64> = (0..2000)
        .map(|i| sample_until_hit(&m, &cfg, i, 1.0).unwrap().expect("hits").horizon())
        .collect();
    let (mean, se) = (stats::mean(&ts), stats::std_error(&ts));
    assert!((mean - 2.0).abs() < 4.0 * se, "mean {mean} se {se}");
}

#[test]
fn truncated_power_law_keeps_mean() {
    let m = power_mech();
    let mut cfg = SimConfig::new(0.01, 1.0, 6);
    cfg.truncation_delta = 0.05;
    let xs: Vec<f64> = (0..4000).map(|i| sample_path_indexed(&m, &cfg, i).unwrap().final_value()).collect();
    let (mean, se) = (stats::mean(&xs), stats::std_error(&xs));
    assert!((mean + 0.2).abs() < 4.0 * se, "mean {mean} se {se}");
}
