use cbheight_core::verify::{HarnessConfig, Suite, VerifyError};
use cbheight_core::{BranchingMechanism, SimConfig};

fn small_harness() -> HarnessConfig {
    HarnessConfig { paths: 300, dts: vec![4e-3, 2e-3, 1e-3], ..HarnessConfig::default() }
}

fn run_in_pool(threads: usize, suite: Suite, h: &HarnessConfig) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let mech = BranchingMechanism::feller(0.5, 1.0);
    let sim = SimConfig::new(1e-3, 100.0, 77);
    let r = pool.install(|| suite.run(&mech, &sim, h)).unwrap();
    serde_json::to_string(&r).unwrap()
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let h = small_harness();
    for suite in [Suite::RayKnight, Suite::Reflected, Suite::Noise] {
        assert_eq!(run_in_pool(1, suite, &h), run_in_pool(3, suite, &h), "{}", suite.name());
    }
}

#[test]
fn alpha_offset_breaks_the_noise_check() {
    let mut h = small_harness();
    h.oracle_alpha_offset = 0.3;
    let mech = BranchingMechanism::feller(0.5, 1.0);
    let sim = SimConfig::new(1e-3, 100.0, 78);
    let r = Suite::Noise.run(&mech, &sim, &h).unwrap();
    assert!(!r.pass);
    assert!(r.failing_cells().count() >= 1);
}

#[test]
fn preconditions_are_named() {
    let h = HarnessConfig::default();
    let linear = BranchingMechanism::feller(0.5, 0.0);
    for suite in [Suite::RayKnight, Suite::Theorem1, Suite::Tanaka, Suite::Noise, Suite::Reflected] {
        match suite.precondition(&linear, &h) {
            Err(VerifyError::Precondition { check, .. }) => assert_eq!(check, suite.name()),
            other => panic!("{}: {other:?}", suite.name()),
        }
    }
    let feller = BranchingMechanism::feller(0.5, 1.0);
    assert!(Suite::PoissonMarks.precondition(&feller, &h).is_err());
    assert!(Suite::Example.precondition(&linear, &h).is_ok());
}
