//! Euler simulation of CB-processes and of the flow `x ↦ X_t(x)`.
//!
//! The flow is driven by one time-space noise on `(0, ∞)`: the mass axis is
//! cut into layers `(X_{i-1}, X_i]` between consecutive trajectories, each
//! layer receives the white-noise mass of its own width and the Poisson marks
//! whose `u`-coordinate falls inside it. Layers are independent and each one
//! evolves as a CB-process, so the flow has independent increments in `x` and
//! stays ordered. A single trajectory is the one-layer case.

use std::io::{self, Write};

use rand_distr::{Distribution, Poisson, StandardNormal};
use rand::Rng;
use serde::Serialize;

use crate::levy_path::{PathError, SimConfig, SmallJumpMode};
use crate::mechanism::BranchingMechanism;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CbTrajectory {
    pub dt: f64,
    pub x0: f64,
    pub values: Vec<f64>,
    /// `(time, size)` of every jump that hit this trajectory.
    pub jump_log: Vec<(f64, f64)>,
}

impl CbTrajectory {
    pub fn value_at(&self, t: f64) -> f64 {
        let k = ((t / self.dt).round() as usize).min(self.values.len() - 1);
        self.values[k]
    }

    /// CSV with header `time,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", k as f64 * self.dt, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowEnsemble {
    pub initial: Vec<f64>,
    pub trajectories: Vec<CbTrajectory>,
}

impl FlowEnsemble {
    /// CSV with header `time,x0,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,x0,value")?;
        let Some(first) = self.trajectories.first() else { return Ok(()) };
        for k in 0..first.values.len() {
            for tr in &self.trajectories {
                writeln!(w, "{},{},{}", k as f64 * tr.dt, tr.x0, tr.values[k])?;
            }
        }
        Ok(())
    }
}

/// Simulates one CB trajectory from `x`, replica `index`.
pub fn simulate_cb(mech: &BranchingMechanism, x: f64, cfg: &SimConfig, index: u64) -> Result<CbTrajectory, PathError> {
    let mut e = simulate_flow(mech, &[x], cfg, index)?;
    Ok(e.trajectories.pop().expect("one trajectory"))
}

/// Simulates the flow started from the ascending masses `xs`, replica `index`.
pub fn simulate_flow(
    mech: &BranchingMechanism,
    xs: &[f64],
    cfg: &SimConfig,
    index: u64,
) -> Result<FlowEnsemble, PathError> {
    mech.validate()?;
    cfg.validate()?;
    if xs.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || xs.windows(2).any(|w| w[0] > w[1]) {
        return Err(PathError::InvalidConfig {
            field: "xs",
            reason: "initial masses must be finite, nonnegative and ascending".into(),
        });
    }
    let delta = cfg.truncation_delta;
    if delta == 0.0 && mech.jumps.power_law.is_some_and(|p| p.z_min == 0.0) {
        return Err(PathError::InvalidConfig {
            field: "truncation_delta",
            reason: "a power law reaching zero has infinitely many small jumps; choose δ > 0".into(),
        });
    }
    let t = mech.truncated(delta, cfg.small_jump_mode == SmallJumpMode::GaussianCorrection);
    let rate = t.jumps.mass_above(0.0);
    let comp = t.jumps.first_moment_above(0.0);
    let var_rate = 2.0 * t.beta;
    let dt = cfg.dt;
    let steps = cfg.cells();
    let k = xs.len();
    let mut rng = rng::stream(cfg.seed, Purpose::CbProcess, index);

    let mut layers: Vec<f64> = xs.iter().scan(0.0, |prev, &x| {
        let d = x - *prev;
        *prev = x;
        Some(d)
    }).collect();
    let mut trajectories: Vec<CbTrajectory> = xs
        .iter()
        .map(|&x0| CbTrajectory { dt, x0, values: Vec::with_capacity(steps + 1), jump_log: Vec::new() })
        .collect();
    for (tr, &x) in trajectories.iter_mut().zip(xs) {
        tr.values.push(x);
    }
    let mut incr = vec![0.0; k];
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    for step in 0..steps {
        let top: f64 = layers.iter().sum();
        for (i, d) in layers.iter().enumerate() {
            let g: f64 = StandardNormal.sample(&mut rng);
            incr[i] = -(t.alpha + comp) * d * dt + (var_rate * d * dt).sqrt() * g;
        }
        jumps.clear();
        let mean = top * rate * dt;
        if mean > 0.0 {
            let count = Poisson::new(mean).expect("finite positive mean").sample(&mut rng) as usize;
            for _ in 0..count {
                let size = t.jumps.sample_above(0.0, rate, &mut rng);
                let u = top * (1.0 - rng.random::<f64>());
                jumps.push((u, size));
            }
        }
        let time = (step as f64 + 0.5) * dt;
        for &(u, size) in &jumps {
            let mut lo = 0.0;
            for (i, d) in layers.iter().enumerate() {
                if u > lo && u <= lo + d {
                    incr[i] += size;
                    for tr in &mut trajectories[i..] {
                        tr.jump_log.push((time, size));
                    }
                    break;
                }
                lo += d;
            }
        }
        let mut acc = 0.0;
        for (i, d) in layers.iter_mut().enumerate() {
            *d = (*d + incr[i]).max(0.0);
            acc += *d;
            trajectories[i].values.push(acc);
        }
    }
    Ok(FlowEnsemble { initial: xs.to_vec(), trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::JumpMeasureSpec;

    fn jump_mech() -> BranchingMechanism {
        BranchingMechanism::new(0.5, 0.5, JumpMeasureSpec::single_atom(1.0, 2.0)).unwrap()
    }

    #[test]
    fn zero_mass_is_absorbed() {
        let tr = simulate_cb(&jump_mech(), 0.0, &SimConfig::new(0.01, 1.0, 1), 0).unwrap();
        assert!(tr.values.iter().all(|&v| v == 0.0));
        assert!(tr.jump_log.is_empty());
    }

    #[test]
    fn trajectories_stay_nonnegative_and_absorb() {
        let mech = BranchingMechanism::feller(1.0, 2.0);
        for idx in 0..20 {
            let tr = simulate_cb(&mech, 0.2, &SimConfig::new(0.01, 3.0, 4), idx).unwrap();
            assert!(tr.values.iter().all(|&v| v >= 0.0));
            if let Some(first) = tr.values.iter().position(|&v| v == 0.0) {
                assert!(tr.values[first..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn flow_is_ordered_and_matches_single_runs() {
        let cfg = SimConfig::new(0.01, 2.0, 8);
        let xs = [0.5, 1.0, 1.0, 2.5];
        let e = simulate_flow(&jump_mech(), &xs, &cfg, 3).unwrap();
        for k in 0..e.trajectories[0].values.len() {
            for w in e.trajectories.windows(2) {
                assert!(w[0].values[k] <= w[1].values[k]);
            }
        }
        assert_eq!(e.trajectories[1].values, e.trajectories[2].values);
        let single = simulate_cb(&jump_mech(), 0.5, &cfg, 3).unwrap();
        let lone = simulate_flow(&jump_mech(), &[0.5], &cfg, 3).unwrap();
        assert_eq!(single, lone.trajectories[0]);
    }

    #[test]
    fn rejects_unsorted_masses() {
        let cfg = SimConfig::new(0.01, 1.0, 0);
        assert!(simulate_flow(&jump_mech(), &[1.0, 0.5], &cfg, 0).is_err());
    }

    #[test]
    fn csv_layouts() {
        let cfg = SimConfig::new(0.5, 1.0, 0);
        let e = simulate_flow(&BranchingMechanism::feller(0.0, 0.0), &[1.0, 2.0], &cfg, 0).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,x0,value\n0,1,1\n0,2,2\n0.5,1,1\n"));
        let mut buf = Vec::new();
        e.trajectories[0].write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
