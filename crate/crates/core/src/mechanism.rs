//! Branching mechanisms and the exact laws of the associated CB-process.
//!
//! A mechanism is `ψ(λ) = αλ + βλ² + ∫(e^{-λz} - 1 + λz) π(dz)` where the jump
//! measure `π` is a finite sum of atoms plus an optional power-law density
//! `c·z^{-1-σ}` on `(z_min, z_max)`. Cutoffs keep every moment used by the
//! simulators in closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::ode::{integrate_autonomous, Tolerance};
use crate::quad::integrate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid mechanism field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("argument `{name}` must be nonnegative, got {value}")]
    Domain { name: &'static str, value: f64 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> MechanismError {
    MechanismError::Invalid { field, reason: reason.into() }
}

/// Point mass of weight `w` at jump size `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: f64,
    pub w: f64,
}

/// Density `c·z^{-1-σ}` on `(z_min, z_max)`; `z_max = None` means `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub c: f64,
    pub sigma: f64,
    pub z_min: f64,
    pub z_max: Option<f64>,
}

impl PowerLaw {
    fn upper(&self) -> f64 {
        self.z_max.unwrap_or(f64::INFINITY)
    }

    /// `∫_{(lo,hi)} z^p · c z^{-1-σ} dz` for `p ∈ {0, 1, 2}` restricted to the
    /// support. Infinite when the integral diverges.
    fn moment(&self, p: i32, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(self.z_min);
        let hi = hi.min(self.upper());
        if hi <= lo {
            return 0.0;
        }
        let e = p as f64 - self.sigma; // exponent of the antiderivative
        let pow = |z: f64| -> f64 {
            if z == 0.0 {
                if e > 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else if z.is_infinite() {
                if e < 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                z.powf(e)
            }
        };
        // d/dz z^e / e = z^{e-1} = z^{p-1-σ}
        let (a, b) = (pow(lo), pow(hi));
        if e > 0.0 {
            self.c * (b - a) / e
        } else {
            self.c * (a - b) / (-e)
        }
    }

    /// Inverse-CDF draw from the density restricted to `(lo, hi)`, `lo > 0`.
    fn sample_between<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let s = self.sigma;
        let a = lo.powf(-s);
        let b = if hi.is_infinite() { 0.0 } else { hi.powf(-s) };
        let u: f64 = rng.random();
        (a - u * (a - b)).powf(-1.0 / s).clamp(lo, hi)
    }

    /// `c ∫_{(lo,hi)} (e^{-λz} - 1 + λz) z^{-1-σ} dz`.
    fn laplace_term(&self, lam: f64, lo: f64) -> f64 {
        let lo = lo.max(self.z_min);
        let hi = self.upper();
        if lam == 0.0 || hi <= lo {
            return 0.0;
        }
        let s = self.sigma;
        if lo == 0.0 && hi.is_infinite() {
            return self.c * gamma(-s) * lam.powf(s);
        }
        let kernel = |z: f64| -> f64 {
            let x = lam * z;
            if x < 1e-3 {
                x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
            } else {
                (-x).exp_m1() + x
            }
        };
        let split = (1.0 / lam).clamp(lo, hi);
        let mut total = 0.0;
        if split > lo {
            // z = w^p removes the z^{1-σ} singularity at the origin.
            let p = 1.0 / (2.0 - s);
            let (w0, w1) = (lo.powf(1.0 / p), split.powf(1.0 / p));
            total += integrate(
                |w: f64| {
                    if w <= 0.0 {
                        return 0.5 * lam * lam * p;
                    }
                    let z = w.powf(p);
                    kernel(z) * z.powf(-1.0 - s) * p * w.powf(p - 1.0)
                },
                w0,
                w1,
                1e-12,
                0.0,
            ) * self.c;
        }
        if hi > split {
            // (λz - 1) part in closed form, e^{-λz} part numerically.
            total += lam * self.moment(1, split, hi) - self.moment(0, split, hi);
            let cut = hi.min(split + 60.0 / lam);
            total += integrate(|z: f64| (-lam * z).exp() * z.powf(-1.0 - s), split, cut, 1e-12, 0.0) * self.c;
        }
        total
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpMeasureSpec {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub power_law: Option<PowerLaw>,
}

impl JumpMeasureSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single_atom(z: f64, w: f64) -> Self {
        Self { atoms: vec![Atom { z, w }], power_law: None }
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        for a in &self.atoms {
            if !(a.z.is_finite() && a.z > 0.0) {
                return Err(invalid("jumps.atoms.z", format!("atom size must be finite and > 0, got {}", a.z)));
            }
            if !(a.w.is_finite() && a.w > 0.0) {
                return Err(invalid("jumps.atoms.w", format!("atom weight must be finite and > 0, got {}", a.w)));
            }
        }
        if let Some(pl) = &self.power_law {
            if !(pl.c.is_finite() && pl.c > 0.0) {
                return Err(invalid("jumps.power_law.c", format!("must be > 0, got {}", pl.c)));
            }
            if !(pl.sigma > 1.0 && pl.sigma < 2.0) {
                return Err(invalid("jumps.power_law.sigma", format!("must lie in (1,2), got {}", pl.sigma)));
            }
            if !(pl.z_min.is_finite() && pl.z_min >= 0.0) {
                return Err(invalid("jumps.power_law.z_min", format!("must be finite and >= 0, got {}", pl.z_min)));
            }
            if let Some(zmax) = pl.z_max {
                if !(zmax > pl.z_min) {
                    return Err(invalid("jumps.power_law.z_max", format!("must exceed z_min, got {zmax}")));
                }
            }
        }
        let moment = self.min_moment();
        if !moment.is_finite() {
            return Err(invalid("jumps", "∫(z∧z²)π(dz) is not finite"));
        }
        Ok(())
    }

    /// `∫ (z ∧ z²) π(dz)`.
    pub fn min_moment(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.w * a.z.min(a.z * a.z)).sum();
        let pl = self
            .power_law
            .map(|p| p.moment(2, 0.0, 1.0) + p.moment(1, 1.0, f64::INFINITY))
            .unwrap_or(0.0);
        atoms + pl
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.power_law.is_none()
    }

    /// `π((lo, hi])`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| a.z > lo && a.z <= hi).map(|a| a.w).sum();
        atoms + self.power_law.map(|p| p.moment(0, lo, hi)).unwrap_or(0.0)
    }

    /// `π((δ, ∞))`; infinite for an untruncated power law reaching zero.
    pub fn mass_above(&self, delta: f64) -> f64 {
        self.mass_between(delta, f64::INFINITY)
    }

    /// `∫_{(δ,∞)} z π(dz)`.
    pub fn first_moment_above(&self, delta: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| a.z > delta).map(|a| a.w * a.z).sum();
        atoms + self.power_law.map(|p| p.moment(1, delta, f64::INFINITY)).unwrap_or(0.0)
    }

    /// `∫_{(0,δ]} z² π(dz)`.
    pub fn second_moment_below(&self, delta: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| a.z <= delta).map(|a| a.w * a.z * a.z).sum();
        atoms + self.power_law.map(|p| p.moment(2, 0.0, delta)).unwrap_or(0.0)
    }

    /// `∫_{(δ,∞)} (e^{-λz} - 1 + λz) π(dz)`.
    pub fn laplace_integral_above(&self, lam: f64, delta: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.z > delta)
            .map(|a| {
                let x = lam * a.z;
                a.w * if x < 1e-3 { x * x * (0.5 - x / 6.0 + x * x / 24.0) } else { (-x).exp_m1() + x }
            })
            .sum();
        atoms + self.power_law.map(|p| p.laplace_term(lam, delta)).unwrap_or(0.0)
    }

    /// The measure restricted to `(δ, ∞)`.
    pub fn truncated_above(&self, delta: f64) -> JumpMeasureSpec {
        let atoms = self.atoms.iter().copied().filter(|a| a.z > delta).collect();
        let power_law = self.power_law.and_then(|p| {
            let z_min = p.z_min.max(delta);
            (z_min < p.upper()).then_some(PowerLaw { z_min, ..p })
        });
        JumpMeasureSpec { atoms, power_law }
    }

    /// Draws one jump size from `π` normalized on `(δ, ∞)`. Requires
    /// `0 < π(δ,∞) < ∞`.
    pub fn sample_above<R: Rng + ?Sized>(&self, delta: f64, total: f64, rng: &mut R) -> f64 {
        let mut u = rng.random::<f64>() * total;
        for a in self.atoms.iter().filter(|a| a.z > delta) {
            if u < a.w {
                return a.z;
            }
            u -= a.w;
        }
        match self.power_law {
            Some(p) => p.sample_between(p.z_min.max(delta), p.upper(), rng),
            None => self.atoms.iter().rev().find(|a| a.z > delta).map(|a| a.z).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingMechanism {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub jumps: JumpMeasureSpec,
}

/// Outcome of the case analysis behind [`BranchingMechanism::grey_holds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GreyCase {
    /// `β > 0`: `ψ(u) ≥ βu²`.
    Diffusive,
    /// `β = 0` with a power law reaching zero: `ψ(u) ≍ u^σ`, `σ > 1`.
    StableLike,
    /// `ψ(u) ≤ (α + ∫zπ)u`: the integral diverges.
    AsymptoticallyLinear,
}

const ODE_TOL: Tolerance = Tolerance { abs: 1e-14, rel: 1e-13 };

impl BranchingMechanism {
    pub fn new(alpha: f64, beta: f64, jumps: JumpMeasureSpec) -> Result<Self, MechanismError> {
        let m = Self { alpha, beta, jumps };
        m.validate()?;
        Ok(m)
    }

    /// `ψ(λ) = αλ + βλ²`.
    pub fn feller(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, jumps: JumpMeasureSpec::none() }
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(invalid("beta", format!("must be finite and >= 0, got {}", self.beta)));
        }
        self.jumps.validate()
    }

    pub fn psi(&self, lam: f64) -> Result<f64, MechanismError> {
        if !(lam >= 0.0) {
            return Err(MechanismError::Domain { name: "lambda", value: lam });
        }
        Ok(self.psi_unchecked(lam))
    }

    pub(crate) fn psi_unchecked(&self, lam: f64) -> f64 {
        if lam <= 0.0 {
            return 0.0;
        }
        self.alpha * lam + self.beta * lam * lam + self.jumps.laplace_integral_above(lam, 0.0)
    }

    /// `v_t(λ)`, the solution of `dv/dt = -ψ(v)`, `v_0 = λ`.
    pub fn v(&self, t: f64, lam: f64) -> Result<f64, MechanismError> {
        if !(t >= 0.0) {
            return Err(MechanismError::Domain { name: "t", value: t });
        }
        if !(lam >= 0.0) {
            return Err(MechanismError::Domain { name: "lambda", value: lam });
        }
        if t == 0.0 || lam == 0.0 {
            return Ok(lam);
        }
        // v only decays, so an absolute floor below λ keeps small values relatively accurate
        let tol = Tolerance { abs: ODE_TOL.abs * lam.min(1.0), rel: ODE_TOL.rel };
        let v = integrate_autonomous(|v| -self.psi_unchecked(v.max(0.0)), lam, t, tol);
        Ok(v.clamp(0.0, lam))
    }

    /// Whether `∫_1^∞ du/ψ(u) < ∞`, decided by the shape of `ψ` at infinity.
    pub fn grey_case(&self) -> GreyCase {
        if self.beta > 0.0 {
            GreyCase::Diffusive
        } else if self.jumps.power_law.is_some_and(|p| p.z_min == 0.0) {
            GreyCase::StableLike
        } else {
            GreyCase::AsymptoticallyLinear
        }
    }

    pub fn grey_holds(&self) -> bool {
        !matches!(self.grey_case(), GreyCase::AsymptoticallyLinear)
    }

    /// `E_x[exp(-λ X_t)] = exp(-x v_t(λ))`.
    pub fn cb_laplace(&self, x: f64, t: f64, lam: f64) -> Result<f64, MechanismError> {
        if !(x >= 0.0) {
            return Err(MechanismError::Domain { name: "x", value: x });
        }
        Ok((-x * self.v(t, lam)?).exp())
    }

    /// `E_x[X_t] = x e^{-αt}`.
    pub fn cb_mean(&self, x: f64, t: f64) -> Result<f64, MechanismError> {
        if !(x >= 0.0) {
            return Err(MechanismError::Domain { name: "x", value: x });
        }
        if !(t >= 0.0) {
            return Err(MechanismError::Domain { name: "t", value: t });
        }
        Ok(x * (-self.alpha * t).exp())
    }

    /// Mechanism of the process with jumps of size `≤ δ` removed (and
    /// compensated), optionally replaced by a Brownian term of the same
    /// variance rate `∫_0^δ z²π(dz)`.
    pub fn truncated(&self, delta: f64, gaussian_correction: bool) -> BranchingMechanism {
        let extra = if gaussian_correction { 0.5 * self.jumps.second_moment_below(delta) } else { 0.0 };
        BranchingMechanism { alpha: self.alpha, beta: self.beta + extra, jumps: self.jumps.truncated_above(delta) }
    }

    /// Same mechanism with `α` shifted; used for deliberately mismatched oracles.
    pub fn with_alpha_offset(&self, offset: f64) -> BranchingMechanism {
        BranchingMechanism { alpha: self.alpha + offset, ..self.clone() }
    }
}

/// `∫_1^U du/ψ(u)` by quadrature on a logarithmic grid, used to cross-check
/// [`BranchingMechanism::grey_holds`]. Returns the partial integrals at
/// `U = 10, 10², …, 10^decades`.
pub fn grey_partial_integrals(mech: &BranchingMechanism, decades: u32) -> Vec<f64> {
    let mut acc = 0.0;
    (0..decades)
        .map(|k| {
            let (lo, hi) = (10f64.powi(k as i32).ln(), 10f64.powi(k as i32 + 1).ln());
            acc += integrate(
                |s: f64| {
                    let u = s.exp();
                    let p = mech.psi_unchecked(u);
                    if p > 0.0 {
                        u / p
                    } else {
                        f64::INFINITY
                    }
                },
                lo,
                hi,
                1e-9,
                0.0,
            );
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stable(sigma: f64, z_min: f64, z_max: Option<f64>) -> BranchingMechanism {
        BranchingMechanism::new(
            0.0,
            0.0,
            JumpMeasureSpec { atoms: vec![], power_law: Some(PowerLaw { c: 1.0, sigma, z_min, z_max }) },
        )
        .unwrap()
    }

    #[test]
    fn psi_closed_forms() {
        assert_eq!(BranchingMechanism::feller(0.0, 1.0).psi(2.0).unwrap(), 4.0);
        assert_eq!(BranchingMechanism::feller(1.0, 0.0).psi(3.0).unwrap(), 3.0);
        let atom = BranchingMechanism::new(0.0, 0.0, JumpMeasureSpec::single_atom(1.0, 1.0)).unwrap();
        assert!((atom.psi(1.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(atom.psi(0.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_lambda_is_a_domain_error() {
        let m = BranchingMechanism::feller(1.0, 1.0);
        assert!(matches!(m.psi(-1.0), Err(MechanismError::Domain { .. })));
        assert!(m.v(-1.0, 1.0).is_err());
        assert!(m.v(1.0, -1.0).is_err());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        assert!(BranchingMechanism::new(-1.0, 0.0, JumpMeasureSpec::none()).is_err());
        assert!(BranchingMechanism::new(0.0, 0.0, JumpMeasureSpec::single_atom(0.0, 1.0)).is_err());
        assert!(BranchingMechanism::new(0.0, 0.0, JumpMeasureSpec::single_atom(1.0, -1.0)).is_err());
        let bad_sigma = JumpMeasureSpec {
            atoms: vec![],
            power_law: Some(PowerLaw { c: 1.0, sigma: 2.0, z_min: 0.0, z_max: None }),
        };
        let err = BranchingMechanism::new(0.0, 0.0, bad_sigma).unwrap_err();
        assert!(err.to_string().contains("sigma"));
    }

    #[test]
    fn v_closed_forms() {
        let feller = BranchingMechanism::feller(0.0, 1.0);
        assert!((feller.v(1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        let linear = BranchingMechanism::feller(1.0, 0.0);
        assert!((linear.v(2f64.ln(), 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(feller.v(0.0, 7.0).unwrap(), 7.0);
    }

    #[test]
    fn grey_cases() {
        assert!(BranchingMechanism::feller(0.3, 1.0).grey_holds());
        assert!(!BranchingMechanism::feller(1.0, 0.0).grey_holds());
        assert!(!BranchingMechanism::feller(0.0, 0.0).grey_holds());
        assert!(stable(1.5, 0.0, None).grey_holds());
        assert!(!stable(1.5, 0.1, None).grey_holds());
        let atoms = BranchingMechanism::new(0.5, 0.0, JumpMeasureSpec::single_atom(1.0, 2.0)).unwrap();
        assert!(!atoms.grey_holds());
    }

    #[test]
    fn stable_closed_form_matches_quadrature_branch() {
        // A huge but finite upper cutoff forces the quadrature path.
        let closed = stable(1.5, 0.0, None);
        let cut = stable(1.5, 0.0, Some(1e12));
        for lam in [0.1, 1.0, 7.0] {
            let a = closed.psi(lam).unwrap();
            let b = cut.psi(lam).unwrap();
            assert!(((a - b) / a).abs() < 1e-5, "lam={lam}: {a} vs {b}");
        }
    }

    #[test]
    fn truncation_moves_small_jump_variance_into_beta() {
        let m = stable(1.5, 0.0, Some(10.0));
        let t = m.truncated(0.1, true);
        let s2 = m.jumps.second_moment_below(0.1);
        assert!((t.beta - 0.5 * s2).abs() < 1e-15);
        assert_eq!(t.jumps.power_law.unwrap().z_min, 0.1);
        assert!(m.truncated(20.0, false).jumps.is_zero());
    }

    #[test]
    fn power_law_moments() {
        let p = PowerLaw { c: 2.0, sigma: 1.5, z_min: 0.0, z_max: None };
        // ∫_1^∞ 2 z^{-2.5} dz = 2/1.5
        assert!((p.moment(0, 1.0, f64::INFINITY) - 2.0 / 1.5).abs() < 1e-14);
        // ∫_0^1 2 z^{-0.5} dz = 4
        assert!((p.moment(2, 0.0, 1.0) - 4.0).abs() < 1e-14);
        assert!(p.moment(0, 0.0, 1.0).is_infinite());
    }
}
