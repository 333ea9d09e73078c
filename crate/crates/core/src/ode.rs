//! Dormand–Prince 5(4) integrator for scalar autonomous ODEs.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

/// Integrates `y' = f(y)` from `y(0) = y0` to `t_end` with adaptive steps and
/// returns `y(t_end)`.
pub(crate) fn integrate_autonomous<F: Fn(f64) -> f64>(f: F, y0: f64, t_end: f64, tol: Tolerance) -> f64 {
    if t_end <= 0.0 {
        return y0;
    }
    let mut t = 0.0;
    let mut y = y0;
    let mut k1 = f(y);
    let scale0 = tol.abs + tol.rel * y.abs();
    let mut h = if k1 == 0.0 { t_end } else { (0.01 * scale0.powf(0.2) / k1.abs().max(1e-300)).min(t_end) };
    h = h.max(1e-12 * t_end);
    let mut steps = 0usize;
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let k2 = f(y + h * A21 * k1);
        let k3 = f(y + h * (A31 * k1 + A32 * k2));
        let k4 = f(y + h * (A41 * k1 + A42 * k2 + A43 * k3));
        let k5 = f(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
        let k6 = f(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
        let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let k7 = f(y_new);
        let err = (h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)).abs();
        let scale = tol.abs + tol.rel * y.abs().max(y_new.abs());
        let ratio = err / scale;
        steps += 1;
        if ratio <= 1.0 || h <= 1e-14 * t_end || steps > 1_000_000 {
            t += h;
            y = y_new;
            k1 = k7;
        }
        let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIGHT: Tolerance = Tolerance { abs: 1e-14, rel: 1e-13 };

    #[test]
    fn exponential_decay() {
        let y = integrate_autonomous(|y| -0.7 * y, 2.0, 3.0, TIGHT);
        assert!((y - 2.0 * (-2.1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn riccati_decay() {
        let y = integrate_autonomous(|y| -y * y, 4.0, 2.5, TIGHT);
        assert!((y - 4.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_is_identity() {
        assert_eq!(integrate_autonomous(|y| -y, 1.5, 0.0, TIGHT), 1.5);
    }
}
