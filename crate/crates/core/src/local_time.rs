//! Local times of the height process.
//!
//! `L_t(a)` is normalized as the occupation density of `H`:
//! `∫ L_t(a) f(a) da = ∫_0^t f(H_s) ds`. Estimates come from one-sided bins
//! `(h, h + Δa]` and from the Tanaka representation, evaluated either at a
//! sharp level or averaged over a bin.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::exploration::HeightTrajectory;
use crate::levy_path::LevyPath;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalTimeError {
    #[error("invalid level grid: {0}")]
    Grid(String),
    #[error("empty height trajectory")]
    Empty,
}

/// Uniform level bins `(origin + iΔa, origin + (i+1)Δa]`, `i = 0..bins`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelGrid {
    pub origin: f64,
    pub width: f64,
    pub bins: usize,
}

impl LevelGrid {
    pub fn new(origin: f64, width: f64, bins: usize) -> Result<Self, LocalTimeError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(LocalTimeError::Grid(format!("bin width must be > 0, got {width}")));
        }
        if !origin.is_finite() || bins == 0 {
            return Err(LocalTimeError::Grid("need a finite origin and at least one bin".into()));
        }
        Ok(Self { origin, width, bins })
    }

    /// `Δa = max(dt^{1/3}, 4·β^{-1}·dt^{1/2})`.
    pub fn default_width(dt: f64, beta: f64) -> f64 {
        dt.cbrt().max(4.0 * dt.sqrt() / beta)
    }

    /// Bins of width `width` from 0 up to at least `max_level`.
    pub fn covering(width: f64, max_level: f64) -> Result<Self, LocalTimeError> {
        let bins = ((max_level / width).ceil() as usize).max(1);
        Self::new(0.0, width, bins)
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| self.lower(i)).collect()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.width
    }

    /// Bin containing `h`, if any.
    pub fn bin_of(&self, h: f64) -> Option<usize> {
        let r = (h - self.origin) / self.width;
        let mut i = r.ceil() as i64 - 1;
        // guard against rounding at the edges
        if i >= 0 && h <= self.lower(i as usize) {
            i -= 1;
        }
        if h > self.lower(i.max(0) as usize + 1) {
            i += 1;
        }
        (i >= 0 && (i as usize) < self.bins && h > self.lower(i as usize)).then_some(i as usize)
    }
}

/// Binned estimates `L̂_t(bin)` at a set of times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimeField {
    pub grid: LevelGrid,
    pub times: Vec<f64>,
    /// `values[j][i]`: bin `i` at `times[j]`.
    pub values: Vec<Vec<f64>>,
}

impl LocalTimeField {
    /// Occupation estimator on `[0, t_max]`, recorded every `stride` grid
    /// points and at the last one.
    pub fn occupation(
        h: &HeightTrajectory,
        grid: LevelGrid,
        t_max: f64,
        stride: usize,
    ) -> Result<Self, LocalTimeError> {
        if h.is_empty() {
            return Err(LocalTimeError::Empty);
        }
        let stride = stride.max(1);
        let last = h.times().iter().rposition(|&t| t <= t_max + 1e-12).unwrap_or(0);
        let mut cur = vec![0.0; grid.bins];
        let mut times = vec![h.times()[0]];
        let mut values = vec![cur.clone()];
        for k in 0..last {
            if let Some(i) = grid.bin_of(h.heights[k]) {
                cur[i] += h.duration(k) / grid.width;
            }
            if (k + 1) % stride == 0 || k + 1 == last {
                times.push(h.times()[k + 1]);
                values.push(cur.clone());
            }
        }
        Ok(Self { grid, times, values })
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().expect("field has at least one time")
    }

    /// Long-format CSV `time,level,local_time`, level = lower bin edge.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,level,local_time")?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (i, v) in row.iter().enumerate() {
                writeln!(w, "{},{},{}", t, self.grid.lower(i), v)?;
            }
        }
        Ok(())
    }
}

/// Occupation profile `a ↦ L̂_t(a)` at the grid point `n` of `h`.
pub fn occupation_profile(h: &HeightTrajectory, grid: &LevelGrid, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid.bins];
    for k in 0..n {
        if let Some(i) = grid.bin_of(h.heights[k]) {
            out[i] += h.duration(k) / grid.width;
        }
    }
    out
}

/// `η_a^-(t) = ∫_0^t 1_{H_s ≤ a} ds` at grid point `n`.
pub fn occupation_below(h: &HeightTrajectory, a: f64, n: usize) -> f64 {
    stats::sum((0..n).filter(|&k| h.heights[k] <= a).map(|k| h.duration(k)))
}

/// A local-time profile as a function of the level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub grid: LevelGrid,
    pub values: Vec<f64>,
}

impl Profile {
    /// CSV `level,local_time`, level = lower bin edge.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "level,local_time")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.lower(i), v)?;
        }
        Ok(())
    }
}

/// `a ↦ L̂_{T_x}(a)` for a path already stopped at `T_x`
/// (see [`LevyPath::stopped_at`]).
pub fn profile_at_hitting(stopped: &LevyPath, h: &HeightTrajectory, grid: LevelGrid) -> Profile {
    Profile { grid, values: occupation_profile(h, &grid, stopped.num_cells()) }
}

/// Level at which the Tanaka formulas are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevelKernel {
    /// Sharp level `a`: indicator `1_{H > a}`.
    Point { a: f64 },
    /// Average of the sharp formulas over levels in `(a, a + width]`; this is
    /// the quantity estimated by the occupation bin `(a, a + width]`.
    Window { a: f64, width: f64 },
}

impl LevelKernel {
    /// Weight replacing `1_{H > a}`.
    pub fn above(&self, h: f64) -> f64 {
        match *self {
            LevelKernel::Point { a } => {
                if h > a {
                    1.0
                } else {
                    0.0
                }
            }
            LevelKernel::Window { a, width } => ((h - a) / width).clamp(0.0, 1.0),
        }
    }

    /// Replacement for `(H - a)^+`.
    pub fn excess(&self, h: f64) -> f64 {
        match *self {
            LevelKernel::Point { a } => (h - a).max(0.0),
            LevelKernel::Window { a, width } => {
                let d = h - a;
                if d <= 0.0 {
                    0.0
                } else if d <= width {
                    d * d / (2.0 * width)
                } else {
                    d - 0.5 * width
                }
            }
        }
    }

    /// Replacement for `H ∧ a`.
    pub fn capped(&self, h: f64) -> f64 {
        h - self.excess(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TanakaVariant {
    /// `β(H_t-a)^+ - ∫ 1_{H_s>a} dξ_s + U_t(a)`.
    Plus,
    /// `-β(H_t ∧ a) + ∫ 1_{H_s≤a} dξ_s - I_0(t) - V_t(a)`.
    Minus,
}

/// Tanaka estimate of `L_t(a)` at grid point `n`. Stochastic integrals are
/// left-point sums over cells for the continuous part; jumps are weighted by
/// `H_{t_i}`.
pub fn tanaka_local_time(
    path: &LevyPath,
    h: &HeightTrajectory,
    kernel: LevelKernel,
    n: usize,
    variant: TanakaVariant,
    beta: f64,
) -> f64 {
    let erosion = path.erosion_amounts(n);
    let mut terms = Vec::with_capacity(n + 2 * erosion.len() + 2);
    for k in 0..n {
        let cell = path.cell(k);
        let cont = cell.end_value - cell.start_value - cell.jump_total();
        let w = kernel.above(h.heights[k]);
        terms.push(match variant {
            TanakaVariant::Plus => -w * cont,
            TanakaVariant::Minus => (1.0 - w) * cont,
        });
    }
    for (i, e) in erosion.iter().enumerate() {
        let w = kernel.above(h.jump_heights[i]);
        let z = path.jumps()[i].size;
        terms.push(match variant {
            TanakaVariant::Plus => w * (e - z),
            TanakaVariant::Minus => (1.0 - w) * (z - e),
        });
    }
    let hn = h.heights[n];
    match variant {
        TanakaVariant::Plus => terms.push(beta * kernel.excess(hn)),
        TanakaVariant::Minus => {
            terms.push(-beta * kernel.capped(hn));
            terms.push(h.infimum_depth[n]);
        }
    }
    stats::sum(terms)
}

/// `x + ∫_0^{T_x} 1_{H_s ≤ a} dξ_s` for a path stopped at `T_x`, with the
/// indicator replaced by `1 - kernel.above(H)`.
pub fn hitting_integral(path: &LevyPath, h: &HeightTrajectory, kernel: LevelKernel, x: f64) -> f64 {
    let mut terms = Vec::with_capacity(path.num_cells() + path.jumps().len() + 1);
    terms.push(x);
    for k in 0..path.num_cells() {
        let cell = path.cell(k);
        let cont = cell.end_value - cell.start_value - cell.jump_total();
        terms.push((1.0 - kernel.above(h.heights[k])) * cont);
    }
    for (j, jr) in path.jumps().iter().enumerate() {
        terms.push((1.0 - kernel.above(h.jump_heights[j])) * jr.size);
    }
    stats::sum(terms)
}

/// Running local time at the current height, `L̂_{t_i}(H_{t_i})`, for every
/// jump, from the same bins as [`occupation_profile`].
pub fn local_time_at_jumps(path: &LevyPath, h: &HeightTrajectory, grid: &LevelGrid) -> Vec<f64> {
    let mut prof = vec![0.0; grid.bins];
    let mut out = Vec::with_capacity(path.jumps().len());
    for k in 0..path.num_cells() {
        let cur = grid.bin_of(h.heights[k]);
        let cell = path.cell(k);
        for jr in cell.jumps {
            let idx = out.len();
            let v = match grid.bin_of(h.jump_heights[idx]) {
                Some(b) => prof[b] + if Some(b) == cur { jr.offset / grid.width } else { 0.0 },
                None => 0.0,
            };
            out.push(v);
        }
        if let Some(b) = cur {
            prof[b] += h.duration(k) / grid.width;
        }
    }
    out
}

/// `max_i |(I_{t_i}(t) - ξ_{t_i}) - (L̂_{t_i}(H_{t_i}) - L̂_t(H_{t_i}))|`
/// over jumps before grid point `n` whose atom is still alive; 0 when there
/// are none.
pub fn jump_erosion_identity_residual(path: &LevyPath, h: &HeightTrajectory, grid: &LevelGrid, n: usize) -> f64 {
    let erosion = path.erosion_amounts(n);
    let at_jump = local_time_at_jumps(path, h, grid);
    let prof = occupation_profile(h, grid, n);
    let mut worst: f64 = 0.0;
    for (i, e) in erosion.iter().enumerate() {
        if *e <= 0.0 {
            continue;
        }
        let jr = path.jumps()[i];
        // I_{t_i}(t) - ξ_{t_i} = e_i - z_i while the atom is alive
        let lhs = e - jr.size;
        let rhs = match grid.bin_of(h.jump_heights[i]) {
            Some(b) => at_jump[i] - prof[b],
            None => 0.0,
        };
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
