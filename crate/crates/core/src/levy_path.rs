//! Grid simulation of the spectrally positive Lévy process
//! `ξ_t = -αt + √(2β)B_t + ∫∫ z Ñ(ds,dz)` and functionals of its paths.
//!
//! Jumps larger than the truncation level `δ` are simulated exactly as a marked
//! Poisson process and compensated through the drift. Jumps of size `≤ δ` are
//! either dropped (their compensated sum is centred) or replaced by a Gaussian
//! term with the same variance rate.
//!
//! Every jump keeps its position inside its grid cell together with the
//! continuous displacement before and after it (sampled from the Brownian
//! bridge of the cell), so the pre-jump value `ξ_{t_i-}` is exact with respect
//! to the sampled grid values.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::{BranchingMechanism, JumpMeasureSpec, MechanismError};
use crate::rng::{self, PathRng, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("invalid simulation config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("time {t} is not a grid time within the path horizon {horizon}")]
    OffGrid { t: f64, horizon: f64 },
    #[error("running infimum needs s <= t, got s={s}, t={t}")]
    Order { s: f64, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpMode {
    DropCompensated,
    GaussianCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub truncation_delta: f64,
    pub small_jump_mode: SmallJumpMode,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        Self { dt, horizon, truncation_delta: 0.0, small_jump_mode: SmallJumpMode::DropCompensated, seed }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        let bad = |field, reason: String| Err(PathError::InvalidConfig { field, reason });
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", format!("must be > 0, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon", format!("must be > 0, got {}", self.horizon));
        }
        if self.dt >= self.horizon {
            return bad("dt", format!("must be smaller than the horizon {}", self.horizon));
        }
        if !(self.truncation_delta.is_finite() && self.truncation_delta >= 0.0) {
            return bad("truncation_delta", format!("must be >= 0, got {}", self.truncation_delta));
        }
        Ok(())
    }

    /// Number of grid cells covering `[0, horizon]`.
    pub fn cells(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    /// Smallest truncation level with `π(δ,∞)·dt ≤ 0.1`.
    /// Returns 0 when `dt` is not a positive step.
    pub fn default_truncation(jumps: &JumpMeasureSpec, dt: f64) -> f64 {
        let target = 0.1 / dt;
        if !(target.is_finite() && target > 0.0) || jumps.mass_above(0.0) <= target {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while jumps.mass_above(hi) > target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if jumps.mass_above(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// One jump of the simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpRecord {
    /// Absolute jump time.
    pub time: f64,
    /// Grid cell `[k·dt, (k+1)·dt)` containing the jump.
    pub cell: usize,
    /// Time from the cell start to the jump.
    pub offset: f64,
    /// Time from the jump to the cell end.
    pub remaining: f64,
    pub size: f64,
    /// Continuous displacement between the cell start and the jump.
    pub cont_before: f64,
    /// Continuous displacement between the jump and the cell end.
    pub cont_after: f64,
    /// `ξ_{t_i-}`.
    pub pre_value: f64,
}

impl JumpRecord {
    pub fn post_value(&self) -> f64 {
        self.pre_value + self.size
    }
}

/// A piece of the path inside one grid cell, in time order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathEvent {
    /// Continuous (linearly interpolated) move.
    Continuous { from: f64, to: f64, duration: f64 },
    /// Upward jump; `index` points into [`LevyPath::jumps`].
    Jump { index: usize, size: f64, pre: f64 },
}

/// Borrowed view of one grid cell.
#[derive(Debug, Clone, Copy)]
pub struct Cell<'a> {
    pub index: usize,
    pub start_value: f64,
    pub end_value: f64,
    pub duration: f64,
    pub brownian: f64,
    pub jumps: &'a [JumpRecord],
    first_jump: usize,
}

impl<'a> Cell<'a> {
    pub fn events(&self) -> impl Iterator<Item = PathEvent> + 'a {
        let mut out = Vec::with_capacity(2 * self.jumps.len() + 1);
        let mut cur = self.start_value;
        let mut elapsed = 0.0;
        for (j, jr) in self.jumps.iter().enumerate() {
            out.push(PathEvent::Continuous { from: cur, to: jr.pre_value, duration: jr.offset - elapsed });
            out.push(PathEvent::Jump { index: self.first_jump + j, size: jr.size, pre: jr.pre_value });
            cur = jr.post_value();
            elapsed = jr.offset;
        }
        let last = self.jumps.last().map(|j| j.remaining).unwrap_or(self.duration);
        out.push(PathEvent::Continuous { from: cur, to: self.end_value, duration: last });
        out.into_iter()
    }

    /// Sum of the jump sizes in this cell.
    pub fn jump_total(&self) -> f64 {
        self.jumps.iter().map(|j| j.size).sum()
    }
}

/// A discretized path of `ξ` with explicit jump records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevyPath {
    dt: f64,
    values: Vec<f64>,
    jumps: Vec<JumpRecord>,
    jump_start: Vec<usize>,
    applied_drift: f64,
    gaussian_coeff: f64,
    brownian_increments: Vec<f64>,
    last_cell_duration: f64,
}

/// Raw draw for one cell before it is attached to a path.
#[derive(Debug, Clone)]
struct RawCell {
    duration: f64,
    brownian: f64,
    /// (offset, remaining, size, cont_before, cont_after)
    jumps: Vec<(f64, f64, f64, f64, f64)>,
}

struct PathBuilder {
    path: LevyPath,
}

impl PathBuilder {
    fn new(dt: f64, applied_drift: f64, gaussian_coeff: f64) -> Self {
        Self {
            path: LevyPath {
                dt,
                values: vec![0.0],
                jumps: Vec::new(),
                jump_start: vec![0],
                applied_drift,
                gaussian_coeff,
                brownian_increments: Vec::new(),
                last_cell_duration: dt,
            },
        }
    }

    fn push(&mut self, raw: &RawCell) -> f64 {
        let p = &mut self.path;
        let k = p.brownian_increments.len();
        let start = *p.values.last().unwrap();
        let cont = p.applied_drift * raw.duration + p.gaussian_coeff * raw.brownian;
        let mut acc_jumps = 0.0;
        for &(offset, remaining, size, cont_before, cont_after) in &raw.jumps {
            let pre_value = start + (cont_before + acc_jumps);
            p.jumps.push(JumpRecord {
                time: k as f64 * p.dt + offset,
                cell: k,
                offset,
                remaining,
                size,
                cont_before,
                cont_after,
                pre_value,
            });
            acc_jumps += size;
        }
        let mut incr = cont;
        for &(_, _, size, _, _) in &raw.jumps {
            incr += size;
        }
        let end = start + incr;
        p.values.push(end);
        p.brownian_increments.push(raw.brownian);
        p.jump_start.push(p.jumps.len());
        p.last_cell_duration = raw.duration;
        end
    }

    fn finish(self) -> LevyPath {
        self.path
    }
}

/// Streams the cells of one simulated path.
pub struct PathSampler {
    dt: f64,
    applied_drift: f64,
    gaussian_coeff: f64,
    jumps: JumpMeasureSpec,
    jump_rate: f64,
    arrivals: Option<Exp<f64>>,
    next_jump: f64,
    cell: usize,
    rng: PathRng,
}

impl PathSampler {
    pub fn new(mech: &BranchingMechanism, cfg: &SimConfig, index: u64) -> Result<Self, PathError> {
        mech.validate()?;
        cfg.validate()?;
        let delta = cfg.truncation_delta;
        if delta == 0.0 && mech.jumps.power_law.is_some_and(|p| p.z_min == 0.0) {
            return Err(PathError::InvalidConfig {
                field: "truncation_delta",
                reason: "a power law reaching zero has infinitely many small jumps; choose δ > 0".into(),
            });
        }
        let truncated = mech.truncated(delta, cfg.small_jump_mode == SmallJumpMode::GaussianCorrection);
        let jump_rate = truncated.jumps.mass_above(0.0);
        let applied_drift = -truncated.alpha - truncated.jumps.first_moment_above(0.0);
        let gaussian_coeff = (2.0 * truncated.beta).sqrt();
        let mut rng = rng::stream(cfg.seed, Purpose::LevyPath, index);
        let arrivals = (jump_rate > 0.0).then(|| Exp::new(jump_rate).expect("positive finite rate"));
        let next_jump = arrivals.as_ref().map(|e| e.sample(&mut rng)).unwrap_or(f64::INFINITY);
        Ok(Self {
            dt: cfg.dt,
            applied_drift,
            gaussian_coeff,
            jumps: truncated.jumps,
            jump_rate,
            arrivals,
            next_jump,
            cell: 0,
            rng,
        })
    }

    pub fn applied_drift(&self) -> f64 {
        self.applied_drift
    }

    pub fn gaussian_coeff(&self) -> f64 {
        self.gaussian_coeff
    }

    fn next_raw(&mut self) -> RawCell {
        let dt = self.dt;
        let sdt = dt.sqrt();
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let brownian = sdt * z;
        let cell_start = self.cell as f64 * dt;
        let cell_end = cell_start + dt;
        let mut offsets = Vec::new();
        while self.next_jump < cell_end {
            let offset = (self.next_jump - cell_start).clamp(0.0, dt);
            let size = self.jumps.sample_above(0.0, self.jump_rate, &mut self.rng);
            offsets.push((offset, size));
            let gap = self.arrivals.as_ref().unwrap().sample(&mut self.rng);
            self.next_jump += gap;
        }
        let mut jumps = Vec::with_capacity(offsets.len());
        // Brownian bridge from 0 at the cell start to `brownian` at its end.
        let (mut prev_t, mut prev_b) = (0.0, 0.0);
        for &(offset, size) in &offsets {
            let span = dt - prev_t;
            let frac = if span > 0.0 { (offset - prev_t) / span } else { 0.0 };
            let mean = prev_b + frac * (brownian - prev_b);
            let var = (offset - prev_t) * (dt - offset) / span.max(f64::MIN_POSITIVE);
            let g: f64 = StandardNormal.sample(&mut self.rng);
            let b = mean + var.max(0.0).sqrt() * g;
            let cont_before = self.applied_drift * offset + self.gaussian_coeff * b;
            let cont_after = self.applied_drift * (dt - offset) + self.gaussian_coeff * (brownian - b);
            jumps.push((offset, dt - offset, size, cont_before, cont_after));
            prev_t = offset;
            prev_b = b;
        }
        self.cell += 1;
        RawCell { duration: dt, brownian, jumps }
    }
}

/// Simulates `ξ` on `[0, horizon]` from stream 0 of `cfg.seed`.
pub fn sample_path(mech: &BranchingMechanism, cfg: &SimConfig) -> Result<LevyPath, PathError> {
    sample_path_indexed(mech, cfg, 0)
}

/// Simulates replica `index` of `ξ` on `[0, horizon]`.
pub fn sample_path_indexed(mech: &BranchingMechanism, cfg: &SimConfig, index: u64) -> Result<LevyPath, PathError> {
    let mut sampler = PathSampler::new(mech, cfg, index)?;
    let mut builder = PathBuilder::new(cfg.dt, sampler.applied_drift, sampler.gaussian_coeff);
    for _ in 0..cfg.cells() {
        let raw = sampler.next_raw();
        builder.push(&raw);
    }
    Ok(builder.finish())
}

/// Simulates replica `index` cell by cell, calling `stop` on the growing path
/// after every cell. Returns the path and whether `stop` fired before the
/// horizon.
pub fn sample_until<F: FnMut(&LevyPath) -> bool>(
    mech: &BranchingMechanism,
    cfg: &SimConfig,
    index: u64,
    mut stop: F,
) -> Result<(LevyPath, bool), PathError> {
    let mut sampler = PathSampler::new(mech, cfg, index)?;
    let mut builder = PathBuilder::new(cfg.dt, sampler.applied_drift, sampler.gaussian_coeff);
    for _ in 0..cfg.cells() {
        let raw = sampler.next_raw();
        builder.push(&raw);
        if stop(&builder.path) {
            return Ok((builder.finish(), true));
        }
    }
    Ok((builder.finish(), false))
}

/// Simulates replica `index` until `ξ` first reaches `-x` and returns the path
/// stopped there (its last cell is shortened to end exactly at `T_x`).
/// `Ok(None)` when the horizon is exhausted first.
pub fn sample_until_hit(
    mech: &BranchingMechanism,
    cfg: &SimConfig,
    index: u64,
    x: f64,
) -> Result<Option<LevyPath>, PathError> {
    let mut sampler = PathSampler::new(mech, cfg, index)?;
    let mut builder = PathBuilder::new(cfg.dt, sampler.applied_drift, sampler.gaussian_coeff);
    if x <= 0.0 {
        return Ok(Some(builder.finish()));
    }
    let level = -x;
    let mut current = 0.0;
    for _ in 0..cfg.cells() {
        let raw = sampler.next_raw();
        if let Some(cut) = truncate_raw(&raw, current, level, sampler.applied_drift, sampler.gaussian_coeff) {
            builder.push(&cut);
            return Ok(Some(builder.finish()));
        }
        current = builder.push(&raw);
    }
    Ok(None)
}

/// First time inside the cell at which the polygonal path reaches `level`,
/// as (elapsed time, index of the first jump after it, continuous displacement
/// at that time).
fn crossing_in_cell(
    start: f64,
    duration: f64,
    jumps: &[(f64, f64, f64, f64, f64)],
    end_cont: f64,
    level: f64,
) -> Option<(f64, usize, f64)> {
    if start <= level {
        return Some((0.0, 0, 0.0));
    }
    let mut t0 = 0.0;
    let mut c0 = 0.0;
    let mut v0 = start;
    let mut jump_acc = 0.0;
    for j in 0..=jumps.len() {
        let (t1, c1) = if j < jumps.len() { (jumps[j].0, jumps[j].3) } else { (duration, end_cont) };
        let v1 = start + (c1 + jump_acc);
        if v1 <= level {
            let theta = if v0 > v1 { ((v0 - level) / (v0 - v1)).clamp(0.0, 1.0) } else { 1.0 };
            return Some((t0 + theta * (t1 - t0), j, c0 + theta * (c1 - c0)));
        }
        if j < jumps.len() {
            jump_acc += jumps[j].2;
            t0 = t1;
            c0 = c1;
            v0 = v1 + jumps[j].2;
        }
    }
    None
}

fn truncate_raw(raw: &RawCell, start: f64, level: f64, drift: f64, g: f64) -> Option<RawCell> {
    let end_cont = drift * raw.duration + g * raw.brownian;
    let (tau, kept, cont) = crossing_in_cell(start, raw.duration, &raw.jumps, end_cont, level)?;
    let brownian = if g > 0.0 { (cont - drift * tau) / g } else { 0.0 };
    let cont = drift * tau + g * brownian;
    let jumps = raw.jumps[..kept]
        .iter()
        .map(|&(offset, _, size, before, _)| (offset, tau - offset, size, before, cont - before))
        .collect();
    Some(RawCell { duration: tau, brownian, jumps })
}

impl LevyPath {
    /// Rebuilds a path from its stored components.
    pub fn from_components(
        dt: f64,
        applied_drift: f64,
        gaussian_coeff: f64,
        brownian_increments: &[f64],
        jumps_per_cell: &[Vec<(f64, f64)>],
    ) -> LevyPath {
        // (offset, size); continuous displacement split proportionally in time
        let mut b = PathBuilder::new(dt, applied_drift, gaussian_coeff);
        for (k, &db) in brownian_increments.iter().enumerate() {
            let cont = applied_drift * dt + gaussian_coeff * db;
            let jumps = jumps_per_cell
                .get(k)
                .map(|js| {
                    js.iter()
                        .map(|&(offset, size)| {
                            let before = cont * offset / dt;
                            (offset, dt - offset, size, before, cont - before)
                        })
                        .collect()
                })
                .unwrap_or_default();
            b.push(&RawCell { duration: dt, brownian: db, jumps });
        }
        b.finish()
    }

    /// Deterministic polygonal path through `values` (one grid cell per
    /// increment) with no Brownian component; used for hand-built examples.
    pub fn from_values(dt: f64, values: &[f64]) -> LevyPath {
        Self::from_values_with_jumps(dt, values, &[])
    }

    /// Like [`LevyPath::from_values`], with jumps given as
    /// `(cell, offset, size)`. The continuous part of each cell is split
    /// linearly in time around its jumps.
    pub fn from_values_with_jumps(dt: f64, values: &[f64], jumps: &[(usize, f64, f64)]) -> LevyPath {
        let mut b = PathBuilder::new(dt, 0.0, 0.0);
        for k in 0..values.len().saturating_sub(1) {
            let mut cell_jumps: Vec<(f64, f64)> =
                jumps.iter().filter(|j| j.0 == k).map(|&(_, off, size)| (off, size)).collect();
            cell_jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = cell_jumps.iter().map(|j| j.1).sum();
            let cont = values[k + 1] - values[k] - total;
            let raw_jumps = cell_jumps
                .iter()
                .map(|&(offset, size)| {
                    let before = cont * offset / dt;
                    (offset, dt - offset, size, before, cont - before)
                })
                .collect();
            // Store the continuous displacement through the drift slot of
            // this cell by encoding it as a Brownian increment with unit
            // coefficient; the drift is zero for these paths.
            b.path.gaussian_coeff = 1.0;
            b.push(&RawCell { duration: dt, brownian: cont, jumps: raw_jumps });
        }
        b.finish()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jumps(&self) -> &[JumpRecord] {
        &self.jumps
    }

    pub fn applied_drift(&self) -> f64 {
        self.applied_drift
    }

    pub fn gaussian_coeff(&self) -> f64 {
        self.gaussian_coeff
    }

    pub fn brownian_increments(&self) -> &[f64] {
        &self.brownian_increments
    }

    pub fn num_cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn cell_duration(&self, k: usize) -> f64 {
        if k + 1 == self.num_cells() {
            self.last_cell_duration
        } else {
            self.dt
        }
    }

    /// Grid time of point `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.num_cells() && k > 0 {
            (k - 1) as f64 * self.dt + self.last_cell_duration
        } else {
            k as f64 * self.dt
        }
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.num_cells())
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn cell(&self, k: usize) -> Cell<'_> {
        let (a, b) = (self.jump_start[k], self.jump_start[k + 1]);
        Cell {
            index: k,
            start_value: self.values[k],
            end_value: self.values[k + 1],
            duration: self.cell_duration(k),
            brownian: self.brownian_increments[k],
            jumps: &self.jumps[a..b],
            first_jump: a,
        }
    }

    pub fn last_cell(&self) -> Option<Cell<'_>> {
        self.num_cells().checked_sub(1).map(|k| self.cell(k))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell<'_>> {
        (0..self.num_cells()).map(move |k| self.cell(k))
    }

    /// Continuous increment of cell `k`: `drift·Δt + coeff·ΔB`.
    pub fn continuous_increment(&self, k: usize) -> f64 {
        self.applied_drift * self.cell_duration(k) + self.gaussian_coeff * self.brownian_increments[k]
    }

    /// Recomputes the grid values from the stored components; agrees with
    /// [`LevyPath::values`] bit for bit.
    pub fn reconstruct_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        out.push(0.0);
        for k in 0..self.num_cells() {
            let mut incr = self.continuous_increment(k);
            for j in &self.jumps[self.jump_start[k]..self.jump_start[k + 1]] {
                incr += j.size;
            }
            let next = out[k] + incr;
            out.push(next);
        }
        out
    }

    fn grid_index(&self, t: f64) -> Result<usize, PathError> {
        let k = (t / self.dt).round();
        let full = if self.last_cell_duration == self.dt { self.num_cells() } else { self.num_cells() - 1 };
        if !(t >= 0.0) || (k * self.dt - t).abs() > 1e-9 * self.dt.max(t) || k as usize > full {
            return Err(PathError::OffGrid { t, horizon: self.horizon() });
        }
        Ok(k as usize)
    }

    /// `S_t = sup_{s ≤ t} ξ_s` at every grid time, including the tops of jumps
    /// inside cells.
    pub fn supremum_process(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut sup = 0.0f64;
        out.push(sup);
        for cell in self.cells() {
            for j in cell.jumps {
                sup = sup.max(j.pre_value).max(j.post_value());
            }
            sup = sup.max(cell.end_value);
            out.push(sup);
        }
        out
    }

    /// `R_t = S_t - ξ_t ≥ 0` at every grid time.
    pub fn reflected_process(&self) -> Vec<f64> {
        self.supremum_process().iter().zip(&self.values).map(|(s, x)| (s - x).max(0.0)).collect()
    }

    /// `ΔS_{t_i} = (ξ_{t_i} - S_{t_i-})^+` for every jump.
    pub fn supremum_jumps(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.jumps.len());
        let mut sup = 0.0f64;
        for cell in self.cells() {
            for j in cell.jumps {
                sup = sup.max(j.pre_value);
                out.push((j.post_value() - sup).max(0.0));
                sup = sup.max(j.post_value());
            }
            sup = sup.max(cell.end_value);
        }
        out
    }

    /// `I_s(t) = inf_{s ≤ u ≤ t} ξ_u` for grid times `s ≤ t`, including
    /// pre-jump values `ξ_{t_i-}` inside the cells of `(s, t]`.
    pub fn running_infimum(&self, s: f64, t: f64) -> Result<f64, PathError> {
        if s > t {
            return Err(PathError::Order { s, t });
        }
        let (a, b) = (self.grid_index(s)?, self.grid_index(t)?);
        let mut inf = self.values[a];
        for k in a..b {
            let cell = self.cell(k);
            for j in cell.jumps {
                inf = inf.min(j.pre_value);
            }
            inf = inf.min(cell.end_value);
        }
        Ok(inf)
    }

    /// Erosion amounts `ΔI_{t_i}(t) = (z_i + I_{t_i}(t) - ξ_{t_i})^+` for the
    /// jumps in `(0, t]`, with `t` the grid time of point `n`.
    pub fn erosion_amounts(&self, n: usize) -> Vec<f64> {
        let count = self.jump_start[n];
        let mut out = vec![0.0; count];
        let mut inf = self.values[n];
        for k in (0..n).rev() {
            let cell = self.cell(k);
            for (j, jr) in cell.jumps.iter().enumerate().rev() {
                // inf currently covers (t_i, t]; include ξ_{t_i} itself.
                inf = inf.min(jr.post_value());
                out[cell.first_jump + j] = (jr.size + inf - jr.post_value()).max(0.0);
                inf = inf.min(jr.pre_value);
            }
            inf = inf.min(cell.start_value);
        }
        out
    }

    /// Time reversal `s ↦ ξ_t - ξ_{(t-s)-}` on `[0, t]` for a grid time `t`.
    /// Reversing twice reproduces the original path bit for bit.
    pub fn time_reverse(&self, t: f64) -> Result<LevyPath, PathError> {
        let n = self.grid_index(t)?;
        let mut b = PathBuilder::new(self.dt, self.applied_drift, self.gaussian_coeff);
        for k in (0..n).rev() {
            let cell = self.cell(k);
            let jumps = cell
                .jumps
                .iter()
                .rev()
                .map(|j| (j.remaining, j.offset, j.size, j.cont_after, j.cont_before))
                .collect();
            b.push(&RawCell { duration: cell.duration, brownian: cell.brownian, jumps });
        }
        Ok(b.finish())
    }

    /// Prefix of the path on `[0, t]` for a grid time `t`.
    pub fn prefix(&self, t: f64) -> Result<LevyPath, PathError> {
        let n = self.grid_index(t)?;
        Ok(self.prefix_cells(n))
    }

    pub(crate) fn prefix_cells(&self, n: usize) -> LevyPath {
        let mut p = self.clone();
        p.values.truncate(n + 1);
        p.brownian_increments.truncate(n);
        p.jump_start.truncate(n + 1);
        p.jumps.truncate(p.jump_start[n]);
        p.last_cell_duration = if n == self.num_cells() { self.last_cell_duration } else { self.dt };
        p
    }

    /// The path `u ↦ ξ_{t+u} - ξ_t` after grid time `t`.
    pub fn suffix(&self, t: f64) -> Result<LevyPath, PathError> {
        let n = self.grid_index(t)?;
        let mut b = PathBuilder::new(self.dt, self.applied_drift, self.gaussian_coeff);
        for k in n..self.num_cells() {
            let cell = self.cell(k);
            let jumps =
                cell.jumps.iter().map(|j| (j.offset, j.remaining, j.size, j.cont_before, j.cont_after)).collect();
            b.push(&RawCell { duration: cell.duration, brownian: cell.brownian, jumps });
        }
        Ok(b.finish())
    }

    fn raw_cell(&self, k: usize) -> RawCell {
        let cell = self.cell(k);
        RawCell {
            duration: cell.duration,
            brownian: cell.brownian,
            jumps: cell.jumps.iter().map(|j| (j.offset, j.remaining, j.size, j.cont_before, j.cont_after)).collect(),
        }
    }

    /// `T_x = inf{t : ξ_t = -x}`, interpolated linearly inside the crossing
    /// piece. `None` if the path never reaches `-x`.
    pub fn hitting_time(&self, x: f64) -> Option<f64> {
        if x <= 0.0 {
            return Some(0.0);
        }
        let level = -x;
        for k in 0..self.num_cells() {
            let raw = self.raw_cell(k);
            let end_cont = self.continuous_increment(k);
            if let Some((tau, _, _)) = crossing_in_cell(self.values[k], raw.duration, &raw.jumps, end_cont, level) {
                return Some(self.time(k) + tau);
            }
        }
        None
    }

    /// The path stopped at `T_x`, with its last cell shortened to end there.
    pub fn stopped_at(&self, x: f64) -> Option<LevyPath> {
        if x <= 0.0 {
            return Some(self.prefix_cells(0));
        }
        let level = -x;
        for k in 0..self.num_cells() {
            let raw = self.raw_cell(k);
            if let Some(cut) = truncate_raw(&raw, self.values[k], level, self.applied_drift, self.gaussian_coeff) {
                let mut b = PathBuilder { path: self.prefix_cells(k) };
                b.push(&cut);
                return Some(b.finish());
            }
        }
        None
    }

    /// CSV with header `time,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.time(k), v)?;
        }
        Ok(())
    }

    /// CSV with header `time,size,pre_value`.
    pub fn write_jumps_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,size,pre_value")?;
        for j in &self.jumps {
            writeln!(w, "{},{},{}", j.time, j.size, j.pre_value)?;
        }
        Ok(())
    }
}

/// Draws a uniform in `(0, 1]`, for samplers that take logarithms.
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{JumpMeasureSpec, PowerLaw};

    fn sawtooth() -> LevyPath {
        // up 1, down 2, up 3
        LevyPath::from_values(1.0, &[0.0, 1.0, -1.0, 2.0])
    }

    #[test]
    fn null_mechanism_gives_zero_path() {
        let mech = BranchingMechanism::feller(0.0, 0.0);
        let p = sample_path(&mech, &SimConfig::new(0.01, 1.0, 3)).unwrap();
        assert_eq!(p.values().len(), 101);
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(0.1, 1.0, 0);
        assert!(cfg.validate().is_ok());
        cfg.dt = 2.0;
        assert!(matches!(cfg.validate(), Err(PathError::InvalidConfig { field: "dt", .. })));
        cfg.dt = 0.1;
        cfg.truncation_delta = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn power_law_from_zero_needs_truncation() {
        let mech = BranchingMechanism::new(
            0.0,
            1.0,
            JumpMeasureSpec { atoms: vec![], power_law: Some(PowerLaw { c: 1.0, sigma: 1.5, z_min: 0.0, z_max: None }) },
        )
        .unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 0);
        assert!(matches!(sample_path(&mech, &cfg), Err(PathError::InvalidConfig { field: "truncation_delta", .. })));
        let delta = SimConfig::default_truncation(&mech.jumps, 0.01);
        assert!(mech.jumps.mass_above(delta) * 0.01 <= 0.1 + 1e-9);
        let cfg = SimConfig { truncation_delta: delta, ..cfg };
        let p = sample_path(&mech, &cfg).unwrap();
        assert!(p.jumps().iter().all(|j| j.size > delta));
        assert_eq!(SimConfig::default_truncation(&mech.jumps, -1.0), 0.0);
        assert_eq!(SimConfig::default_truncation(&mech.jumps, 0.0), 0.0);
    }

    #[test]
    fn sawtooth_supremum() {
        let p = sawtooth();
        assert_eq!(p.supremum_process(), vec![0.0, 1.0, 1.0, 2.0]);
        assert_eq!(p.reflected_process(), vec![0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn supremum_jump_is_positive_part() {
        // climb to 1, fall to 0.5, jump of 2 mid-cell
        let p = LevyPath::from_values_with_jumps(1.0, &[0.0, 1.0, 0.5, 2.5], &[(2, 0.5, 2.0)]);
        let j = p.jumps()[0];
        assert!((j.pre_value - 0.5).abs() < 1e-15);
        let ds = p.supremum_jumps();
        assert!((ds[0] - (j.post_value() - 1.0)).abs() < 1e-15);
        assert!((p.supremum_process()[3] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn running_infimum_cases() {
        let p = sawtooth();
        assert_eq!(p.running_infimum(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(p.running_infimum(0.0, 3.0).unwrap(), -1.0);
        assert_eq!(p.running_infimum(2.0, 3.0).unwrap(), -1.0);
        assert!(matches!(p.running_infimum(2.0, 1.0), Err(PathError::Order { .. })));
        let down = LevyPath::from_values(0.5, &[0.0, -1.0, -1.5, -3.0]);
        assert_eq!(down.running_infimum(0.0, 1.5).unwrap(), -3.0);
    }

    #[test]
    fn running_infimum_sees_pre_jump_values() {
        // within cell 1 the path falls to -2 before jumping up by 3
        let p = LevyPath::from_values_with_jumps(1.0, &[0.0, 0.0, 1.0], &[(1, 1.0 - 1e-9, 3.0)]);
        let inf = p.running_infimum(1.0, 2.0).unwrap();
        assert!((inf + 2.0).abs() < 1e-6, "{inf}");
    }

    #[test]
    fn hitting_time_of_pure_drift() {
        let mech = BranchingMechanism::feller(1.0, 0.0);
        let p = sample_path(&mech, &SimConfig::new(0.01, 5.0, 0)).unwrap();
        assert!((p.hitting_time(1.234).unwrap() - 1.234).abs() < 1e-9);
        assert_eq!(p.hitting_time(0.0), Some(0.0));
        assert_eq!(p.hitting_time(10.0), None);
        let s = p.stopped_at(1.234).unwrap();
        assert!((s.horizon() - 1.234).abs() < 1e-9);
        assert!((s.final_value() + 1.234).abs() < 1e-12);
    }

    #[test]
    fn sample_until_hit_matches_stopping_a_full_path() {
        let mech = BranchingMechanism::new(0.5, 0.5, JumpMeasureSpec::single_atom(1.0, 0.5)).unwrap();
        let cfg = SimConfig::new(1e-3, 20.0, 11);
        for idx in 0..5 {
            let full = sample_path_indexed(&mech, &cfg, idx).unwrap();
            let a = full.stopped_at(1.0);
            let b = sample_until_hit(&mech, &cfg, idx, 1.0).unwrap();
            assert_eq!(a, b);
            if let Some(s) = b {
                assert!((s.final_value() + 1.0).abs() < 1e-12);
                assert_eq!(Some(s.horizon()), full.hitting_time(1.0));
            }
        }
    }

    #[test]
    fn time_reversal_is_an_involution() {
        let mech = BranchingMechanism::new(0.5, 0.5, JumpMeasureSpec::single_atom(1.0, 2.0)).unwrap();
        let p = sample_path(&mech, &SimConfig::new(0.01, 3.0, 5)).unwrap();
        assert!(!p.jumps().is_empty());
        let r = p.time_reverse(3.0).unwrap();
        assert_eq!(r.values()[0], 0.0);
        assert!((r.final_value() - p.final_value()).abs() < 1e-12);
        assert!(r.jumps().iter().zip(p.jumps().iter().rev()).all(|(a, b)| a.size == b.size));
        let rr = r.time_reverse(3.0).unwrap();
        assert_eq!(rr, p);
        assert!(p.time_reverse(3.5).is_err());
        assert!(p.time_reverse(1.005).is_err());
    }

    #[test]
    fn reconstruction_is_exact() {
        let mech = BranchingMechanism::new(0.2, 0.7, JumpMeasureSpec::single_atom(0.3, 5.0)).unwrap();
        let p = sample_path(&mech, &SimConfig::new(0.005, 4.0, 9)).unwrap();
        assert_eq!(p.reconstruct_values(), p.values());
        let s = p.stopped_at(0.5).unwrap();
        assert_eq!(s.reconstruct_values(), s.values());
    }

    #[test]
    fn csv_export() {
        let p = sawtooth();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("time,value\n0,0\n1,1\n"));
    }
}
