//! The exploration process `ρ_t` as a stack, and the height process it carries.
//!
//! `ρ_t` has a Lebesgue part of density `β` on `[0, H_t]` plus one atom per
//! jump that has not been eroded yet, sitting at the height where the jump
//! happened. Upward moves of `ξ` grow the top segment, downward moves erode
//! mass from the top, jumps push atoms. `H_t` is the sum of segment lengths.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::levy_path::{Cell, LevyPath, PathEvent};

/// Relative slack used when deciding that a record is exhausted.
const SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplorationError {
    #[error("height process needs beta > 0 (got {0}); the beta = 0 case is not supported")]
    Unsupported(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StackRecord {
    /// Lebesgue piece of height extent `height_length` and mass `β·height_length`.
    Segment { height_length: f64 },
    /// Jump atom of remaining `mass` located at `atom_height`.
    Atom { mass: f64, atom_height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationStack {
    beta: f64,
    records: Vec<StackRecord>,
    height: f64,
    mass: f64,
}

impl ExplorationStack {
    pub fn new(beta: f64) -> Result<Self, ExplorationError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ExplorationError::Unsupported(beta));
        }
        Ok(Self { beta, records: Vec::new(), height: 0.0, mass: 0.0 })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn records(&self) -> &[StackRecord] {
        &self.records
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn total_mass(&self) -> f64 {
        self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Applies a continuous move of `ξ`. Returns the part of a downward move
    /// that could not be taken from the stack because it ran empty; the caller
    /// accounts for it as a new running infimum.
    pub fn advance_continuous(&mut self, d_xi: f64) -> f64 {
        if d_xi > 0.0 {
            let len = d_xi / self.beta;
            match self.records.last_mut() {
                Some(StackRecord::Segment { height_length }) => *height_length += len,
                _ => self.records.push(StackRecord::Segment { height_length: len }),
            }
            self.height += len;
            self.mass += d_xi;
            0.0
        } else if d_xi < 0.0 {
            self.erode(-d_xi)
        } else {
            0.0
        }
    }

    /// Pushes an atom of mass `z` at the current height.
    pub fn push_jump(&mut self, z: f64) {
        debug_assert!(z > 0.0);
        self.records.push(StackRecord::Atom { mass: z, atom_height: self.height });
        self.mass += z;
    }

    /// Removes mass `amount` from the top and returns the uncovered deficit.
    pub fn erode(&mut self, amount: f64) -> f64 {
        let mut rem = amount;
        while rem > 0.0 {
            let Some(top) = self.records.last_mut() else {
                self.height = 0.0;
                self.mass = 0.0;
                return rem;
            };
            match top {
                StackRecord::Atom { mass, .. } => {
                    if *mass - rem <= SLACK * mass.max(1.0) {
                        rem -= *mass;
                        self.mass -= *mass;
                        self.records.pop();
                    } else {
                        *mass -= rem;
                        self.mass -= rem;
                        rem = 0.0;
                    }
                }
                StackRecord::Segment { height_length } => {
                    let seg_mass = self.beta * *height_length;
                    if seg_mass - rem <= SLACK * seg_mass.max(1.0) {
                        rem -= seg_mass;
                        self.mass -= seg_mass;
                        self.records.pop();
                        self.height = match self.records.last() {
                            Some(StackRecord::Atom { atom_height, .. }) => *atom_height,
                            Some(StackRecord::Segment { .. }) => self.segment_extent(),
                            None => 0.0,
                        };
                    } else {
                        let dh = rem / self.beta;
                        *height_length -= dh;
                        self.height -= dh;
                        self.mass -= rem;
                        rem = 0.0;
                    }
                }
            }
        }
        if self.records.is_empty() {
            self.height = 0.0;
            self.mass = 0.0;
        }
        rem.max(0.0)
    }

    fn segment_extent(&self) -> f64 {
        self.records
            .iter()
            .map(|r| match r {
                StackRecord::Segment { height_length } => *height_length,
                StackRecord::Atom { .. } => 0.0,
            })
            .sum()
    }

    /// The operator `k_a`: a copy with mass `a` eroded from the top.
    pub fn truncate_mass(&self, a: f64) -> Self {
        let mut out = self.clone();
        if a > 0.0 {
            out.erode(a);
        }
        out
    }

    /// `[lower, upper]`: `upper` stacked on top of `lower`, its atom heights
    /// shifted by `H(lower)`.
    pub fn concatenate(lower: &Self, upper: &Self) -> Self {
        debug_assert_eq!(lower.beta, upper.beta);
        let mut out = lower.clone();
        let shift = lower.height;
        for r in &upper.records {
            match *r {
                StackRecord::Segment { height_length } => match out.records.last_mut() {
                    Some(StackRecord::Segment { height_length: top }) => *top += height_length,
                    _ => out.records.push(StackRecord::Segment { height_length }),
                },
                StackRecord::Atom { mass, atom_height } => {
                    out.records.push(StackRecord::Atom { mass, atom_height: atom_height + shift })
                }
            }
        }
        out.height = lower.height + upper.height;
        out.mass = lower.mass + upper.mass;
        out
    }

    /// `ρ([0, h])`.
    pub fn mass_below(&self, h: f64) -> f64 {
        let mut acc = 0.0;
        let mut level = 0.0;
        for r in &self.records {
            match *r {
                StackRecord::Segment { height_length } => {
                    let covered = (h - level).clamp(0.0, height_length);
                    acc += self.beta * covered;
                    level += height_length;
                }
                StackRecord::Atom { mass, atom_height } => {
                    if atom_height <= h {
                        acc += mass;
                    }
                }
            }
        }
        acc
    }

    /// Runs the exploration along cells `0..n` of `path`, starting from `self`.
    /// Returns the total deficit, i.e. how far the running infimum dropped.
    pub fn run(&mut self, path: &LevyPath, n: usize) -> f64 {
        let mut deficit = 0.0;
        for k in 0..n {
            for ev in path.cell(k).events() {
                match ev {
                    PathEvent::Continuous { from, to, .. } => deficit += self.advance_continuous(to - from),
                    PathEvent::Jump { size, .. } => self.push_jump(size),
                }
            }
        }
        deficit
    }

    /// Snapshot dump, records bottom to top.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stack serializes")
    }
}

/// Height process sampled at the grid times of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightTrajectory {
    /// `H` at every grid point of the path.
    pub heights: Vec<f64>,
    /// `H_{t_i}` for every jump of the path.
    pub jump_heights: Vec<f64>,
    /// `-I_0(t)` at every grid point.
    pub infimum_depth: Vec<f64>,
    /// Total mass of `ρ` at every grid point.
    pub masses: Vec<f64>,
    times: Vec<f64>,
}

impl HeightTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Duration of cell `k`.
    pub fn duration(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with header `time,height`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,height")?;
        for (t, h) in self.times.iter().zip(&self.heights) {
            writeln!(w, "{t},{h}")?;
        }
        Ok(())
    }
}

/// Incremental height computation, one cell at a time.
#[derive(Debug, Clone)]
pub struct HeightTracker {
    stack: ExplorationStack,
    depth: f64,
    heights: Vec<f64>,
    jump_heights: Vec<f64>,
    infimum_depth: Vec<f64>,
    masses: Vec<f64>,
    times: Vec<f64>,
}

impl HeightTracker {
    pub fn new(beta: f64) -> Result<Self, ExplorationError> {
        Ok(Self {
            stack: ExplorationStack::new(beta)?,
            depth: 0.0,
            heights: vec![0.0],
            jump_heights: Vec::new(),
            infimum_depth: vec![0.0],
            masses: vec![0.0],
            times: vec![0.0],
        })
    }

    pub fn stack(&self) -> &ExplorationStack {
        &self.stack
    }

    pub fn height(&self) -> f64 {
        self.stack.height()
    }

    /// Heights recorded so far, one per grid point.
    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn jump_heights(&self) -> &[f64] {
        &self.jump_heights
    }

    /// `-I_0` at the last processed grid point.
    pub fn depth(&self) -> f64 {
        self.depth
    }

    /// Advances the stack through the next cell without recording anything.
    pub fn push_cell_light(&mut self, cell: Cell<'_>) {
        if cell.jumps.is_empty() {
            self.depth += self.stack.advance_continuous(cell.end_value - cell.start_value);
            return;
        }
        for ev in cell.events() {
            match ev {
                PathEvent::Continuous { from, to, .. } => self.depth += self.stack.advance_continuous(to - from),
                PathEvent::Jump { size, .. } => self.stack.push_jump(size),
            }
        }
    }

    /// Processes the next cell of the path.
    pub fn push_cell(&mut self, cell: Cell<'_>, end_time: f64) {
        if cell.jumps.is_empty() {
            self.depth += self.stack.advance_continuous(cell.end_value - cell.start_value);
        } else {
            for ev in cell.events() {
                match ev {
                    PathEvent::Continuous { from, to, .. } => self.depth += self.stack.advance_continuous(to - from),
                    PathEvent::Jump { size, .. } => {
                        self.jump_heights.push(self.stack.height());
                        self.stack.push_jump(size);
                    }
                }
            }
        }
        self.heights.push(self.stack.height());
        self.infimum_depth.push(self.depth);
        self.masses.push(self.stack.total_mass());
        self.times.push(end_time);
    }

    pub fn finish(self) -> HeightTrajectory {
        HeightTrajectory {
            heights: self.heights,
            jump_heights: self.jump_heights,
            infimum_depth: self.infimum_depth,
            masses: self.masses,
            times: self.times,
        }
    }
}

/// Computes `H` along the whole path in one pass over the stack.
pub fn height_trajectory(path: &LevyPath, beta: f64) -> Result<HeightTrajectory, ExplorationError> {
    let mut tracker = HeightTracker::new(beta)?;
    for (k, cell) in path.cells().enumerate() {
        tracker.push_cell(cell, path.time(k + 1));
    }
    Ok(tracker.finish())
}

/// Direct evaluation of
/// `βH_t = ξ_t - I_0(t) - Σ_{t_i ≤ t} (z_i + I_{t_i}(t) - ξ_{t_i})^+`
/// at grid point `n`. Quadratic in the path length; used as a reference.
pub fn height_brute_force(path: &LevyPath, beta: f64, n: usize) -> f64 {
    let xi = path.values()[n];
    let inf0 = path.running_infimum(0.0, path.time(n)).unwrap_or(0.0).min(0.0);
    let eroded: f64 = path.erosion_amounts(n).iter().sum();
    (xi - inf0 - eroded) / beta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack() -> ExplorationStack {
        ExplorationStack::new(0.5).unwrap()
    }

    #[test]
    fn empty_stack() {
        let s = stack();
        assert_eq!((s.height(), s.total_mass()), (0.0, 0.0));
        assert!(ExplorationStack::new(0.0).is_err());
    }

    #[test]
    fn up_then_down_cancels() {
        let mut s = stack();
        s.advance_continuous(0.7);
        s.push_jump(0.3);
        let before = s.clone();
        s.advance_continuous(1.25);
        assert_eq!(s.advance_continuous(-1.25), 0.0);
        assert!((s.height() - before.height()).abs() < 1e-12);
        assert!((s.total_mass() - before.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn partial_atom_erosion() {
        // up 2, jump 5, down 3 leaves 2 of the atom
        let mut s = stack();
        s.advance_continuous(2.0);
        s.push_jump(5.0);
        s.advance_continuous(-3.0);
        assert_eq!(s.records().len(), 2);
        match s.records()[1] {
            StackRecord::Atom { mass, atom_height } => {
                assert!((mass - 2.0).abs() < 1e-15);
                assert_eq!(atom_height, 4.0);
            }
            _ => panic!("atom expected"),
        }
        assert_eq!(s.height(), 4.0);
    }

    #[test]
    fn push_keeps_height() {
        let mut s = stack();
        s.advance_continuous(1.0);
        s.push_jump(0.4);
        assert_eq!(s.height(), 2.0);
        assert!((s.total_mass() - 1.4).abs() < 1e-15);
        s.erode(0.4);
        assert!((s.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(s.records(), &[StackRecord::Segment { height_length: 2.0 }]);
    }

    #[test]
    fn deficit_when_emptied() {
        let mut s = stack();
        s.advance_continuous(1.0);
        let d = s.advance_continuous(-1.5);
        assert!((d - 0.5).abs() < 1e-15);
        assert!(s.is_empty());
        assert_eq!(s.height(), 0.0);
    }

    #[test]
    fn truncate_mass_cases() {
        let mut s = stack();
        s.advance_continuous(1.0);
        s.push_jump(2.0);
        assert_eq!(s.truncate_mass(0.0), s);
        assert!(s.truncate_mass(10.0).is_empty());
        let half = s.truncate_mass(1.0);
        assert!((half.total_mass() - 2.0).abs() < 1e-15);
        assert_eq!(half.height(), s.height());
    }

    #[test]
    fn concatenation() {
        let mut lower = stack();
        lower.advance_continuous(1.0);
        lower.push_jump(0.5);
        let mut upper = stack();
        upper.advance_continuous(0.5);
        upper.push_jump(0.25);
        assert_eq!(ExplorationStack::concatenate(&lower, &stack()), lower);
        let c = ExplorationStack::concatenate(&lower, &upper);
        assert_eq!(c.total_mass(), lower.total_mass() + upper.total_mass());
        assert_eq!(c.height(), 3.0);
        assert_eq!(c.records().last(), Some(&StackRecord::Atom { mass: 0.25, atom_height: 3.0 }));
    }

    #[test]
    fn mass_below_profile() {
        let mut s = stack();
        s.advance_continuous(1.0); // segment [0, 2]
        s.push_jump(3.0); // atom at 2
        s.advance_continuous(0.5); // segment [2, 3]
        assert!((s.mass_below(1.0) - 0.5).abs() < 1e-15);
        assert!((s.mass_below(2.0) - 4.0).abs() < 1e-15);
        assert!((s.mass_below(9.0) - s.total_mass()).abs() < 1e-15);
    }

    #[test]
    fn jump_free_height_is_reflected_path() {
        let p = LevyPath::from_values(0.1, &[0.0, 0.4, -0.2, 0.1, -0.5, 0.3]);
        let h = height_trajectory(&p, 0.5).unwrap();
        let mut inf: f64 = 0.0;
        for (k, &v) in p.values().iter().enumerate() {
            inf = inf.min(v);
            assert!((h.heights[k] - (v - inf) / 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn eroded_jump_no_longer_counts() {
        // up 1, jump 1, fall 3 (the atom is gone), rise 0.5
        let p = LevyPath::from_values_with_jumps(1.0, &[0.0, 1.0, 2.0, -1.0, -0.5], &[(1, 0.0, 1.0)]);
        let h = height_trajectory(&p, 1.0).unwrap();
        assert_eq!(h.jump_heights, vec![1.0]);
        assert!((h.heights[4] - 0.5).abs() < 1e-12);
        for n in 0..=4 {
            assert!((h.heights[n] - height_brute_force(&p, 1.0, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_and_json() {
        let p = LevyPath::from_values(0.5, &[0.0, 1.0]);
        let h = height_trajectory(&p, 1.0).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,height\n0,0\n0.5,1\n");
        let mut s = stack();
        s.push_jump(1.0);
        assert_eq!(s.to_json(), r#"{"beta":0.5,"records":[{"kind":"atom","mass":1.0,"atom_height":0.0}],"height":0.0,"mass":1.0}"#);
    }
}
