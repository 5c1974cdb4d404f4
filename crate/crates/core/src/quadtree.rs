//! Quadtree partition and fusion, and the four-step coding schedule.
//!
//! The latent's channels split into four groups; each 2x2 spatial cell has four
//! positions `p0=(0,0) p1=(0,1) p2=(1,0) p3=(1,1)`. The Latin square
//! [`STEP_OF`] assigns every (group, position) pair a coding step, so each step
//! codes exactly one group (a quarter of the channels) at every position.

use crate::error::{Error, Result};
use crate::latent::{Coord, LatentGrid};

pub const STEPS: usize = 4;

/// `STEP_OF[group][position]`.
pub const STEP_OF: [[usize; 4]; 4] = [[0, 1, 2, 3], [3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]];

/// `POSITION_AT[group][step]`, the inverse of [`STEP_OF`] along each row.
pub const POSITION_AT: [[usize; 4]; 4] = invert_rows(STEP_OF);

const fn invert_rows(square: [[usize; 4]; 4]) -> [[usize; 4]; 4] {
    let mut out = [[0; 4]; 4];
    let mut g = 0;
    while g < 4 {
        let mut p = 0;
        while p < 4 {
            out[g][square[g][p]] = p;
            p += 1;
        }
        g += 1;
    }
    out
}

/// Spatial offsets of the cross window used at steps 1 and 2.
const CROSS: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
/// Cross plus diagonals, used at step 3.
const CROSS_DIAG: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[inline]
pub fn position_of(row: usize, col: usize) -> usize {
    2 * (row & 1) + (col & 1)
}

#[inline]
pub fn position_offset(p: usize) -> (usize, usize) {
    (p >> 1, p & 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodingSchedule {
    pub h_y: usize,
    pub w_y: usize,
    pub c_y: usize,
}

pub fn build_schedule(h_y: usize, w_y: usize, c_y: usize) -> Result<CodingSchedule> {
    if !h_y.is_multiple_of(2) || !w_y.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "latent spatial dims must be even, got {h_y}x{w_y}"
        )));
    }
    if c_y == 0 || !c_y.is_multiple_of(4) {
        return Err(Error::Dimension(format!(
            "channel count must be a positive multiple of 4, got {c_y}"
        )));
    }
    Ok(CodingSchedule { h_y, w_y, c_y })
}

impl CodingSchedule {
    pub fn for_grid(y: &LatentGrid) -> Result<Self> {
        build_schedule(y.h_y, y.w_y, y.c_y)
    }

    pub fn matches(&self, y: &LatentGrid) -> bool {
        self.h_y == y.h_y && self.w_y == y.w_y && self.c_y == y.c_y
    }

    pub fn group_channels(&self) -> usize {
        self.c_y / 4
    }

    pub fn group_of(&self, ch: usize) -> usize {
        ch / self.group_channels()
    }

    pub fn step_of(&self, c: Coord) -> usize {
        STEP_OF[self.group_of(c.ch)][position_of(c.row, c.col)]
    }

    /// The group coded at spatial position `(row, col)` during `step`.
    pub fn group_at(&self, row: usize, col: usize, step: usize) -> usize {
        let p = position_of(row, col);
        (0..4)
            .find(|&g| STEP_OF[g][p] == step)
            .expect("Latin square")
    }

    /// Number of elements coded per step.
    pub fn step_len(&self) -> usize {
        self.h_y * self.w_y * self.c_y / STEPS
    }

    /// Coordinates coded at `step`, in coding order: cells in raster order,
    /// then groups, then channels within the group. This is the raster order
    /// of the concat-mode partition tensor for that step.
    pub fn coords_at_step(&self, step: usize) -> impl Iterator<Item = Coord> + '_ {
        let cg = self.group_channels();
        let (ch2, cw2) = (self.h_y / 2, self.w_y / 2);
        (0..ch2 * cw2).flat_map(move |cell| {
            let (ci, cj) = (cell / cw2, cell % cw2);
            (0..4).flat_map(move |g| {
                let (dr, dc) = position_offset(POSITION_AT[g][step]);
                let (row, col) = (2 * ci + dr, 2 * cj + dc);
                (g * cg..(g + 1) * cg).map(move |ch| Coord::new(row, col, ch))
            })
        })
    }

    fn window(step: usize) -> &'static [(isize, isize)] {
        match step {
            0 => &[],
            1 | 2 => &CROSS,
            _ => &CROSS_DIAG,
        }
    }

    /// Already-coded references for `coord`, which must be coded at `step`.
    ///
    /// Each in-grid neighbour of the step's window contributes one reference.
    /// The reference keeps the coordinate's own channel when that channel is
    /// already coded at the neighbour; otherwise it takes the same offset
    /// within the group coded at the neighbour during `step - 1`.
    pub fn context_refs(&self, step: usize, coord: Coord) -> Result<Vec<Coord>> {
        if coord.row >= self.h_y || coord.col >= self.w_y || coord.ch >= self.c_y {
            return Err(Error::Dimension(format!("{coord:?} outside the grid")));
        }
        let actual = self.step_of(coord);
        if actual != step {
            return Err(Error::StepMismatch {
                coord,
                requested: step,
                actual,
            });
        }
        let mut refs = Vec::with_capacity(8);
        self.for_each_ref(step, coord, |c| refs.push(c));
        Ok(refs)
    }

    /// Unchecked reference enumeration used on hot paths.
    #[inline]
    pub(crate) fn for_each_ref(&self, step: usize, coord: Coord, mut f: impl FnMut(Coord)) {
        let cg = self.group_channels();
        let group = coord.ch / cg;
        let offset = coord.ch % cg;
        for &(dr, dc) in Self::window(step) {
            let row = coord.row as isize + dr;
            let col = coord.col as isize + dc;
            if row < 0 || col < 0 || row >= self.h_y as isize || col >= self.w_y as isize {
                continue;
            }
            let (row, col) = (row as usize, col as usize);
            let p = position_of(row, col);
            let ch = if STEP_OF[group][p] < step {
                coord.ch
            } else {
                let g = (0..4)
                    .find(|&g| STEP_OF[g][p] == step - 1)
                    .expect("Latin square");
                g * cg + offset
            };
            f(Coord::new(row, col, ch));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Groups stay side by side along channels: each step tensor is
    /// `(h_y/2, w_y/2, c_y)`. Used for entropy estimation.
    Concat,
    /// Groups are summed: each step tensor is `(h_y/2, w_y/2, c_y/4)`.
    /// Used for feature coding; not invertible.
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedLatent {
    pub mode: PartitionMode,
    pub steps: [LatentGrid; STEPS],
}

pub fn partition(y: &LatentGrid, mode: PartitionMode) -> Result<PartitionedLatent> {
    let schedule = CodingSchedule::for_grid(y)?;
    let cg = schedule.group_channels();
    let (h2, w2) = (y.h_y / 2, y.w_y / 2);
    let steps = std::array::from_fn(|step| match mode {
        PartitionMode::Concat => {
            let values = schedule.coords_at_step(step).map(|c| y.get(c)).collect();
            LatentGrid::from_vec(h2, w2, y.c_y, values).expect("step size")
        }
        PartitionMode::Add => LatentGrid::from_fn(h2, w2, cg, |c| {
            (0..4)
                .map(|g| {
                    let (dr, dc) = position_offset(POSITION_AT[g][step]);
                    y.get(Coord::new(2 * c.row + dr, 2 * c.col + dc, g * cg + c.ch))
                })
                .sum()
        }),
    });
    Ok(PartitionedLatent { mode, steps })
}

pub fn fuse(p: &PartitionedLatent) -> Result<LatentGrid> {
    if p.mode == PartitionMode::Add {
        return Err(Error::AdditiveFusion);
    }
    let first = &p.steps[0];
    if p.steps.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::Dimension("step tensors differ in shape".into()));
    }
    let schedule = build_schedule(2 * first.h_y, 2 * first.w_y, first.c_y)?;
    let mut y = LatentGrid::zeros(schedule.h_y, schedule.w_y, schedule.c_y);
    for (step, tensor) in p.steps.iter().enumerate() {
        for (c, &v) in schedule.coords_at_step(step).zip(tensor.values()) {
            y.set(c, v);
        }
    }
    Ok(y)
}
