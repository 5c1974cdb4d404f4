use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One latent element: spatial row/column and channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
    pub ch: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize, ch: usize) -> Self {
        Self { row, col, ch }
    }
}

/// Real-valued latent of shape `(h_y, w_y, c_y)`, stored row-major with
/// channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub h_y: usize,
    pub w_y: usize,
    pub c_y: usize,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(h_y: usize, w_y: usize, c_y: usize) -> Self {
        Self {
            h_y,
            w_y,
            c_y,
            values: vec![0.0; h_y * w_y * c_y],
        }
    }

    pub fn from_vec(h_y: usize, w_y: usize, c_y: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h_y * w_y * c_y {
            return Err(Error::Length {
                expected: h_y * w_y * c_y,
                actual: values.len(),
            });
        }
        Ok(Self {
            h_y,
            w_y,
            c_y,
            values,
        })
    }

    pub fn from_fn(h_y: usize, w_y: usize, c_y: usize, mut f: impl FnMut(Coord) -> f64) -> Self {
        let mut values = Vec::with_capacity(h_y * w_y * c_y);
        for row in 0..h_y {
            for col in 0..w_y {
                for ch in 0..c_y {
                    values.push(f(Coord::new(row, col, ch)));
                }
            }
        }
        Self {
            h_y,
            w_y,
            c_y,
            values,
        }
    }

    #[inline]
    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(c.row < self.h_y && c.col < self.w_y && c.ch < self.c_y);
        (c.row * self.w_y + c.col) * self.c_y + c.ch
    }

    #[inline]
    pub fn get(&self, c: Coord) -> f64 {
        self.values[self.index(c)]
    }

    #[inline]
    pub fn set(&mut self, c: Coord, v: f64) {
        let i = self.index(c);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The `c_y`-vector at one spatial unit.
    pub fn unit(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.w_y + col) * self.c_y;
        &self.values[start..start + self.c_y]
    }

    pub fn unit_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.w_y + col) * self.c_y;
        &mut self.values[start..start + self.c_y]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.h_y == other.h_y && self.w_y == other.w_y && self.c_y == other.c_y
    }

    /// Little-endian dump: `u16 h_y, u16 w_y, u16 c_y`, then f32 values.
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.values.len());
        for d in [self.h_y, self.w_y, self.c_y] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }
}
