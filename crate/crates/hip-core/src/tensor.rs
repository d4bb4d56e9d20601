//! Dense row-major matrices, deterministic generators, and the binary tensor
//! file format shared by the library and the CLI.
//!
//! Values are stored in 32-bit IEEE-754; every reduction over them (dot
//! products, softmax sums) accumulates in `f64`.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HIPT";

/// Dense rows x cols matrix of `f32`, row-major.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

/// Random generator selector for [`gen_random`].
#[derive(Debug, Clone)]
pub enum Dist {
    /// Independent standard normal entries.
    Gaussian,
    /// Standard normal entries plus `magnitude` added to the first component
    /// of every row listed in `positions`.
    PlantedNeedle { positions: Vec<usize>, magnitude: f32 },
}

impl Tensor2D {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, v: f32) {
        self.values[r * self.cols + c] = v;
    }


    /// `self (n x d) * other (d x m)`, accumulated in `f64`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0f64;
                for t in 0..self.cols {
                    acc += self.get(i, t) as f64 * other.get(t, j) as f64;
                }
                out.set(i, j, acc as f32);
            }
        }
        Ok(out)
    }

    /// Elementwise scale by a scalar.
    pub fn scale(&self, s: f32) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Dot product of two rows, accumulated in `f64`.
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Deterministic tensor generation: a pure function of `(rows, cols, seed, dist)`.
pub fn gen_random(rows: usize, cols: usize, seed: u64, dist: &Dist) -> Result<Tensor2D> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig(format!("gen_random {rows}x{cols}")));
    }
    if let Dist::PlantedNeedle { positions, .. } = dist {
        if let Some(&p) = positions.iter().find(|&&p| p >= rows) {
            return Err(Error::IndexOutOfRange(format!(
                "needle position {p} >= rows {rows}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut values: Vec<f32> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    if let Dist::PlantedNeedle { positions, magnitude } = dist {
        for &p in positions {
            values[p * cols] += magnitude;
        }
    }
    Tensor2D::from_values(rows, cols, values)
}

/// Writes the binary format: magic "HIPT", u32-le rank (2), two u64-le dims,
/// then row-major f32-le values.
pub fn write_tensor(t: &Tensor2D, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 + 16 + 4 * t.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&2u32.to_le_bytes());
    buf.extend_from_slice(&(t.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols as u64).to_le_bytes());
    for v in &t.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads the binary format back; bit-exact round trip with [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<Tensor2D> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_tensor(&bytes)
}

fn parse_tensor(bytes: &[u8]) -> Result<Tensor2D> {
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::TruncatedPayload { expected: 2, got: 0 });
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if rank != 2 {
        return Err(Error::BadRank(rank));
    }
    if bytes.len() < 24 {
        return Err(Error::TruncatedPayload { expected: 2, got: (bytes.len() - 8) / 8 });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .filter(|&n| n > 0 && n <= (isize::MAX as u64) / 4)
        .ok_or(Error::DimensionOverflow { rows, cols })?;
    let payload = &bytes[24..];
    let got = payload.len() / 4;
    if (got as u64) < count || payload.len() % 4 != 0 {
        return Err(Error::TruncatedPayload { expected: count as usize, got });
    }
    let mut values = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let v = f32::from_le_bytes(payload[i * 4..i * 4 + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(i));
        }
        values.push(v);
    }
    Ok(Tensor2D { rows: rows as usize, cols: cols as usize, values })
}
