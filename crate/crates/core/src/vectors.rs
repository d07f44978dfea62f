//! Flat parameter vectors and deterministic random streams.
//!
//! Every model, update, and crafted attack vector in the simulator is a
//! [`ParamVector`]. Randomness flows exclusively through [`RngStream`]s that
//! are derived from a `(master_seed, round, actor)` lineage, so any run can be
//! replayed bit-for-bit regardless of how work is scheduled across threads.

use std::fmt;
use std::ops::Index;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// A dense vector of finite `f64` values.
///
/// Construction through [`ParamVector::new`] rejects NaN and infinities, and
/// every arithmetic helper re-checks its output.
#[derive(Clone, PartialEq, Default)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.values.len() <= 8 {
            f.debug_tuple("ParamVector").field(&self.values).finish()
        } else {
            write!(f, "ParamVector(dim={}, [{}, {}, ...])", self.values.len(), self.values[0], self.values[1])
        }
    }
}

fn check_finite(values: &[f64]) -> Result<(), VectorError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(VectorError::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `factor · self`.
    pub fn scaled(&self, factor: f64) -> Result<Self, VectorError> {
        Self::new(self.values.iter().map(|v| factor * v).collect())
    }

    /// Inner product, accumulated in index order.
    pub fn dot(&self, other: &Self) -> Result<f64, VectorError> {
        ensure_same_dim(self, other)?;
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        if !acc.is_finite() {
            return Err(VectorError::NonFinite { index: 0, value: acc });
        }
        Ok(acc)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = VectorError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

fn ensure_same_dim(a: &ParamVector, b: &ParamVector) -> Result<(), VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(())
}

/// `ca·a + cb·b`, element-wise.
pub fn linear_combine(ca: f64, a: &ParamVector, cb: f64, b: &ParamVector) -> Result<ParamVector, VectorError> {
    ensure_same_dim(a, b)?;
    let values = a.values.iter().zip(&b.values).map(|(x, y)| ca * x + cb * y).collect();
    ParamVector::new(values)
}

/// Euclidean norm, summed in index order.
///
/// Entries are pre-scaled by the largest magnitude so that vectors with
/// entries near `1e154` (reachable with λ-scaled updates) do not overflow
/// while squaring.
pub fn l2_norm(a: &ParamVector) -> Result<f64, VectorError> {
    check_finite(&a.values)?;
    let scale = a.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for v in &a.values {
        let s = v / scale;
        acc += s * s;
    }
    let norm = scale * acc.sqrt();
    if !norm.is_finite() {
        return Err(VectorError::NonFinite { index: 0, value: norm });
    }
    Ok(norm)
}

/// Where a stream sits in the run: which seed, which round, which actor.
///
/// Round `-1` is reserved for set-up work that happens before the first
/// round (global model initialization, data generation, partitioning).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lineage {
    pub master_seed: u64,
    pub round: i64,
    pub actor: u64,
}

/// A deterministic random stream backed by ChaCha12.
///
/// Streams are never shared: each consumer derives its own with
/// [`derive_stream`].
#[derive(Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
    lineage: Lineage,
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream").field("lineage", &self.lineage).finish()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the stream for one `(master_seed, round, actor)` lineage.
///
/// The three components are chained through SplitMix64 into a 256-bit
/// ChaCha key, so changing any one of them yields an unrelated stream.
pub fn derive_stream(master_seed: u64, round: i64, actor: u64) -> RngStream {
    let h0 = splitmix64(master_seed);
    let h1 = splitmix64(h0 ^ round as u64);
    let h2 = splitmix64(h1 ^ actor);
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(h2.wrapping_add((i as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    RngStream {
        rng: ChaCha12Rng::from_seed(seed),
        lineage: Lineage { master_seed, round, actor },
    }
}

impl RngStream {
    pub fn lineage(&self) -> Lineage {
        self.lineage
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One standard-normal draw using the Marsaglia polar method.
    ///
    /// The polar method produces pairs; the second value is discarded so the
    /// stream position after `k` draws does not depend on call history.
    pub fn next_gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_unit() - 1.0;
            let v = 2.0 * self.next_unit() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// `dim` independent N(0, 1) draws.
pub fn gaussian_vector(stream: &mut RngStream, dim: usize) -> ParamVector {
    let values = (0..dim).map(|_| stream.next_gaussian()).collect();
    ParamVector { values }
}
