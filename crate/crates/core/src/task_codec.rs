//! Binary coil-switching task vectors and their fixed-width embedding.
//!
//! Text forms are 1-indexed (`'1'` at position 1 means coil 1 is present);
//! indices are 0-based in memory.

use rand::Rng;

use crate::coil_sim::MAX_COILS;
use crate::error::{Error, Result};

/// Width of the hypernetwork input.
pub const EMBED_WIDTH: usize = MAX_COILS;

/// Presence (true) / absence (false) of each receiver coil.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TaskVector {
    bits: Vec<bool>,
}

impl TaskVector {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() || bits.len() > MAX_COILS {
            return Err(Error::invalid(format!(
                "task vector length {} outside [1, {MAX_COILS}]",
                bits.len()
            )));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::invalid("task vector has no active coil"));
        }
        Ok(Self { bits })
    }

    /// All `n_c` coils present.
    pub fn all(n_c: usize) -> Result<Self> {
        Self::from_bits(vec![true; n_c])
    }

    pub fn n_coils(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_active(&self, coil: usize) -> bool {
        self.bits[coil]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0-based indices of the present coils.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// 1-based indices of the absent coils.
    pub fn absent_one_based(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i + 1).collect()
    }

    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl std::fmt::Display for TaskVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

impl std::str::FromStr for TaskVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_bitstring(s)
    }
}

/// Parses an ASCII `0`/`1` string; the first character is coil 1.
pub fn parse_bitstring(s: &str) -> Result<TaskVector> {
    let bits = s
        .trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::invalid(format!("invalid character '{other}' in task bitstring"))),
        })
        .collect::<Result<Vec<_>>>()?;
    TaskVector::from_bits(bits)
}

/// Builds a task vector from 1-based indices of the present coils.
pub fn encode_config(present: &[usize], n_c: usize) -> Result<TaskVector> {
    if n_c == 0 || n_c > MAX_COILS {
        return Err(Error::invalid(format!("coil count {n_c} outside [1, {MAX_COILS}]")));
    }
    if present.is_empty() {
        return Err(Error::invalid("empty coil configuration"));
    }
    let mut bits = vec![false; n_c];
    for &idx in present {
        if idx == 0 || idx > n_c {
            return Err(Error::invalid(format!("coil index {idx} outside [1, {n_c}]")));
        }
        bits[idx - 1] = true;
    }
    TaskVector::from_bits(bits)
}

/// Draws a uniformly random configuration with exactly `k` of `n_c` coils present.
pub fn sample_config<R: Rng + ?Sized>(n_c: usize, k: usize, rng: &mut R) -> Result<TaskVector> {
    if n_c == 0 || n_c > MAX_COILS {
        return Err(Error::invalid(format!("coil count {n_c} outside [1, {MAX_COILS}]")));
    }
    if k == 0 || k > n_c {
        return Err(Error::invalid(format!("cannot keep {k} of {n_c} coils")));
    }
    let mut bits = vec![false; n_c];
    for idx in rand::seq::index::sample(rng, n_c, k) {
        bits[idx] = true;
    }
    TaskVector::from_bits(bits)
}

/// Real-valued hypernetwork input: the task bits followed by 1.0 padding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedTask {
    pub values: [f64; EMBED_WIDTH],
}

impl EmbeddedTask {
    /// The all-ones conditioning used by the task-invariant baseline.
    pub fn all_ones() -> Self {
        Self {
            values: [1.0; EMBED_WIDTH],
        }
    }

    /// Recovers the first `n_c` bits.
    pub fn decode(&self, n_c: usize) -> Result<TaskVector> {
        if n_c > EMBED_WIDTH {
            return Err(Error::invalid(format!("coil count {n_c} exceeds embedding width")));
        }
        TaskVector::from_bits(self.values[..n_c].iter().map(|&v| v > 0.5).collect())
    }
}

pub fn embed_task(v: &TaskVector) -> Result<EmbeddedTask> {
    if v.n_coils() > EMBED_WIDTH {
        return Err(Error::invalid(format!("coil count {} exceeds embedding width", v.n_coils())));
    }
    let mut values = [1.0; EMBED_WIDTH];
    for (dst, &b) in values.iter_mut().zip(v.bits()) {
        *dst = if b { 1.0 } else { 0.0 };
    }
    Ok(EmbeddedTask { values })
}
