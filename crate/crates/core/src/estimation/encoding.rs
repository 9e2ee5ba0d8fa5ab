use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Fourier features of normalized pixel coordinates:
/// `[u, v, sin(2^k π u), cos(2^k π u), sin(2^k π v), cos(2^k π v), ...]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositionalEncodingConfig {
    pub n_frequencies: usize,
    pub include_raw: bool,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        Self { n_frequencies: 4, include_raw: true }
    }
}

impl PositionalEncodingConfig {
    pub const NONE: Self = Self { n_frequencies: 0, include_raw: false };

    pub fn len(&self) -> usize {
        2 * self.include_raw as usize + 4 * self.n_frequencies
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode_into(&self, u: f64, v: f64, out: &mut Vec<f64>) -> Result<()> {
        if !((-1.0..=1.0).contains(&u) && (-1.0..=1.0).contains(&v)) {
            return Err(contract(format!("encoding coordinates ({u}, {v}) outside [-1, 1]")));
        }
        if self.include_raw {
            out.push(u);
            out.push(v);
        }
        for k in 0..self.n_frequencies {
            let f = (1u64 << k) as f64 * PI;
            out.push((f * u).sin());
            out.push((f * u).cos());
            out.push((f * v).sin());
            out.push((f * v).cos());
        }
        Ok(())
    }
}

pub fn positional_encoding(u: f64, v: f64, config: &PositionalEncodingConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(config.len());
    config.encode_into(u, v, &mut out)?;
    Ok(out)
}

/// Pixel centre to `[-1, 1]` coordinates.
pub fn normalized_coords(col: usize, row: usize, width: usize, height: usize) -> (f64, f64) {
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    (norm(col, width), norm(row, height))
}
