//! Shaping tables: construction of sandwiched value estimates, gaussian
//! corruption, and verification of the multiplicative sandwich
//! `vt <= V* <= beta * vt`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{TabularMdp, ValueTable};
use crate::rng::RunRng;

#[derive(Debug, Error)]
pub enum ShapingError {
    #[error("beta must be >= 1 (got {0})")]
    InvalidBeta(f64),
    #[error("shaping table shape does not match the value table")]
    ShapeMismatch,
}

/// Per-(h, s) shaping estimates with the quality parameter they were built
/// for and the precomputed global maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapingTable {
    vt: Vec<Vec<f64>>,
    beta: f64,
    vt_max: f64,
}

impl ShapingTable {
    pub fn new(vt: Vec<Vec<f64>>, beta: f64) -> Result<Self, ShapingError> {
        if beta < 1.0 || beta.is_nan() {
            return Err(ShapingError::InvalidBeta(beta));
        }
        let vt_max = max_entry(&vt);
        Ok(ShapingTable { vt, beta, vt_max })
    }

    pub fn value(&self, h: usize, s: usize) -> f64 {
        self.vt[h][s]
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vt_max(&self) -> f64 {
        self.vt_max
    }

    pub fn num_layers(&self) -> usize {
        self.vt.len()
    }

    pub fn layer_len(&self, h: usize) -> usize {
        self.vt[h].len()
    }

    /// Serialize keyed by `"h:s"`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut entries = serde_json::Map::new();
        for (h, layer) in self.vt.iter().enumerate() {
            for (s, &v) in layer.iter().enumerate() {
                entries.insert(format!("{h}:{s}"), serde_json::json!(v));
            }
        }
        serde_json::json!({
            "beta": self.beta,
            "vt_max": self.vt_max,
            "entries": entries,
        })
    }
}

fn max_entry(vt: &[Vec<f64>]) -> f64 {
    vt.iter()
        .flat_map(|layer| layer.iter().copied())
        .fold(0.0_f64, f64::max)
}

fn matches_shape(table: &ShapingTable, mdp: &TabularMdp) -> bool {
    table.num_layers() == mdp.horizon() + 1
        && (0..table.num_layers()).all(|h| table.layer_len(h) == mdp.layer_len(h))
}

/// Shape compatibility check used by consumers of a table.
pub fn check_shape(table: &ShapingTable, mdp: &TabularMdp) -> Result<(), ShapingError> {
    if matches_shape(table, mdp) {
        Ok(())
    } else {
        Err(ShapingError::ShapeMismatch)
    }
}

/// Build `vt = V*/c` with `c` drawn uniformly from `[1, beta]` per state.
/// The sandwich `vt <= V* <= beta*vt` holds pointwise by construction,
/// including in floating point (entries are nudged by an ulp when the
/// division/multiplication rounding would break the upper inequality).
pub fn build_sandwiched(
    vstar: &ValueTable,
    beta: f64,
    rng: &mut RunRng,
) -> Result<ShapingTable, ShapingError> {
    if beta < 1.0 || beta.is_nan() {
        return Err(ShapingError::InvalidBeta(beta));
    }
    let mut vt = Vec::with_capacity(vstar.num_layers());
    for h in 0..vstar.num_layers() {
        let layer = vstar.layer_values(h);
        let mut row = Vec::with_capacity(layer.len());
        for &v in layer {
            let c = rng.uniform(1.0, beta);
            row.push(sandwiched_entry(v, c, beta));
        }
        vt.push(row);
    }
    ShapingTable::new(vt, beta)
}

fn sandwiched_entry(vstar: f64, c: f64, beta: f64) -> f64 {
    if vstar == 0.0 {
        return 0.0;
    }
    let mut vt = (vstar / c).min(vstar);
    // Guard against rounding pushing beta * vt an ulp below vstar.
    while beta * vt < vstar {
        vt = f64::from_bits(vt.to_bits() + 1);
    }
    vt.min(vstar)
}

/// Add zero-mean gaussian noise per entry, clamping at 0 and recomputing
/// the maximum. The sandwich may be broken, intentionally.
pub fn corrupt(table: &ShapingTable, sigma: f64, rng: &mut RunRng) -> ShapingTable {
    let vt: Vec<Vec<f64>> = (0..table.num_layers())
        .map(|h| {
            (0..table.layer_len(h))
                .map(|s| (table.value(h, s) + rng.normal(sigma)).max(0.0))
                .collect()
        })
        .collect();
    let vt_max = max_entry(&vt);
    ShapingTable {
        vt,
        beta: table.beta,
        vt_max,
    }
}

/// Outcome of a pointwise sandwich scan. `worst_ratio` is the largest of
/// `vt/V*` and `V*/(beta*vt)` over non-vacuous states; `holds` iff it is
/// at most 1 (so both inequalities hold everywhere).
#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub holds: bool,
    pub worst_ratio: f64,
    pub violating_states: Vec<(usize, usize)>,
}

pub fn verify_sandwich(
    table: &ShapingTable,
    vstar: &ValueTable,
    mdp: &TabularMdp,
) -> Result<SandwichReport, ShapingError> {
    check_shape(table, mdp)?;
    let beta = table.beta();
    let mut worst: f64 = 0.0;
    let mut violating = Vec::new();
    for h in 0..table.num_layers() {
        for s in 0..table.layer_len(h) {
            let vt = table.value(h, s);
            let v = vstar.v(h, s);
            if vt == 0.0 && v == 0.0 {
                continue; // vacuous
            }
            let lower = if v > 0.0 { vt / v } else { f64::INFINITY };
            let upper = if vt > 0.0 {
                v / (beta * vt)
            } else {
                f64::INFINITY
            };
            let ratio = lower.max(upper);
            if ratio > worst {
                worst = ratio;
            }
            if vt > v || v > beta * vt {
                violating.push((h, s));
            }
        }
    }
    Ok(SandwichReport {
        holds: violating.is_empty(),
        worst_ratio: worst,
        violating_states: violating,
    })
}
