//! Lossy compression operators and the error-feedback accumulator.
//!
//! Every operator satisfies `‖Q(w) − w‖² ≤ γ‖w‖²` for its `γ < 1`. Payloads are
//! kept dense; sparsity is a property of the values, not of the format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config_err, Error, Result};
use crate::objectives::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compressor {
    Identity,
    /// Keep the `K` largest-magnitude entries.
    TopK(usize),
    OneBit,
}

impl Compressor {
    /// Contraction factor for vectors of dimension `d`.
    pub fn gamma(&self, d: usize) -> f64 {
        match *self {
            Compressor::Identity => 0.0,
            Compressor::TopK(k) => (d.saturating_sub(k)) as f64 / d as f64,
            Compressor::OneBit => 1.0 - 1.0 / d as f64,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            Compressor::TopK(k) if k == 0 || k > d => Err(config_err(format!(
                "topk needs 1 <= K <= d, got K={k}, d={d}"
            ))),
            _ => Ok(()),
        }
    }

    /// True when the operator is the identity on dimension `d`.
    pub fn is_lossless(&self, d: usize) -> bool {
        match *self {
            Compressor::Identity => true,
            Compressor::TopK(k) => k == d,
            Compressor::OneBit => d == 1,
        }
    }

    pub fn apply(&self, w: &ParamVector) -> Result<ParamVector> {
        match *self {
            Compressor::Identity => Ok(w.clone()),
            Compressor::TopK(k) => topk(w, k),
            Compressor::OneBit => Ok(onebit(w)),
        }
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compressor::Identity => write!(f, "identity"),
            Compressor::TopK(k) => write!(f, "topk:{k}"),
            Compressor::OneBit => write!(f, "onebit"),
        }
    }
}

impl FromStr for Compressor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "identity" | "none" => Ok(Compressor::Identity),
            "onebit" | "one-bit" => Ok(Compressor::OneBit),
            _ => {
                let k = s
                    .strip_prefix("topk:")
                    .ok_or_else(|| config_err(format!("unknown compressor `{s}`")))?;
                let k: usize = k
                    .parse()
                    .map_err(|_| config_err(format!("bad topk parameter in `{s}`")))?;
                Ok(Compressor::TopK(k))
            }
        }
    }
}

impl Serialize for Compressor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Compressor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Keeps the `k` entries of largest absolute value, zeroing the rest.
/// Ties go to the lowest index.
pub fn topk(w: &ParamVector, k: usize) -> Result<ParamVector> {
    let d = w.dim();
    if k == 0 || k > d {
        return Err(config_err(format!("topk needs 1 <= K <= d, got K={k}, d={d}")));
    }
    if k == d {
        return Ok(w.clone());
    }
    let mut order: Vec<usize> = (0..d).collect();
    // stable sort keeps lower indices first among equal magnitudes
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()));
    let mut out = ParamVector::zeros(d);
    for &i in &order[..k] {
        out[i] = w[i];
    }
    Ok(out)
}

/// One-bit quantization: entries `≥ 0` become the mean of all such entries,
/// negative entries the mean of the negative ones.
pub fn onebit(w: &ParamVector) -> ParamVector {
    let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0usize, 0.0, 0usize);
    for &v in w.iter() {
        if v >= 0.0 {
            pos_sum += v;
            pos_n += 1;
        } else {
            neg_sum += v;
            neg_n += 1;
        }
    }
    let pos_mean = if pos_n > 0 { pos_sum / pos_n as f64 } else { 0.0 };
    let neg_mean = if neg_n > 0 { neg_sum / neg_n as f64 } else { 0.0 };
    ParamVector::from_vec(
        w.iter()
            .map(|&v| if v >= 0.0 { pos_mean } else { neg_mean })
            .collect(),
    )
}

/// Error-feedback step on an already-scaled contribution `α·g`:
/// `w = ε + α·g`, payload `Q(w)`, new error `w − Q(w)`.
pub(crate) fn ef_step(
    error_acc: &ParamVector,
    contribution: &ParamVector,
    q: Compressor,
) -> Result<(ParamVector, ParamVector)> {
    error_acc.check_dim(contribution.dim())?;
    let w = error_acc.add(contribution);
    let payload = q.apply(&w)?;
    let new_error = w.sub(&payload);
    Ok((payload, new_error))
}

/// `w = error_acc + alpha·grad`; returns `(Q(w), w − Q(w))`.
pub fn ef_update(
    error_acc: &ParamVector,
    grad: &ParamVector,
    alpha: f64,
    q: Compressor,
) -> Result<(ParamVector, ParamVector)> {
    ef_step(error_acc, &grad.scaled(alpha), q)
}
