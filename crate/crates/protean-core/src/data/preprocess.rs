use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    MinMax,
    ZScore,
}

/// Per-feature affine map `x ↦ (x − offset) / scale` fitted on training data.
///
/// Features with zero scale map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub method: Normalization,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(data: &Dataset, method: Normalization) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let f = data.num_features;
        let n = data.len() as f64;
        let (offset, scale) = match method {
            Normalization::MinMax => {
                let mut lo = alloc::vec![f64::INFINITY; f];
                let mut hi = alloc::vec![f64::NEG_INFINITY; f];
                for row in data.features.chunks(f) {
                    for c in 0..f {
                        lo[c] = lo[c].min(row[c]);
                        hi[c] = hi[c].max(row[c]);
                    }
                }
                let scale = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
                (lo, scale)
            }
            Normalization::ZScore => {
                let mut mean = alloc::vec![0.0; f];
                for row in data.features.chunks(f) {
                    for c in 0..f {
                        mean[c] += row[c];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = alloc::vec![0.0; f];
                for row in data.features.chunks(f) {
                    for c in 0..f {
                        var[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
                    }
                }
                let sd = var.iter().map(|v| libm::sqrt(v / n)).collect();
                (mean, sd)
            }
        };
        Ok(Normalizer { method, offset, scale })
    }

    pub fn transform_row(&self, raw: &[f64], out: &mut [f64]) {
        for (((o, x), off), s) in out.iter_mut().zip(raw).zip(&self.offset).zip(&self.scale) {
            *o = if *s > 0.0 { (x - off) / s } else { 0.0 };
        }
    }

    /// Maps a normalized vector back to raw units.
    pub fn inverse_row(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((x, off), s)| if *s > 0.0 { x * s + off } else { *off })
            .collect()
    }

    /// Normalized images of the raw per-feature `(min, max)` bounds.
    pub fn transform_bounds(&self, raw: &[(f64, f64)]) -> Vec<(f64, f64)> {
        raw.iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((&(lo, hi), off), s)| if *s > 0.0 { ((lo - off) / s, (hi - off) / s) } else { (0.0, 0.0) })
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.num_features != self.offset.len() {
            return Err(Error::dims("feature width", self.offset.len(), data.num_features));
        }
        let mut out = data.clone();
        for (dst, src) in out.features.chunks_mut(data.num_features).zip(data.features.chunks(data.num_features)) {
            self.transform_row(src, dst);
        }
        Ok(out)
    }
}

/// Fits a normalizer on `data` and applies it.
pub fn preprocess(data: &Dataset, method: Normalization) -> Result<Dataset> {
    Normalizer::fit(data, method)?.apply(data)
}
