use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest pooled sample size for which the p-value is computed exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of sample a: pairs with `a > b` plus half the ties.
    pub u: f64,
    /// One-sided p-value for the alternative that a tends to exceed b.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Midranks (1-based) of `values`.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Mann-Whitney U test of `a > b`.
///
/// The p-value is `P(U ≥ u_observed)` under the null. It is exact (by
/// enumerating every assignment of the pooled midranks to sample a) when
/// `a.len() + b.len() ≤ EXACT_LIMIT`, and otherwise uses the normal
/// approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Mann-Whitney sample"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("sample", "contains NaN"));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - offset;

    if n <= EXACT_LIMIT {
        // Rank sums are multiples of 1/2; compare in doubled units to stay exact.
        let target = libm::round(2.0 * u) as i64;
        let twice: Vec<i64> = ranks.iter().map(|r| libm::round(2.0 * r) as i64).collect();
        let twice_offset = (na * (na + 1)) as i64;
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            total += 1;
            let s: i64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| twice[i]).sum();
            if s - twice_offset >= target {
                hits += 1;
            }
        }
        return Ok(MannWhitney {
            u,
            p_value: hits as f64 / total as f64,
            method: PValueMethod::Exact,
        });
    }

    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let (fa, fb, fn_) = (na as f64, nb as f64, n as f64);
    let mean = fa * fb / 2.0;
    let var = fa * fb / 12.0 * ((fn_ + 1.0) - tie_term / (fn_ * (fn_ - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (u - mean - 0.5) / libm::sqrt(var);
        0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
    };
    Ok(MannWhitney {
        u,
        p_value,
        method: PValueMethod::Normal,
    })
}
