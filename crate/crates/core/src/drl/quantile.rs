//! Quantile projection, quantile-regression loss and the 1-Wasserstein
//! distance between equal-weight atom sets.

use crate::error::{invalid, Result};

/// Quantile midpoint `ω_q = (2q − 1)/(2Q)` for `q = 1..=Q`.
pub fn quantile_level(q: usize, num_quantiles: usize) -> f64 {
    (2 * q - 1) as f64 / (2 * num_quantiles) as f64
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Supports `z_q = F̂⁻¹(ω_q)` using the lower empirical quantile (smallest
/// sample whose empirical CDF reaches the level).
pub fn quantile_projection(samples: &[f64], num_quantiles: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(invalid("quantile projection of an empty sample set"));
    }
    if num_quantiles == 0 {
        return Err(invalid("need at least one quantile"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("non-finite sample"));
    }
    let s = sorted(samples);
    let n = s.len();
    Ok((1..=num_quantiles)
        .map(|q| {
            // smallest i with (i + 1)/n ≥ (2q − 1)/(2Q), in integers
            let num = n * (2 * q - 1);
            let den = 2 * num_quantiles;
            let rank = num.div_ceil(den);
            s[rank.max(1) - 1]
        })
        .collect())
}

/// Projection of a weighted atom set (weights summing to one).
pub fn weighted_quantile_projection(atoms: &[(f64, f64)], num_quantiles: usize) -> Result<Vec<f64>> {
    if atoms.is_empty() || num_quantiles == 0 {
        return Err(invalid("weighted projection needs atoms and at least one quantile"));
    }
    let mut a = atoms.to_vec();
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = a.iter().map(|x| x.1).sum();
    let mut out = Vec::with_capacity(num_quantiles);
    let mut idx = 0;
    let mut cum = a[0].1 / total;
    for q in 1..=num_quantiles {
        let level = quantile_level(q, num_quantiles);
        while cum < level - 1e-12 && idx + 1 < a.len() {
            idx += 1;
            cum += a[idx].1 / total;
        }
        out.push(a[idx].0);
    }
    Ok(out)
}

/// Quantile-regression loss `Σ_q mean_j |ω_q − 1{z_j < z_q}|·|z_j − z_q|`.
pub fn qr_loss(samples: &[f64], supports: &[f64]) -> f64 {
    let big_q = supports.len();
    let n = samples.len() as f64;
    supports
        .iter()
        .enumerate()
        .map(|(i, &zq)| {
            let w = quantile_level(i + 1, big_q);
            samples
                .iter()
                .map(|&z| {
                    let under = if z < zq { 1.0 } else { 0.0 };
                    (w - under).abs() * (z - zq).abs()
                })
                .sum::<f64>()
                / n
        })
        .sum()
}

/// `(1/Q)·Σ_q |a_(q) − b_(q)|` on sorted supports.
pub fn wasserstein_d1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid(format!("support counts differ or are zero: {} vs {}", a.len(), b.len())));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}
