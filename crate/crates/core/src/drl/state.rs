//! Binary deviation state from the per-UE received-signal mismatch.

use num_complex::Complex64;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviationState {
    pub bits: Vec<bool>,
    /// Bits read as a binary number, UE 0 most significant.
    pub index: usize,
}

impl DeviationState {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let index = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        DeviationState { bits, index }
    }

    pub fn num_states(k: usize) -> usize {
        1usize << k
    }
}

/// Bit k is set iff `|y_k − ŷ_k|² > e_th`.
pub fn compute_state(y: &[Complex64], y_hat: &[Complex64], e_th: f64) -> Result<DeviationState> {
    if !(e_th > 0.0) {
        return Err(invalid(format!("deviation threshold must be positive, got {e_th}")));
    }
    if y.len() != y_hat.len() {
        return Err(invalid(format!("{} received values but {} predictions", y.len(), y_hat.len())));
    }
    Ok(DeviationState::from_bits(y.iter().zip(y_hat).map(|(a, b)| (a - b).norm_sqr() > e_th).collect()))
}

/// Noise-only threshold: 90th percentile of `|z|²` for `z ~ CN(0, σ²)`,
/// which is exponential with mean σ².
pub fn default_threshold(sigma2: f64) -> f64 {
    sigma2 * 10f64.ln()
}
