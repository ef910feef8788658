//! Channel synthesis and link metrics.
//!
//! A UE's cascaded channel `G_k` is N×M. Reflection coefficients are row
//! vectors, so the scalar gain seen by UE `k` for precoder column `w` is
//! `φ G_k w` with no conjugation on `φ`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape, Error, Result};
use crate::linalg::{dump_matrix, ComplexMatrix, ComplexVector};
use crate::scenario::{Direction, Geometry, NetworkConfig};
use crate::units;

/// Uniform planar array response with unit-modulus entries; entry `v·W + w`
/// is `exp(jπ(v·sinφ·sinψ + w·cosψ))`.
pub fn array_response(azimuth: f64, elevation: f64, v_count: usize, w_count: usize) -> ComplexVector {
    let a = azimuth.sin() * elevation.sin();
    let b = elevation.cos();
    ComplexVector::from_fn(v_count * w_count, |idx, _| {
        let (v, w) = ((idx / w_count) as f64, (idx % w_count) as f64);
        Complex64::from_polar(1.0, PI * (v * a + w * b))
    })
}

fn steering(d: Direction, side: usize) -> ComplexVector {
    array_response(d.azimuth, d.elevation, side, side)
}

/// Deterministic part of the path loss, dB. `freq_ghz` in GHz.
pub fn path_loss_db_mean(d: f64, freq_ghz: f64) -> Result<f64> {
    if !(d > 0.0) || !(freq_ghz > 0.0) {
        return Err(invalid(format!("path loss needs d > 0 and f > 0, got d = {d}, f = {freq_ghz}")));
    }
    Ok(32.4 + 21.0 * d.log10() + 20.0 * freq_ghz.log10())
}

/// Path loss in dB with real log-normal shadowing ξ ~ N(0, σ_sf²).
pub fn path_loss_db<R: Rng + ?Sized>(d: f64, freq_ghz: f64, sigma_sf: f64, rng: &mut R) -> Result<f64> {
    let mean = path_loss_db_mean(d, freq_ghz)?;
    let xi_dist = Normal::new(0.0, sigma_sf).map_err(|e| invalid(e.to_string()))?;
    let xi: f64 = xi_dist.sample(rng);
    Ok(mean + xi)
}

/// Rank-one BS→IR channel `a_r a_tᴴ`, N×M.
pub fn build_bs_ir_channel(geometry: &Geometry, m: usize, n: usize) -> Result<ComplexMatrix> {
    let (m_side, n_side) = (square_side(m)?, square_side(n)?);
    let a_r = steering(geometry.ir_arrival, n_side);
    let a_t = steering(geometry.bs_departure, m_side);
    Ok(&a_r * a_t.adjoint())
}

fn square_side(n: usize) -> Result<usize> {
    let s = (n as f64).sqrt().round() as usize;
    if n == 0 || s * s != n {
        return Err(invalid(format!("array size {n} is not a positive square")));
    }
    Ok(s)
}

fn link_scale(distance: f64, path_loss_linear: f64, wavelength: f64) -> Complex64 {
    Complex64::from_polar(1.0 / path_loss_linear.sqrt(), -2.0 * PI * distance / wavelength)
}

/// `G = (e^{-j2πd/λ}/√PL)·diag(h)·H`.
pub fn cascaded_channel(h: &ComplexVector, bs_ir: &ComplexMatrix, distance: f64, path_loss_linear: f64, wavelength: f64) -> ComplexMatrix {
    let scale = link_scale(distance, path_loss_linear, wavelength);
    let mut g = bs_ir.clone();
    for (n, mut row) in g.row_iter_mut().enumerate() {
        row *= scale * h[n];
    }
    g
}

/// Reflection coefficient φ, one complex entry per IR element with |φ_n| ≤ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionCoefficient(ComplexVector);

/// Slack allowed on |φ_n| ≤ 1 to absorb rounding.
pub const AMPLITUDE_SLACK: f64 = 1e-12;

impl ReflectionCoefficient {
    pub fn new(phi: ComplexVector) -> Result<Self> {
        if phi.is_empty() {
            return Err(invalid("reflection coefficient must be nonempty"));
        }
        if let Some((n, z)) = phi.iter().enumerate().find(|(_, z)| !(z.norm() <= 1.0 + AMPLITUDE_SLACK)) {
            return Err(invalid(format!("|φ_{n}| = {} exceeds 1", z.norm())));
        }
        Ok(ReflectionCoefficient(phi))
    }

    /// The fixed reflection: every element ON with zero phase.
    pub fn ones(n: usize) -> Self {
        ReflectionCoefficient(ComplexVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        ReflectionCoefficient(ComplexVector::from_iterator(phases.len(), phases.iter().map(|&t| Complex64::from_polar(1.0, t))))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &ComplexVector {
        &self.0
    }

    pub fn into_vector(self) -> ComplexVector {
        self.0
    }

    /// Multiplies every element by the same unit phase.
    pub fn rotated(&self, theta: f64) -> Self {
        ReflectionCoefficient(self.0.map(|z| z * Complex64::from_polar(1.0, theta)))
    }

    /// Element-wise sign flip `φ × diag(d)`, `d_n ∈ {±1}`.
    pub fn flipped(&self, diag: &[i8]) -> Self {
        assert_eq!(diag.len(), self.len(), "flip pattern length");
        ReflectionCoefficient(ComplexVector::from_iterator(
            self.len(),
            self.0.iter().zip(diag).map(|(z, &d)| if d < 0 { -z } else { *z }),
        ))
    }
}

/// Per-UE cascaded channels plus the direct BS→UE rows used by the
/// direct-transmission baseline.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub true_g: Vec<ComplexMatrix>,
    pub est_g: Option<Vec<ComplexMatrix>>,
    /// Linear power ratio of the BS–IR–UE link.
    pub path_loss: Vec<f64>,
    pub distance: Vec<f64>,
    pub wavelength: f64,
    /// Direct BS→UE channels, one length-M row per UE.
    pub direct: Vec<ComplexVector>,
    pub direct_path_loss: Vec<f64>,
}

impl ChannelSet {
    pub fn num_ues(&self) -> usize {
        self.true_g.len()
    }

    pub fn num_elements(&self) -> usize {
        self.true_g[0].nrows()
    }

    pub fn num_antennas(&self) -> usize {
        self.true_g[0].ncols()
    }

    /// Copy whose "true" channels are the estimates, for optimizing on
    /// believed CSI.
    pub fn believed(&self) -> ChannelSet {
        let mut c = self.clone();
        if let Some(est) = &self.est_g {
            c.true_g = est.clone();
        }
        c
    }

    pub fn with_estimates(mut self, est: Vec<ComplexMatrix>) -> Result<ChannelSet> {
        if est.len() != self.true_g.len() || est.iter().zip(&self.true_g).any(|(a, b)| a.shape() != b.shape()) {
            return Err(shape("estimated channels differ in shape from the true channels"));
        }
        self.est_g = Some(est);
        Ok(self)
    }

    /// Plain-text dump of every true (and estimated) matrix.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, g) in self.true_g.iter().enumerate() {
            out.push_str(&format!("# G_{k}\n"));
            out.push_str(&dump_matrix(g));
        }
        if let Some(est) = &self.est_g {
            for (k, g) in est.iter().enumerate() {
                out.push_str(&format!("# Ghat_{k}\n"));
                out.push_str(&dump_matrix(g));
            }
        }
        out
    }
}

/// Synthesizes every channel of one drop. Shadowing draws are consumed in a
/// fixed order (K cascaded links, then K direct links) independent of M and N.
pub fn build_cascaded_channels<R: Rng + ?Sized>(geometry: &Geometry, cfg: &NetworkConfig, rng: &mut R) -> Result<ChannelSet> {
    let (m, n, k) = (cfg.num_bs_antennas, cfg.num_ir_elements, geometry.num_ues());
    let n_side = square_side(n)?;
    let m_side = square_side(m)?;
    let h = build_bs_ir_channel(geometry, m, n)?;
    let f_ghz = cfg.carrier_freq_ghz();
    let lambda = cfg.wavelength();

    let mut path_loss = Vec::with_capacity(k);
    for &d in &geometry.cascaded_distance {
        path_loss.push(units::db_to_linear(path_loss_db(d, f_ghz, cfg.shadowing_sigma_los, rng)?));
    }
    let mut direct_path_loss = Vec::with_capacity(k);
    for &d in &geometry.direct_distance {
        direct_path_loss.push(units::db_to_linear(path_loss_db(d, f_ghz, cfg.shadowing_sigma_nlos, rng)?));
    }

    let true_g = (0..k)
        .map(|i| {
            let h_k = steering(geometry.ue_departure[i], n_side);
            cascaded_channel(&h_k, &h, geometry.cascaded_distance[i], path_loss[i], lambda)
        })
        .collect();
    let direct = (0..k)
        .map(|i| {
            let a = steering(geometry.direct_departure[i], m_side);
            let scale = link_scale(geometry.direct_distance[i], direct_path_loss[i], lambda);
            a.map(|z| z.conj() * scale)
        })
        .collect();
    Ok(ChannelSet {
        true_g,
        est_g: None,
        path_loss,
        distance: geometry.cascaded_distance.clone(),
        wavelength: lambda,
        direct,
        direct_path_loss,
    })
}

/// Stacks the effective rows `φ G_k` into a K×M matrix.
pub fn effective_channels(phi: &ReflectionCoefficient, g: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let k = g.len();
    if k == 0 {
        return Err(shape("no channels"));
    }
    let m = g[0].ncols();
    let mut e = ComplexMatrix::zeros(k, m);
    for (i, gk) in g.iter().enumerate() {
        if gk.nrows() != phi.len() || gk.ncols() != m {
            return Err(shape(format!("G_{i} is {}×{}, expected {}×{m}", gk.nrows(), gk.ncols(), phi.len())));
        }
        let row = phi.as_vector().transpose() * gk;
        e.set_row(i, &row);
    }
    Ok(e)
}

/// Direct channels stacked into a K×M matrix.
pub fn direct_effective_channels(channels: &ChannelSet) -> ComplexMatrix {
    let k = channels.direct.len();
    let m = channels.direct[0].len();
    DMatrix::from_fn(k, m, |i, j| channels.direct[i][j])
}

/// SINRs of all UEs from effective rows `E` (K×M) and precoder `W` (M×K).
pub fn sinr_all(eff: &ComplexMatrix, w: &ComplexMatrix, sigma2: f64) -> Result<Vec<f64>> {
    if eff.ncols() != w.nrows() || eff.nrows() != w.ncols() {
        return Err(shape(format!(
            "effective channels {}×{} incompatible with precoder {}×{}",
            eff.nrows(),
            eff.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let gains = eff * w;
    Ok((0..eff.nrows())
        .map(|k| {
            let signal = gains[(k, k)].norm_sqr();
            let interference: f64 = (0..w.ncols()).filter(|&i| i != k).map(|i| gains[(k, i)].norm_sqr()).sum();
            signal / (interference + sigma2)
        })
        .collect())
}

/// Sum-rate in bits/s for a vector of SINRs.
pub fn rate_from_sinrs(sinrs: &[f64], bandwidth: f64) -> f64 {
    sinrs.iter().map(|&s| bandwidth * (1.0 + s).log2()).sum()
}

/// SINR of UE `k` on the true channels.
pub fn sinr(w: &ComplexMatrix, phi: &ReflectionCoefficient, channels: &ChannelSet, sigma2: f64, k: usize) -> Result<f64> {
    if k >= channels.num_ues() {
        return Err(shape(format!("UE index {k} out of range")));
    }
    let eff = effective_channels(phi, &channels.true_g)?;
    Ok(sinr_all(&eff, w, sigma2)?[k])
}

/// Sum-rate (bits/s) on the true channels.
pub fn sum_rate(w: &ComplexMatrix, phi: &ReflectionCoefficient, channels: &ChannelSet, bandwidth: f64, sigma2: f64) -> Result<f64> {
    let eff = effective_channels(phi, &channels.true_g)?;
    Ok(rate_from_sinrs(&sinr_all(&eff, w, sigma2)?, bandwidth))
}

/// Channel-estimation overhead class of a transmission scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverheadClass {
    /// Per-element ON/OFF training: N·τ_c.
    IrOptimized,
    /// One training sub-phase: τ_c.
    FixedIr,
    Direct,
}

/// Scales an instantaneous sum-rate by the fraction of the coherence
/// interval left after training and processing.
pub fn time_avg_rate(r: f64, scheme: OverheadClass, cfg: &NetworkConfig) -> Result<f64> {
    let training = match scheme {
        OverheadClass::IrOptimized => cfg.num_ir_elements as f64 * cfg.pilot_subphase,
        OverheadClass::FixedIr | OverheadClass::Direct => cfg.pilot_subphase,
    };
    let overhead = training + cfg.processing_time;
    let t = cfg.interval();
    if overhead >= t {
        return Err(Error::InvalidTiming(format!("overhead {overhead} s is not shorter than the interval {t} s")));
    }
    Ok((1.0 - overhead / t) * r)
}
