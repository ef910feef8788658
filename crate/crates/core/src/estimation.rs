//! ON/OFF uplink pilot training and the slot timing of a coherence interval.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{build_cascaded_channels, ChannelSet, ReflectionCoefficient};
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::{complex_gaussian, ComplexMatrix};
use crate::rng::{substream, Substream};
use crate::scenario::{sample_geometry, NetworkConfig};

/// Durations (seconds) of the sub-phases inside one coherence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingBudget {
    pub slot: f64,
    pub pilot_total: f64,
    pub processing: f64,
    /// Data time left in the first slot.
    pub transmit_first_slot: f64,
    pub interval: f64,
    /// Data time left in the whole interval.
    pub effective: f64,
    /// Data time of each slot, `[τ_d, τ, …, τ]`.
    pub per_slot: Vec<f64>,
}

pub fn timing_budget(cfg: &NetworkConfig) -> Result<TimingBudget> {
    let slot = cfg.slot_duration;
    let pilot_total = cfg.num_ir_elements as f64 * cfg.pilot_subphase;
    let processing = cfg.processing_time;
    if slot <= 0.0 || pilot_total < 0.0 || processing < 0.0 || cfg.slots_per_interval == 0 {
        return Err(Error::InvalidTiming("durations must be nonnegative and the slot positive".into()));
    }
    let overhead = pilot_total + processing;
    if overhead > slot * (1.0 + 1e-12) {
        return Err(Error::InvalidTiming(format!("training plus processing ({overhead} s) exceeds the slot ({slot} s)")));
    }
    let first = (slot - overhead).max(0.0);
    let l = cfg.slots_per_interval;
    let mut per_slot = vec![slot; l];
    per_slot[0] = first;
    let interval = l as f64 * slot;
    Ok(TimingBudget {
        slot,
        pilot_total,
        processing,
        transmit_first_slot: first,
        interval,
        effective: interval - overhead,
        per_slot,
    })
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub est_g: Vec<ComplexMatrix>,
    /// ‖Ĝ_k − G_k‖_F² per UE.
    pub squared_error: Vec<f64>,
    /// N·M·σ_BS²/p_c.
    pub theoretical_mse: f64,
}

/// Runs N training sub-phases; in sub-phase n only element n reflects, so the
/// BS observes row n of every `G_k` through orthogonal pilots of power `p_c`.
pub fn run_pilot_phase<R: Rng + ?Sized>(channels: &ChannelSet, p_c: f64, sigma_bs2: f64, rng: &mut R) -> Result<EstimationReport> {
    if !(p_c > 0.0) {
        return Err(invalid(format!("pilot power must be positive, got {p_c}")));
    }
    if !(sigma_bs2 >= 0.0) {
        return Err(invalid(format!("BS noise power must be nonnegative, got {sigma_bs2}")));
    }
    let (n, m) = (channels.num_elements(), channels.num_antennas());
    let amp = p_c.sqrt();
    let mut est_g = Vec::with_capacity(channels.num_ues());
    let mut squared_error = Vec::with_capacity(channels.num_ues());
    for g in &channels.true_g {
        let s = Complex64::from_polar(amp, rng.random_range(0.0..std::f64::consts::TAU));
        let mut est = ComplexMatrix::zeros(n, m);
        for row in 0..n {
            for ant in 0..m {
                // BS antenna `ant` receives conj(g_{row,ant})·s + z.
                let y = g[(row, ant)].conj() * s + complex_gaussian(rng, sigma_bs2);
                est[(row, ant)] = (y / s).conj();
            }
        }
        squared_error.push((&est - g).norm_squared());
        est_g.push(est);
    }
    Ok(EstimationReport {
        est_g,
        squared_error,
        theoretical_mse: (n * m) as f64 * sigma_bs2 / p_c,
    })
}

/// Samples drop `seed` and runs its pilot phase. The returned channel set
/// carries the estimates; every stage draws from its own substream.
pub fn estimated_drop(cfg: &NetworkConfig, seed: u64) -> Result<(ChannelSet, EstimationReport)> {
    let geometry = sample_geometry(cfg, seed)?;
    let channels = build_cascaded_channels(&geometry, cfg, &mut substream(seed, Substream::Shadowing))?;
    let report = run_pilot_phase(&channels, cfg.pilot_power_watts(), cfg.sigma_bs2(), &mut substream(seed, Substream::PilotNoise))?;
    let channels = channels.with_estimates(report.est_g.clone())?;
    Ok((channels, report))
}

/// `y_k = φ G_k (W β) + z`, `z ~ CN(0, σ²)`.
pub fn received_signal<R: Rng + ?Sized>(
    phi: &ReflectionCoefficient,
    g_k: &ComplexMatrix,
    w: &ComplexMatrix,
    symbols: &[Complex64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Complex64> {
    if g_k.nrows() != phi.len() || g_k.ncols() != w.nrows() || w.ncols() != symbols.len() {
        return Err(shape(format!(
            "φ len {}, G {}×{}, W {}×{}, {} symbols",
            phi.len(),
            g_k.nrows(),
            g_k.ncols(),
            w.nrows(),
            w.ncols(),
            symbols.len()
        )));
    }
    let s = w * crate::linalg::ComplexVector::from_column_slice(symbols);
    let clean = (phi.as_vector().transpose() * g_k * s)[(0, 0)];
    Ok(clean + complex_gaussian(rng, sigma2))
}

/// Unit-power information symbols, i.i.d. CN(0, 1).
pub fn draw_symbols<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<Complex64> {
    (0..k).map(|_| complex_gaussian(rng, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::build_cascaded_channels;
    use crate::linalg::ComplexVector;
    use crate::scenario::sample_geometry;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, m: usize, k: usize, seed: u64) -> ChannelSet {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        ChannelSet {
            true_g: (0..k).map(|_| ComplexMatrix::from_fn(n, m, |_, _| complex_gaussian(&mut r, 1.0))).collect(),
            est_g: None,
            path_loss: vec![1.0; k],
            distance: vec![1.0; k],
            wavelength: 1.0,
            direct: vec![ComplexVector::zeros(m); k],
            direct_path_loss: vec![1.0; k],
        }
    }

    fn mc_mse(ch: &ChannelSet, p_c: f64, sigma: f64, runs: usize, seed: u64) -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..runs {
            acc += run_pilot_phase(ch, p_c, sigma, &mut r).unwrap().squared_error[0];
        }
        acc / runs as f64
    }

    #[test]
    fn noiseless_pilots_are_exact() {
        let ch = toy(4, 4, 2, 1);
        let rep = run_pilot_phase(&ch, 0.01, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (a, b) in rep.est_g.iter().zip(&ch.true_g) {
            assert!((a - b).norm() < 1e-12 * b.norm());
        }
        assert_eq!(rep.theoretical_mse, 0.0);
    }

    #[test]
    fn nonpositive_pilot_power_rejected() {
        let ch = toy(4, 4, 1, 1);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(run_pilot_phase(&ch, 0.0, 1.0, &mut r), Err(Error::InvalidArgument(_))));
        assert!(matches!(run_pilot_phase(&ch, -1.0, 1.0, &mut r), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mse_tracks_closed_form_and_pilot_power() {
        let ch = toy(16, 16, 1, 3);
        let (p_c, s2) = (0.01, 1e-13);
        let mse = mc_mse(&ch, p_c, s2, 4000, 4);
        let theory = 256.0 * s2 / p_c;
        assert_relative_eq!(mse, theory, max_relative = 0.03);
        let doubled = mc_mse(&ch, 2.0 * p_c, s2, 4000, 5);
        assert_relative_eq!(mse / doubled, 2.0, max_relative = 0.05);
    }

    #[test]
    fn mse_linear_in_array_size() {
        let (p_c, s2) = (1.0, 1.0);
        for n in [4, 16, 64] {
            let ch = toy(n, 4, 1, n as u64);
            let mse = mc_mse(&ch, p_c, s2, 2000, 7);
            assert_relative_eq!(mse, (n * 4) as f64, max_relative = 0.05);
        }
    }

    #[test]
    fn estimation_errors_are_white() {
        let ch = toy(2, 2, 1, 8);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let runs = 10_000;
        let mut errs = Vec::with_capacity(runs);
        for _ in 0..runs {
            let rep = run_pilot_phase(&ch, 1.0, 1.0, &mut r).unwrap();
            errs.push(&rep.est_g[0] - &ch.true_g[0]);
        }
        let idx = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for a in 0..4 {
            for b in (a + 1)..4 {
                let mut cross = Complex64::new(0.0, 0.0);
                let (mut va, mut vb) = (0.0, 0.0);
                for e in &errs {
                    cross += e[idx[a]] * e[idx[b]].conj();
                    va += e[idx[a]].norm_sqr();
                    vb += e[idx[b]].norm_sqr();
                }
                let rho = cross.norm() / (va * vb).sqrt();
                assert!(rho < 0.02, "correlation {rho} between {:?} and {:?}", idx[a], idx[b]);
            }
        }
    }

    #[test]
    fn estimate_on_real_drop_has_expected_scale() {
        let cfg = NetworkConfig::default();
        let geo = sample_geometry(&cfg, 3).unwrap();
        let ch = build_cascaded_channels(&geo, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let rep = run_pilot_phase(&ch, cfg.pilot_power_watts(), cfg.sigma_bs2(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(rep.est_g.len(), 4);
        assert_relative_eq!(rep.theoretical_mse, 256.0 * cfg.sigma_bs2() / cfg.pilot_power_watts(), max_relative = 1e-12);
        assert!(rep.squared_error.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn timing_table_values() {
        let cfg = NetworkConfig::default();
        let t = timing_budget(&cfg).unwrap();
        assert_relative_eq!(t.transmit_first_slot, 0.084, epsilon = 1e-12);
        assert_relative_eq!(t.effective, 0.984, epsilon = 1e-12);
        assert_eq!(t.per_slot.len(), 10);
        assert_relative_eq!(t.per_slot.iter().sum::<f64>(), t.effective, epsilon = 1e-12);
        assert_relative_eq!(t.transmit_first_slot + t.pilot_total + t.processing, t.slot, epsilon = 1e-15);

        let free = NetworkConfig { pilot_subphase: 0.0, ..cfg.clone() };
        assert_eq!(timing_budget(&free).unwrap().transmit_first_slot, free.slot_duration);

        let over = NetworkConfig { processing_time: 0.09, ..cfg };
        assert!(matches!(timing_budget(&over), Err(Error::InvalidTiming(_))));
    }

    #[test]
    fn received_signal_cases() {
        let ch = toy(3, 2, 2, 11);
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let w = ComplexMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut r, 1.0));
        let phi = ReflectionCoefficient::from_phases(&[0.1, 0.2, 0.3]);
        let e1 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let y = received_signal(&phi, &ch.true_g[0], &w, &e1, 0.0, &mut r).unwrap();
        let want = (phi.as_vector().transpose() * &ch.true_g[0] * w.column(0))[(0, 0)];
        assert!((y - want).norm() < 1e-12);

        let off = ReflectionCoefficient::new(ComplexVector::zeros(3)).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(13);
        let mut r2 = ChaCha8Rng::seed_from_u64(13);
        let y = received_signal(&off, &ch.true_g[0], &w, &e1, 2.0, &mut r1).unwrap();
        assert_eq!(y, complex_gaussian(&mut r2, 2.0));

        assert!(matches!(received_signal(&phi, &ch.true_g[0], &w, &e1[..1], 0.0, &mut r), Err(Error::Shape(_))));
    }

    #[test]
    fn received_power_matches_closed_form() {
        let ch = toy(3, 2, 2, 14);
        let mut r = ChaCha8Rng::seed_from_u64(15);
        let w = ComplexMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut r, 1.0));
        let phi = ReflectionCoefficient::from_phases(&[0.5, -0.7, 1.9]);
        let sigma2 = 0.4;
        let row = phi.as_vector().transpose() * &ch.true_g[1];
        let closed: f64 = (0..2).map(|i| (&row * w.column(i))[(0, 0)].norm_sqr()).sum::<f64>() + sigma2;
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let beta = draw_symbols(2, &mut r);
            acc += received_signal(&phi, &ch.true_g[1], &w, &beta, sigma2, &mut r).unwrap().norm_sqr();
        }
        assert_relative_eq!(acc / draws as f64, closed, max_relative = 0.02);
    }

    #[test]
    fn estimated_drop_is_deterministic_and_shaped() {
        let cfg = NetworkConfig::default();
        let (a, rep) = estimated_drop(&cfg, 5).unwrap();
        let (b, _) = estimated_drop(&cfg, 5).unwrap();
        assert_eq!(a.est_g, b.est_g);
        assert_eq!(a.est_g.as_ref().unwrap(), &rep.est_g);
        assert_eq!(rep.est_g.len(), cfg.num_ues);
        assert_eq!(rep.est_g[0].shape(), (cfg.num_ir_elements, cfg.num_bs_antennas));
    }
}
