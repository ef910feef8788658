//! Joint precoder / reflection optimization by Lagrangian dual transform and
//! quadratic-transform fractional programming (Algorithm 1), plus the
//! precoder-only variant used by the fixed-reflector and direct baselines.
//!
//! The transform is written with natural logs and rescaled by 1/ln 2, so the
//! α update is an exact maximizer and r_α is reported in bits/s.

use std::f64::consts::LN_2;

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::channel::{effective_channels, rate_from_sinrs, sinr_all, ReflectionCoefficient};
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::scenario::NetworkConfig;

/// Link constants every update needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub bandwidth: f64,
    pub sigma2: f64,
    pub p_max: f64,
}

impl LinkParams {
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        LinkParams {
            bandwidth: cfg.bandwidth,
            sigma2: cfg.sigma2(),
            p_max: cfg.p_max_watts(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.sigma2 > 0.0 && self.p_max > 0.0) {
            return Err(invalid(format!("bandwidth, noise and power must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpConfig {
    pub max_outer_iters: usize,
    pub convergence_tol: f64,
    pub precoder_inner_iters: usize,
    pub reflection_inner_iters: usize,
    /// Relative objective change that ends a coordinate-ascent pass over φ.
    pub phi_sweep_tol: f64,
    pub max_phi_sweeps: usize,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            max_outer_iters: 100,
            convergence_tol: 1e-6,
            precoder_inner_iters: 20,
            reflection_inner_iters: 20,
            phi_sweep_tol: 1e-10,
            max_phi_sweeps: 200,
        }
    }
}

impl FpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0 && self.phi_sweep_tol > 0.0) || self.max_outer_iters == 0 || self.max_phi_sweeps == 0 {
            return Err(invalid("FP tolerances and iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FpState {
    pub w: ComplexMatrix,
    pub phi: ReflectionCoefficient,
    pub alpha: Vec<f64>,
    pub lambda: ComplexVector,
    pub delta: ComplexVector,
    /// r_α at the end of every outer iteration, starting with the initial point.
    pub objective_trace: Vec<f64>,
    /// r_α after every update block (α, precoder loop, reflection loop).
    pub block_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FpState {
    /// Sum-rate of the final point on the channels it was optimized for.
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// `α̂_k = b(1 + α_k)`.
pub fn alpha_hat(alpha: &[f64], bandwidth: f64) -> Vec<f64> {
    alpha.iter().map(|a| bandwidth * (1.0 + a)).collect()
}

/// r_α from effective rows `E` (K×M).
pub fn lagrangian_objective_eff(w: &ComplexMatrix, eff: &ComplexMatrix, alpha: &[f64], link: &LinkParams) -> Result<f64> {
    if alpha.len() != eff.nrows() {
        return Err(shape(format!("{} auxiliary values for {} UEs", alpha.len(), eff.nrows())));
    }
    if alpha.iter().any(|&a| !(a >= 0.0)) {
        return Err(invalid("auxiliary SINR targets must be nonnegative"));
    }
    let eta = sinr_all(eff, w, link.sigma2)?;
    let nats: f64 = alpha
        .iter()
        .zip(&eta)
        // (1+a)e/(1+e) - a rewritten to avoid cancellation at high SINR
        .map(|(&a, &e)| a.ln_1p() + (e - a) / (1.0 + e))
        .sum();
    Ok(link.bandwidth * nats / LN_2)
}

/// r_α in bits/s; equals the sum-rate when α = η.
pub fn lagrangian_objective(w: &ComplexMatrix, phi: &ReflectionCoefficient, alpha: &[f64], g: &[ComplexMatrix], link: &LinkParams) -> Result<f64> {
    lagrangian_objective_eff(w, &effective_channels(phi, g)?, alpha, link)
}

pub fn update_alpha(w: &ComplexMatrix, phi: &ReflectionCoefficient, g: &[ComplexMatrix], sigma2: f64) -> Result<Vec<f64>> {
    sinr_all(&effective_channels(phi, g)?, w, sigma2)
}

/// `λ_k = √α̂_k·E_k w_k / (Σ_i |E_k w_i|² + σ²)`.
pub fn update_lambda_eff(w: &ComplexMatrix, eff: &ComplexMatrix, alpha_hat: &[f64], sigma2: f64) -> Result<ComplexVector> {
    if eff.ncols() != w.nrows() || eff.nrows() != w.ncols() || alpha_hat.len() != eff.nrows() {
        return Err(shape("auxiliary update shapes"));
    }
    let gains = eff * w;
    Ok(ComplexVector::from_fn(eff.nrows(), |k, _| {
        let total: f64 = gains.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>() + sigma2;
        gains[(k, k)] * (alpha_hat[k].sqrt() / total)
    }))
}

pub fn update_lambda(w: &ComplexMatrix, phi: &ReflectionCoefficient, alpha_hat: &[f64], g: &[ComplexMatrix], sigma2: f64) -> Result<ComplexVector> {
    update_lambda_eff(w, &effective_channels(phi, g)?, alpha_hat, sigma2)
}

/// Same closed form as λ; kept separate because it feeds the reflection block.
pub fn update_delta(w: &ComplexMatrix, phi: &ReflectionCoefficient, alpha_hat: &[f64], g: &[ComplexMatrix], sigma2: f64) -> Result<ComplexVector> {
    update_lambda(w, phi, alpha_hat, g, sigma2)
}

#[derive(Debug, Clone)]
pub struct PrecoderUpdate {
    pub w: ComplexMatrix,
    pub kappa: f64,
}

/// Power-constrained maximizer of the λ-surrogate over W:
/// `w_k = √α̂_k λ_k (κI + Σ_i |λ_i|² E_iᴴE_i)⁻¹ E_kᴴ` with the smallest κ ≥ 0
/// that meets `Σ‖w_k‖² ≤ P_max`.
pub fn update_precoder_eff(lambda: &ComplexVector, alpha_hat: &[f64], eff: &ComplexMatrix, p_max: f64) -> Result<PrecoderUpdate> {
    let (k, m) = eff.shape();
    if lambda.len() != k || alpha_hat.len() != k {
        return Err(shape("precoder update shapes"));
    }
    if !lambda.iter().all(|z| z.is_finite()) {
        return Err(invalid("non-finite auxiliary vector"));
    }
    let weights = ComplexMatrix::from_diagonal(&lambda.map(|z| Complex64::new(z.norm_sqr(), 0.0)));
    let a = eff.adjoint() * &weights * eff;
    let a = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let mut rhs = eff.adjoint();
    for (i, mut col) in rhs.column_iter_mut().enumerate() {
        col *= lambda[i] * alpha_hat[i].sqrt();
    }
    if rhs.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Ok(PrecoderUpdate { w: ComplexMatrix::zeros(m, k), kappa: 0.0 });
    }

    let eig = SymmetricEigen::new(a);
    let q = eig.eigenvectors;
    let ev = eig.eigenvalues;
    let proj = q.adjoint() * &rhs;
    let row_energy: Vec<f64> = proj.row_iter().map(|r| r.norm_squared()).collect();
    let ev_max = ev.iter().cloned().fold(0.0, f64::max);
    let floor = ev_max * 1e-12;
    let power_at = |kappa: f64| -> f64 {
        ev.iter()
            .zip(&row_energy)
            .map(|(&e, &c)| {
                let d = e.max(0.0) + kappa;
                if kappa == 0.0 && e <= floor {
                    0.0
                } else {
                    c / (d * d)
                }
            })
            .sum()
    };
    let solve = |kappa: f64| -> ComplexMatrix {
        let mut scaled = proj.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            let d = ev[j].max(0.0) + kappa;
            let inv = if kappa == 0.0 && ev[j] <= floor { 0.0 } else { 1.0 / d };
            row *= Complex64::new(inv, 0.0);
        }
        &q * scaled
    };

    let kappa = if ev_max > 0.0 && power_at(0.0) <= p_max {
        0.0
    } else {
        // power(κ) ≤ ‖rhs‖²/κ², so this upper end is always feasible.
        let total: f64 = row_energy.iter().sum();
        let mut hi = (total / p_max).sqrt();
        let mut lo = 0.0;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if power_at(mid) > p_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let w = solve(kappa);
    if !w.iter().all(|z| z.is_finite()) {
        return Err(Error::NumericalFailure { iteration: 0, what: "precoder solve".into() });
    }
    Ok(PrecoderUpdate { w, kappa })
}

pub fn update_precoder(lambda: &ComplexVector, alpha_hat: &[f64], phi: &ReflectionCoefficient, g: &[ComplexMatrix], p_max: f64) -> Result<PrecoderUpdate> {
    update_precoder_eff(lambda, alpha_hat, &effective_channels(phi, g)?, p_max)
}

/// The concave quadratic `−φUφᴴ + 2Re{φv} − C` that the reflection block
/// maximizes for fixed δ and W.
#[derive(Debug, Clone)]
pub struct PhiQuadratic {
    pub u: ComplexMatrix,
    pub v: ComplexVector,
    pub c: f64,
}

impl PhiQuadratic {
    pub fn build(delta: &ComplexVector, alpha_hat: &[f64], w: &ComplexMatrix, g: &[ComplexMatrix], sigma2: f64) -> Result<Self> {
        let kk = g.len();
        if delta.len() != kk || alpha_hat.len() != kk || w.ncols() != kk {
            return Err(shape("reflection block shapes"));
        }
        let n = g[0].nrows();
        let mut u = ComplexMatrix::zeros(n, n);
        let mut v = ComplexVector::zeros(n);
        let mut c = 0.0;
        for k in 0..kk {
            if g[k].shape() != (n, w.nrows()) {
                return Err(shape(format!("G_{k} shape {:?}", g[k].shape())));
            }
            let cols = &g[k] * w;
            let d2 = delta[k].norm_sqr();
            u += (&cols * cols.adjoint()) * Complex64::new(d2, 0.0);
            v += cols.column(k) * (delta[k].conj() * alpha_hat[k].sqrt());
            c += d2 * sigma2;
        }
        let u = (&u + u.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(PhiQuadratic { u, v, c })
    }

    pub fn value(&self, phi: &ComplexVector) -> f64 {
        let quad = (phi.transpose() * &self.u * phi.map(|z| z.conj()))[(0, 0)].re;
        let lin = (phi.transpose() * &self.v)[(0, 0)].re;
        -quad + 2.0 * lin - self.c
    }

    /// Exact per-element coordinate ascent over the unit disk.
    pub fn maximize(&self, init: &ReflectionCoefficient, tol: f64, max_sweeps: usize) -> ReflectionCoefficient {
        let n = self.v.len();
        let mut phi = init.as_vector().clone();
        // q = U·conj(φ)
        let mut q = &self.u * phi.map(|z| z.conj());
        let mut value = self.value(&phi);
        // diagonal entries this far below the largest are treated as zero
        let floor = (0..n).map(|i| self.u[(i, i)].re).fold(0.0, f64::max) * 1e-14;
        for _ in 0..max_sweeps {
            for idx in 0..n {
                let unn = self.u[(idx, idx)].re;
                let t = self.v[idx] - (q[idx] - self.u[(idx, idx)] * phi[idx].conj());
                let z = t.conj() / unn;
                let new = if unn > floor && z.is_finite() {
                    if z.norm() > 1.0 {
                        z / z.norm()
                    } else {
                        z
                    }
                } else if t.norm() > 0.0 {
                    t.conj() / t.norm()
                } else {
                    phi[idx]
                };
                let diff = new.conj() - phi[idx].conj();
                if diff != Complex64::new(0.0, 0.0) {
                    q += self.u.column(idx) * diff;
                    phi[idx] = new;
                }
            }
            let next = self.value(&phi);
            let done = (next - value).abs() <= tol * next.abs().max(f64::MIN_POSITIVE);
            value = next;
            if done {
                break;
            }
        }
        ReflectionCoefficient::new(phi.map(|z| if z.norm() > 1.0 { z / z.norm() } else { z })).expect("projected onto the unit disk")
    }

    /// The quadratic as printed for the reflection subproblem: interference
    /// terms only in `U` and no `√α̂` weight in `v`. Not a minorizer of r_α in
    /// general, so [`optimize_phi`] only keeps its maximizer when r_α improves.
    pub fn build_interference(delta: &ComplexVector, w: &ComplexMatrix, g: &[ComplexMatrix], sigma2: f64) -> Result<Self> {
        let kk = g.len();
        if delta.len() != kk || w.ncols() != kk {
            return Err(shape("reflection block shapes"));
        }
        let n = g[0].nrows();
        let mut u = ComplexMatrix::zeros(n, n);
        let mut v = ComplexVector::zeros(n);
        let mut c = 0.0;
        for k in 0..kk {
            if g[k].shape() != (n, w.nrows()) {
                return Err(shape(format!("G_{k} shape {:?}", g[k].shape())));
            }
            let cols = &g[k] * w;
            let d2 = Complex64::new(delta[k].norm_sqr(), 0.0);
            for i in (0..kk).filter(|&i| i != k) {
                u += (cols.column(i) * cols.column(i).adjoint()) * d2;
            }
            v += cols.column(k) * delta[k].conj();
            c += d2.re * sigma2;
        }
        let u = (&u + u.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(PhiQuadratic { u, v, c })
    }
}

/// The φ-dependent part of r_α: `Σ_k α̂_k η_k / (1 + η_k)`.
fn weighted_fraction(alpha_hat: &[f64], w: &ComplexMatrix, phi: &ReflectionCoefficient, g: &[ComplexMatrix], sigma2: f64) -> Result<f64> {
    let eta = sinr_all(&effective_channels(phi, g)?, w, sigma2)?;
    Ok(alpha_hat.iter().zip(&eta).map(|(a, e)| a * e / (1.0 + e)).sum())
}

/// One (δ, φ) step. The interference-only quadratic takes long strides and is
/// tried first; when it would lower r_α the tight minorizer step is used, so
/// the block never decreases the objective.
pub fn optimize_phi(
    delta: &ComplexVector,
    alpha_hat: &[f64],
    w: &ComplexMatrix,
    g: &[ComplexMatrix],
    sigma2: f64,
    phi_init: &ReflectionCoefficient,
    cfg: &FpConfig,
) -> Result<ReflectionCoefficient> {
    let current = weighted_fraction(alpha_hat, w, phi_init, g, sigma2)?;
    let wide = PhiQuadratic::build_interference(delta, w, g, sigma2)?.maximize(phi_init, cfg.phi_sweep_tol, cfg.max_phi_sweeps);
    if weighted_fraction(alpha_hat, w, &wide, g, sigma2)? >= current {
        return Ok(wide);
    }
    let qp = PhiQuadratic::build(delta, alpha_hat, w, g, sigma2)?;
    Ok(qp.maximize(phi_init, cfg.phi_sweep_tol, cfg.max_phi_sweeps))
}

pub fn matched_filter_init(eff: &ComplexMatrix, p_max: f64) -> ComplexMatrix {
    let k = eff.nrows();
    let mut w = eff.adjoint();
    let share = (p_max / k as f64).sqrt();
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col *= Complex64::new(share / n, 0.0);
        }
    }
    w
}

pub fn precoder_power(w: &ComplexMatrix) -> f64 {
    w.norm_squared()
}

fn check_finite(iteration: usize, what: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NumericalFailure { iteration, what: what.to_string() })
    }
}

fn check_channels(g: &[ComplexMatrix]) -> Result<()> {
    let Some(first) = g.first() else {
        return Err(shape("no channels"));
    };
    if g.iter().any(|x| x.shape() != first.shape()) {
        return Err(shape("channels differ in shape"));
    }
    check_finite(0, "channel entries", g.iter().all(|x| x.iter().all(|z| z.is_finite())))
}

fn converged(prev: f64, next: f64, tol: f64) -> bool {
    (next - prev).abs() <= tol * next.abs().max(f64::MIN_POSITIVE)
}

/// Runs the (λ, W) alternation for fixed α and effective rows.
fn precoder_block(w: &mut ComplexMatrix, eff: &ComplexMatrix, alpha_hat: &[f64], link: &LinkParams, iters: usize, iteration: usize) -> Result<ComplexVector> {
    let mut lambda = ComplexVector::zeros(eff.nrows());
    for _ in 0..iters {
        lambda = update_lambda_eff(w, eff, alpha_hat, link.sigma2)?;
        check_finite(iteration, "λ update", lambda.iter().all(|z| z.is_finite()))?;
        *w = update_precoder_eff(&lambda, alpha_hat, eff, link.p_max)
            .map_err(|e| match e {
                Error::NumericalFailure { what, .. } => Error::NumericalFailure { iteration, what },
                other => other,
            })?
            .w;
    }
    Ok(lambda)
}

/// Algorithm 1 from the all-ones reflection and matched-filter precoders.
pub fn algorithm1(g: &[ComplexMatrix], link: &LinkParams, cfg: &FpConfig) -> Result<FpState> {
    check_channels(g)?;
    let phi = ReflectionCoefficient::ones(g[0].nrows());
    let w = matched_filter_init(&effective_channels(&phi, g)?, link.p_max);
    algorithm1_from(g, link, cfg, w, phi)
}

/// Algorithm 1 from a caller-supplied feasible starting point.
pub fn algorithm1_from(g: &[ComplexMatrix], link: &LinkParams, cfg: &FpConfig, w0: ComplexMatrix, phi0: ReflectionCoefficient) -> Result<FpState> {
    link.validate()?;
    cfg.validate()?;
    check_channels(g)?;
    let kk = g.len();
    if w0.shape() != (g[0].ncols(), kk) || phi0.len() != g[0].nrows() {
        return Err(shape("initial point does not match the channels"));
    }
    let mut w = w0;
    let mut phi = phi0;
    let mut alpha = update_alpha(&w, &phi, g, link.sigma2)?;
    let start = lagrangian_objective(&w, &phi, &alpha, g, link)?;
    let mut objective_trace = vec![start];
    let mut block_trace = vec![start];
    let mut lambda = ComplexVector::zeros(kk);
    let mut delta = ComplexVector::zeros(kk);
    let mut converged_flag = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_outer_iters {
        iterations = it;
        alpha = update_alpha(&w, &phi, g, link.sigma2)?;
        check_finite(it, "α update", alpha.iter().all(|a| a.is_finite()))?;
        let ah = alpha_hat(&alpha, link.bandwidth);
        block_trace.push(lagrangian_objective(&w, &phi, &alpha, g, link)?);

        let eff = effective_channels(&phi, g)?;
        lambda = precoder_block(&mut w, &eff, &ah, link, cfg.precoder_inner_iters, it)?;
        check_finite(it, "precoder", w.iter().all(|z| z.is_finite()))?;
        block_trace.push(lagrangian_objective(&w, &phi, &alpha, g, link)?);

        for _ in 0..cfg.reflection_inner_iters {
            delta = update_delta(&w, &phi, &ah, g, link.sigma2)?;
            check_finite(it, "δ update", delta.iter().all(|z| z.is_finite()))?;
            phi = optimize_phi(&delta, &ah, &w, g, link.sigma2, &phi, cfg)?;
        }
        check_finite(it, "reflection", phi.as_vector().iter().all(|z| z.is_finite()))?;
        let value = lagrangian_objective(&w, &phi, &alpha, g, link)?;
        check_finite(it, "objective", value.is_finite())?;
        block_trace.push(value);

        let prev = *objective_trace.last().expect("nonempty");
        objective_trace.push(value);
        if converged(prev, value, cfg.convergence_tol) {
            converged_flag = true;
            break;
        }
    }
    // Leave α tight so the last trace entry is the sum-rate itself.
    alpha = update_alpha(&w, &phi, g, link.sigma2)?;
    let tight = lagrangian_objective(&w, &phi, &alpha, g, link)?;
    // α = η maximizes r_α, so this never lowers the last entry.
    *objective_trace.last_mut().expect("nonempty") = tight;
    Ok(FpState {
        w,
        phi,
        alpha,
        lambda,
        delta,
        objective_trace,
        block_trace,
        iterations,
        converged: converged_flag,
    })
}

/// Precoder-only optimization (α plus the (λ, W) loop) for fixed effective
/// rows, used by the fixed-reflector and direct-link baselines.
#[derive(Debug, Clone)]
pub struct PrecoderOnly {
    pub w: ComplexMatrix,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn optimize_precoder_only(eff: &ComplexMatrix, link: &LinkParams, cfg: &FpConfig) -> Result<PrecoderOnly> {
    link.validate()?;
    cfg.validate()?;
    check_finite(0, "channel entries", eff.iter().all(|z| z.is_finite()))?;
    let mut w = matched_filter_init(eff, link.p_max);
    let mut trace = vec![rate_from_sinrs(&sinr_all(eff, &w, link.sigma2)?, link.bandwidth)];
    let mut converged_flag = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_outer_iters {
        iterations = it;
        let alpha = sinr_all(eff, &w, link.sigma2)?;
        let ah = alpha_hat(&alpha, link.bandwidth);
        precoder_block(&mut w, eff, &ah, link, cfg.precoder_inner_iters, it)?;
        let value = rate_from_sinrs(&sinr_all(eff, &w, link.sigma2)?, link.bandwidth);
        check_finite(it, "objective", value.is_finite())?;
        let prev = *trace.last().expect("nonempty");
        trace.push(value);
        if converged(prev, value, cfg.convergence_tol) {
            converged_flag = true;
            break;
        }
    }
    Ok(PrecoderOnly { w, objective_trace: trace, iterations, converged: converged_flag })
}

/// True when every step of `trace` is nondecreasing up to `rel_tol`.
pub fn is_monotone(trace: &[f64], rel_tol: f64) -> bool {
    trace.windows(2).all(|p| p[1] >= p[0] - rel_tol * p[0].abs().max(p[1].abs()))
}
