//! Numerical check that the projected distributional Bellman operator
//! contracts in the maximal 1-Wasserstein metric up to the quantile
//! discretization slack θ̄/Q.

use rand::Rng;

use super::quantile::{wasserstein_d1, weighted_quantile_projection};
use crate::error::{invalid, Result};

/// Small MDP evaluated under a fixed deterministic policy.
#[derive(Debug, Clone)]
pub struct SyntheticMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row `s·A + a` holds P(s' | s, a).
    pub transitions: Vec<Vec<f64>>,
    /// Deterministic reward per (s, a), in [0, r_max].
    pub rewards: Vec<f64>,
    pub policy: Vec<usize>,
    pub gamma: f64,
}

impl SyntheticMdp {
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_actions: usize, r_max: f64, gamma: f64, rng: &mut R) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || !(0.0..1.0).contains(&gamma) || !(r_max >= 0.0) {
            return Err(invalid("synthetic MDP needs states, actions, γ in [0,1) and r_max ≥ 0"));
        }
        let transitions = (0..num_states * num_actions)
            .map(|_| {
                // Sparse rows make mixtures with few atoms as well as many.
                let raw: Vec<f64> = (0..num_states).map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 }).collect();
                let total: f64 = raw.iter().sum();
                if total == 0.0 {
                    let mut row = vec![0.0; num_states];
                    row[rng.random_range(0..num_states)] = 1.0;
                    row
                } else {
                    raw.iter().map(|p| p / total).collect()
                }
            })
            .collect();
        Ok(SyntheticMdp {
            num_states,
            num_actions,
            transitions,
            rewards: (0..num_states * num_actions).map(|_| rng.random_range(0.0..=r_max)).collect(),
            policy: (0..num_states).map(|_| rng.random_range(0..num_actions)).collect(),
            gamma,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `Π T^π Z`: each cell becomes the projected mixture of
    /// `r(s,a) + γ·Z(s', π(s'))` over successor states.
    pub fn apply(&self, z: &[Vec<f64>], num_quantiles: usize) -> Result<Vec<Vec<f64>>> {
        if z.len() != self.num_cells() {
            return Err(invalid("table has the wrong number of cells"));
        }
        (0..self.num_cells())
            .map(|cell| {
                let mut atoms = Vec::new();
                for (next, &p) in self.transitions[cell].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let succ = &z[next * self.num_actions + self.policy[next]];
                    let w = p / succ.len() as f64;
                    atoms.extend(succ.iter().map(|&v| (self.rewards[cell] + self.gamma * v, w)));
                }
                weighted_quantile_projection(&atoms, num_quantiles)
            })
            .collect()
    }
}

/// Supremum over cells of the per-cell 1-Wasserstein distance.
pub fn max_d1(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("tables differ in cell count"));
    }
    a.iter().zip(b).try_fold(0.0f64, |m, (x, y)| Ok(m.max(wasserstein_d1(x, y)?)))
}

pub fn random_table<R: Rng + ?Sized>(cells: usize, num_quantiles: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..cells)
        .map(|_| {
            let mut c: Vec<f64> = (0..num_quantiles).map(|_| rng.random_range(-scale..=scale)).collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect()
}

fn max_abs(z: &[Vec<f64>]) -> f64 {
    z.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen (negative when every trial had slack).
    pub worst_excess: f64,
    /// `d̄₁(Z⁽ᵗ⁾, Z⁽ᵗ⁺¹⁾)` for the iterate run, t = 0, 1, ….
    pub iterate_distances: Vec<f64>,
    /// `γᵗ d₀ + Σ_{s=1..t} γˢ θ̄/Q` for the same run.
    pub iterate_envelope: Vec<f64>,
}

impl ContractionReport {
    /// First t with `d̄₁(Z⁽ᵗ⁾, Z⁽ᵗ⁺¹⁾) < tol`.
    pub fn steps_below(&self, tol: f64) -> Option<usize> {
        self.iterate_distances.iter().position(|&d| d < tol)
    }

    pub fn envelope_holds(&self) -> bool {
        self.iterate_distances.iter().zip(&self.iterate_envelope).all(|(d, e)| *d <= e + 1e-9)
    }
}

/// Draws `num_trials` (MDP, Z₁, Z₂) triples and counts violations of
/// `d̄₁(ΠTZ₁, ΠTZ₂) ≤ γ(d̄₁(Z₁, Z₂) + θ̄/Q)` beyond 1e-9, with θ̄ the largest
/// support magnitude of either table plus r_max/(1−γ). Then iterates the
/// operator `iterate_steps` times from a random table.
pub fn verify_contraction<R: Rng + ?Sized>(
    num_trials: usize,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    num_quantiles: usize,
    iterate_steps: usize,
    rng: &mut R,
) -> Result<ContractionReport> {
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for trial in 0..num_trials {
        let mdp = SyntheticMdp::random(num_states, num_actions, rng.random_range(0.1..5.0), gamma, rng)?;
        let scale = rng.random_range(0.1..20.0);
        let z1 = random_table(mdp.num_cells(), num_quantiles, scale, rng);
        // Mix far-apart pairs, nearby pairs and identical pairs.
        let z2 = match trial % 3 {
            0 => random_table(mdp.num_cells(), num_quantiles, scale, rng),
            1 => {
                let eps = scale * 10f64.powf(rng.random_range(-6.0..-1.0));
                z1.iter()
                    .map(|c| {
                        let mut c: Vec<f64> = c.iter().map(|v| v + rng.random_range(-eps..=eps)).collect();
                        c.sort_by(f64::total_cmp);
                        c
                    })
                    .collect()
            }
            _ => z1.clone(),
        };
        let theta = max_abs(&z1).max(max_abs(&z2)) + mdp.max_reward() / (1.0 - gamma);
        let lhs = max_d1(&mdp.apply(&z1, num_quantiles)?, &mdp.apply(&z2, num_quantiles)?)?;
        let rhs = gamma * (max_d1(&z1, &z2)? + theta / num_quantiles as f64);
        let excess = lhs - rhs;
        worst_excess = worst_excess.max(excess);
        if excess > 1e-9 {
            violations += 1;
        }
    }

    let mdp = SyntheticMdp::random(num_states, num_actions, 1.0, gamma, rng)?;
    let mut z = random_table(mdp.num_cells(), num_quantiles, 10.0, rng);
    let mut iterate_distances = Vec::with_capacity(iterate_steps);
    let mut iterate_envelope = Vec::with_capacity(iterate_steps);
    let mut c_q = f64::NAN;
    for t in 0..iterate_steps {
        let next = mdp.apply(&z, num_quantiles)?;
        let d = max_d1(&z, &next)?;
        if t == 0 {
            // Every iterate stays within this magnitude once the first step lands.
            let theta = max_abs(&z).max(max_abs(&next)) + mdp.max_reward() / (1.0 - gamma);
            c_q = theta / num_quantiles as f64;
            iterate_envelope.push(d);
        } else {
            let d0 = iterate_distances[0];
            let tail: f64 = (1..=t).map(|s| gamma.powi(s as i32) * c_q).sum();
            iterate_envelope.push(gamma.powi(t as i32) * d0 + tail);
        }
        iterate_distances.push(d);
        z = next;
    }
    Ok(ContractionReport { trials: num_trials, violations, worst_excess, iterate_distances, iterate_envelope })
}
