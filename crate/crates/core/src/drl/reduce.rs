//! Exhaustive phase-flip search and the frequency-ranked reduced action set.

use std::collections::HashMap;

use num_complex::Complex64;

use super::env::EpisodeSetup;
use crate::channel::{rate_from_sinrs, sum_rate};
use crate::error::{invalid, Error, Result};
use crate::fp::FpConfig;
use crate::rng::drop_seed;
use crate::scenario::NetworkConfig;

/// Largest N accepted for exhaustive enumeration.
pub const MAX_ENUMERABLE: usize = 20;

/// Brute-force optimal flip of one setup.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalFlip {
    pub id: u64,
    /// Sum-rate after the flip, bits/s.
    pub rate: f64,
}

/// The flip maximizing the next-slot true sum-rate at `φ0 × ΔΘ`.
///
/// A flip and its global negation give the same rate, so element 0 is held
/// at +1; that member of each pair has the lower id. The remaining 2^(N−1)
/// patterns are walked in Gray-code order, updating the K×K products
/// `φ G_k w_i` by one element at a time.
pub fn optimal_flip(setup: &EpisodeSetup, cfg: &NetworkConfig) -> Result<OptimalFlip> {
    let n = setup.phi0.len();
    if n > MAX_ENUMERABLE {
        return Err(Error::ActionSpaceTooLarge { n, limit: MAX_ENUMERABLE });
    }
    if n == 0 {
        return Err(invalid("no reflecting elements"));
    }
    let k = setup.channels.num_ues();
    let sigma2 = cfg.sigma2();
    let phi = setup.phi0.as_vector();
    // contrib[n][k*K + i] = φ_n (G_k W)[n, i]
    let gw: Vec<_> = setup.channels.true_g.iter().map(|g| g * &setup.w).collect();
    let contrib: Vec<Vec<Complex64>> = (0..n)
        .map(|e| {
            let mut row = Vec::with_capacity(k * k);
            for gk in &gw {
                for i in 0..k {
                    row.push(phi[e] * gk[(e, i)]);
                }
            }
            row
        })
        .collect();
    let mut sums = vec![Complex64::new(0.0, 0.0); k * k];
    for row in &contrib {
        for (s, c) in sums.iter_mut().zip(row) {
            *s += c;
        }
    }
    let rate = |sums: &[Complex64]| {
        let sinrs: Vec<f64> = (0..k)
            .map(|u| {
                let row = &sums[u * k..(u + 1) * k];
                let interference: f64 = row.iter().enumerate().filter(|&(i, _)| i != u).map(|(_, z)| z.norm_sqr()).sum();
                row[u].norm_sqr() / (interference + sigma2)
            })
            .collect();
        rate_from_sinrs(&sinrs, cfg.bandwidth)
    };
    let mut signs = vec![1i8; n];
    // bits of (id − 1): element e maps to bit n−1−e
    let mut code: u64 = 0;
    let mut best = OptimalFlip { id: 1, rate: rate(&sums) };
    for step in 1..(1u64 << (n - 1)) {
        // Gray code over elements 1..n: flip element n−1−tz
        let e = n - 1 - step.trailing_zeros() as usize;
        let factor = Complex64::new(-2.0 * signs[e] as f64, 0.0);
        for (s, c) in sums.iter_mut().zip(&contrib[e]) {
            *s += factor * c;
        }
        signs[e] = -signs[e];
        code ^= 1 << (n - 1 - e);
        let r = rate(&sums);
        let id = code + 1;
        if r > best.rate || (r == best.rate && id < best.id) {
            best = OptimalFlip { id, rate: r };
        }
    }
    // re-evaluate the winner directly to shed accumulated rounding
    let diag = super::action::action_decode(best.id, n)?;
    best.rate = sum_rate(&setup.w, &setup.phi0.flipped(&diag), &setup.channels, cfg.bandwidth, sigma2)?;
    Ok(best)
}

/// Frequency-ranked reduced action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionReduction {
    /// Chosen ids, most frequent first.
    pub actions: Vec<u64>,
    /// (id, count) for every id that was optimal at least once, sorted by
    /// count descending then id ascending.
    pub frequencies: Vec<(u64, usize)>,
    pub samples: usize,
}

/// Ranks optimal ids by frequency (ties to the lower id) and keeps the top
/// `a`. Short lists are padded with the lowest unused ids. The identity flip
/// (id 1) is always kept, displacing the last entry if needed, so a learner
/// can hold the Algorithm 1 reflection.
pub fn rank_actions(optimal_ids: &[u64], a: usize, n: usize) -> Result<ActionReduction> {
    if a == 0 {
        return Err(invalid("reduced action count must be positive"));
    }
    if n > MAX_ENUMERABLE {
        return Err(Error::ActionSpaceTooLarge { n, limit: MAX_ENUMERABLE });
    }
    let total = 1u64 << n;
    let a = a.min(total as usize);
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &id in optimal_ids {
        if id == 0 || id > total {
            return Err(invalid(format!("action id {id} outside 1..={total}")));
        }
        *counts.entry(id).or_default() += 1;
    }
    let mut frequencies: Vec<(u64, usize)> = counts.into_iter().collect();
    frequencies.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut actions: Vec<u64> = frequencies.iter().take(a).map(|&(id, _)| id).collect();
    let mut next = 1u64;
    while actions.len() < a {
        if !actions.contains(&next) {
            actions.push(next);
        }
        next += 1;
    }
    if !actions.contains(&1) {
        *actions.last_mut().expect("a > 0") = 1;
    }
    Ok(ActionReduction {
        actions,
        frequencies,
        samples: optimal_ids.len(),
    })
}

/// Samples `num_samples` drops (seeds derived from `master_seed`), finds the
/// optimal flip of each and ranks them.
pub fn reduce_action_space(cfg: &NetworkConfig, master_seed: u64, num_samples: usize, a: usize, fp: &FpConfig) -> Result<ActionReduction> {
    if cfg.num_ir_elements > MAX_ENUMERABLE {
        return Err(Error::ActionSpaceTooLarge {
            n: cfg.num_ir_elements,
            limit: MAX_ENUMERABLE,
        });
    }
    let seeds: Vec<u64> = (0..num_samples as u64).map(|i| drop_seed(master_seed, i)).collect();
    let ids = optimal_ids(cfg, &seeds, fp)?;
    rank_actions(&ids, a, cfg.num_ir_elements)
}

/// Optimal flip ids for the given drop seeds, in seed order.
pub fn optimal_ids(cfg: &NetworkConfig, seeds: &[u64], fp: &FpConfig) -> Result<Vec<u64>> {
    use rayon::prelude::*;
    if cfg.num_ir_elements > MAX_ENUMERABLE {
        return Err(Error::ActionSpaceTooLarge {
            n: cfg.num_ir_elements,
            limit: MAX_ENUMERABLE,
        });
    }
    seeds
        .par_iter()
        .map(|&s| {
            let setup = EpisodeSetup::build(cfg, s, fp)?;
            optimal_flip(&setup, cfg).map(|o| o.id)
        })
        .collect()
}

/// Fraction of `optimal` ids contained in `actions`.
pub fn coverage(actions: &[u64], optimal: &[u64]) -> f64 {
    if optimal.is_empty() {
        return 0.0;
    }
    optimal.iter().filter(|id| actions.contains(id)).count() as f64 / optimal.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drl::action::action_decode;
    use proptest::prelude::*;

    fn cfg(n: usize) -> NetworkConfig {
        NetworkConfig {
            num_ir_elements: n,
            num_bs_antennas: 4,
            ..NetworkConfig::default()
        }
    }

    fn brute(setup: &EpisodeSetup, c: &NetworkConfig) -> (u64, f64) {
        let n = setup.phi0.len();
        let mut best = (0, f64::NEG_INFINITY);
        for id in 1..=(1u64 << n) {
            let diag = action_decode(id, n).unwrap();
            let r = sum_rate(&setup.w, &setup.phi0.flipped(&diag), &setup.channels, c.bandwidth, c.sigma2()).unwrap();
            if r > best.1 * (1.0 + 1e-12) {
                best = (id, r);
            }
        }
        best
    }

    #[test]
    fn gray_walk_matches_full_enumeration() {
        for seed in 0..6 {
            let c = cfg(9);
            let setup = EpisodeSetup::build(&c, seed, &FpConfig::default()).unwrap();
            let fast = optimal_flip(&setup, &c).unwrap();
            let (id, rate) = brute(&setup, &c);
            assert!((fast.rate - rate).abs() <= 1e-9 * rate, "seed {seed}: {} vs {rate}", fast.rate);
            // equal-rate pairs aside, the ids agree
            let direct = sum_rate(&setup.w, &setup.phi0.flipped(&action_decode(id, 9).unwrap()), &setup.channels, c.bandwidth, c.sigma2()).unwrap();
            assert!((direct - fast.rate).abs() <= 1e-9 * rate);
            assert_eq!(action_decode(fast.id, 9).unwrap()[0], 1);
        }
    }

    #[test]
    fn oversized_arrays_are_refused() {
        let c = cfg(25);
        assert!(matches!(
            reduce_action_space(&c, 1, 2, 4, &FpConfig::default()),
            Err(Error::ActionSpaceTooLarge { n: 25, limit: 20 })
        ));
        assert!(matches!(rank_actions(&[1], 2, 21), Err(Error::ActionSpaceTooLarge { .. })));
    }

    #[test]
    fn ranking_orders_by_count_then_id() {
        let r = rank_actions(&[7, 3, 7, 3, 9, 1, 7], 3, 4).unwrap();
        assert_eq!(r.frequencies, vec![(7, 3), (3, 2), (1, 1), (9, 1)]);
        assert_eq!(r.actions, vec![7, 3, 1]);
        assert_eq!(r.samples, 7);
    }

    #[test]
    fn identity_is_always_kept_and_short_lists_padded() {
        let r = rank_actions(&[5, 5, 6, 6, 7], 2, 4).unwrap();
        assert_eq!(r.actions, vec![5, 1]);
        let r = rank_actions(&[5], 4, 4).unwrap();
        assert_eq!(r.actions, vec![5, 1, 2, 3]);
    }

    #[test]
    fn full_set_covers_everything() {
        let r = rank_actions(&[3, 4], 16, 4).unwrap();
        let mut sorted = r.actions.clone();
        sorted.sort();
        assert_eq!(sorted, (1..=16).collect::<Vec<_>>());
        assert_eq!(coverage(&r.actions, &[2, 9, 16, 1]), 1.0);
    }

    proptest! {
        #[test]
        fn sets_are_nested_and_coverage_grows(
            ids in proptest::collection::vec(1u64..=32, 1..60),
            held in proptest::collection::vec(1u64..=32, 1..30),
        ) {
            let mut prev: Vec<u64> = Vec::new();
            let mut last = 0.0;
            for a in 1..=32 {
                let r = rank_actions(&ids, a, 5).unwrap();
                prop_assert_eq!(r.actions.len(), a);
                prop_assert!(r.actions.contains(&1));
                prop_assert!(prev.iter().all(|x| r.actions.contains(x)));
                let c = coverage(&r.actions, &held);
                prop_assert!(c >= last);
                last = c;
                prev = r.actions;
            }
            prop_assert_eq!(last, 1.0);
        }
    }
}
