//! One coherence interval as an episode: Algorithm 1 on the estimated
//! channels fixes W* and the starting reflection, after which the learner
//! flips element phases at the end of every slot.

use num_complex::Complex64;

use super::action::action_decode;
use super::state::{compute_state, default_threshold, DeviationState};
use super::table::{qlearning_step, qlearning_terminal, qrdrl_step, qrdrl_terminal, QuantileTable, ScalarQTable};
use crate::channel::{sum_rate, ChannelSet, ReflectionCoefficient};
use crate::error::{invalid, Error, Result};
use crate::estimation::{draw_symbols, estimated_drop, received_signal, timing_budget};
use crate::fp::{algorithm1, FpConfig, LinkParams};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::rng::{drop_seed, substream, SimRng, Substream};
use crate::scenario::NetworkConfig;

/// Reduced action set with the decoded flip patterns cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    ids: Vec<u64>,
    diags: Vec<Vec<i8>>,
}

impl ActionSet {
    pub fn new(ids: Vec<u64>, n: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(invalid("action set is empty"));
        }
        let diags = ids.iter().map(|&id| action_decode(id, n)).collect::<Result<Vec<_>>>()?;
        Ok(ActionSet { ids, diags })
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn diag(&self, index: usize) -> &[i8] {
        &self.diags[index]
    }
}

/// Everything fixed for the duration of one interval.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub seed: u64,
    /// True channels plus the pilot estimates.
    pub channels: ChannelSet,
    /// W* from Algorithm 1 on the estimates, frozen for the interval.
    pub w: ComplexMatrix,
    pub phi0: ReflectionCoefficient,
    pub fp_iterations: usize,
}

impl EpisodeSetup {
    pub fn build(cfg: &NetworkConfig, seed: u64, fp: &FpConfig) -> Result<Self> {
        let (channels, report) = estimated_drop(cfg, seed)?;
        let state = algorithm1(&report.est_g, &LinkParams::from_config(cfg), fp)?;
        Ok(EpisodeSetup {
            seed,
            channels,
            w: state.w,
            phi0: state.phi,
            fp_iterations: state.iterations,
        })
    }

    fn estimates(&self) -> &[ComplexMatrix] {
        self.channels.est_g.as_deref().expect("episode setups always carry estimates")
    }
}

/// Builds setups for many seeds on the rayon pool, in seed order.
pub fn build_setups(cfg: &NetworkConfig, seeds: &[u64], fp: &FpConfig) -> Result<Vec<EpisodeSetup>> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| EpisodeSetup::build(cfg, s, fp)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    QrDrl,
    QLearning,
    NoAdapt,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::QrDrl => "qrdrl",
            LearnerKind::QLearning => "qlearning",
            LearnerKind::NoAdapt => "no_adapt",
        }
    }
}

/// Q-learning step size when none is configured.
pub const DEFAULT_Q_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone)]
pub enum Learner {
    QrDrl(QuantileTable),
    QLearning(ScalarQTable),
    /// Keeps the Algorithm 1 reflection for the whole interval.
    NoAdapt,
}

impl Learner {
    /// Zero-initialized learner over `actions` for a K-UE network.
    pub fn new(kind: LearnerKind, cfg: &NetworkConfig, actions: &ActionSet) -> Result<Self> {
        let states = DeviationState::num_states(cfg.num_ues);
        Ok(match kind {
            LearnerKind::QrDrl => Learner::QrDrl(QuantileTable::new(states, actions.ids().to_vec(), cfg.num_quantiles)?),
            LearnerKind::QLearning => Learner::QLearning(ScalarQTable::new(states, actions.ids().to_vec(), DEFAULT_Q_LEARNING_RATE)?),
            LearnerKind::NoAdapt => Learner::NoAdapt,
        })
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::QrDrl(_) => LearnerKind::QrDrl,
            Learner::QLearning(_) => LearnerKind::QLearning,
            Learner::NoAdapt => LearnerKind::NoAdapt,
        }
    }

    fn action_ids(&self) -> Option<&[u64]> {
        match self {
            Learner::QrDrl(t) => Some(&t.action_ids),
            Learner::QLearning(t) => Some(&t.action_ids),
            Learner::NoAdapt => None,
        }
    }

    /// Greedy action index for a state, `None` for the no-flip baseline.
    pub fn greedy(&self, state: usize) -> Option<usize> {
        match self {
            Learner::QrDrl(t) => Some(t.greedy_action(state)),
            Learner::QLearning(t) => Some(t.greedy_action(state)),
            Learner::NoAdapt => None,
        }
    }

    fn learn_step(
        &mut self,
        prev: Option<(usize, usize)>,
        reward: f64,
        state: usize,
        eps: f64,
        gamma: f64,
        rng: &mut SimRng,
    ) -> Result<Option<usize>> {
        Ok(match self {
            Learner::QrDrl(t) => Some(qrdrl_step(t, prev, reward, state, eps, gamma, rng)?),
            Learner::QLearning(t) => Some(qlearning_step(t, prev, reward, state, gamma, eps, rng)),
            Learner::NoAdapt => None,
        })
    }

    fn learn_terminal(&mut self, prev: (usize, usize), reward: f64) -> Result<()> {
        match self {
            Learner::QrDrl(t) => qrdrl_terminal(t, prev, reward),
            Learner::QLearning(t) => {
                qlearning_terminal(t, prev, reward);
                Ok(())
            }
            Learner::NoAdapt => Ok(()),
        }
    }

    /// Table text dump; the baseline has no table.
    pub fn to_text(&self) -> Option<String> {
        match self {
            Learner::QrDrl(t) => Some(t.to_text()),
            Learner::QLearning(t) => Some(t.to_text()),
            Learner::NoAdapt => None,
        }
    }

    /// Parses either table kind from its text dump.
    pub fn from_text(text: &str) -> Result<Self> {
        match text.split_whitespace().next() {
            Some("quantile") => Ok(Learner::QrDrl(QuantileTable::from_text(text)?)),
            Some("scalar") => Ok(Learner::QLearning(ScalarQTable::from_text(text)?)),
            other => Err(Error::Parse(format!("unknown table kind {other:?}"))),
        }
    }
}

/// How an episode is run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Update the table and explore with probability ε.
    Train { epsilon: f64 },
    /// Frozen table, greedy actions.
    Evaluate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// Per-slot sum-rate on the true channel, bits/s/Hz.
    pub rewards: Vec<f64>,
    pub states: Vec<usize>,
    /// Action id applied at the end of each slot but the last.
    pub actions: Vec<u64>,
    /// Σ t_l·r_l / T in bits/s.
    pub interval_rate: f64,
}

/// Received samples `y` and their noise-free predictions `ŷ` under Ĝ for one
/// slot of fresh symbols.
pub fn observe(setup: &EpisodeSetup, phi: &ReflectionCoefficient, sigma2: f64, rng: &mut SimRng) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let k = setup.channels.num_ues();
    let beta = draw_symbols(k, rng);
    let s = &setup.w * ComplexVector::from_column_slice(&beta);
    let mut y = Vec::with_capacity(k);
    let mut y_hat = Vec::with_capacity(k);
    for (g, g_hat) in setup.channels.true_g.iter().zip(setup.estimates()) {
        y.push(received_signal(phi, g, &setup.w, &beta, sigma2, rng)?);
        y_hat.push((phi.as_vector().transpose() * g_hat * &s)[(0, 0)]);
    }
    Ok((y, y_hat))
}

pub fn deviation_threshold(cfg: &NetworkConfig) -> f64 {
    cfg.deviation_threshold.unwrap_or_else(|| default_threshold(cfg.sigma2()))
}

/// Runs the L slots of one interval. Slot l's reward is credited to the
/// action taken at the end of slot l−1; the last slot closes the episode with
/// a terminal update and no further action.
pub fn run_episode(
    setup: &EpisodeSetup,
    learner: &mut Learner,
    actions: &ActionSet,
    cfg: &NetworkConfig,
    mode: Mode,
    symbols: &mut SimRng,
    exploration: &mut SimRng,
) -> Result<EpisodeOutcome> {
    if let Some(ids) = learner.action_ids() {
        if ids != actions.ids() {
            return Err(invalid("learner table and action set disagree"));
        }
    }
    let budget = timing_budget(cfg)?;
    let (b, sigma2, gamma) = (cfg.bandwidth, cfg.sigma2(), cfg.discount);
    let e_th = deviation_threshold(cfg);
    let slots = cfg.slots_per_interval;
    let mut phi = setup.phi0.clone();
    let mut prev: Option<(usize, usize)> = None;
    let mut out = EpisodeOutcome {
        rewards: Vec::with_capacity(slots),
        states: Vec::with_capacity(slots),
        actions: Vec::with_capacity(slots),
        interval_rate: 0.0,
    };
    for slot in 0..slots {
        let reward = sum_rate(&setup.w, &phi, &setup.channels, b, sigma2)? / b;
        out.rewards.push(reward);
        let (y, y_hat) = observe(setup, &phi, sigma2, symbols)?;
        let state = compute_state(&y, &y_hat, e_th)?.index;
        out.states.push(state);
        if slot + 1 == slots {
            if let (Mode::Train { .. }, Some(p)) = (mode, prev) {
                learner.learn_terminal(p, reward)?;
            }
            break;
        }
        let choice = match mode {
            Mode::Train { epsilon } => learner.learn_step(prev, reward, state, epsilon, gamma, exploration)?,
            Mode::Evaluate => learner.greedy(state),
        };
        match choice {
            Some(a) => {
                phi = phi.flipped(actions.diag(a));
                out.actions.push(actions.ids()[a]);
                prev = Some((state, a));
            }
            None => out.actions.push(1),
        }
    }
    out.interval_rate = budget.per_slot.iter().zip(&out.rewards).map(|(t, r)| t * r * b).sum::<f64>() / budget.interval;
    Ok(out)
}

/// ε schedule and learning parameters for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which ε decays linearly.
    pub decay_fraction: f64,
}

impl TrainingConfig {
    pub fn new(episodes: usize) -> Self {
        TrainingConfig {
            episodes,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_fraction: 0.8,
        }
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let horizon = self.decay_fraction * self.episodes as f64;
        if horizon <= 0.0 || episode as f64 >= horizon {
            return self.epsilon_end;
        }
        let frac = episode as f64 / horizon;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Interval rate of the episode, bits/s.
    pub mean_rate: f64,
    pub epsilon: f64,
}

/// Trains on a pool of precomputed setups, cycling through it once per
/// episode. Symbols are keyed by episode and exploration by the master seed,
/// so a run is reproducible.
pub fn train(
    learner: &mut Learner,
    pool: &[EpisodeSetup],
    actions: &ActionSet,
    cfg: &NetworkConfig,
    tc: &TrainingConfig,
    master_seed: u64,
) -> Result<Vec<EpisodeLog>> {
    if pool.is_empty() && tc.episodes > 0 {
        return Err(invalid("training pool is empty"));
    }
    let mut exploration = substream(master_seed, Substream::Exploration);
    let mut logs = Vec::with_capacity(tc.episodes);
    for episode in 0..tc.episodes {
        let setup = &pool[episode % pool.len()];
        let epsilon = tc.epsilon(episode);
        let mut symbols = substream(drop_seed(master_seed, episode as u64), Substream::Symbols);
        let out = run_episode(setup, learner, actions, cfg, Mode::Train { epsilon }, &mut symbols, &mut exploration)?;
        logs.push(EpisodeLog {
            episode,
            mean_rate: out.interval_rate,
            epsilon,
        });
    }
    Ok(logs)
}

/// Online deployment: one greedy interval per setup, tables frozen.
pub fn evaluate(learner: &Learner, setups: &[EpisodeSetup], actions: &ActionSet, cfg: &NetworkConfig) -> Result<Vec<f64>> {
    let mut frozen = learner.clone();
    setups
        .iter()
        .map(|s| {
            let mut symbols = substream(s.seed, Substream::Symbols);
            let mut unused = substream(s.seed, Substream::Exploration);
            run_episode(s, &mut frozen, actions, cfg, Mode::Evaluate, &mut symbols, &mut unused).map(|o| o.interval_rate)
        })
        .collect()
}
