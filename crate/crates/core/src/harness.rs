//! Experiment orchestration: per-drop scheme runs, parameter sweeps, the
//! learning pipeline, and CSV / plot-data output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{build_cascaded_channels, direct_effective_channels, effective_channels, time_avg_rate, OverheadClass, ReflectionCoefficient};
use crate::drl::env::{build_setups, evaluate, train, ActionSet, EpisodeLog, EpisodeSetup, Learner, LearnerKind, TrainingConfig};
use crate::drl::reduce::reduce_action_space;
use crate::error::{invalid, Error, Result};
use crate::fp::{algorithm1_from, optimize_precoder_only, FpConfig, LinkParams};
use crate::rng::{drop_seed, substream, Substream};
use crate::scenario::{sample_geometry, NetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    ProposedFp,
    FixedIr,
    Direct,
    Qrdrl,
    Qlearning,
    NoAdapt,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::ProposedFp,
        SchemeId::FixedIr,
        SchemeId::Direct,
        SchemeId::Qrdrl,
        SchemeId::Qlearning,
        SchemeId::NoAdapt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::ProposedFp => "proposed_fp",
            SchemeId::FixedIr => "fixed_ir",
            SchemeId::Direct => "direct",
            SchemeId::Qrdrl => "qrdrl",
            SchemeId::Qlearning => "qlearning",
            SchemeId::NoAdapt => "no_adapt",
        }
    }

    pub fn overhead(self) -> OverheadClass {
        match self {
            SchemeId::FixedIr => OverheadClass::FixedIr,
            SchemeId::Direct => OverheadClass::Direct,
            _ => OverheadClass::IrOptimized,
        }
    }

    pub fn learner(self) -> Option<LearnerKind> {
        match self {
            SchemeId::Qrdrl => Some(LearnerKind::QrDrl),
            SchemeId::Qlearning => Some(LearnerKind::QLearning),
            SchemeId::NoAdapt => Some(LearnerKind::NoAdapt),
            _ => None,
        }
    }

    pub fn from_learner(kind: LearnerKind) -> SchemeId {
        match kind {
            LearnerKind::QrDrl => SchemeId::Qrdrl,
            LearnerKind::QLearning => SchemeId::Qlearning,
            LearnerKind::NoAdapt => SchemeId::NoAdapt,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s.trim())
            .ok_or_else(|| invalid(format!("unknown scheme {s:?}")))
    }
}

/// Parses a comma-separated scheme list.
pub fn parse_schemes(list: &str) -> Result<Vec<SchemeId>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// One row of experiment output. Failed runs keep their row with the error
/// text and a zero metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scheme: SchemeId,
    pub variable: String,
    pub value: f64,
    pub seed: u64,
    /// Time-averaged sum-rate, bits/s.
    pub metric: f64,
    pub iterations: Option<usize>,
    pub coverage: Option<f64>,
    pub episode: Option<usize>,
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn new(scheme: SchemeId, variable: &str, value: f64, seed: u64, metric: f64) -> Self {
        ExperimentRecord {
            scheme,
            variable: variable.to_string(),
            value,
            seed,
            metric,
            iterations: None,
            coverage: None,
            episode: None,
            error: None,
        }
    }

    fn failed(scheme: SchemeId, variable: &str, value: f64, seed: u64, err: &Error) -> Self {
        ExperimentRecord {
            error: Some(err.to_string()),
            ..ExperimentRecord::new(scheme, variable, value, seed, 0.0)
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Instantaneous and time-averaged outcome of one scheme on one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct DropOutcome {
    /// Sum-rate on the true channel, bits/s.
    pub instantaneous: f64,
    pub time_averaged: f64,
    pub iterations: usize,
}

/// Runs one optimization scheme on drop `seed` with perfect CSI; overhead is
/// charged through [`time_avg_rate`]. The proposed scheme starts Algorithm 1
/// from the fixed-reflector solution, so it never ends below it.
pub fn run_optimization_drop(cfg: &NetworkConfig, scheme: SchemeId, seed: u64, fp: &FpConfig) -> Result<DropOutcome> {
    cfg.validate()?;
    let geometry = sample_geometry(cfg, seed)?;
    let channels = build_cascaded_channels(&geometry, cfg, &mut substream(seed, Substream::Shadowing))?;
    let link = LinkParams::from_config(cfg);
    let ones = ReflectionCoefficient::ones(cfg.num_ir_elements);
    let (rate, iterations) = match scheme {
        SchemeId::Direct => {
            let res = optimize_precoder_only(&direct_effective_channels(&channels), &link, fp)?;
            (*res.objective_trace.last().expect("nonempty trace"), res.iterations)
        }
        SchemeId::FixedIr | SchemeId::ProposedFp => {
            let fixed = optimize_precoder_only(&effective_channels(&ones, &channels.true_g)?, &link, fp)?;
            if scheme == SchemeId::FixedIr {
                (*fixed.objective_trace.last().expect("nonempty trace"), fixed.iterations)
            } else {
                let st = algorithm1_from(&channels.true_g, &link, fp, fixed.w, ones)?;
                (st.final_objective(), st.iterations)
            }
        }
        other => return Err(invalid(format!("{other} is a learning scheme; run it through train_and_eval"))),
    };
    Ok(DropOutcome {
        instantaneous: rate,
        time_averaged: time_avg_rate(rate, scheme.overhead(), cfg)?,
        iterations,
    })
}

/// Runs `scheme` end to end on drop `seed`. Learning schemes other than
/// `no_adapt` need trained tables and are refused here.
pub fn run_drop(cfg: &NetworkConfig, scheme: SchemeId, seed: u64) -> Result<ExperimentRecord> {
    run_drop_labeled(cfg, scheme, seed, "none", 0.0, &FpConfig::default())
}

fn run_drop_labeled(cfg: &NetworkConfig, scheme: SchemeId, seed: u64, variable: &str, value: f64, fp: &FpConfig) -> Result<ExperimentRecord> {
    if scheme == SchemeId::NoAdapt {
        let setup = EpisodeSetup::build(cfg, seed, fp)?;
        let actions = ActionSet::new(vec![1], cfg.num_ir_elements)?;
        let rates = evaluate(&Learner::NoAdapt, std::slice::from_ref(&setup), &actions, cfg)?;
        let mut rec = ExperimentRecord::new(scheme, variable, value, seed, rates[0]);
        rec.iterations = Some(setup.fp_iterations);
        return Ok(rec);
    }
    let out = run_optimization_drop(cfg, scheme, seed, fp)?;
    let mut rec = ExperimentRecord::new(scheme, variable, value, seed, out.time_averaged);
    rec.iterations = Some(out.iterations);
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// BS power in dBm.
    PMax,
    /// Bandwidth in Hz.
    Bandwidth,
    /// BS antenna count M.
    Antennas,
    /// IR element count N.
    Elements,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::PMax => "p_max",
            SweepVariable::Bandwidth => "b",
            SweepVariable::Antennas => "m",
            SweepVariable::Elements => "n",
        }
    }

    /// Copy of `cfg` with this variable set to `value`, validated.
    pub fn apply(self, cfg: &NetworkConfig, value: f64) -> Result<NetworkConfig> {
        let mut c = cfg.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(invalid(format!("{} needs a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepVariable::PMax => c.bs_power_max = value,
            SweepVariable::Bandwidth => c.bandwidth = value,
            SweepVariable::Antennas => c.num_bs_antennas = count()?,
            SweepVariable::Elements => c.num_ir_elements = count()?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p_max" | "pmax" | "power" => Ok(SweepVariable::PMax),
            "b" | "bandwidth" => Ok(SweepVariable::Bandwidth),
            "m" | "antennas" => Ok(SweepVariable::Antennas),
            "n" | "elements" => Ok(SweepVariable::Elements),
            other => Err(invalid(format!("unknown sweep variable {other:?}"))),
        }
    }
}

/// Runs every scheme on `drops` drops per value. Drop d uses the same seed at
/// every value and for every scheme, so comparisons share channels. Failed
/// runs become error rows. Output order is (value, drop, scheme) whatever the
/// worker count.
pub fn sweep(
    cfg: &NetworkConfig,
    schemes: &[SchemeId],
    variable: SweepVariable,
    values: &[f64],
    drops: usize,
    master_seed: u64,
    fp: &FpConfig,
) -> Result<Vec<ExperimentRecord>> {
    if schemes.is_empty() || values.is_empty() {
        return Err(invalid("sweep needs at least one scheme and one value"));
    }
    let configs = values.iter().map(|&v| variable.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, u64)> = (0..values.len()).flat_map(|vi| (0..drops as u64).map(move |d| (vi, d))).collect();
    let name = variable.name();
    let records: Vec<Vec<ExperimentRecord>> = tasks
        .par_iter()
        .map(|&(vi, d)| {
            let seed = drop_seed(master_seed, d);
            schemes
                .iter()
                .map(|&s| {
                    run_drop_labeled(&configs[vi], s, seed, name, values[vi], fp)
                        .unwrap_or_else(|e| ExperimentRecord::failed(s, name, values[vi], seed, &e))
                })
                .collect()
        })
        .collect();
    Ok(records.into_iter().flatten().collect())
}

/// Mean and standard error of one (scheme, x) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub scheme: SchemeId,
    pub variable: String,
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Sample mean and standard error (n − 1 normalization; 0 for one sample).
pub fn mean_stderr(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// Groups successful records by (scheme, variable, value), in first-seen order.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<Vec<PlotPoint>> {
    if records.is_empty() {
        return Err(invalid("no records to aggregate"));
    }
    let mut keys: Vec<(SchemeId, String, f64)> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let key = (r.scheme, r.variable.clone(), r.value);
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r.metric),
            None => {
                keys.push(key);
                groups.push(vec![r.metric]);
            }
        }
    }
    Ok(keys
        .into_iter()
        .zip(groups)
        .map(|((scheme, variable, x), vals)| {
            let (mean, stderr) = mean_stderr(&vals).expect("groups are nonempty");
            PlotPoint {
                scheme,
                variable,
                x,
                mean,
                stderr,
                count: vals.len(),
            }
        })
        .collect())
}

/// Mean metric of the successful records of one scheme at one value.
pub fn mean_metric(records: &[ExperimentRecord], scheme: SchemeId, value: f64) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter(|r| r.is_ok() && r.scheme == scheme && r.value == value).map(|r| r.metric).collect();
    mean_stderr(&vals).map(|(m, _)| m)
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(invalid(format!("refusing to write an empty table to {}", path.display())));
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes records with a fixed header; empty input is an error and leaves no file.
pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    write_rows(records, path)
}

pub fn parse_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    read_rows(path)
}

/// Writes the (scheme, x, mean, stderr) aggregation of `records`.
pub fn emit_plot_data(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    write_rows(&aggregate(records)?, path)
}

pub fn parse_plot_data(path: &Path) -> Result<Vec<PlotPoint>> {
    read_rows(path)
}

/// One row of the training-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: usize,
    /// Mean interval rate over the trailing window, bits/s.
    pub mean_rate: f64,
    pub epsilon: f64,
    pub scheme: SchemeId,
}

/// Trailing-window means: entry i averages `values[i+1−w ..= i]` (shorter at
/// the start).
pub fn windowed_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

pub fn training_rows(logs: &[EpisodeLog], scheme: SchemeId, window: usize) -> Vec<TrainingRow> {
    let raw: Vec<f64> = logs.iter().map(|l| l.mean_rate).collect();
    windowed_mean(&raw, window)
        .into_iter()
        .zip(logs)
        .map(|(m, l)| TrainingRow {
            episode: l.episode,
            mean_rate: m,
            epsilon: l.epsilon,
            scheme,
        })
        .collect()
}

pub fn emit_training_csv(rows: &[TrainingRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn parse_training_csv(path: &Path) -> Result<Vec<TrainingRow>> {
    read_rows(path)
}

/// Compares the two halves of the final `tail_fraction` of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailTrend {
    pub first_mean: f64,
    pub second_mean: f64,
    /// Standard error of the difference of the two half means.
    pub sigma: f64,
}

impl TailTrend {
    pub fn of(values: &[f64], tail_fraction: f64) -> Option<TailTrend> {
        let len = ((values.len() as f64) * tail_fraction).round() as usize;
        if len < 4 {
            return None;
        }
        let tail = &values[values.len() - len..];
        let (a, b) = tail.split_at(len / 2);
        let (m1, s1) = mean_stderr(a)?;
        let (m2, s2) = mean_stderr(b)?;
        Some(TailTrend {
            first_mean: m1,
            second_mean: m2,
            sigma: (s1 * s1 + s2 * s2).sqrt(),
        })
    }

    /// The later half does not fall more than 2σ below the earlier one.
    pub fn nondecreasing(&self) -> bool {
        self.second_mean >= self.first_mean - 2.0 * self.sigma
    }

    /// The halves agree within 2σ.
    pub fn flat(&self) -> bool {
        (self.second_mean - self.first_mean).abs() <= 2.0 * self.sigma
    }
}

/// Parameters of the learning pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    pub episodes: usize,
    pub eval_intervals: usize,
    /// Distinct drops cycled through during training.
    pub pool_size: usize,
    /// Drops sampled for action reduction when no action set is supplied.
    pub reduction_samples: usize,
    pub window: usize,
    pub master_seed: u64,
}

impl LearningConfig {
    pub fn new(episodes: usize, master_seed: u64) -> Self {
        LearningConfig {
            episodes,
            eval_intervals: 100,
            pool_size: 200,
            reduction_samples: 500,
            window: 300,
            master_seed,
        }
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        (0..self.pool_size as u64).map(|i| drop_seed(self.master_seed, i)).collect()
    }

    /// Held-out drops, disjoint from training and reduction indices.
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval_intervals as u64).map(|i| drop_seed(self.master_seed, (1 << 40) + i)).collect()
    }

    pub fn reduction_seed(&self) -> u64 {
        drop_seed(self.master_seed, 1 << 41)
    }
}

/// Outputs of [`train_and_eval`].
#[derive(Debug, Clone)]
pub struct LearningResult {
    pub actions: Vec<u64>,
    pub learners: Vec<Learner>,
    pub training: Vec<TrainingRow>,
    /// Raw per-episode interval rates per learner, same order as `learners`.
    pub raw_training: Vec<Vec<f64>>,
    /// One record per learner and evaluation interval.
    pub online: Vec<ExperimentRecord>,
}

/// Builds the action set if needed, trains every requested learner on a
/// shared drop pool, then runs the frozen learners greedily on held-out
/// intervals. `no_adapt` has no table and is only evaluated.
pub fn train_and_eval(cfg: &NetworkConfig, kinds: &[LearnerKind], lc: &LearningConfig, actions: Option<Vec<u64>>, fp: &FpConfig) -> Result<LearningResult> {
    cfg.validate()?;
    let actions = match actions {
        Some(a) => a,
        None => {
            warn!("no cached action set; sampling {} drops to build one", lc.reduction_samples);
            reduce_action_space(cfg, lc.reduction_seed(), lc.reduction_samples, cfg.reduced_action_count, fp)?.actions
        }
    };
    let set = ActionSet::new(actions.clone(), cfg.num_ir_elements)?;
    let pool = if lc.episodes > 0 && kinds.iter().any(|&k| k != LearnerKind::NoAdapt) {
        build_setups(cfg, &lc.training_seeds(), fp)?
    } else {
        Vec::new()
    };
    let eval = build_setups(cfg, &lc.eval_seeds(), fp)?;
    let tc = TrainingConfig::new(lc.episodes);
    let trained: Vec<(Learner, Vec<EpisodeLog>)> = kinds
        .par_iter()
        .map(|&kind| {
            let mut learner = Learner::new(kind, cfg, &set)?;
            let logs = if kind == LearnerKind::NoAdapt {
                Vec::new()
            } else {
                train(&mut learner, &pool, &set, cfg, &tc, lc.master_seed)?
            };
            Ok((learner, logs))
        })
        .collect::<Result<_>>()?;
    let mut result = LearningResult {
        actions,
        learners: Vec::new(),
        training: Vec::new(),
        raw_training: Vec::new(),
        online: Vec::new(),
    };
    for (learner, logs) in trained {
        let scheme = SchemeId::from_learner(learner.kind());
        result.training.extend(training_rows(&logs, scheme, lc.window));
        result.raw_training.push(logs.iter().map(|l| l.mean_rate).collect());
        for (i, (rate, setup)) in evaluate(&learner, &eval, &set, cfg)?.into_iter().zip(&eval).enumerate() {
            let mut rec = ExperimentRecord::new(scheme, "interval", i as f64, setup.seed, rate);
            rec.episode = Some(lc.episodes);
            result.online.push(rec);
        }
        result.learners.push(learner);
    }
    Ok(result)
}

/// Greedy online evaluation of an already trained learner.
pub fn evaluate_online(cfg: &NetworkConfig, learner: &Learner, actions: &[u64], seeds: &[u64], fp: &FpConfig) -> Result<Vec<ExperimentRecord>> {
    let set = ActionSet::new(actions.to_vec(), cfg.num_ir_elements)?;
    let setups = build_setups(cfg, seeds, fp)?;
    let scheme = SchemeId::from_learner(learner.kind());
    Ok(evaluate(learner, &setups, &set, cfg)?
        .into_iter()
        .zip(seeds)
        .enumerate()
        .map(|(i, (rate, &seed))| ExperimentRecord::new(scheme, "interval", i as f64, seed, rate))
        .collect())
}

/// Writes action ids one per line.
pub fn write_actions(ids: &[u64], path: &Path) -> Result<()> {
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_actions(path: &Path) -> Result<Vec<u64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<u64>().map_err(|e| Error::Parse(format!("action id {l:?}: {e}"))))
        .collect()
}
