//! Tabular learners: quantile-regression distributional table and the scalar
//! Q-learning baseline, with a plain-text serialization.

use rand::Rng;

use super::quantile::quantile_projection;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub num_states: usize,
    /// Action ids, one per column; ties break toward the lowest id.
    pub action_ids: Vec<u64>,
    pub num_quantiles: usize,
    z: Vec<f64>,
    pub visits: Vec<u64>,
}

impl QuantileTable {
    pub fn new(num_states: usize, action_ids: Vec<u64>, num_quantiles: usize) -> Result<Self> {
        if num_states == 0 || action_ids.is_empty() || num_quantiles == 0 {
            return Err(invalid("table dimensions must be positive"));
        }
        let cells = num_states * action_ids.len();
        Ok(QuantileTable {
            num_states,
            num_quantiles,
            z: vec![0.0; cells * num_quantiles],
            visits: vec![0; cells],
            action_ids,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.action_ids.len()
    }

    fn cell_index(&self, s: usize, a: usize) -> usize {
        assert!(s < self.num_states && a < self.num_actions(), "cell ({s}, {a}) out of range");
        s * self.num_actions() + a
    }

    pub fn cell(&self, s: usize, a: usize) -> &[f64] {
        let c = self.cell_index(s, a) * self.num_quantiles;
        &self.z[c..c + self.num_quantiles]
    }

    /// Replaces a cell with the projection of `targets`.
    pub fn set_from_targets(&mut self, s: usize, a: usize, targets: &[f64]) -> Result<()> {
        let proj = quantile_projection(targets, self.num_quantiles)?;
        let ci = self.cell_index(s, a);
        self.z[ci * self.num_quantiles..(ci + 1) * self.num_quantiles].copy_from_slice(&proj);
        self.visits[ci] += 1;
        Ok(())
    }

    /// Overwrites a cell with already-sorted supports.
    pub fn set_cell(&mut self, s: usize, a: usize, supports: &[f64]) -> Result<()> {
        if supports.len() != self.num_quantiles || supports.windows(2).any(|w| w[0] > w[1]) || supports.iter().any(|x| !x.is_finite()) {
            return Err(invalid("cell supports must be Q finite sorted values"));
        }
        let ci = self.cell_index(s, a);
        self.z[ci * self.num_quantiles..(ci + 1) * self.num_quantiles].copy_from_slice(supports);
        Ok(())
    }

    pub fn expected_return(&self, s: usize, a: usize) -> f64 {
        self.cell(s, a).iter().sum::<f64>() / self.num_quantiles as f64
    }

    pub fn greedy_action(&self, s: usize) -> usize {
        argmax_lowest_id(&self.action_ids, |a| self.expected_return(s, a))
    }

    pub fn map_supports(&mut self, f: impl Fn(f64) -> f64) {
        for z in &mut self.z {
            *z = f(*z);
        }
    }

    pub fn to_text(&self) -> String {
        table_text("quantile", self.num_states, &self.action_ids, self.num_quantiles, &self.z)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (states, ids, q, z) = parse_table_text(text, "quantile")?;
        let mut t = QuantileTable::new(states, ids, q)?;
        for s in 0..states {
            for a in 0..t.num_actions() {
                let ci = s * t.num_actions() + a;
                t.set_cell(s, a, &z[ci * q..(ci + 1) * q])?;
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQTable {
    pub num_states: usize,
    pub action_ids: Vec<u64>,
    pub learning_rate: f64,
    q: Vec<f64>,
}

impl ScalarQTable {
    pub fn new(num_states: usize, action_ids: Vec<u64>, learning_rate: f64) -> Result<Self> {
        if num_states == 0 || action_ids.is_empty() {
            return Err(invalid("table dimensions must be positive"));
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(invalid(format!("learning rate must lie in (0, 1], got {learning_rate}")));
        }
        Ok(ScalarQTable { num_states, q: vec![0.0; num_states * action_ids.len()], action_ids, learning_rate })
    }

    pub fn num_actions(&self) -> usize {
        self.action_ids.len()
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions() + a]
    }

    pub fn greedy_action(&self, s: usize) -> usize {
        argmax_lowest_id(&self.action_ids, |a| self.value(s, a))
    }

    fn max_value(&self, s: usize) -> f64 {
        (0..self.num_actions()).map(|a| self.value(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `q ← (1−β)q + β·target`.
    pub fn blend(&mut self, s: usize, a: usize, target: f64) {
        let i = s * self.num_actions() + a;
        self.q[i] += self.learning_rate * (target - self.q[i]);
    }

    pub fn to_text(&self) -> String {
        let mut t = table_text("scalar", self.num_states, &self.action_ids, 1, &self.q);
        t.push_str(&format!("learning_rate {:e}\n", self.learning_rate));
        t
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (states, ids, _, q) = parse_table_text(text, "scalar")?;
        let lr = text
            .lines()
            .find_map(|l| l.strip_prefix("learning_rate "))
            .ok_or_else(|| Error::Parse("missing learning_rate line".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        let mut t = ScalarQTable::new(states, ids, lr)?;
        t.q = q;
        Ok(t)
    }
}

fn argmax_lowest_id(ids: &[u64], value: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = value(0);
    for a in 1..ids.len() {
        let v = value(a);
        if v > best_v || (v == best_v && ids[a] < ids[best]) {
            best = a;
            best_v = v;
        }
    }
    best
}

/// ε-greedy choice: uniform over all actions with probability ε.
pub fn epsilon_greedy<R: Rng + ?Sized>(greedy: usize, num_actions: usize, eps: f64, rng: &mut R) -> usize {
    if eps > 0.0 && rng.random::<f64>() < eps {
        rng.random_range(0..num_actions)
    } else {
        greedy
    }
}

/// One distributional update. Picks the action for `cur_state`, then
/// replaces the `prev` cell with the projection of
/// `r + γ·z_i(cur_state, chosen)`. Returns the chosen action index.
pub fn qrdrl_step<R: Rng + ?Sized>(
    table: &mut QuantileTable,
    prev: Option<(usize, usize)>,
    reward: f64,
    cur_state: usize,
    eps: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<usize> {
    let next = epsilon_greedy(table.greedy_action(cur_state), table.num_actions(), eps, rng);
    if let Some((s, a)) = prev {
        let targets: Vec<f64> = table.cell(cur_state, next).iter().map(|z| reward + gamma * z).collect();
        table.set_from_targets(s, a, &targets)?;
    }
    Ok(next)
}

/// Terminal distributional update: the cell collapses onto the reward.
pub fn qrdrl_terminal(table: &mut QuantileTable, prev: (usize, usize), reward: f64) -> Result<()> {
    let targets = vec![reward; table.num_quantiles];
    table.set_from_targets(prev.0, prev.1, &targets)
}

/// One Q-learning update toward `r + γ·max_a' q(cur_state, a')`; returns the
/// ε-greedy action for `cur_state` chosen after the update.
pub fn qlearning_step<R: Rng + ?Sized>(
    table: &mut ScalarQTable,
    prev: Option<(usize, usize)>,
    reward: f64,
    cur_state: usize,
    gamma: f64,
    eps: f64,
    rng: &mut R,
) -> usize {
    if let Some((s, a)) = prev {
        let target = reward + gamma * table.max_value(cur_state);
        table.blend(s, a, target);
    }
    epsilon_greedy(table.greedy_action(cur_state), table.num_actions(), eps, rng)
}

pub fn qlearning_terminal(table: &mut ScalarQTable, prev: (usize, usize), reward: f64) {
    table.blend(prev.0, prev.1, reward);
}

fn table_text(kind: &str, states: usize, ids: &[u64], q: usize, values: &[f64]) -> String {
    let mut out = format!("{kind} {states} {} {q}\n", ids.len());
    out.push_str("actions");
    for id in ids {
        out.push_str(&format!(" {id}"));
    }
    out.push('\n');
    for row in values.chunks(q) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

type ParsedTable = (usize, Vec<u64>, usize, Vec<f64>);

fn parse_table_text(text: &str, kind: &str) -> Result<ParsedTable> {
    let perr = |m: &str| Error::Parse(m.to_string());
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| perr("empty table"))?.split_whitespace().collect();
    if header.len() != 4 || header[0] != kind {
        return Err(perr(&format!("expected '{kind} S A Q' header")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
    let (states, actions, q) = (num(header[1])?, num(header[2])?, num(header[3])?);
    let ids_line = lines.next().ok_or_else(|| perr("missing action line"))?;
    let ids: Vec<u64> = ids_line
        .strip_prefix("actions")
        .ok_or_else(|| perr("missing action line"))?
        .split_whitespace()
        .map(|s| s.parse::<u64>().map_err(|e| Error::Parse(e.to_string())))
        .collect::<Result<_>>()?;
    if ids.len() != actions {
        return Err(perr("action list length differs from header"));
    }
    let mut values = Vec::with_capacity(states * actions * q);
    for _ in 0..states * actions {
        let line = lines.next().ok_or_else(|| perr("truncated table"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        if row.len() != q {
            return Err(perr("row length differs from Q"));
        }
        values.extend(row);
    }
    Ok((states, ids, q, values))
}
