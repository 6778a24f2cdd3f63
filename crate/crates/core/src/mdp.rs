//! Layered tabular MDP representation with exact dynamic-programming
//! oracles and trajectory sampling.
//!
//! States are stored layer-indexed: layer `h` holds the states reachable at
//! step `h` (h-indexing is structural, not checked dynamically). Every
//! transition row of a pair `(h, s, a)` is a sparse probability vector over
//! layer `h + 1`. An episode takes exactly `H` actions; rewards live in
//! `[0, 1]` and are collected on the action taken from a state.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RunRng;

/// Sparse transition row: `(successor index in layer h+1, probability)`.
pub type SparseRow = Vec<(u32, f64)>;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("layer count must be horizon + 1 (got {layers} layers for H = {horizon})")]
    LayerCount { layers: usize, horizon: usize },
    #[error("layer {0} is empty")]
    EmptyLayer(usize),
    #[error("action count must be positive")]
    NoActions,
    #[error("start index {start} out of range for layer 0 (size {size})")]
    BadStart { start: usize, size: usize },
    #[error("transition row ({h},{s},{a}) sums to {sum} (must be 1 within 1e-12)")]
    RowSum {
        h: usize,
        s: usize,
        a: usize,
        sum: f64,
    },
    #[error("transition row ({h},{s},{a}) has a negative probability")]
    NegativeProb { h: usize, s: usize, a: usize },
    #[error("transition row ({h},{s},{a}) points outside layer {next} (index {idx})")]
    BadSuccessor {
        h: usize,
        s: usize,
        a: usize,
        next: usize,
        idx: u32,
    },
    #[error("reward at ({h},{s},{a}) is {r}, outside [0, 1]")]
    RewardRange {
        h: usize,
        s: usize,
        a: usize,
        r: f64,
    },
    #[error("table shape mismatch at layer {0}")]
    Shape(usize),
    #[error("malformed MDP document: {0}")]
    Document(String),
}

/// Grid geometry carried by maze/chain environments so visitation counters
/// can be rendered as `row,col` heatmaps. `cells[s]` is the cell of local
/// state index `s` (identical across layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<(usize, usize)>,
}

/// Finite-horizon layered MDP with known rewards and true dynamics.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    horizon: usize,
    layers: Vec<Vec<String>>,
    action_count: usize,
    /// `trans[h][s * A + a]` is the row over layer `h + 1`, for `h < H`.
    trans: Vec<Vec<SparseRow>>,
    /// `rewards[h][s * A + a]`, for `h < H`.
    rewards: Vec<Vec<f64>>,
    start: usize,
    grid: Option<GridMeta>,
    /// Flat global state id of `(h, 0)`; `offsets[H + 1]` is the total count.
    offsets: Vec<usize>,
}

impl TabularMdp {
    pub fn new(
        layers: Vec<Vec<String>>,
        action_count: usize,
        trans: Vec<Vec<SparseRow>>,
        rewards: Vec<Vec<f64>>,
        start: usize,
        grid: Option<GridMeta>,
    ) -> Result<Self, MdpError> {
        if layers.len() < 2 {
            return Err(MdpError::LayerCount {
                layers: layers.len(),
                horizon: layers.len().saturating_sub(1),
            });
        }
        let horizon = layers.len() - 1;
        if action_count == 0 {
            return Err(MdpError::NoActions);
        }
        for (h, layer) in layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(MdpError::EmptyLayer(h));
            }
        }
        if start >= layers[0].len() {
            return Err(MdpError::BadStart {
                start,
                size: layers[0].len(),
            });
        }
        if trans.len() != horizon || rewards.len() != horizon {
            return Err(MdpError::LayerCount {
                layers: trans.len() + 1,
                horizon,
            });
        }
        for h in 0..horizon {
            let pairs = layers[h].len() * action_count;
            if trans[h].len() != pairs || rewards[h].len() != pairs {
                return Err(MdpError::Shape(h));
            }
            let next_size = layers[h + 1].len();
            for s in 0..layers[h].len() {
                for a in 0..action_count {
                    let idx = s * action_count + a;
                    let row = &trans[h][idx];
                    let mut sum = 0.0;
                    for &(nxt, p) in row {
                        if p < 0.0 {
                            return Err(MdpError::NegativeProb { h, s, a });
                        }
                        if nxt as usize >= next_size {
                            return Err(MdpError::BadSuccessor {
                                h,
                                s,
                                a,
                                next: h + 1,
                                idx: nxt,
                            });
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > PROB_SUM_TOL {
                        return Err(MdpError::RowSum { h, s, a, sum });
                    }
                    let r = rewards[h][idx];
                    if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                        return Err(MdpError::RewardRange { h, s, a, r });
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut acc = 0;
        for layer in &layers {
            offsets.push(acc);
            acc += layer.len();
        }
        offsets.push(acc);
        Ok(TabularMdp {
            horizon,
            layers,
            action_count,
            trans,
            rewards,
            start,
            grid,
            offsets,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn layer_len(&self, h: usize) -> usize {
        self.layers[h].len()
    }

    pub fn state_name(&self, h: usize, s: usize) -> &str {
        &self.layers[h][s]
    }

    pub fn start_state(&self) -> usize {
        self.start
    }

    /// Total number of states summed across layers 0..=H (this is the |S|
    /// that enters the bonus log factors).
    pub fn total_states(&self) -> usize {
        self.offsets[self.layers.len()]
    }

    /// Flat global id of `(h, s)`, usable as an index into per-state arrays.
    pub fn state_id(&self, h: usize, s: usize) -> usize {
        self.offsets[h] + s
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[h][s * self.action_count + a]
    }

    pub fn successors(&self, h: usize, s: usize, a: usize) -> &[(u32, f64)] {
        &self.trans[h][s * self.action_count + a]
    }

    pub fn grid(&self) -> Option<&GridMeta> {
        self.grid.as_ref()
    }

    /// Serialize to the interchange document. Transition and reward maps are
    /// keyed `"h:state_name"`, holding one dense probability vector (resp.
    /// one reward) per action, probabilities as decimal floats.
    pub fn to_json(&self) -> serde_json::Value {
        let mut transitions = serde_json::Map::new();
        let mut rewards = serde_json::Map::new();
        for h in 0..self.horizon {
            let next_size = self.layers[h + 1].len();
            for s in 0..self.layers[h].len() {
                let key = format!("{}:{}", h, self.layers[h][s]);
                let mut rows = Vec::with_capacity(self.action_count);
                let mut rs = Vec::with_capacity(self.action_count);
                for a in 0..self.action_count {
                    let mut dense = vec![0.0; next_size];
                    for &(nxt, p) in self.successors(h, s, a) {
                        dense[nxt as usize] += p;
                    }
                    rows.push(serde_json::json!(dense));
                    rs.push(serde_json::json!(self.reward(h, s, a)));
                }
                transitions.insert(key.clone(), serde_json::Value::Array(rows));
                rewards.insert(key, serde_json::Value::Array(rs));
            }
        }
        serde_json::json!({
            "H": self.horizon,
            "layers": self.layers,
            "A": self.action_count,
            "transitions": transitions,
            "rewards": rewards,
            "start": self.layers[0][self.start],
        })
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<Self, MdpError> {
        let bad = |m: &str| MdpError::Document(m.to_string());
        let horizon = doc["H"].as_u64().ok_or_else(|| bad("missing H"))? as usize;
        let layers: Vec<Vec<String>> =
            serde_json::from_value(doc["layers"].clone()).map_err(|e| bad(&e.to_string()))?;
        let action_count = doc["A"].as_u64().ok_or_else(|| bad("missing A"))? as usize;
        if layers.len() != horizon + 1 {
            return Err(MdpError::LayerCount {
                layers: layers.len(),
                horizon,
            });
        }
        let start_name = doc["start"].as_str().ok_or_else(|| bad("missing start"))?;
        let start = layers
            .first()
            .and_then(|l| l.iter().position(|n| n == start_name))
            .ok_or_else(|| bad("start not present in layer 0"))?;
        let tmap = doc["transitions"]
            .as_object()
            .ok_or_else(|| bad("missing transitions"))?;
        let rmap = doc["rewards"]
            .as_object()
            .ok_or_else(|| bad("missing rewards"))?;
        let mut trans = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        for (h, layer) in layers.iter().enumerate().take(horizon) {
            let mut layer_trans = vec![SparseRow::new(); layer.len() * action_count];
            let mut layer_rewards = vec![0.0; layer.len() * action_count];
            for (s, name) in layer.iter().enumerate() {
                let key = format!("{h}:{name}");
                let rows = tmap
                    .get(&key)
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| bad(&format!("missing transitions for {key}")))?;
                let rs = rmap
                    .get(&key)
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| bad(&format!("missing rewards for {key}")))?;
                if rows.len() != action_count || rs.len() != action_count {
                    return Err(bad(&format!("action arity mismatch for {key}")));
                }
                for a in 0..action_count {
                    let dense: Vec<f64> =
                        serde_json::from_value(rows[a].clone()).map_err(|e| bad(&e.to_string()))?;
                    let sparse: SparseRow = dense
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p != 0.0)
                        .map(|(i, &p)| (i as u32, p))
                        .collect();
                    layer_trans[s * action_count + a] = sparse;
                    layer_rewards[s * action_count + a] =
                        rs[a].as_f64().ok_or_else(|| bad("non-numeric reward"))?;
                }
            }
            trans.push(layer_trans);
            rewards.push(layer_rewards);
        }
        TabularMdp::new(layers, action_count, trans, rewards, start, None)
    }
}

/// Which quantity a value table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    Optimal,
    Empirical,
    Shaping,
    SurrogateUpper,
    SurrogateLower,
    Policy,
}

/// Per-(h, s) values plus per-(h, s, a) values. `v` spans layers 0..=H,
/// `q` spans layers 0..H.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub kind: ValueKind,
    v: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    action_count: usize,
}

impl ValueTable {
    pub fn new(kind: ValueKind, v: Vec<Vec<f64>>, q: Vec<Vec<f64>>, action_count: usize) -> Self {
        ValueTable {
            kind,
            v,
            q,
            action_count,
        }
    }

    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h][s]
    }

    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[h][s * self.action_count + a]
    }

    pub fn layer_values(&self, h: usize) -> &[f64] {
        &self.v[h]
    }

    pub fn num_layers(&self) -> usize {
        self.v.len()
    }

    pub fn max_value(&self) -> f64 {
        self.v
            .iter()
            .flat_map(|layer| layer.iter().copied())
            .fold(0.0_f64, f64::max)
    }
}

/// Deterministic policy: an action index per (h, s), h in 0..H.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    choice: Vec<Vec<usize>>,
}

impl Policy {
    pub fn new(choice: Vec<Vec<usize>>) -> Self {
        Policy { choice }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.choice[h][s]
    }
}

/// One executed episode of length exactly H.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub episodic_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub h: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Argmax with ties broken by the lowest action index.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = values[0];
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Backward DP for the optimal tables: `Q*[h](s,a) = r + P*·V*[h+1]`,
/// `V*[h](s) = max_a Q*`, `V*[H] = 0`.
pub fn exact_optimal_values(mdp: &TabularMdp) -> ValueTable {
    let horizon = mdp.horizon();
    let a_count = mdp.action_count();
    let mut v: Vec<Vec<f64>> = (0..=horizon).map(|h| vec![0.0; mdp.layer_len(h)]).collect();
    let mut q: Vec<Vec<f64>> = (0..horizon)
        .map(|h| vec![0.0; mdp.layer_len(h) * a_count])
        .collect();
    for h in (0..horizon).rev() {
        for s in 0..mdp.layer_len(h) {
            for a in 0..a_count {
                let mut expect = 0.0;
                for &(nxt, p) in mdp.successors(h, s, a) {
                    expect += p * v[h + 1][nxt as usize];
                }
                q[h][s * a_count + a] = mdp.reward(h, s, a) + expect;
            }
            let row = &q[h][s * a_count..(s + 1) * a_count];
            v[h][s] = row[argmax_lowest(row)];
        }
    }
    ValueTable::new(ValueKind::Optimal, v, q, a_count)
}

/// Greedy policy from a per-pair table, lowest-index tie-break.
pub fn greedy_policy(mdp: &TabularMdp, table: &ValueTable) -> Policy {
    let a_count = mdp.action_count();
    let choice = (0..mdp.horizon())
        .map(|h| {
            (0..mdp.layer_len(h))
                .map(|s| {
                    let row: Vec<f64> = (0..a_count).map(|a| table.q(h, s, a)).collect();
                    argmax_lowest(&row)
                })
                .collect()
        })
        .collect();
    Policy::new(choice)
}

/// Exact policy evaluation by backward DP. `V^pi <= V*` pointwise.
pub fn policy_value(mdp: &TabularMdp, pi: &Policy) -> ValueTable {
    let horizon = mdp.horizon();
    let a_count = mdp.action_count();
    let mut v: Vec<Vec<f64>> = (0..=horizon).map(|h| vec![0.0; mdp.layer_len(h)]).collect();
    let mut q: Vec<Vec<f64>> = (0..horizon)
        .map(|h| vec![0.0; mdp.layer_len(h) * a_count])
        .collect();
    for h in (0..horizon).rev() {
        for s in 0..mdp.layer_len(h) {
            for a in 0..a_count {
                let mut expect = 0.0;
                for &(nxt, p) in mdp.successors(h, s, a) {
                    expect += p * v[h + 1][nxt as usize];
                }
                q[h][s * a_count + a] = mdp.reward(h, s, a) + expect;
            }
            v[h][s] = q[h][s * a_count + pi.action(h, s)];
        }
    }
    ValueTable::new(ValueKind::Policy, v, q, a_count)
}

/// Draw one length-H trajectory under `pi`. Deterministic given the seed.
pub fn sample_trajectory(mdp: &TabularMdp, pi: &Policy, rng: &mut RunRng) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut state = mdp.start_state();
    let mut episodic_return = 0.0;
    for h in 0..mdp.horizon() {
        let action = pi.action(h, state);
        let reward = mdp.reward(h, state, action);
        let row = mdp.successors(h, state, action);
        let next_state = if row.len() == 1 {
            row[0].0 as usize
        } else {
            rng.sample_sparse(row) as usize
        };
        episodic_return += reward;
        steps.push(Step {
            h,
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;
    }
    Trajectory {
        steps,
        episodic_return,
    }
}

/// Exact support of the state-action occupancy of `pi`, by forward
/// propagation of reach probabilities from the start state.
pub fn occupancy_support(mdp: &TabularMdp, pi: &Policy) -> BTreeSet<(usize, usize, usize)> {
    let mut support = BTreeSet::new();
    let mut reachable: Vec<bool> = vec![false; mdp.layer_len(0)];
    reachable[mdp.start_state()] = true;
    for h in 0..mdp.horizon() {
        let mut next_reachable = vec![false; mdp.layer_len(h + 1)];
        for (s, &r) in reachable.iter().enumerate() {
            if !r {
                continue;
            }
            let a = pi.action(h, s);
            support.insert((h, s, a));
            for &(nxt, p) in mdp.successors(h, s, a) {
                if p > 0.0 {
                    next_reachable[nxt as usize] = true;
                }
            }
        }
        reachable = next_reachable;
    }
    support
}
