//! Offline pruning-set analysis.
//!
//! Everything here is computed against the true model and the exact DP
//! oracle: surrogate Q intervals induced by a shaping table, the
//! delta-pseudosuboptimal pairs, the path-pseudosuboptimal states (reachable
//! only through pseudosuboptimal pairs), their boundary, and the effective
//! state count that drives the leading regret term. These are analysis
//! tools, not part of the learner.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::mdp::{TabularMdp, ValueKind, ValueTable};
use crate::shaping::{check_shape, ShapingTable};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error(transparent)]
    Shaping(#[from] crate::shaping::ShapingError),
    #[error("delta must be positive (got {0})")]
    BadDelta(f64),
}

/// Pruning sets for one value of delta.
#[derive(Debug, Clone)]
pub struct PruneReport {
    pub delta: f64,
    /// Pairs `(h, s, a)` with `V*_h(s) >= delta + Qu_h(s,a)`.
    pub pseudosub: BTreeSet<(usize, usize, usize)>,
    /// States `(h, s)` whose every feasible path from the start crosses a
    /// pseudosuboptimal pair.
    pub path_pseudosub: BTreeSet<(usize, usize)>,
    /// Pseudosuboptimal pairs whose state is not path-pseudosuboptimal.
    pub boundary: BTreeSet<(usize, usize, usize)>,
    /// `|S| - |path_pseudosub|` over all layers.
    pub effective_states: usize,
    /// States reachable from the start within the horizon.
    pub reachable_states: usize,
    pub q_upper: ValueTable,
    pub q_lower: ValueTable,
}

impl PruneReport {
    pub fn to_json(&self, include_members: bool) -> serde_json::Value {
        let mut doc = serde_json::json!({
            "delta": self.delta,
            "sizes": {
                "pseudosub": self.pseudosub.len(),
                "path": self.path_pseudosub.len(),
                "boundary": self.boundary.len(),
                "effective": self.effective_states,
            },
            "reachable_states": self.reachable_states,
        });
        if include_members {
            doc["members"] = serde_json::json!({
                "pseudosub": self.pseudosub.iter().collect::<Vec<_>>(),
                "path_pseudosub": self.path_pseudosub.iter().collect::<Vec<_>>(),
                "boundary": self.boundary.iter().collect::<Vec<_>>(),
            });
        }
        doc
    }
}

/// Surrogate Q interval under the true model:
/// `Qu(h,s,a) = r + sum_s' P*(s'|s,a) * beta * vt_{h+1}(s')` and the lower
/// analogue with factor 1.
pub fn surrogate_q(
    mdp: &TabularMdp,
    shaping: &ShapingTable,
    beta: f64,
) -> Result<(ValueTable, ValueTable), PruneError> {
    check_shape(shaping, mdp)?;
    let a_count = mdp.action_count();
    let horizon = mdp.horizon();
    let mut q_upper: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut q_lower: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut up = vec![0.0; mdp.layer_len(h) * a_count];
        let mut lo = vec![0.0; mdp.layer_len(h) * a_count];
        for s in 0..mdp.layer_len(h) {
            for a in 0..a_count {
                let mut expect = 0.0;
                for &(nxt, p) in mdp.successors(h, s, a) {
                    expect += p * shaping.value(h + 1, nxt as usize);
                }
                let r = mdp.reward(h, s, a);
                up[s * a_count + a] = r + beta * expect;
                lo[s * a_count + a] = r + expect;
            }
        }
        q_upper.push(up);
        q_lower.push(lo);
    }
    let vmax = |q: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut v: Vec<Vec<f64>> = q
            .iter()
            .map(|layer| {
                layer
                    .chunks(a_count)
                    .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            })
            .collect();
        v.push(vec![0.0; mdp.layer_len(horizon)]);
        v
    };
    let upper = ValueTable::new(ValueKind::SurrogateUpper, vmax(&q_upper), q_upper, a_count);
    let lower = ValueTable::new(ValueKind::SurrogateLower, vmax(&q_lower), q_lower, a_count);
    Ok((upper, lower))
}

/// Pairs where the surrogate already certifies a gap of at least delta.
pub fn pseudosub(
    mdp: &TabularMdp,
    vstar: &ValueTable,
    q_upper: &ValueTable,
    delta: f64,
) -> BTreeSet<(usize, usize, usize)> {
    let mut set = BTreeSet::new();
    for h in 0..mdp.horizon() {
        for s in 0..mdp.layer_len(h) {
            let v = vstar.v(h, s);
            for a in 0..mdp.action_count() {
                if v >= delta + q_upper.q(h, s, a) {
                    set.insert((h, s, a));
                }
            }
        }
    }
    set
}

/// Forward reachability from the start over layers 0..=H, optionally
/// skipping a set of forbidden pairs.
fn reachable(
    mdp: &TabularMdp,
    skip: Option<&BTreeSet<(usize, usize, usize)>>,
) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    let mut frontier: Vec<bool> = vec![false; mdp.layer_len(0)];
    frontier[mdp.start_state()] = true;
    out.insert((0, mdp.start_state()));
    for h in 0..mdp.horizon() {
        let mut next = vec![false; mdp.layer_len(h + 1)];
        for (s, &alive) in frontier.iter().enumerate() {
            if !alive {
                continue;
            }
            for a in 0..mdp.action_count() {
                if skip.is_some_and(|set| set.contains(&(h, s, a))) {
                    continue;
                }
                for &(nxt, p) in mdp.successors(h, s, a) {
                    if p > 0.0 {
                        next[nxt as usize] = true;
                    }
                }
            }
        }
        for (s, &alive) in next.iter().enumerate() {
            if alive {
                out.insert((h + 1, s));
            }
        }
        frontier = next;
    }
    out
}

/// All states reachable from the start within the horizon.
pub fn reachable_states(mdp: &TabularMdp) -> BTreeSet<(usize, usize)> {
    reachable(mdp, None)
}

/// States reachable only through pseudosuboptimal pairs, computed as
/// `R_all \ R_free`: a path "intersects" the pseudosub set when any
/// transition pair strictly along it is pseudosuboptimal, so the start
/// state (empty path) is never a member.
pub fn path_pseudosub(
    mdp: &TabularMdp,
    pseudosub: &BTreeSet<(usize, usize, usize)>,
) -> BTreeSet<(usize, usize)> {
    let all = reachable(mdp, None);
    let free = reachable(mdp, Some(pseudosub));
    all.difference(&free).copied().collect()
}

/// Literal comprehension: pseudosub pairs whose state escaped the path set.
pub fn boundary_pseudosub(
    pseudosub: &BTreeSet<(usize, usize, usize)>,
    path: &BTreeSet<(usize, usize)>,
) -> BTreeSet<(usize, usize, usize)> {
    pseudosub
        .iter()
        .filter(|&&(h, s, _)| !path.contains(&(h, s)))
        .copied()
        .collect()
}

pub fn prune_report(
    mdp: &TabularMdp,
    vstar: &ValueTable,
    shaping: &ShapingTable,
    beta: f64,
    delta: f64,
) -> Result<PruneReport, PruneError> {
    if delta <= 0.0 || delta.is_nan() {
        return Err(PruneError::BadDelta(delta));
    }
    let (q_upper, q_lower) = surrogate_q(mdp, shaping, beta)?;
    let pseudo = pseudosub(mdp, vstar, &q_upper, delta);
    let path = path_pseudosub(mdp, &pseudo);
    let boundary = boundary_pseudosub(&pseudo, &path);
    let reach = reachable_states(mdp);
    Ok(PruneReport {
        delta,
        effective_states: mdp.total_states() - path.len(),
        reachable_states: reach.len(),
        pseudosub: pseudo,
        path_pseudosub: path,
        boundary,
        q_upper,
        q_lower,
    })
}

/// One report per delta, in the given order.
pub fn delta_sweep(
    mdp: &TabularMdp,
    vstar: &ValueTable,
    shaping: &ShapingTable,
    beta: f64,
    deltas: &[f64],
) -> Result<Vec<PruneReport>, PruneError> {
    deltas
        .iter()
        .map(|&d| prune_report(mdp, vstar, shaping, beta, d))
        .collect()
}

/// Default 8-point geometric delta grid used by the harness.
pub fn default_delta_grid() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4]
}

/// The sweep's most aggressive usable report: maximal path set, ties
/// resolved toward the larger delta (the more confidently pruned set).
pub fn best_report(reports: &[PruneReport]) -> Option<&PruneReport> {
    reports
        .iter()
        .fold(None, |best: Option<&PruneReport>, r| match best {
            None => Some(r),
            Some(b) => {
                if r.path_pseudosub.len() > b.path_pseudosub.len()
                    || (r.path_pseudosub.len() == b.path_pseudosub.len() && r.delta > b.delta)
                {
                    Some(r)
                } else {
                    Some(b)
                }
            }
        })
}
