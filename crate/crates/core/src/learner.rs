//! UCBVI and UCBVI-Shaped learners.
//!
//! Per episode the learner rebuilds the empirical model from visitation
//! counts, computes an exploration bonus per pair, runs one backward pass
//! of value iteration (optionally clipping values at `beta * vt`), executes
//! the greedy policy, and records the exact per-episode regret against the
//! dynamic-programming oracles.
//!
//! With h-indexed states and `vhat[H] = 0`, a single backward pass is the
//! fixed point of the projected value iteration, so no convergence loop is
//! needed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{
    argmax_lowest, exact_optimal_values, policy_value, sample_trajectory, Policy, SparseRow,
    TabularMdp, Trajectory, ValueTable,
};
use crate::rng::RunRng;
use crate::shaping::{check_shape, ShapingTable};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("trajectory does not fit the MDP layers at step {h} (state {s})")]
    LayerMismatch { h: usize, s: usize },
    #[error("bonus kind {0:?} requires a shaping table")]
    MissingShaping(BonusKind),
    #[error("episode index for bonuses must be >= 1")]
    BadEpisodeIndex,
    #[error("invalid bonus spec: {0}")]
    BadBonusSpec(String),
    #[error("variant {variant:?} is incompatible with bonus kind {kind:?}")]
    VariantBonusMismatch { variant: Variant, kind: BonusKind },
    #[error(transparent)]
    Shaping(#[from] crate::shaping::ShapingError),
}

/// Visitation counts `N_h(s,a)` and `N_h(s,a,s')`.
#[derive(Debug, Clone)]
pub struct Counts {
    action_count: usize,
    n_sa: Vec<Vec<u64>>,
    n_sas: Vec<Vec<Vec<(u32, u64)>>>,
}

impl Counts {
    pub fn new(mdp: &TabularMdp) -> Self {
        let n_sa = (0..mdp.horizon())
            .map(|h| vec![0; mdp.layer_len(h) * mdp.action_count()])
            .collect();
        let n_sas = (0..mdp.horizon())
            .map(|h| vec![Vec::new(); mdp.layer_len(h) * mdp.action_count()])
            .collect();
        Counts {
            action_count: mdp.action_count(),
            n_sa,
            n_sas,
        }
    }

    pub fn n(&self, h: usize, s: usize, a: usize) -> u64 {
        self.n_sa[h][s * self.action_count + a]
    }

    pub fn successor_counts(&self, h: usize, s: usize, a: usize) -> &[(u32, u64)] {
        &self.n_sas[h][s * self.action_count + a]
    }

    /// Fold one trajectory into the tables: every visited `(h,s,a,s')`
    /// increments both counters.
    pub fn update(&mut self, mdp: &TabularMdp, traj: &Trajectory) -> Result<(), LearnerError> {
        for (i, step) in traj.steps.iter().enumerate() {
            if step.h != i
                || step.h >= mdp.horizon()
                || step.state >= mdp.layer_len(step.h)
                || step.action >= self.action_count
                || step.next_state >= mdp.layer_len(step.h + 1)
            {
                return Err(LearnerError::LayerMismatch {
                    h: step.h,
                    s: step.state,
                });
            }
            let idx = step.state * self.action_count + step.action;
            self.n_sa[step.h][idx] += 1;
            let row = &mut self.n_sas[step.h][idx];
            match row
                .iter_mut()
                .find(|(nxt, _)| *nxt as usize == step.next_state)
            {
                Some((_, c)) => *c += 1,
                None => row.push((step.next_state as u32, 1)),
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.n_sa.iter().flat_map(|l| l.iter()).sum()
    }
}

/// Ratio estimator `P_hat(s'|s,a) = N(s,a,s')/N(s,a)`, with unvisited pairs
/// left unmodelled.
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    action_count: usize,
    rows: Vec<Vec<Option<SparseRow>>>,
}

impl EmpiricalModel {
    pub fn row(&self, h: usize, s: usize, a: usize) -> Option<&[(u32, f64)]> {
        self.rows[h][s * self.action_count + a].as_deref()
    }

    /// The true model wrapped as an "empirical" one (every pair modelled).
    /// Used by planning tests that compare against the DP oracle.
    pub fn exact(mdp: &TabularMdp) -> Self {
        let rows = (0..mdp.horizon())
            .map(|h| {
                (0..mdp.layer_len(h) * mdp.action_count())
                    .map(|idx| {
                        let s = idx / mdp.action_count();
                        let a = idx % mdp.action_count();
                        Some(mdp.successors(h, s, a).to_vec())
                    })
                    .collect()
            })
            .collect();
        EmpiricalModel {
            action_count: mdp.action_count(),
            rows,
        }
    }
}

pub fn empirical_model(mdp: &TabularMdp, counts: &Counts) -> EmpiricalModel {
    let rows = (0..mdp.horizon())
        .map(|h| {
            (0..mdp.layer_len(h) * mdp.action_count())
                .map(|idx| {
                    let s = idx / mdp.action_count();
                    let a = idx % mdp.action_count();
                    let n = counts.n(h, s, a);
                    if n == 0 {
                        None
                    } else {
                        Some(
                            counts
                                .successor_counts(h, s, a)
                                .iter()
                                .map(|&(nxt, c)| (nxt, c as f64 / n as f64))
                                .collect(),
                        )
                    }
                })
                .collect()
        })
        .collect();
    EmpiricalModel {
        action_count: mdp.action_count(),
        rows,
    }
}

/// Exploration bonus families. `Theoretical*` are the analysis-grade
/// bonuses; `Practical*` are the `C/sqrt(N)` style actually used in the
/// experiments; `AdditiveShaping` folds `c * vt_h(s)` into the reward at
/// every step, constant in N (the no-decay comparator).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BonusKind {
    TheoreticalShaped,
    TheoreticalVanilla,
    PracticalShaped,
    PracticalVanilla,
    AdditiveShaping,
    None,
}

impl BonusKind {
    pub fn needs_shaping(self) -> bool {
        matches!(
            self,
            BonusKind::TheoreticalShaped | BonusKind::PracticalShaped | BonusKind::AdditiveShaping
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BonusSpec {
    pub kind: BonusKind,
    /// Practical scale C (also the additive-shaping coefficient).
    pub c: f64,
    /// Confidence parameter inside the log factors.
    pub delta: f64,
    /// Shaping quality parameter used by shaped bonuses and the projection.
    pub beta: f64,
}

impl BonusSpec {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.delta <= 0.0 || self.delta >= 1.0 || self.delta.is_nan() {
            return Err(LearnerError::BadBonusSpec(format!(
                "delta {} not in (0,1)",
                self.delta
            )));
        }
        if self.c < 0.0 || self.c.is_nan() {
            return Err(LearnerError::BadBonusSpec(format!(
                "c {} must be >= 0",
                self.c
            )));
        }
        if self.beta < 1.0 || self.beta.is_nan() {
            return Err(LearnerError::BadBonusSpec(format!(
                "beta {} must be >= 1",
                self.beta
            )));
        }
        Ok(())
    }
}

fn expected_next_shaping(row: &[(u32, f64)], shaping: &ShapingTable, next_h: usize) -> f64 {
    row.iter()
        .map(|&(nxt, p)| p * shaping.value(next_h, nxt as usize))
        .sum()
}

fn expected_next_shaping_sq(row: &[(u32, f64)], shaping: &ShapingTable, next_h: usize) -> f64 {
    row.iter()
        .map(|&(nxt, p)| {
            let v = shaping.value(next_h, nxt as usize);
            p * v * v
        })
        .sum()
}

/// Exploration bonus for pair `(h, s, a)` at episode `t >= 1`.
///
/// Unvisited pairs return the cap of their family (`2 beta vt_max` for the
/// theoretical shaped bonus, `2H` for the theoretical vanilla one, and the
/// `N = 1` value for the practical ones) so that the bonus is nonincreasing
/// in N.
#[allow(clippy::too_many_arguments)]
pub fn bonus(
    spec: &BonusSpec,
    mdp: &TabularMdp,
    counts: &Counts,
    model: &EmpiricalModel,
    shaping: Option<&ShapingTable>,
    h: usize,
    s: usize,
    a: usize,
    t: usize,
) -> Result<f64, LearnerError> {
    if t == 0 {
        return Err(LearnerError::BadEpisodeIndex);
    }
    let require_shaping = || shaping.ok_or(LearnerError::MissingShaping(spec.kind));
    let n = counts.n(h, s, a);
    let states = mdp.total_states() as f64;
    let actions = mdp.action_count() as f64;
    let value = match spec.kind {
        BonusKind::None => 0.0,
        BonusKind::AdditiveShaping => spec.c * require_shaping()?.value(h, s),
        BonusKind::PracticalVanilla => {
            if n == 0 {
                spec.c
            } else {
                spec.c / (n as f64).sqrt()
            }
        }
        BonusKind::PracticalShaped => {
            let sh = require_shaping()?;
            if n == 0 {
                spec.c * sh.vt_max()
            } else {
                let row = model.row(h, s, a).expect("visited pair has a model row");
                spec.c * expected_next_shaping(row, sh, h + 1) / (n as f64).sqrt()
            }
        }
        BonusKind::TheoreticalVanilla => {
            let horizon = mdp.horizon() as f64;
            let cap = 2.0 * horizon;
            if n == 0 {
                cap
            } else {
                let log = (states * actions * horizon * t as f64 / spec.delta).ln();
                (2.0 * horizon * (log / n as f64).sqrt()).min(cap)
            }
        }
        BonusKind::TheoreticalShaped => {
            let sh = require_shaping()?;
            let beta = spec.beta;
            let cap = 2.0 * beta * sh.vt_max();
            if n == 0 {
                cap
            } else {
                let row = model.row(h, s, a).expect("visited pair has a model row");
                let second_moment = expected_next_shaping_sq(row, sh, h + 1);
                let log_static = (2.0 * states * actions / spec.delta).ln();
                let log_anytime = (2.0 * states * actions * t as f64 / spec.delta).ln();
                let main = 16.0 * beta * (second_moment * log_static / n as f64).sqrt();
                let tail = 12.0 * beta * sh.vt_max() * log_anytime / n as f64;
                (main + tail).min(cap)
            }
        }
    };
    Ok(value)
}

/// Value clipping applied inside the backward pass.
#[derive(Debug, Clone, Copy)]
pub enum Projection<'a> {
    None,
    Clip {
        beta: f64,
        shaping: &'a ShapingTable,
    },
}

/// Continuation assigned to unvisited pairs: optimistic (the max planned
/// value of the next layer) for the UCB-style variants, or none for the
/// additive-shaping comparator, which has no dedicated exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnvisitedRule {
    OptimisticNextMax,
    NoContinuation,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    qhat: Vec<Vec<f64>>,
    vhat: Vec<Vec<f64>>,
    pub policy: Policy,
    action_count: usize,
}

impl PlanResult {
    pub fn qhat(&self, h: usize, s: usize, a: usize) -> f64 {
        self.qhat[h][s * self.action_count + a]
    }

    pub fn vhat(&self, h: usize, s: usize) -> f64 {
        self.vhat[h][s]
    }
}

/// One backward pass of value iteration over the empirical model with
/// bonus-augmented rewards: `qhat = min(r + b + P_hat . vhat, ceiling)`,
/// `vhat = max_a qhat` (clipped at `beta * vt` when projecting), greedy
/// policy with lowest-index tie-break.
pub fn plan(
    mdp: &TabularMdp,
    model: &EmpiricalModel,
    bonuses: &[Vec<f64>],
    projection: Projection,
    unvisited: UnvisitedRule,
    ceiling: f64,
) -> PlanResult {
    let horizon = mdp.horizon();
    let a_count = mdp.action_count();
    let mut vhat: Vec<Vec<f64>> = (0..=horizon).map(|h| vec![0.0; mdp.layer_len(h)]).collect();
    let mut qhat: Vec<Vec<f64>> = (0..horizon)
        .map(|h| vec![0.0; mdp.layer_len(h) * a_count])
        .collect();
    let mut choice: Vec<Vec<usize>> = (0..horizon).map(|h| vec![0; mdp.layer_len(h)]).collect();
    for h in (0..horizon).rev() {
        let next_max = vhat[h + 1].iter().copied().fold(0.0_f64, f64::max);
        for s in 0..mdp.layer_len(h) {
            for a in 0..a_count {
                let idx = s * a_count + a;
                let r = mdp.reward(h, s, a);
                let b = bonuses[h][idx];
                let q = match model.row(h, s, a) {
                    Some(row) => {
                        let mut expect = 0.0;
                        for &(nxt, p) in row {
                            expect += p * vhat[h + 1][nxt as usize];
                        }
                        r + b + expect
                    }
                    None => match unvisited {
                        UnvisitedRule::OptimisticNextMax => r + b + next_max,
                        UnvisitedRule::NoContinuation => r + b,
                    },
                };
                qhat[h][idx] = q.min(ceiling);
            }
            let row = &qhat[h][s * a_count..(s + 1) * a_count];
            let best = argmax_lowest(row);
            choice[h][s] = best;
            let vmax = row[best];
            vhat[h][s] = match projection {
                Projection::None => vmax,
                Projection::Clip { beta, shaping } => vmax.min(beta * shaping.value(h, s)),
            };
        }
    }
    PlanResult {
        qhat,
        vhat,
        policy: Policy::new(choice),
        action_count: a_count,
    }
}

/// Algorithm variants benchmarked in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ucbvi,
    Shaped,
    ShapedBs,
    ShapedP,
    Additive,
}

impl Variant {
    pub fn uses_projection(self) -> bool {
        matches!(self, Variant::Shaped | Variant::ShapedP)
    }

    pub fn needs_shaping(self) -> bool {
        !matches!(self, Variant::Ucbvi)
    }

    pub fn accepts_bonus(self, kind: BonusKind) -> bool {
        match self {
            Variant::Ucbvi | Variant::ShapedP => {
                matches!(
                    kind,
                    BonusKind::TheoreticalVanilla | BonusKind::PracticalVanilla
                )
            }
            Variant::Shaped | Variant::ShapedBs => {
                matches!(
                    kind,
                    BonusKind::TheoreticalShaped | BonusKind::PracticalShaped
                )
            }
            Variant::Additive => matches!(kind, BonusKind::AdditiveShaping),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ucbvi => "ucbvi",
            Variant::Shaped => "shaped",
            Variant::ShapedBs => "shaped-bs",
            Variant::ShapedP => "shaped-p",
            Variant::Additive => "additive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    /// `V*(s0) - V^{pi_t}(s0)`, both from the exact DP oracles.
    pub instant_regret: f64,
    /// Exact value of the played policy at the start state.
    pub policy_value0: f64,
    /// Planned optimistic value at the start state.
    pub vhat0: f64,
    pub optimism_holds: bool,
}

/// Validated per-variant planning configuration, separate from the count
/// data so learners can either own their counts or share them (the online
/// model-selection master shares one transition dataset across arms).
pub(crate) struct EpisodePlanner<'a> {
    mdp: &'a TabularMdp,
    variant: Variant,
    spec: BonusSpec,
    shaping: Option<&'a ShapingTable>,
    ceiling: f64,
    unvisited: UnvisitedRule,
}

impl<'a> EpisodePlanner<'a> {
    pub(crate) fn new(
        mdp: &'a TabularMdp,
        variant: Variant,
        spec: BonusSpec,
        shaping: Option<&'a ShapingTable>,
    ) -> Result<Self, LearnerError> {
        spec.validate()?;
        if !variant.accepts_bonus(spec.kind) {
            return Err(LearnerError::VariantBonusMismatch {
                variant,
                kind: spec.kind,
            });
        }
        if variant.needs_shaping() || spec.kind.needs_shaping() {
            let table = shaping.ok_or(LearnerError::MissingShaping(spec.kind))?;
            check_shape(table, mdp)?;
        }
        // The additive comparator folds shaping into the reward, so its value
        // scale exceeds H; lift the ceiling so clipping cannot distort it.
        let ceiling = match variant {
            Variant::Additive => {
                let vt_max = shaping.map(|t| t.vt_max()).unwrap_or(0.0);
                mdp.horizon() as f64 * (1.0 + spec.c * vt_max)
            }
            _ => mdp.horizon() as f64,
        };
        let unvisited = match variant {
            Variant::Additive => UnvisitedRule::NoContinuation,
            _ => UnvisitedRule::OptimisticNextMax,
        };
        Ok(EpisodePlanner {
            mdp,
            variant,
            spec,
            shaping,
            ceiling,
            unvisited,
        })
    }

    /// Plan on the given counts, execute the greedy policy, and fold the
    /// trajectory back into the counts. `t` is the 1-based episode index
    /// entering the bonus log factors.
    pub(crate) fn play(
        &self,
        counts: &mut Counts,
        vstar: &ValueTable,
        rng: &mut RunRng,
        t: usize,
    ) -> Result<EpisodeOutcome, LearnerError> {
        let mdp = self.mdp;
        let model = empirical_model(mdp, counts);
        let mut bonuses: Vec<Vec<f64>> = Vec::with_capacity(mdp.horizon());
        for h in 0..mdp.horizon() {
            let mut layer = vec![0.0; mdp.layer_len(h) * mdp.action_count()];
            for s in 0..mdp.layer_len(h) {
                for a in 0..mdp.action_count() {
                    layer[s * mdp.action_count() + a] =
                        bonus(&self.spec, mdp, counts, &model, self.shaping, h, s, a, t)?;
                }
            }
            bonuses.push(layer);
        }
        let projection = if self.variant.uses_projection() {
            Projection::Clip {
                beta: self.spec.beta,
                shaping: self.shaping.expect("projection variants carry shaping"),
            }
        } else {
            Projection::None
        };
        let planned = plan(
            mdp,
            &model,
            &bonuses,
            projection,
            self.unvisited,
            self.ceiling,
        );
        let trajectory = sample_trajectory(mdp, &planned.policy, rng);
        let pv = policy_value(mdp, &planned.policy);
        let start = mdp.start_state();
        let policy_value0 = pv.v(0, start);
        let vstar0 = vstar.v(0, start);
        let vhat0 = planned.vhat(0, start);
        counts.update(mdp, &trajectory)?;
        Ok(EpisodeOutcome {
            trajectory,
            instant_regret: vstar0 - policy_value0,
            policy_value0,
            vhat0,
            optimism_holds: vhat0 + 1e-9 >= vstar0,
        })
    }
}

/// A persistent learner stepped one episode at a time. Owns its counts and
/// its random stream, so independent instances can run in parallel.
pub struct EpisodeLearner<'a> {
    planner: EpisodePlanner<'a>,
    counts: Counts,
    rng: RunRng,
    episode: usize,
    vstar: ValueTable,
}

impl<'a> EpisodeLearner<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        variant: Variant,
        spec: BonusSpec,
        shaping: Option<&'a ShapingTable>,
        rng: RunRng,
    ) -> Result<Self, LearnerError> {
        let planner = EpisodePlanner::new(mdp, variant, spec, shaping)?;
        let vstar = exact_optimal_values(mdp);
        Ok(EpisodeLearner {
            planner,
            counts: Counts::new(mdp),
            rng,
            episode: 0,
            vstar,
        })
    }

    pub fn vstar0(&self) -> f64 {
        self.vstar.v(0, self.planner.mdp.start_state())
    }

    pub fn episodes_played(&self) -> usize {
        self.episode
    }

    pub fn counts(&self) -> &Counts {
        &self.counts
    }

    /// Plan, execute, and record one episode.
    pub fn step(&mut self) -> Result<EpisodeOutcome, LearnerError> {
        self.episode += 1;
        self.planner
            .play(&mut self.counts, &self.vstar, &mut self.rng, self.episode)
    }
}

/// Which slice of a run's visitation counters to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisitWindow {
    FirstHalf,
    SecondHalf,
    Full,
}

/// Per-episode regret rows plus visitation counters split at T/2.
#[derive(Debug, Clone)]
pub struct RegretTrace {
    pub instant_regret: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub episodic_return: Vec<f64>,
    pub optimism_holds: Vec<bool>,
    visits_first: Vec<u64>,
    visits_second: Vec<u64>,
}

impl RegretTrace {
    pub fn new(total_states: usize) -> Self {
        RegretTrace {
            instant_regret: Vec::new(),
            cumulative_regret: Vec::new(),
            episodic_return: Vec::new(),
            optimism_holds: Vec::new(),
            visits_first: vec![0; total_states],
            visits_second: vec![0; total_states],
        }
    }

    pub fn episodes(&self) -> usize {
        self.instant_regret.len()
    }

    pub fn final_cumulative_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn record_episode(&mut self, mdp: &TabularMdp, outcome: &EpisodeOutcome, late: bool) {
        let prev = self.final_cumulative_regret();
        self.instant_regret.push(outcome.instant_regret);
        self.cumulative_regret.push(prev + outcome.instant_regret);
        self.episodic_return
            .push(outcome.trajectory.episodic_return);
        self.optimism_holds.push(outcome.optimism_holds);
        let counters = if late {
            &mut self.visits_second
        } else {
            &mut self.visits_first
        };
        for step in &outcome.trajectory.steps {
            counters[mdp.state_id(step.h, step.state)] += 1;
        }
        if let Some(last) = outcome.trajectory.steps.last() {
            counters[mdp.state_id(last.h + 1, last.next_state)] += 1;
        }
    }

    /// Per-state visit counts (flat global state ids) for a window.
    pub fn visits(&self, window: VisitWindow) -> Vec<u64> {
        match window {
            VisitWindow::FirstHalf => self.visits_first.clone(),
            VisitWindow::SecondHalf => self.visits_second.clone(),
            VisitWindow::Full => self
                .visits_first
                .iter()
                .zip(&self.visits_second)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Aggregate visits over layers into grid cells, row-major, if the MDP
    /// carries grid geometry.
    pub fn cell_heatmap(&self, mdp: &TabularMdp, window: VisitWindow) -> Option<Vec<u64>> {
        let grid = mdp.grid()?;
        let mut cells = vec![0u64; grid.width * grid.height];
        let visits = self.visits(window);
        for h in 0..=mdp.horizon() {
            for s in 0..mdp.layer_len(h) {
                let (r, c) = grid.cells[s];
                cells[r * grid.width + c] += visits[mdp.state_id(h, s)];
            }
        }
        Some(cells)
    }

    pub fn optimism_fraction(&self) -> f64 {
        if self.optimism_holds.is_empty() {
            return 1.0;
        }
        self.optimism_holds.iter().filter(|&&b| b).count() as f64 / self.optimism_holds.len() as f64
    }
}

/// Run a learner for `episodes` episodes. The second-half visit window
/// covers episode indices `t >= episodes / 2` (0-based).
pub fn run(
    mdp: &TabularMdp,
    variant: Variant,
    spec: &BonusSpec,
    shaping: Option<&ShapingTable>,
    episodes: usize,
    rng: RunRng,
) -> Result<RegretTrace, LearnerError> {
    let mut learner = EpisodeLearner::new(mdp, variant, *spec, shaping, rng)?;
    let mut trace = RegretTrace::new(mdp.total_states());
    for t in 0..episodes {
        let outcome = learner.step()?;
        trace.record_episode(mdp, &outcome, 2 * t >= episodes);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env;
    use crate::mdp::{exact_optimal_values, greedy_policy};
    use crate::shaping::build_sandwiched;
    use proptest::prelude::*;

    fn chain() -> TabularMdp {
        env::build_chain(5, 0, 3, 6).unwrap()
    }

    fn spec(kind: BonusKind) -> BonusSpec {
        BonusSpec {
            kind,
            c: 0.1,
            delta: 0.05,
            beta: 1.5,
        }
    }

    #[test]
    fn counts_accumulate_unit_entries() {
        let mdp = chain();
        let vt = exact_optimal_values(&mdp);
        let pi = greedy_policy(&mdp, &vt);
        let traj = sample_trajectory(&mdp, &pi, &mut RunRng::new(0));
        let mut counts = Counts::new(&mdp);
        counts.update(&mdp, &traj).unwrap();
        for step in &traj.steps {
            assert_eq!(counts.n(step.h, step.state, step.action), 1);
        }
        counts.update(&mdp, &traj).unwrap();
        for step in &traj.steps {
            assert_eq!(counts.n(step.h, step.state, step.action), 2);
        }
    }

    #[test]
    fn count_totals_match_episode_budget() {
        let mdp = chain();
        let vt = exact_optimal_values(&mdp);
        let pi = greedy_policy(&mdp, &vt);
        let mut counts = Counts::new(&mdp);
        let mut rng = RunRng::new(5);
        for _ in 0..100 {
            let traj = sample_trajectory(&mdp, &pi, &mut rng);
            counts.update(&mdp, &traj).unwrap();
        }
        assert_eq!(counts.total(), 100 * mdp.horizon() as u64);
    }

    #[test]
    fn empirical_model_is_the_ratio_estimator() {
        let layers = vec![
            vec!["a".into()],
            vec!["x".into(), "y".into()],
            vec!["z".into()],
        ];
        let trans = vec![
            vec![vec![(0u32, 0.75), (1u32, 0.25)]],
            vec![vec![(0u32, 1.0)], vec![(0u32, 1.0)]],
        ];
        let rewards = vec![vec![0.0], vec![0.0, 0.0]];
        let mdp = TabularMdp::new(layers, 1, trans, rewards, 0, None).unwrap();
        let mut counts = Counts::new(&mdp);
        // Hand-build 3:1 successor counts.
        for next_state in [0usize, 0, 0, 1] {
            let traj = Trajectory {
                steps: vec![
                    crate::mdp::Step {
                        h: 0,
                        state: 0,
                        action: 0,
                        reward: 0.0,
                        next_state,
                    },
                    crate::mdp::Step {
                        h: 1,
                        state: next_state,
                        action: 0,
                        reward: 0.0,
                        next_state: 0,
                    },
                ],
                episodic_return: 0.0,
            };
            counts.update(&mdp, &traj).unwrap();
        }
        let model = empirical_model(&mdp, &counts);
        let row = model.row(0, 0, 0).unwrap();
        assert_eq!(row, &[(0u32, 0.75), (1u32, 0.25)]);
        assert!(model.row(1, 1, 0).is_some());
    }

    #[test]
    fn unvisited_pairs_have_no_model_row() {
        let mdp = chain();
        let counts = Counts::new(&mdp);
        let model = empirical_model(&mdp, &counts);
        assert!(model.row(0, 0, 0).is_none());
    }

    #[test]
    fn practical_vanilla_bonus_arithmetic() {
        let mdp = chain();
        let vt = exact_optimal_values(&mdp);
        let pi = greedy_policy(&mdp, &vt);
        let mut counts = Counts::new(&mdp);
        let mut rng = RunRng::new(1);
        for _ in 0..4 {
            let traj = sample_trajectory(&mdp, &pi, &mut rng);
            counts.update(&mdp, &traj).unwrap();
        }
        let model = empirical_model(&mdp, &counts);
        let s0 = mdp.start_state();
        let a = pi.action(0, s0);
        assert_eq!(counts.n(0, s0, a), 4);
        let b = bonus(
            &spec(BonusKind::PracticalVanilla),
            &mdp,
            &counts,
            &model,
            None,
            0,
            s0,
            a,
            5,
        )
        .unwrap();
        assert!((b - 0.05).abs() < 1e-15);
    }

    #[test]
    fn theoretical_shaped_cap_on_unvisited() {
        let mdp = chain();
        let vstar = exact_optimal_values(&mdp);
        let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(2)).unwrap();
        let counts = Counts::new(&mdp);
        let model = empirical_model(&mdp, &counts);
        let b = bonus(
            &spec(BonusKind::TheoreticalShaped),
            &mdp,
            &counts,
            &model,
            Some(&table),
            0,
            mdp.start_state(),
            0,
            1,
        )
        .unwrap();
        assert_eq!(b, 2.0 * 1.5 * table.vt_max());
    }

    #[test]
    fn theoretical_shaped_matches_independent_formula() {
        // Cross-check the shaped bonus against a from-scratch evaluation on
        // counted data.
        let mdp = chain();
        let vstar = exact_optimal_values(&mdp);
        let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(3)).unwrap();
        let pi = greedy_policy(&mdp, &vstar);
        let mut counts = Counts::new(&mdp);
        let mut rng = RunRng::new(4);
        for _ in 0..7 {
            let traj = sample_trajectory(&mdp, &pi, &mut rng);
            counts.update(&mdp, &traj).unwrap();
        }
        let model = empirical_model(&mdp, &counts);
        let sp = spec(BonusKind::TheoreticalShaped);
        let (h, s) = (0, mdp.start_state());
        let a = pi.action(h, s);
        let t = 8;
        let got = bonus(&sp, &mdp, &counts, &model, Some(&table), h, s, a, t).unwrap();

        // Independent evaluation from the raw counts.
        let n = counts.n(h, s, a) as f64;
        let mut m2 = 0.0;
        for &(nxt, cnt) in counts.successor_counts(h, s, a) {
            let p = cnt as f64 / n;
            let v = table.value(h + 1, nxt as usize);
            m2 += p * v * v;
        }
        let states = mdp.total_states() as f64;
        let actions = mdp.action_count() as f64;
        let beta = 1.5;
        let expected = (16.0 * beta * (m2 * (2.0 * states * actions / 0.05).ln() / n).sqrt()
            + 12.0 * beta * table.vt_max() * (2.0 * states * actions * t as f64 / 0.05).ln() / n)
            .min(2.0 * beta * table.vt_max());
        assert!(
            (got - expected).abs() < 1e-12,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn shaped_bonus_without_table_errors() {
        let mdp = chain();
        let counts = Counts::new(&mdp);
        let model = empirical_model(&mdp, &counts);
        let err = bonus(
            &spec(BonusKind::PracticalShaped),
            &mdp,
            &counts,
            &model,
            None,
            0,
            0,
            0,
            1,
        );
        assert!(matches!(err, Err(LearnerError::MissingShaping(_))));
    }

    #[test]
    fn plan_with_true_model_and_zero_bonus_recovers_q_star() {
        let mdp = env::preset("grid8").unwrap();
        let model = EmpiricalModel::exact(&mdp);
        let zeros: Vec<Vec<f64>> = (0..mdp.horizon())
            .map(|h| vec![0.0; mdp.layer_len(h) * mdp.action_count()])
            .collect();
        let planned = plan(
            &mdp,
            &model,
            &zeros,
            Projection::None,
            UnvisitedRule::OptimisticNextMax,
            mdp.horizon() as f64,
        );
        let vstar = exact_optimal_values(&mdp);
        for h in 0..mdp.horizon() {
            for s in 0..mdp.layer_len(h) {
                for a in 0..mdp.action_count() {
                    assert!((planned.qhat(h, s, a) - vstar.q(h, s, a)).abs() < 1e-12);
                }
                assert!((planned.vhat(h, s) - vstar.v(h, s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inactive_clip_changes_nothing() {
        let mdp = chain();
        let model = EmpiricalModel::exact(&mdp);
        let zeros: Vec<Vec<f64>> = (0..mdp.horizon())
            .map(|h| vec![0.0; mdp.layer_len(h) * mdp.action_count()])
            .collect();
        // A shaping table far above H makes the clip inactive.
        let vt = vec![vec![100.0; 5]; mdp.horizon() + 1];
        let table = ShapingTable::new(vt, 1.0).unwrap();
        let unclipped = plan(
            &mdp,
            &model,
            &zeros,
            Projection::None,
            UnvisitedRule::OptimisticNextMax,
            mdp.horizon() as f64,
        );
        let clipped = plan(
            &mdp,
            &model,
            &zeros,
            Projection::Clip {
                beta: 1.0,
                shaping: &table,
            },
            UnvisitedRule::OptimisticNextMax,
            mdp.horizon() as f64,
        );
        for h in 0..=mdp.horizon() {
            for s in 0..mdp.layer_len(h) {
                assert_eq!(unclipped.vhat(h, s), clipped.vhat(h, s));
            }
        }
    }

    #[test]
    fn zero_clip_dominates_any_qhat() {
        let mdp = chain();
        let model = EmpiricalModel::exact(&mdp);
        let zeros: Vec<Vec<f64>> = (0..mdp.horizon())
            .map(|h| vec![0.0; mdp.layer_len(h) * mdp.action_count()])
            .collect();
        let vt = vec![vec![0.0; 5]; mdp.horizon() + 1];
        let table = ShapingTable::new(vt, 1.0).unwrap();
        let planned = plan(
            &mdp,
            &model,
            &zeros,
            Projection::Clip {
                beta: 1.0,
                shaping: &table,
            },
            UnvisitedRule::OptimisticNextMax,
            mdp.horizon() as f64,
        );
        for h in 0..=mdp.horizon() {
            for s in 0..mdp.layer_len(h) {
                assert_eq!(planned.vhat(h, s), 0.0);
            }
        }
    }

    #[test]
    fn zero_episode_run_is_empty() {
        let mdp = chain();
        let trace = run(
            &mdp,
            Variant::Ucbvi,
            &spec(BonusKind::PracticalVanilla),
            None,
            0,
            RunRng::new(0),
        )
        .unwrap();
        assert_eq!(trace.episodes(), 0);
        assert_eq!(trace.final_cumulative_regret(), 0.0);
    }

    #[test]
    fn single_action_mdp_has_zero_regret() {
        let layers = vec![vec!["only".to_string()]; 4];
        let trans = vec![vec![vec![(0u32, 1.0)]]; 3];
        let rewards = vec![vec![0.7]; 3];
        let mdp = TabularMdp::new(layers, 1, trans, rewards, 0, None).unwrap();
        let trace = run(
            &mdp,
            Variant::Ucbvi,
            &spec(BonusKind::PracticalVanilla),
            None,
            20,
            RunRng::new(1),
        )
        .unwrap();
        for r in &trace.instant_regret {
            assert_eq!(*r, 0.0);
        }
    }

    #[test]
    fn shaped_run_keeps_vhat_under_the_clip_and_ceiling() {
        let mdp = env::preset("chain11").unwrap();
        let vstar = exact_optimal_values(&mdp);
        let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(6)).unwrap();
        let sp = spec(BonusKind::PracticalShaped);
        let mut learner =
            EpisodeLearner::new(&mdp, Variant::Shaped, sp, Some(&table), RunRng::new(7)).unwrap();
        for _ in 0..50 {
            let out = learner.step().unwrap();
            assert!(
                out.vhat0
                    <= (1.5 * table.value(0, mdp.start_state())).min(mdp.horizon() as f64) + 1e-12
            );
        }
    }

    #[test]
    fn shaped_regret_reaches_zero_on_deterministic_env() {
        let mdp = env::preset("chain11").unwrap();
        let vstar = exact_optimal_values(&mdp);
        let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(8)).unwrap();
        let trace = run(
            &mdp,
            Variant::Shaped,
            &spec(BonusKind::PracticalShaped),
            Some(&table),
            400,
            RunRng::new(9),
        )
        .unwrap();
        assert_eq!(*trace.instant_regret.last().unwrap(), 0.0);
        // Once converged it stays converged.
        let tail = &trace.instant_regret[300..];
        assert!(tail.iter().all(|&r| r == 0.0), "tail regret nonzero");
    }

    #[test]
    fn variant_bonus_compatibility_is_enforced() {
        let mdp = chain();
        let err = EpisodeLearner::new(
            &mdp,
            Variant::Shaped,
            spec(BonusKind::PracticalVanilla),
            None,
            RunRng::new(0),
        );
        assert!(matches!(
            err,
            Err(LearnerError::VariantBonusMismatch { .. })
        ));
    }

    #[test]
    fn layer_mismatch_detected() {
        let mdp = chain();
        let other = env::build_chain(9, 0, 3, 6).unwrap();
        let vt = exact_optimal_values(&other);
        let pi = greedy_policy(&other, &vt);
        let mut bad = sample_trajectory(&other, &pi, &mut RunRng::new(0));
        bad.steps[0].state = 8; // outside the 5-state chain
        let mut counts = Counts::new(&mdp);
        assert!(matches!(
            counts.update(&mdp, &bad),
            Err(LearnerError::LayerMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bonus_is_nonincreasing_in_n(visits in 1usize..40, extra in 1usize..40, kind_idx in 0usize..4) {
            let kind = [
                BonusKind::TheoreticalShaped,
                BonusKind::TheoreticalVanilla,
                BonusKind::PracticalShaped,
                BonusKind::PracticalVanilla,
            ][kind_idx];
            let mdp = chain();
            let vstar = exact_optimal_values(&mdp);
            let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(0)).unwrap();
            let pi = greedy_policy(&mdp, &vstar);
            let traj = sample_trajectory(&mdp, &pi, &mut RunRng::new(0));
            let sp = spec(kind);
            let (h, s) = (0, mdp.start_state());
            let a = pi.action(h, s);

            let mut low = Counts::new(&mdp);
            for _ in 0..visits {
                low.update(&mdp, &traj).unwrap();
            }
            let mut high = low.clone();
            for _ in 0..extra {
                high.update(&mdp, &traj).unwrap();
            }
            // Same deterministic trajectory, so the empirical rows agree and
            // only N differs.
            let model_low = empirical_model(&mdp, &low);
            let model_high = empirical_model(&mdp, &high);
            let b_low = bonus(&sp, &mdp, &low, &model_low, Some(&table), h, s, a, 100).unwrap();
            let b_high = bonus(&sp, &mdp, &high, &model_high, Some(&table), h, s, a, 100).unwrap();
            prop_assert!(b_high <= b_low + 1e-15);
        }

        #[test]
        fn clip_and_ceiling_hold_pointwise(seed in 0u64..500, episodes in 0usize..30) {
            // Partially observed model with arbitrary visit history: the
            // planned values must respect both the ceiling and the clip at
            // every (h, s), and qhat the ceiling at every pair.
            let mdp = env::preset("chain11").unwrap();
            let vstar = exact_optimal_values(&mdp);
            let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(seed)).unwrap();
            let sp = spec(BonusKind::PracticalShaped);
            let mut learner =
                EpisodeLearner::new(&mdp, Variant::Shaped, sp, Some(&table), RunRng::new(seed))
                    .unwrap();
            for _ in 0..episodes {
                learner.step().unwrap();
            }
            let model = empirical_model(&mdp, learner.counts());
            let bonuses: Vec<Vec<f64>> = (0..mdp.horizon())
                .map(|h| {
                    (0..mdp.layer_len(h) * mdp.action_count())
                        .map(|idx| {
                            let (s, a) = (idx / mdp.action_count(), idx % mdp.action_count());
                            bonus(&sp, &mdp, learner.counts(), &model, Some(&table), h, s, a, episodes + 1)
                                .unwrap()
                        })
                        .collect()
                })
                .collect();
            let ceiling = mdp.horizon() as f64;
            let planned = plan(
                &mdp,
                &model,
                &bonuses,
                Projection::Clip { beta: 1.5, shaping: &table },
                UnvisitedRule::OptimisticNextMax,
                ceiling,
            );
            for h in 0..mdp.horizon() {
                for s in 0..mdp.layer_len(h) {
                    prop_assert!(planned.vhat(h, s) <= ceiling);
                    prop_assert!(planned.vhat(h, s) <= 1.5 * table.value(h, s));
                    for a in 0..mdp.action_count() {
                        prop_assert!(planned.qhat(h, s, a) <= ceiling);
                    }
                }
            }
        }

        #[test]
        fn unvisited_bonus_caps_dominate(seed in 0u64..500) {
            let mdp = chain();
            let vstar = exact_optimal_values(&mdp);
            let table = build_sandwiched(&vstar, 1.5, &mut RunRng::new(seed)).unwrap();
            let counts = Counts::new(&mdp);
            let model = empirical_model(&mdp, &counts);
            for kind in [BonusKind::TheoreticalShaped, BonusKind::PracticalShaped] {
                let b = bonus(&spec(kind), &mdp, &counts, &model, Some(&table), 0, 0, 0, 1).unwrap();
                prop_assert!(b >= 0.0);
            }
        }
    }
}
