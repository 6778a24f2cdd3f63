//! Online selection of the shaping-quality parameter beta.
//!
//! A master distribution over UCBVI-Shaped(beta_i) base learners is updated
//! from normalized episodic returns with an exponentially-weighted
//! importance-weighted update (EXP3 with an exploration floor). Base
//! learners persist across selections; each selection plays exactly one
//! episode of the chosen learner.

use thiserror::Error;

use crate::learner::{BonusSpec, Counts, EpisodePlanner, LearnerError, RegretTrace, Variant};
use crate::mdp::{exact_optimal_values, TabularMdp};
use crate::rng::RunRng;
use crate::shaping::ShapingTable;

#[derive(Debug, Error)]
pub enum ModelSelError {
    #[error("beta grid must be nonempty, strictly increasing, and >= 1")]
    BadGrid,
    #[error("normalized return {0} outside [0, 1]")]
    OutOfRangeReturn(f64),
    #[error("arm index {arm} out of range ({arms} arms)")]
    BadArm { arm: usize, arms: usize },
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Candidate beta values, strictly increasing and all >= 1.
#[derive(Debug, Clone)]
pub struct BetaGrid {
    betas: Vec<f64>,
}

impl BetaGrid {
    pub fn new(betas: Vec<f64>) -> Result<Self, ModelSelError> {
        if betas.is_empty()
            || betas.iter().any(|b| *b < 1.0 || !b.is_finite())
            || betas.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(ModelSelError::BadGrid);
        }
        Ok(BetaGrid { betas })
    }

    /// Exponential grid 1, 2, 4, ..., 2^(n-1).
    pub fn exponential(n: usize) -> Self {
        let betas = (0..n.max(1)).map(|i| (1u64 << i) as f64).collect();
        BetaGrid { betas }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// EXP3 master over the arms. With a known horizon the learning rate is
/// `sqrt(N ln N / T)`, otherwise `sqrt(N ln N / k)` at update k; the
/// exploration floor is `gamma_k / N` with `gamma_k = min(1, sqrt(N ln N / k))`.
#[derive(Debug, Clone)]
pub struct MasterState {
    p: Vec<f64>,
    cum_loss: Vec<f64>,
    cum_iw_return: Vec<f64>,
    updates: u64,
    horizon: Option<u64>,
}

impl MasterState {
    pub fn new(arms: usize, horizon: Option<u64>) -> Self {
        assert!(arms > 0, "need at least one arm");
        MasterState {
            p: vec![1.0 / arms as f64; arms],
            cum_loss: vec![0.0; arms],
            cum_iw_return: vec![0.0; arms],
            updates: 0,
            horizon,
        }
    }

    pub fn arms(&self) -> usize {
        self.p.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn cumulative_importance_weighted_returns(&self) -> &[f64] {
        &self.cum_iw_return
    }

    fn rate_scale(&self) -> f64 {
        let n = self.arms() as f64;
        n * n.ln()
    }

    fn eta(&self, k: u64) -> f64 {
        let scale = self.rate_scale();
        match self.horizon {
            Some(t) if t > 0 => (scale / t as f64).sqrt(),
            _ => (scale / k.max(1) as f64).sqrt(),
        }
    }

    fn gamma(&self, k: u64) -> f64 {
        (self.rate_scale() / k.max(1) as f64).sqrt().min(1.0)
    }

    /// Sample an arm from the current distribution.
    pub fn select(&self, rng: &mut RunRng) -> usize {
        if self.arms() == 1 {
            return 0;
        }
        rng.sample_weighted(&self.p)
    }

    /// Fold in one normalized return (in [0, 1]) for `arm`: loss
    /// `1 - return` importance-weighted by the arm's probability, then a
    /// multiplicative-weights recompute and the exploration floor.
    pub fn feed(&mut self, arm: usize, normalized_return: f64) -> Result<(), ModelSelError> {
        if arm >= self.arms() {
            return Err(ModelSelError::BadArm {
                arm,
                arms: self.arms(),
            });
        }
        if !(0.0..=1.0).contains(&normalized_return) || !normalized_return.is_finite() {
            return Err(ModelSelError::OutOfRangeReturn(normalized_return));
        }
        let p_arm = self.p[arm];
        let loss = 1.0 - normalized_return;
        self.cum_loss[arm] += loss / p_arm;
        self.cum_iw_return[arm] += normalized_return / p_arm;
        self.updates += 1;
        let k = self.updates;
        let eta = self.eta(k);
        let gamma = self.gamma(k);
        let n = self.arms() as f64;
        // Weights from cumulative losses, shifted for stability.
        let min_loss = self.cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
        let mut weights: Vec<f64> = self
            .cum_loss
            .iter()
            .map(|&l| (-eta * (l - min_loss)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            for w in &mut weights {
                *w /= total;
            }
        } else {
            weights = vec![1.0 / n; self.arms()];
        }
        for (p, w) in self.p.iter_mut().zip(&weights) {
            *p = (1.0 - gamma) * w + gamma / n;
        }
        // Renormalize away rounding drift.
        let sum: f64 = self.p.iter().sum();
        for p in &mut self.p {
            *p /= sum;
        }
        Ok(())
    }
}

/// Trace plus the final master distribution of an online run.
#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub trace: RegretTrace,
    pub final_p: Vec<f64>,
    pub arm_plays: Vec<u64>,
    pub betas: Vec<f64>,
}

/// Tag for the master's random stream; arm `i` uses `rng.split(i)`, so a
/// standalone learner seeded with `rng.split(i)` is stream-identical to
/// arm `i` here.
pub const MASTER_STREAM_TAG: u64 = u64::MAX;

/// Run online model selection: each episode samples an arm, plays one
/// episode of that arm's persistent UCBVI-Shaped planner, and feeds the
/// return (normalized by H) back to the master.
///
/// The arms differ only in beta, which enters the bonus and the projection;
/// the empirical transition data is beta-agnostic, so all arms share one
/// count table and every episode improves every arm's model. Each arm keeps
/// its own trajectory-sampling stream (`rng.split(arm_index)`).
pub fn run_online(
    mdp: &TabularMdp,
    grid: &BetaGrid,
    spec: &BonusSpec,
    shaping: &ShapingTable,
    episodes: usize,
    rng: RunRng,
) -> Result<OnlineOutcome, ModelSelError> {
    let planners: Vec<EpisodePlanner> = grid
        .betas()
        .iter()
        .map(|&beta| {
            let arm_spec = BonusSpec { beta, ..*spec };
            EpisodePlanner::new(mdp, Variant::Shaped, arm_spec, Some(shaping))
        })
        .collect::<Result<_, _>>()?;
    let mut arm_rngs: Vec<RunRng> = (0..grid.len()).map(|i| rng.split(i as u64)).collect();
    let mut counts = Counts::new(mdp);
    let vstar = exact_optimal_values(mdp);
    let mut master = MasterState::new(grid.len(), Some(episodes as u64));
    let mut master_rng = rng.split(MASTER_STREAM_TAG);
    let mut trace = RegretTrace::new(mdp.total_states());
    let mut arm_plays = vec![0u64; grid.len()];
    let horizon = mdp.horizon() as f64;
    for t in 0..episodes {
        let arm = master.select(&mut master_rng);
        arm_plays[arm] += 1;
        let outcome = planners[arm].play(&mut counts, &vstar, &mut arm_rngs[arm], t + 1)?;
        master.feed(arm, outcome.trajectory.episodic_return / horizon)?;
        trace.record_episode(mdp, &outcome, 2 * t >= episodes);
    }
    Ok(OnlineOutcome {
        trace,
        final_p: master.probs().to_vec(),
        arm_plays,
        betas: grid.betas().to_vec(),
    })
}
