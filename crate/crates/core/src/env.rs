//! Benchmark environments: open gridworld, single corridor, double
//! corridor, and the deterministic chain.
//!
//! All of them share the same skeleton: deterministic dynamics, reward 0
//! everywhere except a goal sink with reward 1 for every action taken from
//! it, and states replicated across layers so the stationary grid fits the
//! h-indexed MDP type.
//!
//! The exact corridor wall layouts are not published; the presets here use
//! serpentines whose walkable distance fits the preset horizons. See the
//! README for diagrams.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{GridMeta, SparseRow, TabularMdp};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("goal unreachable within horizon {horizon} (shortest path {needed})")]
    UnreachableGoal { needed: usize, horizon: usize },
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
}

/// Rectangular maze description. `walls` are blocked cells; the rest are
/// walkable. Cells are `(row, col)` with row 0 at the top.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub walls: BTreeSet<(usize, usize)>,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub horizon: usize,
}

/// Action order: up, down, left, right.
const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl MazeSpec {
    fn validate(&self) -> Result<(), EnvError> {
        if self.width == 0 || self.height == 0 {
            return Err(EnvError::InvalidSpec(
                "maze dimensions must be positive".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidSpec("horizon must be positive".into()));
        }
        for &(label, cell) in &[("start", self.start), ("goal", self.goal)] {
            if cell.0 >= self.height || cell.1 >= self.width {
                return Err(EnvError::InvalidSpec(format!(
                    "{label} cell {cell:?} out of bounds"
                )));
            }
            if self.walls.contains(&cell) {
                return Err(EnvError::InvalidSpec(format!(
                    "{label} cell {cell:?} is a wall"
                )));
            }
        }
        Ok(())
    }

    /// BFS distance start -> goal over walkable cells, if any.
    fn goal_distance(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.width * self.height];
        let idx = |(r, c): (usize, usize)| r * self.width + c;
        let mut queue = VecDeque::new();
        dist[idx(self.start)] = 0;
        queue.push_back(self.start);
        while let Some(cell) = queue.pop_front() {
            if cell == self.goal {
                return Some(dist[idx(cell)]);
            }
            for (dr, dc) in MOVES {
                let nr = cell.0 as isize + dr;
                let nc = cell.1 as isize + dc;
                if nr < 0 || nc < 0 || nr as usize >= self.height || nc as usize >= self.width {
                    continue;
                }
                let next = (nr as usize, nc as usize);
                if self.walls.contains(&next) || dist[idx(next)] != usize::MAX {
                    continue;
                }
                dist[idx(next)] = dist[idx(cell)] + 1;
                queue.push_back(next);
            }
        }
        None
    }
}

/// Build the layered MDP of a maze. Four actions (up/down/left/right);
/// bumping a wall or the boundary keeps the agent in place; the goal is
/// absorbing with reward 1 for every action taken from it.
pub fn build_maze(spec: &MazeSpec) -> Result<TabularMdp, EnvError> {
    spec.validate()?;
    let needed = spec.goal_distance().ok_or(EnvError::UnreachableGoal {
        needed: usize::MAX,
        horizon: spec.horizon,
    })?;
    if needed > spec.horizon {
        return Err(EnvError::UnreachableGoal {
            needed,
            horizon: spec.horizon,
        });
    }

    // Walkable cells in row-major order become the per-layer state set.
    let mut cells = Vec::new();
    let mut cell_index = vec![usize::MAX; spec.width * spec.height];
    for r in 0..spec.height {
        for c in 0..spec.width {
            if !spec.walls.contains(&(r, c)) {
                cell_index[r * spec.width + c] = cells.len();
                cells.push((r, c));
            }
        }
    }
    let names: Vec<String> = cells.iter().map(|&(r, c)| format!("r{r}c{c}")).collect();
    let goal_idx = cell_index[spec.goal.0 * spec.width + spec.goal.1];
    let start_idx = cell_index[spec.start.0 * spec.width + spec.start.1];

    let n = cells.len();
    let a_count = MOVES.len();
    let mut layer_trans = vec![SparseRow::new(); n * a_count];
    let mut layer_rewards = vec![0.0; n * a_count];
    for (s, &(r, c)) in cells.iter().enumerate() {
        for (a, (dr, dc)) in MOVES.iter().enumerate() {
            let next = if s == goal_idx {
                goal_idx
            } else {
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                if nr < 0 || nc < 0 || nr as usize >= spec.height || nc as usize >= spec.width {
                    s
                } else {
                    let cand = cell_index[nr as usize * spec.width + nc as usize];
                    if cand == usize::MAX {
                        s
                    } else {
                        cand
                    }
                }
            };
            layer_trans[s * a_count + a] = vec![(next as u32, 1.0)];
            layer_rewards[s * a_count + a] = if s == goal_idx { 1.0 } else { 0.0 };
        }
    }

    let layers = vec![names; spec.horizon + 1];
    let trans = vec![layer_trans; spec.horizon];
    let rewards = vec![layer_rewards; spec.horizon];
    let grid = GridMeta {
        width: spec.width,
        height: spec.height,
        cells,
    };
    Ok(TabularMdp::new(
        layers,
        a_count,
        trans,
        rewards,
        start_idx,
        Some(grid),
    )?)
}

/// Deterministic chain with actions left (0) and right (1); endpoints
/// clamp; the goal index is absorbing with reward 1.
pub fn build_chain(
    length: usize,
    goal: usize,
    start: usize,
    horizon: usize,
) -> Result<TabularMdp, EnvError> {
    if length == 0 || goal >= length || start >= length {
        return Err(EnvError::InvalidSpec(format!(
            "chain indices out of range: length {length}, goal {goal}, start {start}"
        )));
    }
    if horizon == 0 {
        return Err(EnvError::InvalidSpec("horizon must be positive".into()));
    }
    let needed = goal.abs_diff(start);
    if needed > horizon {
        return Err(EnvError::UnreachableGoal { needed, horizon });
    }
    let names: Vec<String> = (0..length).map(|i| format!("s{i}")).collect();
    let a_count = 2;
    let mut layer_trans = vec![SparseRow::new(); length * a_count];
    let mut layer_rewards = vec![0.0; length * a_count];
    for s in 0..length {
        for a in 0..a_count {
            let next = if s == goal {
                goal
            } else if a == 0 {
                s.saturating_sub(1)
            } else {
                (s + 1).min(length - 1)
            };
            layer_trans[s * a_count + a] = vec![(next as u32, 1.0)];
            layer_rewards[s * a_count + a] = if s == goal { 1.0 } else { 0.0 };
        }
    }
    let layers = vec![names; horizon + 1];
    let trans = vec![layer_trans; horizon];
    let rewards = vec![layer_rewards; horizon];
    let grid = GridMeta {
        width: length,
        height: 1,
        cells: (0..length).map(|i| (0, i)).collect(),
    };
    Ok(TabularMdp::new(
        layers,
        a_count,
        trans,
        rewards,
        start,
        Some(grid),
    )?)
}

fn corridor_walls_left() -> BTreeSet<(usize, usize)> {
    // Serpentine: wall across row 2 with a gap at col 0, wall across row 5
    // with a gap at col 9. Walkable distance (9,9) -> (0,0) stays 18.
    let mut walls = BTreeSet::new();
    for c in 1..=9 {
        walls.insert((2, c));
    }
    for c in 0..=8 {
        walls.insert((5, c));
    }
    walls
}

/// Built-in environments used by the experiment harness.
pub fn preset(name: &str) -> Result<TabularMdp, EnvError> {
    match name {
        "grid8" => build_maze(&MazeSpec {
            width: 8,
            height: 8,
            walls: BTreeSet::new(),
            start: (7, 7),
            goal: (0, 0),
            horizon: 16,
        }),
        "corridor10" => build_maze(&MazeSpec {
            width: 10,
            height: 10,
            walls: corridor_walls_left(),
            start: (9, 9),
            goal: (0, 0),
            horizon: 24,
        }),
        "dcorridor10x20" => {
            // Left half: the single-corridor serpentine leading to the goal.
            // Right half: a mirrored serpentine that dead-ends top-right,
            // providing the irrelevant states. Start near the junction.
            let mut walls = corridor_walls_left();
            for c in 10..=18 {
                walls.insert((2, c));
            }
            for c in 11..=19 {
                walls.insert((5, c));
            }
            build_maze(&MazeSpec {
                width: 20,
                height: 10,
                walls,
                start: (9, 9),
                goal: (0, 0),
                horizon: 36,
            })
        }
        "chain11" => build_chain(11, 0, 5, 13),
        other => Err(EnvError::InvalidSpec(format!("unknown preset '{other}'"))),
    }
}

pub const PRESET_NAMES: [&str; 4] = ["grid8", "corridor10", "dcorridor10x20", "chain11"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_optimal_values, greedy_policy, policy_value, sample_trajectory};
    use crate::rng::RunRng;

    #[test]
    fn tiny_corridor_value_matches_hand_dp() {
        // 1x2 corridor, start left, goal right, H = 3: one step to enter the
        // goal, rewards at steps 1 and 2.
        let spec = MazeSpec {
            width: 2,
            height: 1,
            walls: BTreeSet::new(),
            start: (0, 0),
            goal: (0, 1),
            horizon: 3,
        };
        let mdp = build_maze(&spec).unwrap();
        let vt = exact_optimal_values(&mdp);
        assert_eq!(vt.v(0, mdp.start_state()), 2.0);
    }

    #[test]
    fn grid8_has_64_states_per_layer_and_positive_value() {
        let mdp = preset("grid8").unwrap();
        assert_eq!(mdp.layer_len(0), 64);
        assert_eq!(mdp.horizon(), 16);
        let vt = exact_optimal_values(&mdp);
        assert_eq!(vt.v(0, mdp.start_state()), 2.0); // H=16, distance 14
    }

    #[test]
    fn all_preset_rows_are_unit_vectors() {
        for name in PRESET_NAMES {
            let mdp = preset(name).unwrap();
            for h in 0..mdp.horizon() {
                for s in 0..mdp.layer_len(h) {
                    for a in 0..mdp.action_count() {
                        let row = mdp.successors(h, s, a);
                        assert_eq!(row.len(), 1, "{name} ({h},{s},{a})");
                        assert_eq!(row[0].1, 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn goal_is_absorbing_with_reward_one() {
        let mdp = preset("corridor10").unwrap();
        let grid = mdp.grid().unwrap();
        let goal = grid.cells.iter().position(|&c| c == (0, 0)).unwrap();
        for a in 0..mdp.action_count() {
            assert_eq!(mdp.successors(3, goal, a), &[(goal as u32, 1.0)]);
            assert_eq!(mdp.reward(3, goal, a), 1.0);
        }
    }

    #[test]
    fn corridor_distance_fits_horizon_with_slack() {
        let spec = MazeSpec {
            width: 10,
            height: 10,
            walls: corridor_walls_left(),
            start: (9, 9),
            goal: (0, 0),
            horizon: 24,
        };
        assert_eq!(spec.goal_distance(), Some(18));
        let mdp = build_maze(&spec).unwrap();
        let vt = exact_optimal_values(&mdp);
        assert_eq!(vt.v(0, mdp.start_state()), 6.0); // 24 - 18
    }

    #[test]
    fn double_corridor_start_reaches_goal_within_horizon() {
        let mdp = preset("dcorridor10x20").unwrap();
        let vt = exact_optimal_values(&mdp);
        assert!(vt.v(0, mdp.start_state()) > 0.0);
        assert_eq!(mdp.horizon(), 36);
    }

    #[test]
    fn unreachable_goal_is_reported() {
        let spec = MazeSpec {
            width: 3,
            height: 1,
            walls: [(0usize, 1usize)].into_iter().collect(),
            start: (0, 0),
            goal: (0, 2),
            horizon: 10,
        };
        assert!(matches!(
            build_maze(&spec),
            Err(EnvError::UnreachableGoal { .. })
        ));
        // Reachable in space but not in time.
        let spec = MazeSpec {
            width: 6,
            height: 1,
            walls: BTreeSet::new(),
            start: (0, 0),
            goal: (0, 5),
            horizon: 3,
        };
        assert!(matches!(
            build_maze(&spec),
            Err(EnvError::UnreachableGoal {
                needed: 5,
                horizon: 3
            })
        ));
    }

    #[test]
    fn chain_examples() {
        // L=2, start 0, goal 1, H=2: move then collect once.
        let mdp = build_chain(2, 1, 0, 2).unwrap();
        let vt = exact_optimal_values(&mdp);
        assert_eq!(vt.v(0, 0), 1.0);

        // start == goal collects H rewards.
        let mdp = build_chain(5, 2, 2, 7).unwrap();
        let vt = exact_optimal_values(&mdp);
        assert_eq!(vt.v(0, 2), 7.0);

        // The appendix-style chain: reward 1 at state 0.
        let mdp = build_chain(11, 0, 5, 12).unwrap();
        let vt = exact_optimal_values(&mdp);
        assert_eq!(vt.v(0, 5), 7.0); // 12 - 5
        assert!(matches!(
            build_chain(11, 0, 5, 4),
            Err(EnvError::UnreachableGoal { .. })
        ));
    }

    #[test]
    fn chain_endpoints_clamp() {
        let mdp = build_chain(3, 2, 0, 4).unwrap();
        // At index 0, moving left stays.
        assert_eq!(mdp.successors(0, 0, 0), &[(0u32, 1.0)]);
    }

    #[test]
    fn value_decreases_with_distance_along_free_line() {
        let mdp = preset("grid8").unwrap();
        let vt = exact_optimal_values(&mdp);
        let grid = mdp.grid().unwrap();
        // Walk along the top row away from the goal at (0,0).
        let mut prev = f64::INFINITY;
        for c in 0..8 {
            let s = grid.cells.iter().position(|&cell| cell == (0, c)).unwrap();
            let v = vt.v(0, s);
            assert!(v <= prev, "value increased along the row");
            prev = v;
        }
    }

    #[test]
    fn greedy_walk_reaches_goal() {
        let mdp = preset("dcorridor10x20").unwrap();
        let vt = exact_optimal_values(&mdp);
        let pi = greedy_policy(&mdp, &vt);
        let pv = policy_value(&mdp, &pi);
        assert_eq!(pv.v(0, mdp.start_state()), vt.v(0, mdp.start_state()));
        let traj = sample_trajectory(&mdp, &pi, &mut RunRng::new(0));
        assert!(traj.episodic_return > 0.0);
    }
}
