//! Synthetic goal MDPs and a shortest-path behavior heuristic.
//!
//! Every generator uses reward 1 at the goal state and 0 elsewhere, makes goal
//! states absorbing, and starts uniformly over all states with uniform goals.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::mdp::{GoalMdp, Policy};

/// Grid moves in action order: up, down, left, right.
const MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

fn goal_rewards(n_states: usize, goals: &[usize]) -> Vec<f64> {
    let ng = goals.len();
    let mut r = vec![0.0; n_states * ng];
    for (g, &s) in goals.iter().enumerate() {
        r[s * ng + g] = 1.0;
    }
    r
}

fn check_goals(n_states: usize, goals: &[usize]) -> Result<()> {
    if goals.is_empty() {
        return invalid("at least one goal state is required");
    }
    if goals.iter().any(|&g| g >= n_states) {
        return invalid("goal state out of range");
    }
    Ok(())
}

fn assemble(n_states: usize, n_actions: usize, gamma: f64, transition: Vec<f64>, goals: &[usize]) -> Result<GoalMdp> {
    let ng = goals.len();
    GoalMdp::new(
        n_states,
        n_actions,
        ng,
        gamma,
        transition,
        goal_rewards(n_states, goals),
        vec![1.0 / n_states as f64; n_states],
        vec![1.0 / ng as f64; ng],
    )
}

/// `w x h` grid with slip probability `p_slip` of taking a uniformly random move instead.
///
/// Bumping into a wall leaves the agent in place. `p_slip = 0` gives deterministic dynamics.
/// Goals default to the bottom-right corner.
pub fn noisy_gridworld(w: usize, h: usize, p_slip: f64, gamma: f64, goals: Option<&[usize]>) -> Result<GoalMdp> {
    if w == 0 || h == 0 {
        return invalid("grid dimensions must be positive");
    }
    if !(0.0..=1.0).contains(&p_slip) {
        return invalid("slip probability must lie in [0, 1]");
    }
    let ns = w * h;
    let default_goal = [ns - 1];
    let goals = goals.unwrap_or(&default_goal);
    check_goals(ns, goals)?;
    let na = MOVES.len();
    let step = |s: usize, a: usize| -> usize {
        let (x, y) = ((s % w) as i64, (s / w) as i64);
        let (nx, ny) = (x + MOVES[a].0, y + MOVES[a].1);
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            s
        } else {
            ny as usize * w + nx as usize
        }
    };
    let mut p = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut p[(s * na + a) * ns..(s * na + a + 1) * ns];
            if goals.contains(&s) {
                row[s] = 1.0;
                continue;
            }
            row[step(s, a)] += 1.0 - p_slip;
            for b in 0..na {
                row[step(s, b)] += p_slip / na as f64;
            }
        }
    }
    assemble(ns, na, gamma, p, goals)
}

pub fn gridworld(w: usize, h: usize, gamma: f64, goals: Option<&[usize]>) -> Result<GoalMdp> {
    noisy_gridworld(w, h, 0.0, gamma, goals)
}

/// `n`-state chain with actions left/right and a seeded random success probability
/// in `[0.6, 0.9]` per `(s, a)`; failures stay put twice as often as they reverse.
/// The goal is the last state.
pub fn random_chain(n: usize, gamma: f64, seed: u64) -> Result<GoalMdp> {
    if n < 2 {
        return invalid("a chain needs at least two states");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = 2;
    let goal = n - 1;
    let mut p = vec![0.0; n * na * n];
    for s in 0..n {
        for a in 0..na {
            let row = &mut p[(s * na + a) * n..(s * na + a + 1) * n];
            if s == goal {
                row[s] = 1.0;
                continue;
            }
            let forward = if a == 0 { s.saturating_sub(1) } else { (s + 1).min(n - 1) };
            let backward = if a == 0 { (s + 1).min(n - 1) } else { s.saturating_sub(1) };
            let success: f64 = rng.gen_range(0.6..0.9);
            let fail = 1.0 - success;
            row[forward] += success;
            row[s] += fail * 2.0 / 3.0;
            row[backward] += fail / 3.0;
        }
    }
    assemble(n, na, gamma, p, &[goal])
}

/// Greedy action per `(s, g)` minimizing expected graph distance to the goal set
/// `{s : r(s;g) > 0}`, lowest index on ties.
pub fn shortest_path_actions(mdp: &GoalMdp) -> Vec<usize> {
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let mut actions = vec![0; ns * ng];
    for g in 0..ng {
        let unreachable = ns as f64;
        let mut dist = vec![unreachable; ns];
        let mut queue = VecDeque::new();
        for s in 0..ns {
            if mdp.reward(s, g) > 0.0 {
                dist[s] = 0.0;
                queue.push_back(s);
            }
        }
        while let Some(t) = queue.pop_front() {
            for s in 0..ns {
                if dist[s] != unreachable {
                    continue;
                }
                if (0..na).any(|a| mdp.transition_row(s, a)[t] > 0.0) {
                    dist[s] = dist[t] + 1.0;
                    queue.push_back(s);
                }
            }
        }
        for s in 0..ns {
            let expected = |a: usize| -> f64 {
                mdp.transition_row(s, a).iter().zip(&dist).map(|(p, d)| p * d).sum()
            };
            let mut best = 0;
            for a in 1..na {
                if expected(a) < expected(best) - 1e-12 {
                    best = a;
                }
            }
            actions[s * ng + g] = best;
        }
    }
    actions
}

/// `(1 - eps) * greedy + eps * uniform` on the shortest-path heuristic.
pub fn heuristic_behavior(mdp: &GoalMdp, eps: f64) -> Result<Policy> {
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid("behavior epsilon must lie in (0, 1]");
    }
    let greedy = Policy::deterministic(mdp.n_states(), mdp.n_goals(), mdp.n_actions(), &shortest_path_actions(mdp));
    Ok(greedy.mix_uniform(eps))
}
