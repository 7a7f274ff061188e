//! Finite goal-conditioned MDPs, policies and occupancy measures.
//!
//! All tables are stored flat and row-major. Index conventions:
//!
//! * transition `P(s'|s,a)` at `(s * A + a) * S + s'`
//! * reward `r(s;g)` at `s * G + g`
//! * policy `pi(a|s,g)` at `(s * G + g) * A + a`
//! * occupancy `d(s,a;g)` at `(s * A + a) * G + g`
//! * value `V(s;g)` at `s * G + g`

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};

const SUM_TOL: f64 = 1e-12;
/// Q-values within this distance of the maximum count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GoalMdpDoc {
    n_states: usize,
    n_actions: usize,
    n_goals: usize,
    discount: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    init_dist: Vec<f64>,
    goal_dist: Vec<f64>,
    deterministic: bool,
}

/// A finite goal-conditioned MDP with action-independent deterministic goal rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GoalMdpDoc", into = "GoalMdpDoc")]
pub struct GoalMdp {
    n_states: usize,
    n_actions: usize,
    n_goals: usize,
    discount: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    init_dist: Vec<f64>,
    goal_dist: Vec<f64>,
    deterministic: bool,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return invalid(format!("{name} has negative or non-finite entries"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return invalid(format!("{name} sums to {total}, expected 1"));
    }
    Ok(())
}

impl GoalMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_goals: usize,
        discount: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        init_dist: Vec<f64>,
        goal_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_goals == 0 {
            return invalid("state, action and goal counts must be positive");
        }
        if !(0.0..1.0).contains(&discount) {
            return invalid(format!("discount {discount} outside [0, 1)"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return dim(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            ));
        }
        if reward.len() != n_states * n_goals {
            return dim(format!("reward table has {} entries, expected {}", reward.len(), n_states * n_goals));
        }
        if init_dist.len() != n_states {
            return dim("init_dist length must equal n_states");
        }
        if goal_dist.len() != n_goals {
            return dim("goal_dist length must equal n_goals");
        }
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            check_distribution(&format!("transition row (s={}, a={})", row / n_actions, row % n_actions), chunk)?;
        }
        if reward.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return invalid("rewards must lie in [0, 1]");
        }
        check_distribution("init_dist", &init_dist)?;
        check_distribution("goal_dist", &goal_dist)?;
        let deterministic = transition
            .chunks(n_states)
            .all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0));
        Ok(Self { n_states, n_actions, n_goals, discount, transition, reward, init_dist, goal_dist, deterministic })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_goals(&self) -> usize {
        self.n_goals
    }
    pub fn discount(&self) -> f64 {
        self.discount
    }
    /// True iff every transition row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }
    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }
    pub fn goal_dist(&self) -> &[f64] {
        &self.goal_dist
    }
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, g: usize) -> f64 {
        self.reward[s * self.n_goals + g]
    }

    /// `(T V)(s,a;g) = E_{s'~P(.|s,a)} V(s';g)`.
    #[inline]
    pub fn expected_next_value(&self, v: &[f64], s: usize, a: usize, g: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(s2, &p)| p * v[s2 * self.n_goals + g])
            .sum()
    }

    /// The most likely successor, lowest index on ties.
    pub fn most_likely_next(&self, s: usize, a: usize) -> usize {
        argmax_lowest(self.transition_row(s, a))
    }

    /// Same dynamics with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.n_goals,
            discount,
            self.transition.clone(),
            self.reward.clone(),
            self.init_dist.clone(),
            self.goal_dist.clone(),
        )
    }

    /// Largest achievable value, `1/(1-gamma)` for rewards in `[0,1]`.
    pub fn default_v_max(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl TryFrom<GoalMdpDoc> for GoalMdp {
    type Error = Error;

    fn try_from(doc: GoalMdpDoc) -> Result<Self> {
        let mdp = GoalMdp::new(
            doc.n_states,
            doc.n_actions,
            doc.n_goals,
            doc.discount,
            doc.transition,
            doc.reward,
            doc.init_dist,
            doc.goal_dist,
        )?;
        if mdp.deterministic != doc.deterministic {
            return invalid("deterministic flag does not match the transition table");
        }
        Ok(mdp)
    }
}

impl From<GoalMdp> for GoalMdpDoc {
    fn from(m: GoalMdp) -> Self {
        GoalMdpDoc {
            n_states: m.n_states,
            n_actions: m.n_actions,
            n_goals: m.n_goals,
            discount: m.discount,
            transition: m.transition,
            reward: m.reward,
            init_dist: m.init_dist,
            goal_dist: m.goal_dist,
            deterministic: m.deterministic,
        }
    }
}

pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A stationary goal-conditioned policy `pi(a|s,g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub n_states: usize,
    pub n_goals: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_goals: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_goals * n_actions {
            return dim("policy table has the wrong size");
        }
        for (i, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(&format!("policy row (s={}, g={})", i / n_goals, i % n_goals), row)?;
        }
        Ok(Self { n_states, n_goals, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_goals: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self { n_states, n_goals, n_actions, probs: vec![p; n_states * n_goals * n_actions] }
    }

    /// One-hot policy from an action table indexed `s * G + g`.
    pub fn deterministic(n_states: usize, n_goals: usize, n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; n_states * n_goals * n_actions];
        for (cell, &a) in actions.iter().enumerate() {
            probs[cell * n_actions + a] = 1.0;
        }
        Self { n_states, n_goals, n_actions, probs }
    }

    #[inline]
    pub fn row(&self, s: usize, g: usize) -> &[f64] {
        let start = (s * self.n_goals + g) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, g: usize, a: usize) -> f64 {
        self.probs[(s * self.n_goals + g) * self.n_actions + a]
    }

    /// `(1 - eps) * self + eps * uniform`.
    pub fn mix_uniform(&self, eps: f64) -> Self {
        let u = eps / self.n_actions as f64;
        let probs = self.probs.iter().map(|p| (1.0 - eps) * p + u).collect();
        Self { probs, ..self.clone() }
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check_against(&self, mdp: &GoalMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_goals != mdp.n_goals || self.n_actions != mdp.n_actions {
            return dim("policy dimensions do not match the MDP");
        }
        Ok(())
    }
}

/// Discounted state-action visitation `d(s,a;g)`, normalized per goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    pub d: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(n_states: usize, n_actions: usize, n_goals: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n_states * n_actions * n_goals {
            return dim("occupancy table has the wrong size");
        }
        if d.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return invalid("occupancy entries must be finite and nonnegative");
        }
        Ok(Self { n_states, n_actions, n_goals, d })
    }

    pub fn zeros(n_states: usize, n_actions: usize, n_goals: usize) -> Self {
        Self { n_states, n_actions, n_goals, d: vec![0.0; n_states * n_actions * n_goals] }
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize, g: usize) -> usize {
        (s * self.n_actions + a) * self.n_goals + g
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, g: usize) -> f64 {
        self.d[self.index(s, a, g)]
    }

    /// State marginal `d(s;g)`.
    pub fn state_marginal(&self, s: usize, g: usize) -> f64 {
        (0..self.n_actions).map(|a| self.get(s, a, g)).sum()
    }

    /// Total mass for goal `g`.
    pub fn goal_mass(&self, g: usize) -> f64 {
        (0..self.n_states).map(|s| self.state_marginal(s, g)).sum()
    }

    /// Joint weight `p(g) d(s,a;g)`, flat in the same layout.
    pub fn joint(&self, goal_dist: &[f64]) -> Vec<f64> {
        self.d
            .iter()
            .enumerate()
            .map(|(i, &x)| x * goal_dist[i % self.n_goals])
            .collect()
    }

    pub fn max_abs_diff(&self, other: &OccupancyMeasure) -> f64 {
        self.d.iter().zip(&other.d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Max-norm of the Bellman-flow residual over all `(s, g)`.
    pub fn flow_residual(&self, mdp: &GoalMdp) -> f64 {
        let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
        let gamma = mdp.discount;
        let mut worst: f64 = 0.0;
        for g in 0..ng {
            let mut inflow: Vec<f64> = mdp.init_dist.iter().map(|r| (1.0 - gamma) * r).collect();
            for s in 0..ns {
                for a in 0..na {
                    let w = self.get(s, a, g);
                    if w == 0.0 {
                        continue;
                    }
                    for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        inflow[s2] += gamma * p * w;
                    }
                }
            }
            for (s, inflow_s) in inflow.iter().enumerate() {
                worst = worst.max((self.state_marginal(s, g) - inflow_s).abs());
            }
        }
        worst
    }

    pub fn check_against(&self, mdp: &GoalMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions || self.n_goals != mdp.n_goals {
            return dim("occupancy dimensions do not match the MDP");
        }
        Ok(())
    }
}

/// A value table `V(s;g)` constrained to `[0, v_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFn {
    pub n_states: usize,
    pub n_goals: usize,
    pub v_max: f64,
    pub v: Vec<f64>,
}

impl ValueFn {
    pub fn new(n_states: usize, n_goals: usize, v_max: f64, v: Vec<f64>) -> Result<Self> {
        if v.len() != n_states * n_goals {
            return dim("value table has the wrong size");
        }
        if !(v_max > 0.0) {
            return invalid("v_max must be positive");
        }
        if v.iter().any(|x| !(0.0..=v_max).contains(x)) {
            return invalid("value entries must lie in [0, v_max]");
        }
        Ok(Self { n_states, n_goals, v_max, v })
    }

    pub fn zeros(n_states: usize, n_goals: usize, v_max: f64) -> Self {
        Self { n_states, n_goals, v_max, v: vec![0.0; n_states * n_goals] }
    }

    #[inline]
    pub fn get(&self, s: usize, g: usize) -> f64 {
        self.v[s * self.n_goals + g]
    }
}

/// `U_V(s,a;g) = r(s;g) + gamma (T V)(s,a;g) - V(s;g) + alpha` over the full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedAdvantage {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    pub alpha: f64,
    pub u: Vec<f64>,
}

impl ShiftedAdvantage {
    #[inline]
    pub fn get(&self, s: usize, a: usize, g: usize) -> f64 {
        self.u[(s * self.n_actions + a) * self.n_goals + g]
    }

    /// Positive part `U_+`, same layout.
    pub fn positive_part(&self) -> Vec<f64> {
        self.u.iter().map(|x| x.max(0.0)).collect()
    }
}

pub fn build_shifted_advantage(mdp: &GoalMdp, v: &ValueFn, alpha: f64) -> ShiftedAdvantage {
    let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
    let mut u = vec![0.0; ns * na * ng];
    for s in 0..ns {
        for a in 0..na {
            for g in 0..ng {
                u[(s * na + a) * ng + g] =
                    mdp.reward(s, g) + mdp.discount * mdp.expected_next_value(&v.v, s, a, g) - v.get(s, g) + alpha;
            }
        }
    }
    ShiftedAdvantage { n_states: ns, n_actions: na, n_goals: ng, alpha, u }
}

/// Row-stochastic `P_pi(s'|s)` for one goal.
fn policy_transition(mdp: &GoalMdp, policy: &Policy, g: usize) -> DMatrix<f64> {
    let ns = mdp.n_states;
    let mut m = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..mdp.n_actions {
            let pa = policy.prob(s, g, a);
            if pa == 0.0 {
                continue;
            }
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                m[(s, s2)] += pa * p;
            }
        }
    }
    m
}

/// Exact discounted occupancy of `policy`, one linear solve per goal.
pub fn occupancy_of_policy(mdp: &GoalMdp, policy: &Policy) -> Result<OccupancyMeasure> {
    policy.check_against(mdp)?;
    let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
    let gamma = mdp.discount;
    let mut occ = OccupancyMeasure::zeros(ns, na, ng);
    let rhs = DVector::from_iterator(ns, mdp.init_dist.iter().map(|r| (1.0 - gamma) * r));
    for g in 0..ng {
        let p_pi = policy_transition(mdp, policy, g);
        let system = DMatrix::identity(ns, ns) - p_pi.transpose() * gamma;
        let state_occ = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular flow system".into()))?;
        for s in 0..ns {
            // Round-off can leave tiny negatives on unreachable states.
            let ds = state_occ[s].max(0.0);
            for a in 0..na {
                occ.d[(s * na + a) * ng + g] = ds * policy.prob(s, g, a);
            }
        }
    }
    Ok(occ)
}

/// Policy induced by an occupancy; rows with zero mass become uniform.
pub fn policy_from_occupancy(d: &OccupancyMeasure, n_actions: usize) -> Result<Policy> {
    if n_actions != d.n_actions {
        return dim("n_actions does not match the occupancy measure");
    }
    if d.d.iter().any(|x| *x < 0.0) {
        return invalid("occupancy must be nonnegative");
    }
    let (ns, na, ng) = (d.n_states, d.n_actions, d.n_goals);
    let mut probs = vec![0.0; ns * ng * na];
    for s in 0..ns {
        for g in 0..ng {
            let total = d.state_marginal(s, g);
            for a in 0..na {
                probs[(s * ng + g) * na + a] =
                    if total > 0.0 { d.get(s, a, g) / total } else { 1.0 / na as f64 };
            }
        }
    }
    Ok(Policy { n_states: ns, n_goals: ng, n_actions: na, probs })
}

/// Exact `V^pi(s;g)` with rewards collected from `t = 0`.
pub fn evaluate_policy(mdp: &GoalMdp, policy: &Policy) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    let (ns, ng) = (mdp.n_states, mdp.n_goals);
    let mut v = vec![0.0; ns * ng];
    for g in 0..ng {
        let p_pi = policy_transition(mdp, policy, g);
        let system = DMatrix::identity(ns, ns) - p_pi * mdp.discount;
        let rhs = DVector::from_iterator(ns, (0..ns).map(|s| mdp.reward(s, g)));
        let vg = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular evaluation system".into()))?;
        for s in 0..ns {
            v[s * ng + g] = vg[s];
        }
    }
    Ok(v)
}

/// `Q(s,a;g) = r(s;g) + gamma (T V)(s,a;g)`, occupancy layout.
pub fn q_values(mdp: &GoalMdp, v: &[f64]) -> Vec<f64> {
    let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
    let mut q = vec![0.0; ns * na * ng];
    for s in 0..ns {
        for a in 0..na {
            for g in 0..ng {
                q[(s * na + a) * ng + g] = mdp.reward(s, g) + mdp.discount * mdp.expected_next_value(v, s, a, g);
            }
        }
    }
    q
}

/// Exact advantage `A^pi = Q^pi - V^pi`, occupancy layout.
pub fn advantage_of_policy(mdp: &GoalMdp, policy: &Policy) -> Result<Vec<f64>> {
    let v = evaluate_policy(mdp, policy)?;
    let (na, ng) = (mdp.n_actions, mdp.n_goals);
    let mut q = q_values(mdp, &v);
    for (i, x) in q.iter_mut().enumerate() {
        let g = i % ng;
        let s = i / (na * ng);
        *x -= v[s * ng + g];
    }
    Ok(q)
}

/// `J(pi) = E_{(s,a,g) ~ d^pi}[r(s;g)]`.
pub fn j_value(mdp: &GoalMdp, policy: &Policy) -> Result<f64> {
    let occ = occupancy_of_policy(mdp, policy)?;
    Ok(expected_reward(mdp, &occ))
}

/// `sum_{s,a,g} p(g) d(s,a;g) r(s;g)` for any occupancy-shaped table.
pub fn expected_reward(mdp: &GoalMdp, occ: &OccupancyMeasure) -> f64 {
    let mut total = 0.0;
    for s in 0..occ.n_states {
        for g in 0..occ.n_goals {
            let r = mdp.reward(s, g);
            if r != 0.0 {
                total += mdp.goal_dist[g] * r * occ.state_marginal(s, g);
            }
        }
    }
    total
}

/// Single-policy concentrability `max p(g) d_target / (p(g) d_behavior)`.
///
/// `0/0` counts as 0; positive mass over zero behavior mass yields `f64::INFINITY`.
pub fn concentrability(target: &OccupancyMeasure, behavior: &OccupancyMeasure, goal_dist: &[f64]) -> Result<f64> {
    if target.d.len() != behavior.d.len() || target.n_goals != goal_dist.len() {
        return dim("occupancy measures and goal distribution disagree in shape");
    }
    let t = target.joint(goal_dist);
    let b = behavior.joint(goal_dist);
    let mut worst: f64 = 0.0;
    for (&x, &y) in t.iter().zip(&b) {
        if x == 0.0 {
            continue;
        }
        if y == 0.0 {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(x / y);
    }
    Ok(worst)
}

/// Greedy policy on a Q table, lowest index among near-ties.
pub fn greedy_policy(mdp: &GoalMdp, q: &[f64]) -> Vec<usize> {
    let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
    let mut actions = vec![0; ns * ng];
    for s in 0..ns {
        for g in 0..ng {
            let best = (0..na).map(|a| q[(s * na + a) * ng + g]).fold(f64::NEG_INFINITY, f64::max);
            actions[s * ng + g] = (0..na)
                .find(|&a| q[(s * na + a) * ng + g] >= best - TIE_TOL)
                .unwrap_or(0);
        }
    }
    actions
}

/// Optimal deterministic policy and `J(pi*)`.
///
/// Value iteration warm-starts policy iteration; the final policy is evaluated exactly.
pub fn exact_optimal_policy(mdp: &GoalMdp) -> Result<(Policy, f64)> {
    let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
    let mut v = vec![0.0; ns * ng];
    for _ in 0..200 {
        let q = q_values(mdp, &v);
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for g in 0..ng {
                let best = (0..na).map(|a| q[(s * na + a) * ng + g]).fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s * ng + g]).abs());
                v[s * ng + g] = best;
            }
        }
        if delta <= 1e-12 {
            break;
        }
    }
    let mut actions = greedy_policy(mdp, &q_values(mdp, &v));
    for _ in 0..10_000 {
        let policy = Policy::deterministic(ns, ng, na, &actions);
        let v_pi = evaluate_policy(mdp, &policy)?;
        let next = greedy_policy(mdp, &q_values(mdp, &v_pi));
        // Switch only on strict improvement so ties cannot cycle.
        let q = q_values(mdp, &v_pi);
        let mut changed = false;
        for cell in 0..ns * ng {
            let (s, g) = (cell / ng, cell % ng);
            let cur = q[(s * na + actions[cell]) * ng + g];
            let new = q[(s * na + next[cell]) * ng + g];
            if new > cur + TIE_TOL {
                actions[cell] = next[cell];
                changed = true;
            }
        }
        if !changed {
            // Canonical tie-breaking on the converged values.
            let canonical = Policy::deterministic(ns, ng, na, &next);
            let j = j_value(mdp, &canonical)?;
            return Ok((canonical, j));
        }
    }
    Err(Error::Numeric("policy iteration did not converge".into()))
}

/// Bellman optimality residual `max |max_a Q_V - V|`.
pub fn optimality_residual(mdp: &GoalMdp, v: &[f64]) -> f64 {
    let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
    let q = q_values(mdp, v);
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for g in 0..ng {
            let best = (0..na).map(|a| q[(s * na + a) * ng + g]).fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((best - v[s * ng + g]).abs());
        }
    }
    worst
}

/// `E_{(s,g) ~ weights} TV(pi_1(.|s,g), pi_2(.|s,g))` with per-cell weights `w[s * G + g]`.
pub fn weighted_tv(p1: &Policy, p2: &Policy, weights: &[f64]) -> f64 {
    let na = p1.n_actions;
    weights
        .iter()
        .enumerate()
        .map(|(cell, &w)| {
            if w == 0.0 {
                return 0.0;
            }
            let a = &p1.probs[cell * na..(cell + 1) * na];
            let b = &p2.probs[cell * na..(cell + 1) * na];
            w * 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
        })
        .sum()
}

/// Per-cell weights `p(g) d(s;g)` laid out as `s * G + g`.
pub fn state_goal_weights(occ: &OccupancyMeasure, goal_dist: &[f64]) -> Vec<f64> {
    let (ns, ng) = (occ.n_states, occ.n_goals);
    let mut w = vec![0.0; ns * ng];
    for s in 0..ns {
        for g in 0..ng {
            w[s * ng + g] = goal_dist[g] * occ.state_marginal(s, g);
        }
    }
    w
}
