//! Policy extraction by weighted maximum likelihood with weights `U_+ / alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::mdp::{j_value, occupancy_of_policy, state_goal_weights, weighted_tv, GoalMdp, Policy};
use crate::optim::SolveReport;
use crate::oracle::RegularizedSolution;
use crate::vlearn::WeightedSample;

pub const FIT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 200_000;

/// Uniform-mixed softmax policies `(1 - eps) softmax(z) + eps / |A|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyClass {
    pub epsilon_floor: f64,
}

impl PolicyClass {
    pub fn new(epsilon_floor: f64) -> Result<Self> {
        if !(epsilon_floor > 0.0 && epsilon_floor < 1.0) {
            return invalid(format!("epsilon floor must lie in (0, 1), got {epsilon_floor}"));
        }
        Ok(Self { epsilon_floor })
    }

    /// Smallest probability any member assigns, `eps / |A|`.
    pub fn tau(&self, n_actions: usize) -> f64 {
        self.epsilon_floor / n_actions as f64
    }
}

impl Default for PolicyClass {
    fn default() -> Self {
        Self { epsilon_floor: 1e-3 }
    }
}

/// Logit table `z[(s * G + g) * A + a]` of a member of [`PolicyClass`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_states: usize,
    pub n_goals: usize,
    pub n_actions: usize,
    pub epsilon_floor: f64,
    pub logits: Vec<f64>,
}

fn softmax_into(z: &[f64], out: &mut [f64]) {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - top).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl SoftmaxPolicy {
    pub fn zeros(n_states: usize, n_goals: usize, n_actions: usize, class: PolicyClass) -> Self {
        Self { n_states, n_goals, n_actions, epsilon_floor: class.epsilon_floor, logits: vec![0.0; n_states * n_goals * n_actions] }
    }

    pub fn policy(&self) -> Policy {
        let na = self.n_actions;
        let eps = self.epsilon_floor;
        let mut probs = vec![0.0; self.logits.len()];
        for (z, p) in self.logits.chunks(na).zip(probs.chunks_mut(na)) {
            softmax_into(z, p);
            for x in p.iter_mut() {
                *x = (1.0 - eps) * *x + eps / na as f64;
            }
        }
        Policy { n_states: self.n_states, n_goals: self.n_goals, n_actions: na, probs }
    }
}

/// Aggregated weights `c[(s,g,a)] = sum_i w_i (U_i)_+ / alpha` of the weighted log-likelihood.
#[derive(Debug, Clone)]
pub struct MleObjective {
    pub n_states: usize,
    pub n_goals: usize,
    pub n_actions: usize,
    pub weights: Vec<f64>,
}

impl MleObjective {
    pub fn new(
        sample: &WeightedSample,
        u_records: &[f64],
        alpha: f64,
        n_states: usize,
        n_goals: usize,
        n_actions: usize,
    ) -> Result<Self> {
        if u_records.len() != sample.len() {
            return dim(format!("{} advantages for {} records", u_records.len(), sample.len()));
        }
        if !(alpha > 0.0) {
            return invalid("alpha must be positive");
        }
        let mut weights = vec![0.0; n_states * n_goals * n_actions];
        for ((t, &w), &u) in sample.records.iter().zip(&sample.weights).zip(u_records) {
            if t.s >= n_states || t.g >= n_goals || t.a >= n_actions {
                return invalid("record index out of range for the policy table");
            }
            if u > 0.0 {
                weights[(t.s * n_goals + t.g) * n_actions + t.a] += w * u / alpha;
            }
        }
        Ok(Self { n_states, n_goals, n_actions, weights })
    }

    pub fn value(&self, policy: &Policy) -> f64 {
        self.weights
            .iter()
            .zip(&policy.probs)
            .filter(|(&c, _)| c > 0.0)
            .map(|(c, p)| c * p.ln())
            .sum()
    }

    /// Objective of the softmax member with the given logits.
    pub fn logit_value(&self, logits: &[f64], epsilon_floor: f64) -> f64 {
        self.value(&self.member(logits, epsilon_floor).policy())
    }

    /// Analytic gradient with respect to the logits.
    pub fn logit_gradient(&self, logits: &[f64], epsilon_floor: f64) -> Vec<f64> {
        let na = self.n_actions;
        let mut grad = vec![0.0; logits.len()];
        let mut q = vec![0.0; na];
        for cell in 0..self.n_states * self.n_goals {
            let c = &self.weights[cell * na..(cell + 1) * na];
            cell_logit_gradient(c, &logits[cell * na..(cell + 1) * na], epsilon_floor, &mut q, &mut grad[cell * na..(cell + 1) * na]);
        }
        grad
    }

    fn member(&self, logits: &[f64], epsilon_floor: f64) -> SoftmaxPolicy {
        SoftmaxPolicy {
            n_states: self.n_states,
            n_goals: self.n_goals,
            n_actions: self.n_actions,
            epsilon_floor,
            logits: logits.to_vec(),
        }
    }
}

/// `d/dz_b sum_a c_a log pi_a = (1-eps) q_b (c_b/pi_b - sum_a c_a q_a / pi_a)`.
fn cell_logit_gradient(c: &[f64], z: &[f64], eps: f64, q: &mut [f64], out: &mut [f64]) {
    let na = c.len();
    softmax_into(z, q);
    let tau = eps / na as f64;
    let ratio = |a: usize| c[a] / ((1.0 - eps) * q[a] + tau);
    let mean: f64 = (0..na).map(|a| q[a] * ratio(a)).sum();
    for b in 0..na {
        out[b] = (1.0 - eps) * q[b] * (ratio(b) - mean);
    }
}

fn cell_value(c: &[f64], q: &[f64], eps: f64) -> f64 {
    let tau = eps / c.len() as f64;
    c.iter()
        .zip(q)
        .filter(|(&ci, _)| ci > 0.0)
        .map(|(ci, qi)| ci * ((1.0 - eps) * qi + tau).ln())
        .sum()
}

/// `(1/N) sum_i (U_i)_+ / alpha * log pi(a_i | s_i, g_i)` with sample weights in place of `1/N`.
pub fn weighted_mle_objective(sample: &WeightedSample, u_records: &[f64], alpha: f64, policy: &Policy) -> Result<f64> {
    let obj = MleObjective::new(sample, u_records, alpha, policy.n_states, policy.n_goals, policy.n_actions)?;
    Ok(obj.value(policy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFit {
    pub policy: Policy,
    pub softmax: SoftmaxPolicy,
    pub report: SolveReport,
    /// Every weight was zero; the policy is uniform.
    pub degenerate: bool,
}

/// Maximizes the weighted log-likelihood over the floored softmax class.
///
/// The problem separates over `(s, g)` cells. Each cell runs exponentiated-gradient
/// (natural-gradient) ascent on its logits from zero, with step halving whenever the
/// objective would decrease. Convergence is judged on the logit gradient of the
/// cell objective normalized by its total weight. Cells without weight keep zero logits.
pub fn fit_policy(
    sample: &WeightedSample,
    u_records: &[f64],
    alpha: f64,
    class: PolicyClass,
    n_states: usize,
    n_goals: usize,
    n_actions: usize,
) -> Result<PolicyFit> {
    let obj = MleObjective::new(sample, u_records, alpha, n_states, n_goals, n_actions)?;
    let na = n_actions;
    let eps = class.epsilon_floor;
    let mut member = SoftmaxPolicy::zeros(n_states, n_goals, n_actions, class);
    let n_cells = n_states * n_goals;

    struct Cell {
        id: usize,
        c: Vec<f64>,
        step: f64,
        value: f64,
        done: bool,
    }
    let mut cells: Vec<Cell> = (0..n_cells)
        .filter_map(|id| {
            let raw = &obj.weights[id * na..(id + 1) * na];
            let total: f64 = raw.iter().sum();
            (total > 0.0).then(|| Cell { id, c: raw.iter().map(|x| x / total).collect(), step: 1.0, value: 0.0, done: false })
        })
        .collect();
    if cells.is_empty() {
        let report = SolveReport::new(vec![0.0], 0.0, FIT_TOL, 0);
        return Ok(PolicyFit { policy: member.policy(), softmax: member, report, degenerate: true });
    }

    let mut q = vec![0.0; na];
    let mut q_try = vec![0.0; na];
    let mut z_try = vec![0.0; na];
    let mut grad = vec![0.0; na];
    let mut grad_try = vec![0.0; na];
    let uniform = vec![1.0 / na as f64; na];
    for cell in cells.iter_mut() {
        cell.value = cell_value(&cell.c, &uniform, eps);
    }
    let mut trace = vec![-obj.logit_value(&member.logits, eps)];
    let mut worst = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        worst = 0.0;
        let mut active = false;
        for cell in cells.iter_mut().filter(|c| !c.done) {
            let z = &mut member.logits[cell.id * na..(cell.id + 1) * na];
            cell_logit_gradient(&cell.c, z, eps, &mut q, &mut grad);
            let norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
            worst = worst.max(norm);
            if norm <= FIT_TOL {
                cell.done = true;
                continue;
            }
            active = true;
            let tau = eps / na as f64;
            loop {
                for a in 0..na {
                    // gradient with respect to the mixture weights q
                    let gq = (1.0 - eps) * cell.c[a] / ((1.0 - eps) * q[a] + tau);
                    z_try[a] = z[a] + cell.step * gq;
                }
                let top = z_try.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                z_try.iter_mut().for_each(|x| *x -= top);
                softmax_into(&z_try, &mut q_try);
                let v = cell_value(&cell.c, &q_try, eps);
                let slack = 64.0 * f64::EPSILON * (1.0 + cell.value.abs());
                // Below round-off the value cannot rank steps; fall back to the gradient.
                let accept = v > cell.value + slack
                    || (v >= cell.value - slack && {
                        cell_logit_gradient(&cell.c, &z_try, eps, &mut q_try, &mut grad_try);
                        grad_try.iter().fold(0.0_f64, |m, g| m.max(g.abs())) < norm
                    });
                if accept {
                    z.copy_from_slice(&z_try);
                    cell.value = v;
                    cell.step = (cell.step * 1.5).min(1e6);
                    break;
                }
                cell.step *= 0.5;
                if cell.step < 1e-12 {
                    cell.done = true;
                    break;
                }
            }
        }
        trace.push(-obj.logit_value(&member.logits, eps));
        if !active {
            break;
        }
    }
    let report = SolveReport::new(trace, worst, FIT_TOL, sweeps);
    Ok(PolicyFit { policy: member.policy(), softmax: member, report, degenerate: false })
}

/// Suboptimality of a learned policy against the exact optimum and the regularized optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suboptimality {
    pub j_opt: f64,
    pub j_reg_opt: f64,
    pub j_hat: f64,
    pub vs_opt: f64,
    pub vs_reg: f64,
    /// `E_{(s,g) ~ d*_alpha} TV(pi*_alpha, pi_hat)`.
    pub tv_to_reg_opt: f64,
}

pub fn evaluate_suboptimality(
    mdp: &GoalMdp,
    pi_hat: &Policy,
    oracle: &RegularizedSolution,
    j_opt: f64,
) -> Result<Suboptimality> {
    let j_hat = j_value(mdp, pi_hat)?;
    let reg_occ = occupancy_of_policy(mdp, &oracle.pi_star_alpha)?;
    let weights = state_goal_weights(&reg_occ, mdp.goal_dist());
    let tv = weighted_tv(&oracle.pi_star_alpha, pi_hat, &weights);
    Ok(Suboptimality {
        j_opt,
        j_reg_opt: oracle.j_reg_opt,
        j_hat,
        vs_opt: j_opt - j_hat,
        vs_reg: oracle.j_reg_opt - j_hat,
        tv_to_reg_opt: tv,
    })
}
