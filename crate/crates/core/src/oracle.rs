//! Ground truth for the regularized occupancy program.
//!
//! The primal `max_{d >= 0, flow} E_d[r] - alpha D_f(d || mu)` is solved by the
//! method of multipliers; the dual `min_{0 <= V <= v_max} L_alpha(V)` by
//! accelerated projected gradient. The two routes share nothing beyond the
//! problem data, so their agreement is a certificate.
//!
//! Value conventions: `L_alpha` is the alpha-scaled dual objective and
//! `L_alpha / alpha - alpha/2` is the Lagrangian dual value, which equals the
//! primal optimum at strong duality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{f_divergence, ChiSquareSpec};
use crate::error::{invalid, Result};
use crate::mdp::{
    build_shifted_advantage, concentrability, exact_optimal_policy, expected_reward, j_value, occupancy_of_policy,
    policy_from_occupancy, GoalMdp, OccupancyMeasure, Policy, ValueFn,
};
use crate::objective::{DualSum, Term};
use crate::optim::{minimize_box, nonneg_qp, BoxOptions, SolveReport};

pub const DUAL_TOL: f64 = 1e-11;
pub const DUAL_MAX_ITER: usize = 1_000_000;
const FEASIBILITY_TOL: f64 = 1e-12;
const MAX_OUTER: usize = 2_000;

/// Exact solution of the regularized program with its certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedSolution {
    pub alpha: f64,
    pub d_star_alpha: OccupancyMeasure,
    pub v_star_alpha: ValueFn,
    pub pi_star_alpha: Policy,
    pub primal_value: f64,
    pub dual_value: f64,
    pub duality_gap: f64,
    pub c_star_alpha: f64,
    pub j_reg_opt: f64,
    pub flow_residual: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub dual_report: SolveReport,
}

fn check_inputs(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64) -> Result<ChiSquareSpec> {
    mu.check_against(mdp)?;
    let spec = ChiSquareSpec::new(alpha)?;
    let joint = mu.joint(mdp.goal_dist());
    if joint.iter().any(|&m| !(m > 0.0)) {
        return invalid("behavior occupancy must be strictly positive on every (s, a, g)");
    }
    Ok(spec)
}

pub(crate) fn population_dual(mdp: &GoalMdp, mu: &OccupancyMeasure, spec: ChiSquareSpec) -> DualSum {
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let p = mdp.goal_dist();
    let mut init = vec![0.0; ns * ng];
    for s in 0..ns {
        for g in 0..ng {
            init[s * ng + g] = mdp.init_dist()[s] * p[g];
        }
    }
    let mut terms = Vec::with_capacity(ns * na * ng);
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.transition_row(s, a);
            for g in 0..ng {
                let weight = p[g] * mu.get(s, a, g);
                if weight == 0.0 {
                    continue;
                }
                let next = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &q)| q != 0.0)
                    .map(|(s2, &q)| (s2 * ng + g, q))
                    .collect();
                terms.push(Term { cell: s * ng + g, reward: mdp.reward(s, g), weight, next });
            }
        }
    }
    DualSum { spec, gamma: mdp.discount(), init, terms }
}

/// `L_alpha(V)` under exact knowledge of the MDP and `mu`.
pub fn dual_objective(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64, v: &ValueFn) -> Result<f64> {
    mu.check_against(mdp)?;
    let spec = ChiSquareSpec::new(alpha)?;
    Ok(population_dual(mdp, mu, spec).value(&v.v))
}

/// Analytic gradient of `L_alpha` with respect to the value table.
pub fn dual_gradient(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64, v: &ValueFn) -> Result<Vec<f64>> {
    mu.check_against(mdp)?;
    let spec = ChiSquareSpec::new(alpha)?;
    let sum = population_dual(mdp, mu, spec);
    let mut grad = vec![0.0; v.v.len()];
    sum.value_and_gradient(&v.v, &mut grad);
    Ok(grad)
}

pub(crate) struct SumObjective<'a>(pub &'a DualSum);

impl crate::optim::SmoothObjective for SumObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.0.value_and_gradient(x, grad)
    }
}

/// Floors zero rows of a diagonal majorizer so every coordinate can move.
pub(crate) fn floor_metric(mut d: Vec<f64>) -> Vec<f64> {
    let top = d.iter().copied().fold(0.0, f64::max).max(1e-300);
    for x in &mut d {
        *x = x.max(1e-12 * top);
    }
    d
}

/// Minimizes `L_alpha` over `[0, v_max]^{S x G}` with `v_max = 1/(1-gamma)`.
pub fn solve_dual(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64) -> Result<(ValueFn, SolveReport)> {
    solve_dual_with(mdp, mu, alpha, mdp.default_v_max(), BoxOptions { tol: DUAL_TOL, max_iter: DUAL_MAX_ITER })
}

pub fn solve_dual_with(
    mdp: &GoalMdp,
    mu: &OccupancyMeasure,
    alpha: f64,
    v_max: f64,
    opts: BoxOptions,
) -> Result<(ValueFn, SolveReport)> {
    let spec = check_inputs(mdp, mu, alpha)?;
    let sum = population_dual(mdp, mu, spec);
    let n = sum.n_cells();
    let metric = floor_metric(sum.diagonal_bound());
    let (v, report) = minimize_box(&SumObjective(&sum), &vec![0.0; n], &vec![0.0; n], &vec![v_max; n], &metric, opts);
    Ok((ValueFn::new(mdp.n_states(), mdp.n_goals(), v_max, v)?, report))
}

/// `d(s,a;g) = mu(s,a;g) g_*'(A_V(s,a;g))_+ = mu (U_V)_+ / alpha`, not renormalized.
pub fn recover_occupancy(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64, v: &ValueFn) -> Result<OccupancyMeasure> {
    mu.check_against(mdp)?;
    let spec = ChiSquareSpec::new(alpha)?;
    let u = build_shifted_advantage(mdp, v, alpha);
    let d = mu
        .d
        .iter()
        .zip(&u.u)
        .map(|(&m, &x)| m * spec.g_conjugate_plus_prime(x - alpha))
        .collect();
    OccupancyMeasure::new(mu.n_states, mu.n_actions, mu.n_goals, d)
}

/// Per-goal flow operator `C d = sum_a d(s,a) - gamma P' d` as an `S x SA` matrix.
fn flow_matrix(mdp: &GoalMdp) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut c = DMatrix::zeros(ns, ns * na);
    for s in 0..ns {
        for a in 0..na {
            let col = s * na + a;
            c[(s, col)] += 1.0;
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                c[(s2, col)] -= mdp.discount() * p;
            }
        }
    }
    c
}

struct GoalProblem {
    weight: f64,
    mu: DVector<f64>,
    reward: DVector<f64>,
    d: DVector<f64>,
    lambda: DVector<f64>,
}

/// Maximizes `E_d[r] - alpha D_f(d || mu)` over the flow polytope and certifies it with the dual.
pub fn solve_regularized_primal(
    mdp: &GoalMdp,
    mu: &OccupancyMeasure,
    alpha: f64,
) -> Result<(RegularizedSolution, SolveReport)> {
    let spec = check_inputs(mdp, mu, alpha)?;
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let n = ns * na;
    let gamma = mdp.discount();
    let c_mat = flow_matrix(mdp);
    let ctc = c_mat.transpose() * &c_mat;
    let b = DVector::from_iterator(ns, mdp.init_dist().iter().map(|r| (1.0 - gamma) * r));
    let ctb = c_mat.transpose() * &b;

    let mut goals: Vec<GoalProblem> = (0..ng)
        .map(|g| {
            let mu_g = DVector::from_iterator(n, (0..n).map(|i| mu.get(i / na, i % na, g)));
            let reward = DVector::from_iterator(n, (0..n).map(|i| mdp.reward(i / na, g)));
            GoalProblem { weight: mdp.goal_dist()[g], d: mu_g.clone(), mu: mu_g, reward, lambda: DVector::zeros(ns) }
        })
        .collect();

    // Penalty sized so the inner Hessian alpha/mu + c C'C starts near condition 1e6.
    let mu_max = goals.iter().map(|p| p.mu.max()).fold(0.0, f64::max);
    let c_norm = ctc.diagonal().max().max(1e-12);
    let mut penalty = 1e6 * alpha / (mu_max * c_norm);
    let penalty_cap = 1e10 * alpha / (mu_max * c_norm);

    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut outer = 0;
    while outer < MAX_OUTER {
        outer += 1;
        let mut bound = 0.0;
        let mut worst: f64 = 0.0;
        for prob in goals.iter_mut() {
            // min d'(alpha M^-1 + c C'C) d / 2 - (r + alpha - C'lambda + c C'b)' d
            let mut h = ctc.clone() * penalty;
            for i in 0..n {
                h[(i, i)] += alpha / prob.mu[i];
            }
            let lin = &prob.reward.add_scalar(alpha) - c_mat.transpose() * &prob.lambda + &ctb * penalty;
            prob.d = nonneg_qp(&h, &lin, &prob.d, 50 * n + 100)?;
            let viol = &c_mat * &prob.d - &b;
            let inner = 0.5 * prob.d.dot(&(&h * &prob.d)) - lin.dot(&prob.d);
            // Augmented-Lagrangian bound in the maximization sign, constants restored.
            let constant = 0.5 * alpha * prob.mu.sum() - prob.lambda.dot(&b) + 0.5 * penalty * b.dot(&b);
            bound += prob.weight * (-(inner) - constant);
            prob.lambda += &viol * penalty;
            worst = worst.max(viol.amax());
        }
        trace.push(bound);
        let improved = worst <= 0.25 * residual;
        residual = worst;
        if residual <= FEASIBILITY_TOL {
            break;
        }
        if !improved && penalty < penalty_cap {
            penalty *= 10.0;
        }
    }

    let mut d = OccupancyMeasure::zeros(ns, na, ng);
    let mut kkt: f64 = 0.0;
    for (g, prob) in goals.iter().enumerate() {
        for i in 0..n {
            d.d[i * ng + g] = prob.d[i];
        }
        // grad of the Lagrangian in the maximization sign at the final multipliers
        let grad = &prob.reward.add_scalar(alpha)
            - prob.d.component_div(&prob.mu) * alpha
            - c_mat.transpose() * &prob.lambda;
        for i in 0..n {
            kkt = kkt.max((prob.d[i] - (prob.d[i] + grad[i]).max(0.0)).abs());
        }
    }
    let flow_residual = d.flow_residual(mdp);
    let primal_value = expected_reward(mdp, &d) - alpha * f_divergence(&d, mu, mdp.goal_dist())?;
    let primal_report = SolveReport {
        objective_trace: trace,
        final_gradient_norm: kkt.max(flow_residual),
        tolerance_used: 1e-8,
        converged: kkt <= 1e-8 && flow_residual <= 1e-10,
        iterations: outer,
    };

    let (v_star, dual_report) = solve_dual(mdp, mu, alpha)?;
    let dual_value = dual_value_from(population_dual(mdp, mu, spec).value(&v_star.v), alpha);
    let pi_star_alpha = policy_from_occupancy(&d, na)?;
    let c_star_alpha = concentrability(&occupancy_of_policy(mdp, &pi_star_alpha)?, mu, mdp.goal_dist())?;
    let j_reg_opt = j_value(mdp, &pi_star_alpha)?;
    let solution = RegularizedSolution {
        alpha,
        d_star_alpha: d,
        v_star_alpha: v_star,
        pi_star_alpha,
        primal_value,
        dual_value,
        duality_gap: dual_value - primal_value,
        c_star_alpha,
        j_reg_opt,
        flow_residual,
        kkt_residual: kkt,
        iterations: outer + dual_report.iterations,
        dual_report,
    };
    Ok((solution, primal_report))
}

/// Lagrangian dual value from the alpha-scaled objective.
pub fn dual_value_from(l_alpha: f64, alpha: f64) -> f64 {
    l_alpha / alpha - 0.5 * alpha
}

/// `(J(pi*) - J(pi*_alpha), alpha (C*_alpha)^2 / 2)`.
pub fn regularization_bias(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64) -> Result<(f64, f64)> {
    let (sol, _) = solve_regularized_primal(mdp, mu, alpha)?;
    let (_, j_opt) = exact_optimal_policy(mdp)?;
    Ok(bias_terms(&sol, j_opt))
}

pub fn bias_terms(sol: &RegularizedSolution, j_opt: f64) -> (f64, f64) {
    (j_opt - sol.j_reg_opt, 0.5 * sol.alpha * sol.c_star_alpha * sol.c_star_alpha)
}

/// `|| (U_V)_+ - (U_W)_+ ||_{2,mu}` over the joint `mu(s,a,g) = p(g) mu(s,a;g)`.
pub fn positive_part_distance(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64, v: &ValueFn, w: &ValueFn) -> f64 {
    let uv = build_shifted_advantage(mdp, v, alpha).positive_part();
    let uw = build_shifted_advantage(mdp, w, alpha).positive_part();
    let joint = mu.joint(mdp.goal_dist());
    joint
        .iter()
        .zip(uv.iter().zip(&uw))
        .map(|(m, (a, b))| m * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}
