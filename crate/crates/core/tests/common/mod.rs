//! Reference computations that share no code path with the library solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpflow_core::mdp::{GoalMdp, OccupancyMeasure, Policy, ValueFn};

/// Random goal MDP with dense positive `rho`, `p`, and transition rows that keep
/// some zeros, plus an epsilon-soft random behavior (every probability >= 0.05).
pub fn random_instance(seed: u64, max_states: usize, max_actions: usize, max_goals: usize, gamma: f64) -> (GoalMdp, Policy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.gen_range(2..=max_states);
    let na = rng.gen_range(2..=max_actions);
    let ng = rng.gen_range(1..=max_goals);
    let mut p = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let mut row: Vec<f64> = (0..ns).map(|_| if rng.gen_bool(0.35) { 0.0 } else { rng.gen_range(0.05..1.0) }).collect();
        if row.iter().all(|&x| x == 0.0) {
            row[rng.gen_range(0..ns)] = 1.0;
        }
        let total: f64 = row.iter().sum();
        p.extend(row.iter().map(|x| x / total));
    }
    let r: Vec<f64> = (0..ns * ng).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
    let rho = normalized((0..ns).map(|_| rng.gen_range(0.1..1.0)).collect());
    let goals = normalized((0..ng).map(|_| rng.gen_range(0.1..1.0)).collect());
    let mdp = GoalMdp::new(ns, na, ng, gamma, p, r, rho, goals).unwrap();
    let mut probs = Vec::with_capacity(ns * ng * na);
    for _ in 0..ns * ng {
        let raw = normalized((0..na).map(|_| rng.gen_range(0.0..1.0)).collect());
        probs.extend(raw.iter().map(|x| 0.05 + (1.0 - 0.05 * na as f64) * x));
    }
    let behavior = Policy::new(ns, ng, na, probs).unwrap();
    (mdp, behavior)
}

pub fn normalized(v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

/// `(1-gamma) sum_{t<horizon} gamma^t Pr(s_t = s, a_t = a)` by forward propagation.
pub fn power_series_occupancy(mdp: &GoalMdp, policy: &Policy, horizon: usize) -> Vec<f64> {
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let gamma = mdp.discount();
    let mut out = vec![0.0; ns * na * ng];
    for g in 0..ng {
        let mut state = mdp.init_dist().to_vec();
        let mut weight = 1.0 - gamma;
        for _ in 0..horizon {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let sa = state[s] * policy.prob(s, g, a);
                    out[(s * na + a) * ng + g] += weight * sa;
                    for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                        next[s2] += sa * p;
                    }
                }
            }
            state = next;
            weight *= gamma;
        }
    }
    out
}

/// Monte Carlo estimate of `E[(1-gamma) sum_t gamma^t r(s_t; g)]` and its standard error.
pub fn monte_carlo_j(mdp: &GoalMdp, policy: &Policy, episodes: usize, horizon: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = WeightedIndex::new(mdp.init_dist()).unwrap();
    let goals = WeightedIndex::new(mdp.goal_dist()).unwrap();
    let gamma = mdp.discount();
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut s = init.sample(&mut rng);
        let g = goals.sample(&mut rng);
        let mut ret = 0.0;
        let mut disc = 1.0 - gamma;
        for _ in 0..horizon {
            ret += disc * mdp.reward(s, g);
            let a = WeightedIndex::new(policy.row(s, g)).unwrap().sample(&mut rng);
            s = WeightedIndex::new(mdp.transition_row(s, a)).unwrap().sample(&mut rng);
            disc *= gamma;
        }
        sum += ret;
        sq += ret * ret;
    }
    let n = episodes as f64;
    let mean = sum / n;
    (mean, ((sq / n - mean * mean) / (n - 1.0)).max(0.0).sqrt())
}

/// `g_*+(y)` from its definition: `sup_{x >= 0} (x y - alpha (x-1)^2 / 2)` minus `min g_*`,
/// zero where the unconstrained maximizer is negative.
pub fn g_plus_by_sup(alpha: f64, y: f64) -> f64 {
    let x = 1.0 + y / alpha;
    if x < 0.0 {
        return 0.0;
    }
    let g_star = x * y - alpha * (x - 1.0) * (x - 1.0) / 2.0;
    g_star + alpha / 2.0
}

/// `alpha ((1-gamma) E_{rho,p} V + sum p mu g_*+(A_V))`, term by term.
pub fn dual_by_definition(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64, v: &ValueFn) -> f64 {
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let gamma = mdp.discount();
    let mut init = 0.0;
    let mut adv = 0.0;
    for g in 0..ng {
        let pg = mdp.goal_dist()[g];
        for s in 0..ns {
            init += mdp.init_dist()[s] * pg * v.get(s, g);
            for a in 0..na {
                let tv: f64 = mdp.transition_row(s, a).iter().enumerate().map(|(s2, p)| p * v.get(s2, g)).sum();
                let a_v = mdp.reward(s, g) + gamma * tv - v.get(s, g);
                adv += pg * mu.get(s, a, g) * g_plus_by_sup(alpha, a_v);
            }
        }
    }
    alpha * ((1.0 - gamma) * init + adv)
}

/// Flow matrix `C[s', (s,a)] = 1{s = s'} - gamma P(s'|s,a)`.
fn flow(mdp: &GoalMdp) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut c = DMatrix::zeros(ns, ns * na);
    for s in 0..ns {
        for a in 0..na {
            c[(s, s * na + a)] += 1.0;
            for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                c[(s2, s * na + a)] -= mdp.discount() * p;
            }
        }
    }
    c
}

/// Maximizer of `E_d[r] - alpha D_f(d || mu)` over `{d >= 0, flow}`, by a textbook primal
/// active-set method per goal started from the feasible point `mu`.
///
/// Returns `(d in occupancy layout, primal value)`. Panics if KKT conditions fail.
pub fn active_set_primal(mdp: &GoalMdp, mu: &OccupancyMeasure, alpha: f64) -> (Vec<f64>, f64) {
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let n = ns * na;
    let c = flow(mdp);
    let b = DVector::from_iterator(ns, mdp.init_dist().iter().map(|r| (1.0 - mdp.discount()) * r));
    let mut out = vec![0.0; n * ng];
    let mut value = 0.0;
    for g in 0..ng {
        let m: Vec<f64> = (0..n).map(|i| mu.get(i / na, i % na, g)).collect();
        let r: Vec<f64> = (0..n).map(|i| mdp.reward(i / na, g)).collect();
        // minimize sum alpha (d-m)^2 / (2m) - r d  =>  H = diag(alpha/m), linear term -(r + alpha)
        let h: Vec<f64> = m.iter().map(|x| alpha / x).collect();
        let lin: Vec<f64> = r.iter().map(|x| x + alpha).collect();
        let mut d = m.clone();
        let mut at_zero = vec![false; n];
        let mut solved = false;
        for _ in 0..10_000 {
            let free: Vec<usize> = (0..n).filter(|&i| !at_zero[i]).collect();
            let k = free.len();
            // KKT system [H_F  -C_F^T; C_F 0] [x; lambda] = [lin_F; b]
            let mut kkt = DMatrix::zeros(k + ns, k + ns);
            let mut rhs = DVector::zeros(k + ns);
            for (j, &i) in free.iter().enumerate() {
                kkt[(j, j)] = h[i];
                rhs[j] = lin[i];
                for s in 0..ns {
                    kkt[(j, k + s)] = -c[(s, i)];
                    kkt[(k + s, j)] = c[(s, i)];
                }
            }
            for s in 0..ns {
                rhs[k + s] = b[s];
            }
            let sol = kkt.lu().solve(&rhs).expect("singular KKT system");
            let target: Vec<f64> = {
                let mut t = vec![0.0; n];
                for (j, &i) in free.iter().enumerate() {
                    t[i] = sol[j];
                }
                t
            };
            let lambda = sol.rows(k, ns).into_owned();
            let step: Vec<f64> = (0..n).map(|i| target[i] - d[i]).collect();
            if step.iter().all(|x| x.abs() <= 1e-15) || step.iter().zip(&d).all(|(p, x)| *x + p >= 0.0) {
                d = target.iter().map(|x| x.max(0.0)).collect();
                // multipliers of the bounds held at zero
                let ctl = c.transpose() * &lambda;
                let worst = (0..n)
                    .filter(|&i| at_zero[i])
                    .map(|i| (i, h[i] * d[i] - lin[i] - ctl[i]))
                    .min_by(|x, y| x.1.total_cmp(&y.1));
                match worst {
                    Some((i, nu)) if nu < -1e-13 => at_zero[i] = false,
                    _ => {
                        solved = true;
                        break;
                    }
                }
                continue;
            }
            // longest feasible step toward the equality-constrained minimizer
            let mut t = 1.0;
            let mut block = None;
            for i in 0..n {
                if step[i] < 0.0 && !at_zero[i] {
                    let ti = -d[i] / step[i];
                    if ti < t {
                        t = ti;
                        block = Some(i);
                    }
                }
            }
            for i in 0..n {
                d[i] += t * step[i];
            }
            if let Some(i) = block {
                d[i] = 0.0;
                at_zero[i] = true;
            }
        }
        assert!(solved, "active-set reference did not terminate");
        let res = &c * DVector::from_column_slice(&d) - &b;
        assert!(res.amax() < 1e-12, "reference solution violates flow by {}", res.amax());
        for i in 0..n {
            out[i * ng + g] = d[i];
            value += mdp.goal_dist()[g] * (r[i] * d[i] - alpha * m[i] * 0.5 * (d[i] / m[i] - 1.0).powi(2));
        }
    }
    (out, value)
}

/// Maximizer of `sum_a c_a log pi_a` over `pi_a >= eps / A`, `sum pi = 1` by water-filling.
pub fn water_filling(c: &[f64], eps: f64) -> Vec<f64> {
    let na = c.len();
    let tau = eps / na as f64;
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / na as f64; na];
    }
    let mut floored = vec![false; na];
    loop {
        let free_mass: f64 = (0..na).filter(|&a| !floored[a]).map(|a| c[a]).sum();
        let budget = 1.0 - tau * floored.iter().filter(|&&f| f).count() as f64;
        let lambda = free_mass / budget;
        let mut changed = false;
        for a in 0..na {
            if !floored[a] && c[a] / lambda < tau {
                floored[a] = true;
                changed = true;
            }
        }
        if !changed {
            return (0..na).map(|a| if floored[a] { tau } else { c[a] / lambda }).collect();
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central finite-difference gradient.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, x| m.max(x.abs()));
    max_abs_diff(a, b) / scale
}
