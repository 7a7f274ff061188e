//! V-learning: minimize an empirical version of the dual objective and emit the
//! shifted advantages `U = r + gamma T V - V + alpha` on dataset records.
//!
//! Two estimators of `T V` are supported. The sample bootstrap `V(s')` is
//! unbiased only for deterministic dynamics; the model-based one plugs in a
//! maximum-likelihood transition table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{InitDataset, OfflineDataset, Transition};
use crate::divergence::ChiSquareSpec;
use crate::error::{dim, invalid, Result};
use crate::mdp::{GoalMdp, OccupancyMeasure, ValueFn};
use crate::objective::{DualSum, Term};
use crate::optim::{minimize_box, BoxOptions, SmoothObjective, SolveReport};
use crate::oracle::floor_metric;

pub const FIT_TOL: f64 = 1e-11;
pub const FIT_MAX_ITER: usize = 200_000;

/// Transition records with probability weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub records: Vec<Transition>,
    pub weights: Vec<f64>,
}

impl WeightedSample {
    pub fn from_dataset(data: &OfflineDataset) -> Result<Self> {
        if data.is_empty() {
            return invalid("offline dataset is empty");
        }
        let w = 1.0 / data.len() as f64;
        Ok(Self { records: data.records.clone(), weights: vec![w; data.len()] })
    }

    /// Every `(s, a, s', g)` with weight `p(g) mu(s,a;g) P(s'|s,a)`: the population limit.
    pub fn exhaustive(mdp: &GoalMdp, mu: &OccupancyMeasure) -> Result<Self> {
        mu.check_against(mdp)?;
        let joint = mu.joint(mdp.goal_dist());
        let mut records = Vec::new();
        let mut weights = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                for g in 0..mdp.n_goals() {
                    let m = joint[mu.index(s, a, g)];
                    if m == 0.0 {
                        continue;
                    }
                    for (s_next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            records.push(Transition { s, a, r: mdp.reward(s, g), s_next, g });
                            weights.push(m * p);
                        }
                    }
                }
            }
        }
        Ok(Self { records, weights })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Initial pairs with probability weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedInit {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl WeightedInit {
    pub fn from_dataset(data: &InitDataset) -> Result<Self> {
        if data.is_empty() {
            return invalid("initial-pair dataset is empty");
        }
        let w = 1.0 / data.len() as f64;
        Ok(Self { pairs: data.records.iter().map(|p| (p.s0, p.g0)).collect(), weights: vec![w; data.len()] })
    }

    /// `rho(s) p(g)` over all pairs.
    pub fn exhaustive(mdp: &GoalMdp) -> Self {
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        for s in 0..mdp.n_states() {
            for g in 0..mdp.n_goals() {
                pairs.push((s, g));
                weights.push(mdp.init_dist()[s] * mdp.goal_dist()[g]);
            }
        }
        Self { pairs, weights }
    }
}

/// Tabular maximum-likelihood transition estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub n_states: usize,
    pub n_actions: usize,
    pub p_hat: Vec<f64>,
}

impl TransitionModel {
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p_hat[start..start + self.n_states]
    }

    pub fn exact(mdp: &GoalMdp) -> Self {
        Self { n_states: mdp.n_states(), n_actions: mdp.n_actions(), p_hat: mdp.transition().to_vec() }
    }
}

/// `count(s,a,s') / count(s,a)`; unvisited pairs get the uniform row.
pub fn fit_transition_mle(records: &[Transition], n_states: usize, n_actions: usize) -> Result<TransitionModel> {
    let mut counts = vec![0u64; n_states * n_actions * n_states];
    for t in records {
        if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
            return invalid("record index out of range for the model");
        }
        counts[(t.s * n_actions + t.a) * n_states + t.s_next] += 1;
    }
    let mut p_hat = vec![0.0; counts.len()];
    for (row, chunk) in counts.chunks(n_states).enumerate() {
        let total: u64 = chunk.iter().sum();
        let out = &mut p_hat[row * n_states..(row + 1) * n_states];
        if total == 0 {
            out.fill(1.0 / n_states as f64);
        } else {
            for (o, &c) in out.iter_mut().zip(chunk) {
                *o = c as f64 / total as f64;
            }
        }
    }
    Ok(TransitionModel { n_states, n_actions, p_hat })
}

/// `E_{(s,a) ~ mu} TV(P_hat(.|s,a), P(.|s,a))^2` with `mu` marginalized over goals.
pub fn model_tv_error(model: &TransitionModel, mdp: &GoalMdp, mu: &OccupancyMeasure) -> f64 {
    let joint = mu.joint(mdp.goal_dist());
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let weight: f64 = (0..mdp.n_goals()).map(|g| joint[mu.index(s, a, g)]).sum();
            let tv = 0.5
                * model
                    .row(s, a)
                    .iter()
                    .zip(mdp.transition_row(s, a))
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>();
            total += weight * tv * tv;
        }
    }
    total
}

/// Value function class: tabular, or `V = Phi theta` with `theta in [0, v_max]^k`.
///
/// Linear features must be nonnegative with row sums at most one, so realized
/// values stay in `[0, v_max]` without clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValueClass {
    Tabular { n_states: usize, n_goals: usize, v_max: f64 },
    Linear { n_states: usize, n_goals: usize, v_max: f64, k: usize, features: Vec<f64> },
}

impl ValueClass {
    pub fn tabular(n_states: usize, n_goals: usize, v_max: f64) -> Result<Self> {
        if !(v_max > 0.0) {
            return invalid("v_max must be positive");
        }
        Ok(Self::Tabular { n_states, n_goals, v_max })
    }

    pub fn linear(n_states: usize, n_goals: usize, v_max: f64, k: usize, features: Vec<f64>) -> Result<Self> {
        if !(v_max > 0.0) {
            return invalid("v_max must be positive");
        }
        if k == 0 || features.len() != n_states * n_goals * k {
            return dim("feature table must be (S*G) x k");
        }
        for row in features.chunks(k) {
            if row.iter().any(|&x| !(x >= 0.0)) || row.iter().sum::<f64>() > 1.0 + 1e-12 {
                return invalid("features must be nonnegative with row sums at most one");
            }
        }
        Ok(Self::Linear { n_states, n_goals, v_max, k, features })
    }

    pub fn n_states(&self) -> usize {
        match self {
            Self::Tabular { n_states, .. } | Self::Linear { n_states, .. } => *n_states,
        }
    }

    pub fn n_goals(&self) -> usize {
        match self {
            Self::Tabular { n_goals, .. } | Self::Linear { n_goals, .. } => *n_goals,
        }
    }

    pub fn v_max(&self) -> f64 {
        match self {
            Self::Tabular { v_max, .. } | Self::Linear { v_max, .. } => *v_max,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Tabular { n_states, n_goals, .. } => n_states * n_goals,
            Self::Linear { k, .. } => *k,
        }
    }

    pub fn realize(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Self::Tabular { .. } => theta.to_vec(),
            Self::Linear { k, features, .. } => features
                .chunks(*k)
                .map(|row| row.iter().zip(theta).map(|(f, t)| f * t).sum::<f64>().clamp(0.0, self.v_max()))
                .collect(),
        }
    }

    /// `Phi' grad_V`.
    fn pull_back(&self, grad_v: &[f64], out: &mut [f64]) {
        match self {
            Self::Tabular { .. } => out.copy_from_slice(grad_v),
            Self::Linear { k, features, .. } => {
                out.fill(0.0);
                for (row, &gv) in features.chunks(*k).zip(grad_v) {
                    if gv == 0.0 {
                        continue;
                    }
                    for (o, f) in out.iter_mut().zip(row) {
                        *o += f * gv;
                    }
                }
            }
        }
    }

    fn metric(&self, sum: &DualSum) -> Vec<f64> {
        match self {
            Self::Tabular { .. } => floor_metric(sum.diagonal_bound()),
            Self::Linear { k, features, .. } => {
                let mut d = vec![0.0; *k];
                let mut u = vec![0.0; *k];
                for t in &sum.terms {
                    u.fill(0.0);
                    for (cell, x) in sum.direction(t) {
                        for (uj, f) in u.iter_mut().zip(&features[cell * k..(cell + 1) * k]) {
                            *uj += f * x.abs();
                        }
                    }
                    let l1: f64 = u.iter().sum();
                    for (dj, uj) in d.iter_mut().zip(&u) {
                        *dj += t.weight * uj * l1;
                    }
                }
                floor_metric(d)
            }
        }
    }
}

/// An empirical dual objective over the parameters of a value class.
#[derive(Debug, Clone)]
pub struct VObjective {
    sum: DualSum,
    class: ValueClass,
    /// Term index of every sample record.
    record_term: Vec<usize>,
}

fn init_weights(init: &WeightedInit, n_states: usize, n_goals: usize) -> Result<Vec<f64>> {
    let mut w = vec![0.0; n_states * n_goals];
    for (&(s, g), &x) in init.pairs.iter().zip(&init.weights) {
        if s >= n_states || g >= n_goals {
            return invalid("initial pair out of range");
        }
        w[s * n_goals + g] += x;
    }
    Ok(w)
}

fn check_record(t: &Transition, n_states: usize, n_goals: usize) -> Result<()> {
    if t.s >= n_states || t.s_next >= n_states || t.g >= n_goals {
        return invalid("record index out of range for the value class");
    }
    Ok(())
}

impl VObjective {
    /// Sample-bootstrap estimator: `T V(s,a;g) ~ V(s';g)`.
    pub fn deterministic(
        sample: &WeightedSample,
        init: &WeightedInit,
        gamma: f64,
        alpha: f64,
        class: &ValueClass,
    ) -> Result<Self> {
        let spec = ChiSquareSpec::new(alpha)?;
        if sample.is_empty() || init.pairs.is_empty() {
            return invalid("datasets must be non-empty");
        }
        let (ns, ng) = (class.n_states(), class.n_goals());
        let mut index: HashMap<(usize, usize, usize, u64), usize> = HashMap::new();
        let mut terms: Vec<Term> = Vec::new();
        let mut record_term = Vec::with_capacity(sample.len());
        for (t, &w) in sample.records.iter().zip(&sample.weights) {
            check_record(t, ns, ng)?;
            let key = (t.s, t.s_next, t.g, t.r.to_bits());
            let id = *index.entry(key).or_insert_with(|| {
                terms.push(Term { cell: t.s * ng + t.g, reward: t.r, weight: 0.0, next: vec![(t.s_next * ng + t.g, 1.0)] });
                terms.len() - 1
            });
            terms[id].weight += w;
            record_term.push(id);
        }
        let sum = DualSum { spec, gamma, init: init_weights(init, ns, ng)?, terms };
        Ok(Self { sum, class: class.clone(), record_term })
    }

    /// Model-based estimator: `T V(s,a;g) = E_{s' ~ P_hat(.|s,a)} V(s';g)`.
    pub fn model_based(
        sample: &WeightedSample,
        init: &WeightedInit,
        gamma: f64,
        alpha: f64,
        class: &ValueClass,
        model: &TransitionModel,
    ) -> Result<Self> {
        let spec = ChiSquareSpec::new(alpha)?;
        if sample.is_empty() || init.pairs.is_empty() {
            return invalid("datasets must be non-empty");
        }
        let (ns, ng) = (class.n_states(), class.n_goals());
        if model.n_states != ns {
            return dim("model and value class disagree on the state count");
        }
        let mut index: HashMap<(usize, usize, usize, u64), usize> = HashMap::new();
        let mut terms: Vec<Term> = Vec::new();
        let mut record_term = Vec::with_capacity(sample.len());
        for (t, &w) in sample.records.iter().zip(&sample.weights) {
            check_record(t, ns, ng)?;
            if t.a >= model.n_actions {
                return invalid("record action out of range for the model");
            }
            let key = (t.s, t.a, t.g, t.r.to_bits());
            let id = *index.entry(key).or_insert_with(|| {
                let next = model
                    .row(t.s, t.a)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(s2, &p)| (s2 * ng + t.g, p))
                    .collect();
                terms.push(Term { cell: t.s * ng + t.g, reward: t.r, weight: 0.0, next });
                terms.len() - 1
            });
            terms[id].weight += w;
            record_term.push(id);
        }
        let sum = DualSum { spec, gamma, init: init_weights(init, ns, ng)?, terms };
        Ok(Self { sum, class: class.clone(), record_term })
    }

    pub fn class(&self) -> &ValueClass {
        &self.class
    }

    pub fn value_of(&self, v: &ValueFn) -> f64 {
        self.sum.value(&v.v)
    }

    /// Initial-state part `alpha (1-gamma) E_init[V]`.
    pub fn init_part(&self, v: &ValueFn) -> f64 {
        self.sum.init_term(&v.v)
    }

    /// Advantage part `alpha E[g_*+(...)]`.
    pub fn advantage_part(&self, v: &ValueFn) -> f64 {
        self.sum.advantage_term(&v.v)
    }

    /// Objective as a function of class parameters.
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.sum.value(&self.class.realize(theta))
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.value_and_gradient(theta, &mut out);
        out
    }

    /// `U - alpha` per sample record; the same quantity enters `g_*+` in the objective.
    pub fn record_advantages(&self, v: &[f64]) -> Vec<f64> {
        let per_term: Vec<f64> = self.sum.terms.iter().map(|t| self.sum.advantage(t, v)).collect();
        self.record_term.iter().map(|&i| per_term[i]).collect()
    }

    fn fit(&self) -> Result<VFit> {
        let n = self.class.n_params();
        let v_max = self.class.v_max();
        let metric = self.class.metric(&self.sum);
        let (theta, report) = minimize_box(
            self,
            &vec![0.0; n],
            &vec![0.0; n],
            &vec![v_max; n],
            &metric,
            BoxOptions { tol: FIT_TOL, max_iter: FIT_MAX_ITER },
        );
        let v = ValueFn::new(self.class.n_states(), self.class.n_goals(), v_max, self.class.realize(&theta))?;
        let alpha = self.sum.spec.alpha();
        let u = self.record_advantages(&v.v).into_iter().map(|x| x + alpha).collect();
        Ok(VFit { value: v, params: theta, advantages: RecordAdvantage { alpha, u }, report })
    }
}

impl SmoothObjective for VObjective {
    fn value(&self, x: &[f64]) -> f64 {
        VObjective::value(self, x)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.class.realize(x);
        let mut gv = vec![0.0; v.len()];
        let val = self.sum.value_and_gradient(&v, &mut gv);
        self.class.pull_back(&gv, grad);
        val
    }
}

/// Shifted advantages `U_i` materialized per dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordAdvantage {
    pub alpha: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VFit {
    pub value: ValueFn,
    pub params: Vec<f64>,
    /// `U` on the records the objective was built from.
    pub advantages: RecordAdvantage,
    pub report: SolveReport,
}

pub fn empirical_dual_deterministic(
    sample: &WeightedSample,
    init: &WeightedInit,
    gamma: f64,
    alpha: f64,
    v: &ValueFn,
) -> Result<f64> {
    let class = ValueClass::tabular(v.n_states, v.n_goals, v.v_max)?;
    Ok(VObjective::deterministic(sample, init, gamma, alpha, &class)?.value_of(v))
}

pub fn empirical_dual_stochastic(
    sample: &WeightedSample,
    init: &WeightedInit,
    gamma: f64,
    alpha: f64,
    model: &TransitionModel,
    v: &ValueFn,
) -> Result<f64> {
    let class = ValueClass::tabular(v.n_states, v.n_goals, v.v_max)?;
    Ok(VObjective::model_based(sample, init, gamma, alpha, &class, model)?.value_of(v))
}

pub fn fit_v_deterministic(
    sample: &WeightedSample,
    init: &WeightedInit,
    gamma: f64,
    alpha: f64,
    class: &ValueClass,
) -> Result<VFit> {
    VObjective::deterministic(sample, init, gamma, alpha, class)?.fit()
}

pub fn fit_v_stochastic(
    sample: &WeightedSample,
    init: &WeightedInit,
    gamma: f64,
    alpha: f64,
    class: &ValueClass,
    model: &TransitionModel,
) -> Result<VFit> {
    VObjective::model_based(sample, init, gamma, alpha, class, model)?.fit()
}

/// `U_i = r_i + gamma V(s'_i; g_i) - V(s_i; g_i) + alpha` on arbitrary records.
pub fn advantages_deterministic(records: &[Transition], gamma: f64, alpha: f64, v: &ValueFn) -> RecordAdvantage {
    let u = records
        .iter()
        .map(|t| t.r + gamma * v.get(t.s_next, t.g) - v.get(t.s, t.g) + alpha)
        .collect();
    RecordAdvantage { alpha, u }
}

/// `U_i = r_i + gamma (T_hat V)(s_i, a_i; g_i) - V(s_i; g_i) + alpha` on arbitrary records.
pub fn advantages_model_based(
    records: &[Transition],
    gamma: f64,
    alpha: f64,
    model: &TransitionModel,
    v: &ValueFn,
) -> RecordAdvantage {
    let u = records
        .iter()
        .map(|t| {
            let tv: f64 = model.row(t.s, t.a).iter().enumerate().map(|(s2, p)| p * v.get(s2, t.g)).sum();
            t.r + gamma * tv - v.get(t.s, t.g) + alpha
        })
        .collect();
    RecordAdvantage { alpha, u }
}
