//! The dual objective `L(V) = alpha (1-gamma) E_init[V] + alpha E_w[g_*+(r + gamma T V - V)]`
//! as a weighted finite sum. The population objective, the sample-bootstrap
//! estimator and the model-based estimator differ only in their terms.

use crate::divergence::ChiSquareSpec;

/// One weighted term of the advantage sum; `next` is the successor distribution
/// over value cells `s' * G + g`.
#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub cell: usize,
    pub reward: f64,
    pub weight: f64,
    pub next: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct DualSum {
    pub spec: ChiSquareSpec,
    pub gamma: f64,
    /// Initial-pair weights per value cell, summing to 1.
    pub init: Vec<f64>,
    pub terms: Vec<Term>,
}

impl DualSum {
    pub fn n_cells(&self) -> usize {
        self.init.len()
    }

    #[inline]
    pub fn advantage(&self, term: &Term, v: &[f64]) -> f64 {
        let next: f64 = term.next.iter().map(|&(c, p)| p * v[c]).sum();
        term.reward + self.gamma * next - v[term.cell]
    }

    pub fn init_term(&self, v: &[f64]) -> f64 {
        let a = self.spec.alpha();
        a * (1.0 - self.gamma) * self.init.iter().zip(v).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn advantage_term(&self, v: &[f64]) -> f64 {
        let a = self.spec.alpha();
        self.terms
            .iter()
            .map(|t| t.weight * a * self.spec.g_conjugate_plus(self.advantage(t, v)))
            .sum()
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        self.init_term(v) + self.advantage_term(v)
    }

    pub fn value_and_gradient(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        let a = self.spec.alpha();
        let lin = a * (1.0 - self.gamma);
        for (g, w) in grad.iter_mut().zip(&self.init) {
            *g = lin * w;
        }
        let mut total = self.init_term(v);
        for t in &self.terms {
            let shifted = (self.advantage(t, v) + a).max(0.0);
            if shifted == 0.0 {
                continue;
            }
            total += t.weight * 0.5 * shifted * shifted;
            let c = t.weight * shifted;
            grad[t.cell] -= c;
            for &(cell, p) in &t.next {
                grad[cell] += self.gamma * c * p;
            }
        }
        total
    }

    /// Sparse direction `gamma * next - e_cell` of one term.
    pub fn direction(&self, t: &Term) -> Vec<(usize, f64)> {
        let mut dir: Vec<(usize, f64)> = t.next.iter().map(|&(c, p)| (c, self.gamma * p)).collect();
        match dir.iter_mut().find(|(c, _)| *c == t.cell) {
            Some(entry) => entry.1 -= 1.0,
            None => dir.push((t.cell, -1.0)),
        }
        dir
    }

    /// Gershgorin diagonal majorizer of the largest possible Hessian
    /// `sum_t w_t dir_t dir_t'`.
    pub fn diagonal_bound(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_cells()];
        for t in &self.terms {
            let dir = self.direction(t);
            let l1: f64 = dir.iter().map(|(_, x)| x.abs()).sum();
            for (c, x) in dir {
                d[c] += t.weight * x.abs() * l1;
            }
        }
        d
    }
}
