//! Numerical kernels shared by the oracle and the learners.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest objective trace kept in a report; longer runs are thinned evenly.
const TRACE_POINTS: usize = 512;

/// Outcome of an iterative solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective_trace: Vec<f64>,
    pub final_gradient_norm: f64,
    pub tolerance_used: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl SolveReport {
    pub(crate) fn new(trace: Vec<f64>, grad_norm: f64, tol: f64, iterations: usize) -> Self {
        Self {
            objective_trace: thin(trace),
            final_gradient_norm: grad_norm,
            tolerance_used: tol,
            converged: grad_norm <= tol,
            iterations,
        }
    }
}

fn thin(trace: Vec<f64>) -> Vec<f64> {
    if trace.len() <= TRACE_POINTS {
        return trace;
    }
    let last = trace.len() - 1;
    (0..TRACE_POINTS).map(|i| trace[i * last / (TRACE_POINTS - 1)]).collect()
}

/// A differentiable objective over a flat parameter vector.
pub trait SmoothObjective {
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct BoxOptions {
    pub tol: f64,
    pub max_iter: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(lo, hi);
    }
}

/// `|| D (x - P(x - D^{-1} grad)) ||_inf`: zero exactly at box-KKT points.
pub fn gradient_mapping_norm(x: &[f64], grad: &[f64], metric: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(grad)
        .zip(metric)
        .zip(lower.iter().zip(upper))
        .map(|(((&xi, &gi), &di), (&lo, &hi))| {
            let stepped = (xi - gi / di).clamp(lo, hi);
            (di * (xi - stepped)).abs()
        })
        .fold(0.0, f64::max)
}

/// Accelerated projected gradient descent over a box.
///
/// `metric` is a diagonal majorizer of the Hessian (`diag(metric) >= H`), so the
/// unit step in that metric is a descent step. Momentum is reset whenever it
/// fails to decrease the objective, which keeps the trace monotone.
const STALL_LIMIT: usize = 2_000;

pub fn minimize_box<O: SmoothObjective>(
    obj: &O,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    metric: &[f64],
    opts: BoxOptions,
) -> (Vec<f64>, SolveReport) {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut grad = vec![0.0; n];
    let mut fx = obj.value(&x);
    let mut y = x.clone();
    let mut z = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut t = 1.0_f64;
    let mut momentum = false;
    let mut trace = vec![fx];
    let mut res = f64::INFINITY;
    let mut iter = 0;
    let mut stalled = 0;

    while iter < opts.max_iter {
        iter += 1;
        obj.value_and_gradient(&y, &mut grad);
        for i in 0..n {
            z[i] = (y[i] - grad[i] / metric[i]).clamp(lower[i], upper[i]);
        }
        let fz = obj.value(&z);
        let slack = 64.0 * f64::EPSILON * (1.0 + fx.abs());
        if fz > fx && (momentum || fz > fx + slack) {
            if momentum {
                y.copy_from_slice(&x);
                t = 1.0;
                momentum = false;
                continue;
            }
            // A plain majorized step cannot ascend except through round-off.
            obj.value_and_gradient(&x, &mut grad);
            res = gradient_mapping_norm(&x, &grad, metric, lower, upper);
            break;
        }
        // Values have hit round-off; the residual alone decides from here.
        stalled = if fz >= fx { stalled + 1 } else { 0 };
        if stalled > STALL_LIMIT {
            obj.value_and_gradient(&x, &mut grad);
            res = gradient_mapping_norm(&x, &grad, metric, lower, upper);
            break;
        }
        x_prev.copy_from_slice(&x);
        x.copy_from_slice(&z);
        fx = fz;
        trace.push(fx);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..n {
            y[i] = (x[i] + beta * (x[i] - x_prev[i])).clamp(lower[i], upper[i]);
        }
        momentum = beta > 0.0;
        t = t_next;

        if iter % 10 == 0 || iter == opts.max_iter {
            obj.value_and_gradient(&x, &mut grad);
            res = gradient_mapping_norm(&x, &grad, metric, lower, upper);
            if res <= opts.tol {
                break;
            }
        }
    }
    if !res.is_finite() {
        obj.value_and_gradient(&x, &mut grad);
        res = gradient_mapping_norm(&x, &grad, metric, lower, upper);
    }
    (x, SolveReport::new(trace, res, opts.tol, iter))
}

/// Exact minimizer of `x'Hx/2 - lin'x` over `x >= 0` for positive definite `H`.
///
/// Primal active-set method warm-started from `x0`; terminates finitely.
pub fn nonneg_qp(h: &DMatrix<f64>, lin: &DVector<f64>, x0: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    let n = lin.len();
    let scale = lin.amax().max(1.0);
    let tol = 1e-13 * scale;
    let mut x = x0.map(|v| v.max(0.0));
    let mut active: Vec<bool> = x.iter().map(|&v| v == 0.0).collect();

    for _ in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let mut z = DVector::zeros(n);
        if !free.is_empty() {
            let hff = h.select_rows(&free).select_columns(&free);
            let lf = DVector::from_iterator(free.len(), free.iter().map(|&i| lin[i]));
            let sol = hff
                .cholesky()
                .ok_or_else(|| Error::Numeric("inner QP Hessian is not positive definite".into()))?
                .solve(&lf);
            for (k, &i) in free.iter().enumerate() {
                z[i] = sol[k];
            }
        }
        let blocking = free.iter().copied().filter(|&i| z[i] < 0.0).collect::<Vec<_>>();
        if blocking.is_empty() {
            x = z;
            let grad = h * &x - lin;
            let release = (0..n)
                .filter(|&i| active[i])
                .min_by(|&a, &b| grad[a].total_cmp(&grad[b]));
            match release {
                Some(i) if grad[i] < -tol => active[i] = false,
                _ => return Ok(x),
            }
        } else {
            let mut step = 1.0_f64;
            let mut hit = blocking[0];
            for &i in &blocking {
                let s = x[i] / (x[i] - z[i]);
                if s < step {
                    step = s;
                    hit = i;
                }
            }
            x += (&z - &x) * step;
            x[hit] = 0.0;
            active[hit] = true;
            for &i in &free {
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    active[i] = true;
                }
            }
        }
    }
    Err(Error::Numeric("active-set QP hit its iteration cap".into()))
}
