//! Two-stage learning over an `(alpha, N, seed)` grid against cached exact oracles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Dynamics, ExperimentConfig, SampleSize};
use super::envs::heuristic_behavior;
use crate::data::{generate_dataset, split_dataset, OfflineDataset};
use crate::error::{invalid, Error, Result};
use crate::mdp::{exact_optimal_policy, occupancy_of_policy, GoalMdp, OccupancyMeasure, Policy};
use crate::oracle::{solve_regularized_primal, RegularizedSolution};
use crate::plearn::{evaluate_suboptimality, fit_policy, PolicyClass};
use crate::vlearn::{
    advantages_deterministic, advantages_model_based, fit_transition_mle, fit_v_deterministic, fit_v_stochastic,
    TransitionModel, ValueClass, WeightedInit, WeightedSample,
};

/// One `(alpha, N, seed)` outcome. `n = 0` marks the exhaustive mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub alpha: f64,
    pub n: usize,
    pub seed: u64,
    pub j_opt: f64,
    pub j_reg_opt: f64,
    pub j_hat: f64,
    pub subopt_vs_opt: f64,
    pub subopt_vs_reg: f64,
    pub c_star_alpha: f64,
    pub tv_to_reg_opt: f64,
    pub duality_gap: f64,
    /// `ok`, or `;`-joined flags such as `v-nonconverged`, or `error: ...`.
    pub status: String,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// Everything shared by the cells of a sweep.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub mdp: GoalMdp,
    pub behavior: Policy,
    pub mu: OccupancyMeasure,
    pub j_opt: f64,
    pub dynamics: Dynamics,
    pub policy_class: PolicyClass,
    pub split: bool,
    /// Oracle solution per alpha, keyed by its bit pattern.
    pub oracles: BTreeMap<u64, RegularizedSolution>,
}

impl SweepContext {
    pub fn new(
        mdp: GoalMdp,
        behavior: Policy,
        dynamics: Dynamics,
        policy_class: PolicyClass,
        split: bool,
    ) -> Result<Self> {
        if behavior.n_states != mdp.n_states() || behavior.n_goals != mdp.n_goals() || behavior.n_actions != mdp.n_actions() {
            return Err(Error::Dimension("behavior policy does not match the MDP".into()));
        }
        let mu = occupancy_of_policy(&mdp, &behavior)?;
        let (_, j_opt) = exact_optimal_policy(&mdp)?;
        Ok(Self { mdp, behavior, mu, j_opt, dynamics, policy_class, split, oracles: BTreeMap::new() })
    }

    /// Solves (or loads from `cache_dir`) the oracle for every alpha not yet present.
    pub fn prepare_oracles(&mut self, alphas: &[f64], cache_dir: Option<&Path>) -> Result<()> {
        let mut todo: Vec<f64> = alphas.iter().copied().filter(|a| !self.oracles.contains_key(&a.to_bits())).collect();
        todo.sort_by(f64::total_cmp);
        todo.dedup();
        let fingerprint = self.fingerprint()?;
        if let Some(dir) = cache_dir {
            fs::create_dir_all(dir)?;
        }
        let solved = todo
            .par_iter()
            .map(|&alpha| -> Result<(u64, RegularizedSolution)> {
                let path = cache_dir.map(|d| d.join(format!("alpha-{:016x}.json", alpha.to_bits())));
                if let Some(p) = path.as_deref().filter(|p| p.exists()) {
                    let entry: CacheEntry = serde_json::from_str(&fs::read_to_string(p)?)?;
                    if entry.fingerprint == fingerprint && entry.solution.alpha.to_bits() == alpha.to_bits() {
                        return Ok((alpha.to_bits(), entry.solution));
                    }
                }
                let (solution, _) = solve_regularized_primal(&self.mdp, &self.mu, alpha)?;
                if let Some(p) = path {
                    let entry = CacheEntry { fingerprint: fingerprint.clone(), solution };
                    fs::write(&p, serde_json::to_string(&entry)?)?;
                    return Ok((alpha.to_bits(), entry.solution));
                }
                Ok((alpha.to_bits(), solution))
            })
            .collect::<Result<Vec<_>>>()?;
        self.oracles.extend(solved);
        Ok(())
    }

    fn fingerprint(&self) -> Result<String> {
        let text = format!("{}\n{}", self.mdp.to_json()?, serde_json::to_string(&self.behavior)?);
        Ok(format!("{:016x}", fnv1a(text.as_bytes())))
    }

    pub fn oracle(&self, alpha: f64) -> Result<&RegularizedSolution> {
        self.oracles
            .get(&alpha.to_bits())
            .ok_or_else(|| Error::InvalidInput(format!("no oracle prepared for alpha {alpha}")))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    fingerprint: String,
    solution: RegularizedSolution,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the dataset drawn for `(seed, n)`; shared by all alpha values.
pub fn data_seed(seed: u64, n: usize) -> u64 {
    splitmix(splitmix(seed) ^ n as u64)
}

/// Seed of the sample split for `(seed, n)`.
pub fn split_seed(seed: u64, n: usize) -> u64 {
    splitmix(data_seed(seed, n) ^ 0x5eed)
}

struct Halves {
    v_sample: WeightedSample,
    pi_sample: WeightedSample,
    init: WeightedInit,
    model: Option<TransitionModel>,
}

fn prepare_data(ctx: &SweepContext, n: SampleSize, seed: u64) -> Result<Halves> {
    let mdp = &ctx.mdp;
    let stoch = ctx.dynamics == Dynamics::Stoch;
    match n {
        SampleSize::Exhaustive => {
            let sample = WeightedSample::exhaustive(mdp, &ctx.mu)?;
            Ok(Halves {
                pi_sample: sample.clone(),
                v_sample: sample,
                init: WeightedInit::exhaustive(mdp),
                model: stoch.then(|| TransitionModel::exact(mdp)),
            })
        }
        SampleSize::Finite(n) => {
            let (data, init, _) = generate_dataset(mdp, &ctx.behavior, n, n, data_seed(seed, n))?;
            let (v_half, pi_half): (OfflineDataset, OfflineDataset) =
                if ctx.split { split_dataset(&data, split_seed(seed, n))? } else { (data.clone(), data) };
            let model = if stoch { Some(fit_transition_mle(&v_half.records, mdp.n_states(), mdp.n_actions())?) } else { None };
            Ok(Halves {
                v_sample: WeightedSample::from_dataset(&v_half)?,
                pi_sample: WeightedSample::from_dataset(&pi_half)?,
                init: WeightedInit::from_dataset(&init)?,
                model,
            })
        }
    }
}

/// Learned policy of one cell plus its solver flags.
pub struct CellOutcome {
    pub policy: Policy,
    pub flags: Vec<&'static str>,
}

/// Generate, split, fit V on one half, fit the policy on the other.
pub fn learn_policy(ctx: &SweepContext, alpha: f64, n: SampleSize, seed: u64) -> Result<CellOutcome> {
    let mdp = &ctx.mdp;
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let gamma = mdp.discount();
    let halves = prepare_data(ctx, n, seed)?;
    let class = ValueClass::tabular(ns, ng, mdp.default_v_max())?;
    let (v_fit, u) = match &halves.model {
        None => {
            let fit = fit_v_deterministic(&halves.v_sample, &halves.init, gamma, alpha, &class)?;
            let u = advantages_deterministic(&halves.pi_sample.records, gamma, alpha, &fit.value);
            (fit, u)
        }
        Some(model) => {
            let fit = fit_v_stochastic(&halves.v_sample, &halves.init, gamma, alpha, &class, model)?;
            let u = advantages_model_based(&halves.pi_sample.records, gamma, alpha, model, &fit.value);
            (fit, u)
        }
    };
    let pi = fit_policy(&halves.pi_sample, &u.u, alpha, ctx.policy_class, ns, ng, na)?;
    let mut flags = Vec::new();
    if !v_fit.report.converged {
        flags.push("v-nonconverged");
    }
    if pi.degenerate {
        flags.push("pi-degenerate");
    } else if !pi.report.converged {
        flags.push("pi-nonconverged");
    }
    Ok(CellOutcome { policy: pi.policy, flags })
}

/// Runs one cell; failures end up in `status` with NaN metrics instead of aborting.
pub fn run_cell(ctx: &SweepContext, alpha: f64, n: SampleSize, seed: u64) -> ResultRow {
    let start = Instant::now();
    let mut row = ResultRow {
        alpha,
        n: n.as_count(),
        seed,
        j_opt: ctx.j_opt,
        j_reg_opt: f64::NAN,
        j_hat: f64::NAN,
        subopt_vs_opt: f64::NAN,
        subopt_vs_reg: f64::NAN,
        c_star_alpha: f64::NAN,
        tv_to_reg_opt: f64::NAN,
        duality_gap: f64::NAN,
        status: String::new(),
        wall_ms: 0.0,
    };
    let outcome = (|| -> Result<Vec<&'static str>> {
        let oracle = ctx.oracle(alpha)?;
        row.j_reg_opt = oracle.j_reg_opt;
        row.c_star_alpha = oracle.c_star_alpha;
        row.duality_gap = oracle.duality_gap;
        let cell = learn_policy(ctx, alpha, n, seed)?;
        let sub = evaluate_suboptimality(&ctx.mdp, &cell.policy, oracle, ctx.j_opt)?;
        row.j_hat = sub.j_hat;
        row.subopt_vs_opt = sub.vs_opt;
        row.subopt_vs_reg = sub.vs_reg;
        row.tv_to_reg_opt = sub.tv_to_reg_opt;
        let mut flags = cell.flags;
        if !oracle.dual_report.converged {
            flags.insert(0, "oracle-nonconverged");
        }
        Ok(flags)
    })();
    row.status = match outcome {
        Ok(flags) if flags.is_empty() => "ok".into(),
        Ok(flags) => flags.join(";"),
        Err(e) => format!("error: {e}"),
    };
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    row
}

fn row_order(a: &ResultRow, b: &ResultRow) -> std::cmp::Ordering {
    a.alpha.total_cmp(&b.alpha).then(a.n.cmp(&b.n)).then(a.seed.cmp(&b.seed))
}

/// Every `(alpha, N, seed)` triple of the config.
pub fn cells(config: &ExperimentConfig) -> Vec<(f64, SampleSize, u64)> {
    let mut out = Vec::new();
    for &n in &config.n_grid {
        for alpha in config.alphas_for(n) {
            for &seed in &config.seeds {
                out.push((alpha, n, seed));
            }
        }
    }
    out
}

pub fn load_context(config: &ExperimentConfig) -> Result<SweepContext> {
    let mdp = GoalMdp::from_json(&fs::read_to_string(&config.mdp_file)?)?;
    let behavior = match &config.behavior_file {
        Some(p) => serde_json::from_str::<Policy>(&fs::read_to_string(p)?)?,
        None => heuristic_behavior(&mdp, config.behavior_epsilon)?,
    };
    SweepContext::new(mdp, behavior, config.dynamics, config.policy_class, config.split)
}

/// Runs the full grid in parallel and returns rows sorted by `(alpha, n, seed)`.
///
/// With `out_dir`, writes `results.csv`, `curves.tsv`, `summary.tsv` and `oracle-cache/`.
pub fn run_sweep(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let mut ctx = load_context(config)?;
    let grid = cells(config);
    let mut dedup = std::collections::BTreeSet::new();
    for &(alpha, n, seed) in &grid {
        if !dedup.insert((alpha.to_bits(), n, seed)) {
            return invalid(format!("duplicate cell alpha={alpha} n={} seed={seed}", n.as_count()));
        }
    }
    let alphas: Vec<f64> = grid.iter().map(|c| c.0).collect();
    let cache = out_dir.map(|d| d.join("oracle-cache"));
    ctx.prepare_oracles(&alphas, cache.as_deref())?;
    let mut rows: Vec<ResultRow> = grid.par_iter().map(|&(alpha, n, seed)| run_cell(&ctx, alpha, n, seed)).collect();
    rows.sort_by(row_order);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_results_csv(&dir.join("results.csv"), &rows)?;
        fs::write(dir.join("curves.tsv"), emit_plotdata(&rows)?)?;
        fs::write(dir.join("summary.tsv"), summary(&rows))?;
    }
    Ok(rows)
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Median and interquartile range with linear interpolation between order statistics.
///
/// NaN entries are dropped; an empty input gives NaN for both.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    (q(0.5), q(0.75) - q(0.25))
}

fn grouped<K: Ord>(rows: &[ResultRow], key: impl Fn(&ResultRow) -> K) -> BTreeMap<K, Vec<&ResultRow>> {
    let mut groups: BTreeMap<K, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        groups.entry(key(row)).or_default().push(row);
    }
    groups
}

/// Sort key placing alpha in numeric order (valid for positive finite alpha).
fn alpha_key(alpha: f64) -> u64 {
    alpha.to_bits()
}

/// Tab-separated curve data: one curve per alpha with `(N, median subopt_vs_opt, IQR)` points.
pub fn emit_plotdata(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return invalid("no rows to plot");
    }
    let mut out = String::from("alpha\tn\tmedian_subopt\tiqr\tcount\n");
    for ((a, n), group) in grouped(rows, |r| (alpha_key(r.alpha), r.n)) {
        let values: Vec<f64> = group.iter().map(|r| r.subopt_vs_opt).collect();
        let (med, iqr) = median_iqr(&values);
        out.push_str(&format!("{}\t{n}\t{med}\t{iqr}\t{}\n", f64::from_bits(a), values.len()));
    }
    Ok(out)
}

/// Per-alpha medians over all rows with that alpha.
pub fn summary(rows: &[ResultRow]) -> String {
    let mut out = String::from("alpha\tmedian_subopt_vs_opt\tmedian_subopt_vs_reg\tmedian_tv_to_reg_opt\tj_reg_opt\trows\tflagged\n");
    for (a, group) in grouped(rows, |r| alpha_key(r.alpha)) {
        let col = |f: fn(&ResultRow) -> f64| median_iqr(&group.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
        let flagged = group.iter().filter(|r| r.status != "ok").count();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{flagged}\n",
            f64::from_bits(a),
            col(|r| r.subopt_vs_opt),
            col(|r| r.subopt_vs_reg),
            col(|r| r.tv_to_reg_opt),
            group[0].j_reg_opt,
            group.len(),
        ));
    }
    out
}
