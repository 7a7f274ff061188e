use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vpflow_core::data::{generate_dataset, split_indices, InitDataset, OfflineDataset};
use vpflow_core::harness::envs::{heuristic_behavior, noisy_gridworld, random_chain};
use vpflow_core::harness::{self, ExperimentConfig};
use vpflow_core::mdp::{occupancy_of_policy, GoalMdp, OccupancyMeasure, Policy, ValueFn};
use vpflow_core::optim::SolveReport;
use vpflow_core::oracle::solve_regularized_primal;
use vpflow_core::plearn::{fit_policy, PolicyClass};
use vpflow_core::vlearn::{
    advantages_deterministic, advantages_model_based, fit_transition_mle, fit_v_deterministic, fit_v_stochastic,
    ValueClass, WeightedInit, WeightedSample,
};

#[derive(Parser)]
#[command(name = "vpflow", version, about = "Offline goal-conditioned RL through the regularized occupancy dual")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gridworld,
    NoisyGridworld,
    RandomChain,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DynamicsArg {
    Det,
    Stoch,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic goal MDP as JSON.
    GenMdp {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 4)]
        w: usize,
        #[arg(long, default_value_t = 4)]
        h: usize,
        /// Slip probability of the noisy gridworld.
        #[arg(long, default_value_t = 0.2)]
        p_slip: f64,
        /// Chain length.
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Seed of the random chain.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Goal states of a gridworld (comma separated); default bottom-right corner.
        #[arg(long, value_delimiter = ',')]
        goal: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the epsilon-greedy shortest-path behavior policy.
    GenBehavior {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample `<prefix>.d.jsonl`, `<prefix>.d0.jsonl` and the exact `<prefix>.mu.json`.
    GenData {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        n: usize,
        /// Defaults to `n`.
        #[arg(long)]
        n0: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the regularized program exactly and write the full solution.
    SolveOracle {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Behavior policy; defaults to the 0.3-greedy heuristic.
        #[arg(long, conflicts_with = "mu")]
        behavior: Option<PathBuf>,
        /// Behavior occupancy as written by gen-data.
        #[arg(long)]
        mu: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit V on one half of the data and write U on the other half.
    TrainV {
        /// Dataset prefix from gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "det")]
        dynamics: DynamicsArg,
        /// `tabular` or `linear:<features.json>`.
        #[arg(long, default_value = "tabular")]
        class: String,
        /// Seed of the sample split.
        #[arg(long)]
        seed: u64,
        /// Use every record for both stages.
        #[arg(long)]
        no_split: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the floored softmax policy by weighted maximum likelihood.
    TrainPi {
        #[arg(long)]
        data: PathBuf,
        /// Output of train-v.
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an (alpha, N, seed) sweep described by a key = value config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Linear features: `features[(s * n_goals + g) * k + j]`.
#[derive(Deserialize)]
struct FeatureFile {
    k: usize,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrainVOutput {
    alpha: f64,
    dynamics: DynamicsArg,
    split_seed: Option<u64>,
    n_states: usize,
    n_actions: usize,
    n_goals: usize,
    value: ValueFn,
    params: Vec<f64>,
    /// Record indices used for policy learning, in the order of `u`.
    policy_indices: Vec<usize>,
    u: Vec<f64>,
    report: SolveReport,
}

#[derive(Serialize)]
struct TrainPiOutput {
    alpha: f64,
    epsilon_floor: f64,
    degenerate: bool,
    policy: Policy,
    logits: Vec<f64>,
    report: SolveReport,
}

fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_mdp(path: &Path) -> Result<GoalMdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GoalMdp::from_json(&text)?)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenMdp { kind, w, h, p_slip, n, gamma, seed, goal, out } => {
            let mdp = match kind {
                Kind::Gridworld => noisy_gridworld(w, h, 0.0, gamma, goal.as_deref())?,
                Kind::NoisyGridworld => noisy_gridworld(w, h, p_slip, gamma, goal.as_deref())?,
                Kind::RandomChain => random_chain(n, gamma, seed)?,
            };
            fs::write(&out, mdp.to_json()? + "\n")?;
        }
        Command::GenBehavior { mdp, epsilon, out } => {
            write_json(&out, &heuristic_behavior(&load_mdp(&mdp)?, epsilon)?)?;
        }
        Command::GenData { mdp, behavior, n, n0, seed, out } => {
            let mdp = load_mdp(&mdp)?;
            let behavior: Policy = read(&behavior)?;
            let (data, init, mu) = generate_dataset(&mdp, &behavior, n, n0.unwrap_or(n), seed)?;
            data.write_jsonl(&with_suffix(&out, ".d.jsonl"))?;
            init.write_jsonl(&with_suffix(&out, ".d0.jsonl"))?;
            write_json(&with_suffix(&out, ".mu.json"), &mu)?;
        }
        Command::SolveOracle { mdp, alpha, behavior, mu, out } => {
            let mdp = load_mdp(&mdp)?;
            let mu: OccupancyMeasure = match (behavior, mu) {
                (_, Some(p)) => read(&p)?,
                (Some(p), None) => occupancy_of_policy(&mdp, &read::<Policy>(&p)?)?,
                (None, None) => occupancy_of_policy(&mdp, &heuristic_behavior(&mdp, 0.3)?)?,
            };
            let (solution, _) = solve_regularized_primal(&mdp, &mu, alpha)?;
            write_json(&out, &solution)?;
        }
        Command::TrainV { data, mdp, alpha, dynamics, class, seed, no_split, out } => {
            let mdp = load_mdp(&mdp)?;
            let records = OfflineDataset::read_jsonl(&with_suffix(&data, ".d.jsonl"))?;
            records.validate(&mdp)?;
            let init = InitDataset::read_jsonl(&with_suffix(&data, ".d0.jsonl"))?;
            let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
            let v_max = mdp.default_v_max();
            let class = match class.as_str() {
                "tabular" => ValueClass::tabular(ns, ng, v_max)?,
                other => match other.strip_prefix("linear:") {
                    Some(file) => {
                        let f: FeatureFile = read(Path::new(file))?;
                        ValueClass::linear(ns, ng, v_max, f.k, f.features)?
                    }
                    None => bail!("unknown value class {other:?}"),
                },
            };
            let (v_idx, pi_idx) = if no_split {
                ((0..records.len()).collect(), (0..records.len()).collect())
            } else {
                split_indices(records.len(), seed)?
            };
            let v_half = records.subset(&v_idx);
            let pi_half = records.subset(&pi_idx);
            let sample = WeightedSample::from_dataset(&v_half)?;
            let init = WeightedInit::from_dataset(&init)?;
            let gamma = mdp.discount();
            let (fit, u) = match dynamics {
                DynamicsArg::Det => {
                    let fit = fit_v_deterministic(&sample, &init, gamma, alpha, &class)?;
                    let u = advantages_deterministic(&pi_half.records, gamma, alpha, &fit.value);
                    (fit, u)
                }
                DynamicsArg::Stoch => {
                    let model = fit_transition_mle(&v_half.records, ns, na)?;
                    let fit = fit_v_stochastic(&sample, &init, gamma, alpha, &class, &model)?;
                    let u = advantages_model_based(&pi_half.records, gamma, alpha, &model, &fit.value);
                    (fit, u)
                }
            };
            if !fit.report.converged {
                eprintln!("warning: V-learning stopped at gradient-mapping norm {:e}", fit.report.final_gradient_norm);
            }
            write_json(
                &out,
                &TrainVOutput {
                    alpha,
                    dynamics,
                    split_seed: (!no_split).then_some(seed),
                    n_states: ns,
                    n_actions: na,
                    n_goals: ng,
                    value: fit.value,
                    params: fit.params,
                    policy_indices: pi_idx,
                    u: u.u,
                    report: fit.report,
                },
            )?;
        }
        Command::TrainPi { data, u, alpha, epsilon, out } => {
            let records = OfflineDataset::read_jsonl(&with_suffix(&data, ".d.jsonl"))?;
            let v: TrainVOutput = read(&u)?;
            if v.alpha.to_bits() != alpha.to_bits() {
                bail!("--alpha {alpha} differs from the alpha {} used for U", v.alpha);
            }
            if let Some(&i) = v.policy_indices.iter().find(|&&i| i >= records.len()) {
                bail!("U refers to record {i} but the dataset has {} records", records.len());
            }
            let sample = WeightedSample::from_dataset(&records.subset(&v.policy_indices))?;
            let fit = fit_policy(&sample, &v.u, alpha, PolicyClass::new(epsilon)?, v.n_states, v.n_goals, v.n_actions)?;
            if fit.degenerate {
                eprintln!("warning: every weight is zero; the policy is uniform");
            }
            write_json(
                &out,
                &TrainPiOutput {
                    alpha,
                    epsilon_floor: epsilon,
                    degenerate: fit.degenerate,
                    policy: fit.policy,
                    logits: fit.softmax.logits,
                    report: fit.report,
                },
            )?;
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = out.unwrap_or_else(|| config.parent().map(Path::to_path_buf).unwrap_or_default());
            let rows = harness::run_sweep(&cfg, Some(&dir))?;
            print!("{}", harness::sweep::summary(&rows));
            let flagged = rows.iter().filter(|r| r.status != "ok").count();
            if flagged > 0 {
                eprintln!("{flagged} of {} rows flagged; see the status column", rows.len());
            }
        }
    }
    Ok(())
}
