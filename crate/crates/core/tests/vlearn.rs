mod common;

use common::{finite_difference, max_abs_diff, random_instance, relative_error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpflow_core::data::{generate_dataset, Transition};
use vpflow_core::harness::envs::{gridworld, heuristic_behavior, noisy_gridworld};
use vpflow_core::harness::sweep::median_iqr;
use vpflow_core::mdp::{build_shifted_advantage, occupancy_of_policy, GoalMdp, OccupancyMeasure, Policy, ValueFn};
use vpflow_core::oracle::{dual_objective, solve_regularized_primal};
use vpflow_core::vlearn::{
    advantages_deterministic, empirical_dual_deterministic, empirical_dual_stochastic, fit_transition_mle,
    fit_v_deterministic, fit_v_stochastic, model_tv_error, TransitionModel, ValueClass, VObjective, WeightedInit,
    WeightedSample,
};

fn grid() -> (GoalMdp, Policy, OccupancyMeasure) {
    let mdp = gridworld(4, 4, 0.9, Some(&[15, 5])).unwrap();
    let behavior = heuristic_behavior(&mdp, 0.3).unwrap();
    let mu = occupancy_of_policy(&mdp, &behavior).unwrap();
    (mdp, behavior, mu)
}

fn random_v(mdp: &GoalMdp, rng: &mut ChaCha8Rng) -> ValueFn {
    let v_max = mdp.default_v_max();
    let v = (0..mdp.n_states() * mdp.n_goals()).map(|_| rng.gen_range(0.0..v_max)).collect();
    ValueFn::new(mdp.n_states(), mdp.n_goals(), v_max, v).unwrap()
}

#[test]
fn exhaustive_datasets_reproduce_the_population_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mdp, _, mu) = grid();
    let sample = WeightedSample::exhaustive(&mdp, &mu).unwrap();
    let init = WeightedInit::exhaustive(&mdp);
    for alpha in [0.05, 1.0] {
        let v = random_v(&mdp, &mut rng);
        let pop = dual_objective(&mdp, &mu, alpha, &v).unwrap();
        let emp = empirical_dual_deterministic(&sample, &init, mdp.discount(), alpha, &v).unwrap();
        assert!((pop - emp).abs() <= 1e-12 * (1.0 + pop.abs()));
    }
    let noisy = noisy_gridworld(3, 3, 0.3, 0.9, None).unwrap();
    let mu = occupancy_of_policy(&noisy, &heuristic_behavior(&noisy, 0.3).unwrap()).unwrap();
    let sample = WeightedSample::exhaustive(&noisy, &mu).unwrap();
    let init = WeightedInit::exhaustive(&noisy);
    let v = random_v(&noisy, &mut rng);
    let pop = dual_objective(&noisy, &mu, 0.2, &v).unwrap();
    let emp = empirical_dual_stochastic(&sample, &init, 0.9, 0.2, &TransitionModel::exact(&noisy), &v).unwrap();
    assert!((pop - emp).abs() <= 1e-12 * (1.0 + pop.abs()));
}

#[test]
fn zero_value_plug_in() {
    let records = vec![
        Transition { s: 0, a: 0, r: 1.0, s_next: 1, g: 0 },
        Transition { s: 1, a: 1, r: 0.0, s_next: 0, g: 0 },
        Transition { s: 1, a: 0, r: 0.0, s_next: 1, g: 0 },
    ];
    let sample = WeightedSample { weights: vec![1.0 / 3.0; 3], records };
    let init = WeightedInit { pairs: vec![(0, 0)], weights: vec![1.0] };
    let zero = ValueFn::zeros(2, 1, 5.0);
    let alpha: f64 = 0.4;
    let expected = ((1.0 + alpha).powi(2) + 2.0 * alpha * alpha) / 6.0;
    assert!((empirical_dual_deterministic(&sample, &init, 0.8, alpha, &zero).unwrap() - expected).abs() <= 1e-15);
    assert!(empirical_dual_deterministic(&WeightedSample { records: vec![], weights: vec![] }, &init, 0.8, alpha, &zero).is_err());
}

#[test]
fn plug_in_estimator_is_unbiased_on_deterministic_dynamics() {
    let (mdp, behavior, mu) = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_v(&mdp, &mut rng);
    let alpha = 0.5;
    let pop = dual_objective(&mdp, &mu, alpha, &v).unwrap();
    let init = WeightedInit::exhaustive(&mdp);
    let values: Vec<f64> = (0..10_000)
        .map(|seed| {
            let (data, _, _) = generate_dataset(&mdp, &behavior, 50, 1, seed).unwrap();
            empirical_dual_deterministic(&WeightedSample::from_dataset(&data).unwrap(), &init, 0.9, alpha, &v).unwrap()
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - pop).abs() <= 3.0 * se, "{mean} vs {pop} (se {se})");
}

#[test]
fn mle_is_the_empirical_frequency() {
    let t = |s, a, s_next| Transition { s, a, r: 0.0, s_next, g: 0 };
    let model = fit_transition_mle(&[t(0, 0, 1), t(0, 0, 1), t(0, 0, 1), t(0, 0, 2), t(1, 1, 0)], 3, 2).unwrap();
    assert_eq!(model.row(0, 0), &[0.0, 0.75, 0.25]);
    assert_eq!(model.row(1, 1), &[1.0, 0.0, 0.0]);
    assert_eq!(model.row(2, 0), &[1.0 / 3.0; 3]);

    let (mdp, behavior, _) = grid();
    let (data, _, _) = generate_dataset(&mdp, &behavior, 5000, 1, 3).unwrap();
    let model = fit_transition_mle(&data.records, 16, 4).unwrap();
    for t in &data.records {
        assert_eq!(model.row(t.s, t.a), mdp.transition_row(t.s, t.a));
    }
}

#[test]
fn mle_error_follows_the_rate() {
    let mdp = noisy_gridworld(4, 4, 0.2, 0.9, None).unwrap();
    let behavior = heuristic_behavior(&mdp, 0.3).unwrap();
    let mu = occupancy_of_policy(&mdp, &behavior).unwrap();
    let err = |n: usize| -> f64 {
        let e: Vec<f64> = (0..20)
            .map(|seed| {
                let (data, _, _) = generate_dataset(&mdp, &behavior, n, 1, seed).unwrap();
                model_tv_error(&fit_transition_mle(&data.records, 16, 4).unwrap(), &mdp, &mu)
            })
            .collect();
        median_iqr(&e).0
    };
    let sa = 64.0;
    let c = err(1000) * 1000.0 / (sa * (1000f64).ln());
    assert!(err(10_000) <= c * sa * (10_000f64).ln() / 10_000.0);
}

#[test]
fn zero_class_gives_alpha_advantages() {
    let records = vec![Transition { s: 0, a: 0, r: 0.0, s_next: 1, g: 0 }, Transition { s: 1, a: 1, r: 0.0, s_next: 0, g: 0 }];
    let sample = WeightedSample { weights: vec![0.5; 2], records };
    let init = WeightedInit { pairs: vec![(0, 0)], weights: vec![1.0] };
    let class = ValueClass::linear(2, 1, 10.0, 1, vec![0.0, 0.0]).unwrap();
    let fit = fit_v_deterministic(&sample, &init, 0.9, 0.3, &class).unwrap();
    assert_eq!(fit.advantages.u, vec![0.3, 0.3]);
}

#[test]
fn population_fit_recovers_the_oracle() {
    let (mdp, _, mu) = grid();
    let sample = WeightedSample::exhaustive(&mdp, &mu).unwrap();
    let init = WeightedInit::exhaustive(&mdp);
    let class = ValueClass::tabular(16, 2, mdp.default_v_max()).unwrap();
    for alpha in [0.1, 1.0] {
        let (sol, _) = solve_regularized_primal(&mdp, &mu, alpha).unwrap();
        let fit = fit_v_deterministic(&sample, &init, 0.9, alpha, &class).unwrap();
        assert!(fit.report.converged);
        let u_star = build_shifted_advantage(&mdp, &sol.v_star_alpha, alpha);
        let dist2: f64 = sample
            .records
            .iter()
            .zip(&sample.weights)
            .zip(&fit.advantages.u)
            .map(|((t, w), u)| w * (u.max(0.0) - u_star.get(t.s, t.a, t.g).max(0.0)).powi(2))
            .sum();
        assert!(dist2.sqrt() <= 1e-4);
        let gap = dual_objective(&mdp, &mu, alpha, &fit.value).unwrap() - dual_objective(&mdp, &mu, alpha, &sol.v_star_alpha).unwrap();
        assert!(dist2 <= 2.0 * gap + 1e-8);
        // record advantages are the plug-in terms plus alpha
        let again = advantages_deterministic(&sample.records, 0.9, alpha, &fit.value);
        assert!(max_abs_diff(&again.u, &fit.advantages.u) <= 1e-15);
    }
}

#[test]
fn model_based_fit_agrees_on_deterministic_dynamics() {
    let (mdp, behavior, _) = grid();
    let (data, init, _) = generate_dataset(&mdp, &behavior, 3000, 3000, 9).unwrap();
    let sample = WeightedSample::from_dataset(&data).unwrap();
    let init = WeightedInit::from_dataset(&init).unwrap();
    let model = fit_transition_mle(&data.records, 16, 4).unwrap();
    let class = ValueClass::tabular(16, 2, mdp.default_v_max()).unwrap();
    let det = fit_v_deterministic(&sample, &init, 0.9, 0.2, &class).unwrap();
    let sto = fit_v_stochastic(&sample, &init, 0.9, 0.2, &class, &model).unwrap();
    assert!(max_abs_diff(&det.value.v, &sto.value.v) <= 1e-6);
}

#[test]
fn sampled_fit_error_decreases_with_n() {
    let (mdp, behavior, mu) = grid();
    let alpha = 0.2;
    let (sol, _) = solve_regularized_primal(&mdp, &mu, alpha).unwrap();
    let u_star = build_shifted_advantage(&mdp, &sol.v_star_alpha, alpha);
    let class = ValueClass::tabular(16, 2, mdp.default_v_max()).unwrap();
    let err = |n: usize| -> f64 {
        let e: Vec<f64> = (0..5)
            .map(|seed| {
                let (data, init, _) = generate_dataset(&mdp, &behavior, n, n, seed).unwrap();
                let sample = WeightedSample::from_dataset(&data).unwrap();
                let fit = fit_v_deterministic(&sample, &WeightedInit::from_dataset(&init).unwrap(), 0.9, alpha, &class).unwrap();
                let s: f64 = data
                    .records
                    .iter()
                    .zip(&fit.advantages.u)
                    .map(|(t, u)| (u.max(0.0) - u_star.get(t.s, t.a, t.g).max(0.0)).powi(2))
                    .sum();
                (s / n as f64).sqrt()
            })
            .collect();
        median_iqr(&e).0
    };
    let (e3, e4, e5) = (err(1000), err(10_000), err(100_000));
    assert!(e4 < e3 && e5 < e4, "{e3} {e4} {e5}");
}

fn gradient_check(obj: &VObjective, theta: &[f64]) -> f64 {
    let fd = finite_difference(|x| obj.value(x), theta, 1e-5);
    relative_error(&obj.gradient(theta), &fd, 1e-12)
}

#[test]
fn gradients_match_finite_differences() {
    let mdp = noisy_gridworld(3, 3, 0.2, 0.9, Some(&[8, 2])).unwrap();
    let behavior = heuristic_behavior(&mdp, 0.3).unwrap();
    let (data, init, _) = generate_dataset(&mdp, &behavior, 400, 50, 5).unwrap();
    let sample = WeightedSample::from_dataset(&data).unwrap();
    let init = WeightedInit::from_dataset(&init).unwrap();
    let model = fit_transition_mle(&data.records, 9, 4).unwrap();
    let tabular = ValueClass::tabular(9, 2, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let features: Vec<f64> = (0..18 * 3).map(|_| rng.gen_range(0.0..0.33)).collect();
    let linear = ValueClass::linear(9, 2, 10.0, 3, features).unwrap();
    for class in [tabular, linear] {
        let det = VObjective::deterministic(&sample, &init, 0.9, 0.3, &class).unwrap();
        let sto = VObjective::model_based(&sample, &init, 0.9, 0.3, &class, &model).unwrap();
        for _ in 0..20 {
            let theta: Vec<f64> = (0..class.n_params()).map(|_| rng.gen_range(0.5..9.5)).collect();
            assert!(gradient_check(&det, &theta) <= 1e-6);
            assert!(gradient_check(&sto, &theta) <= 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn empirical_objective_is_convex(seed in 0u64..1000, lambda in 0.0f64..1.0) {
        let (mdp, behavior) = random_instance(seed, 6, 3, 2, 0.9);
        let (data, init, _) = generate_dataset(&mdp, &behavior, 200, 20, seed).unwrap();
        let sample = WeightedSample::from_dataset(&data).unwrap();
        let init = WeightedInit::from_dataset(&init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, w) = (random_v(&mdp, &mut rng), random_v(&mdp, &mut rng));
        let mix = ValueFn::new(v.n_states, v.n_goals, v.v_max, v.v.iter().zip(&w.v).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()).unwrap();
        let f = |x: &ValueFn| empirical_dual_deterministic(&sample, &init, 0.9, 0.3, x).unwrap();
        prop_assert!(f(&mix) <= lambda * f(&v) + (1.0 - lambda) * f(&w) + 1e-10);
    }

    #[test]
    fn mle_rows_are_distributions(seed in 0u64..1000) {
        let (mdp, behavior) = random_instance(seed, 6, 3, 2, 0.9);
        let (data, _, _) = generate_dataset(&mdp, &behavior, 100, 1, seed).unwrap();
        let model = fit_transition_mle(&data.records, mdp.n_states(), mdp.n_actions()).unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                prop_assert!((model.row(s, a).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
