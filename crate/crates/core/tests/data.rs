use vpflow_core::data::{generate_dataset, split_indices};
use vpflow_core::harness::envs::{gridworld, heuristic_behavior, noisy_gridworld};

#[test]
fn deterministic_successors_are_the_only_successor() {
    let mdp = gridworld(3, 3, 0.9, None).unwrap();
    let behavior = heuristic_behavior(&mdp, 0.3).unwrap();
    let (data, _, _) = generate_dataset(&mdp, &behavior, 2000, 10, 3).unwrap();
    for t in &data.records {
        assert_eq!(t.s_next, mdp.most_likely_next(t.s, t.a));
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let mdp = noisy_gridworld(3, 2, 0.2, 0.9, None).unwrap();
    let behavior = heuristic_behavior(&mdp, 0.3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let (data, init, _) = generate_dataset(&mdp, &behavior, 400, 40, 9).unwrap();
        let (dp, ip) = (dir.path().join(format!("d{k}.jsonl")), dir.path().join(format!("i{k}.jsonl")));
        data.write_jsonl(&dp).unwrap();
        init.write_jsonl(&ip).unwrap();
        bytes.push((std::fs::read(dp).unwrap(), std::fs::read(ip).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
    let (other, _, _) = generate_dataset(&mdp, &behavior, 400, 40, 10).unwrap();
    let (same, _, _) = generate_dataset(&mdp, &behavior, 400, 40, 9).unwrap();
    assert_ne!(other, same);
}

#[test]
fn split_sizes_and_disjointness() {
    for (n, sizes) in [(4, (2, 2)), (5, (2, 3))] {
        for seed in 0..20 {
            let (a, b) = split_indices(n, seed).unwrap();
            assert_eq!((a.len(), b.len()), sizes);
            assert!(a.windows(2).all(|w| w[0] < w[1]) && b.windows(2).all(|w| w[0] < w[1]));
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}

#[test]
fn split_membership_is_uniform() {
    // membership counts of 10 records over 1e4 splits; covariance is
    // 0.25 * 10/9 * (I - J/10) per split, so the scaled statistic is chi-square with 9 df
    let (n, trials) = (10, 10_000);
    let mut counts = vec![0.0; n];
    for seed in 0..trials {
        let (first, _) = split_indices(n, seed as u64).unwrap();
        for i in first {
            counts[i] += 1.0;
        }
    }
    let expected = trials as f64 / 2.0;
    let scale = trials as f64 * 0.25 * 10.0 / 9.0;
    let stat: f64 = counts.iter().map(|c| (c - expected) * (c - expected) / scale).sum();
    assert!(stat <= 27.877, "chi-square {stat}");
}

#[test]
fn records_are_uncorrelated_and_match_occupancy() {
    let mdp = noisy_gridworld(3, 2, 0.2, 0.9, None).unwrap();
    let behavior = heuristic_behavior(&mdp, 0.3).unwrap();
    let n = 1_000_000;
    let (data, _, mu) = generate_dataset(&mdp, &behavior, n, 1, 21).unwrap();
    let (na, ng) = (mdp.n_actions(), mdp.n_goals());
    let codes: Vec<f64> = data.records.iter().map(|t| ((t.s * na + t.a) * ng + t.g) as f64).collect();
    let mean = codes.iter().sum::<f64>() / n as f64;
    let var = codes.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n as f64;
    let lag1 = codes.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((n - 1) as f64 * var);
    let band = 4.0 / (n as f64).sqrt();
    assert!(lag1.abs() <= band, "lag-1 autocorrelation {lag1}");
    let joint = mu.joint(mdp.goal_dist());
    let mut freq = vec![0.0; joint.len()];
    for c in &codes {
        freq[*c as usize] += 1.0 / n as f64;
    }
    for (f, m) in freq.iter().zip(&joint) {
        assert!((f - m).abs() <= band, "{f} vs {m}");
    }
}
