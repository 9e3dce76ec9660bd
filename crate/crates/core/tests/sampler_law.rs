//! Distribution-level checks for the geometric-stopping sampler: the sampled
//! pairs match the exact visitation measure, the stopping time matches its
//! geometric law (χ² test), and critic targets are conditionally unbiased.

use npmd_core::env::{policy_evaluate, random_mdp, visitation_distribution, PolicyTable};
use npmd_core::sampler::{sample_next_visitation, sample_visitation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn sampled_pairs_match_exact_visitation_in_total_variation() {
    for (gamma, seed) in [(0.5, 17u64), (0.9, 18u64)] {
        let mdp = random_mdp(8, 2, gamma, 123).unwrap();
        let policy = PolicyTable::uniform(8, 2);
        let exact = visitation_distribution(&mdp, &policy).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000usize;
        let mut counts = vec![0usize; 8 * 2];
        let mut calls = 0usize;
        for _ in 0..n {
            let s = sample_visitation(&mdp, &policy, &mut rng).unwrap();
            counts[s.state * 2 + s.action] += 1;
            calls += s.trajectory_len + 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact.pairs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "gamma {gamma}: empirical TV {tv} too large");
        let mean_calls = calls as f64 / n as f64;
        let expected = 1.0 / (1.0 - gamma);
        assert!(
            (mean_calls - expected).abs() / expected < 0.02,
            "gamma {gamma}: mean calls {mean_calls} vs {expected}"
        );
    }
}

#[test]
fn stopping_time_histogram_passes_chi_squared_against_geometric_law() {
    let gamma: f64 = 0.9;
    let mdp = random_mdp(6, 2, gamma, 55).unwrap();
    let policy = PolicyTable::uniform(6, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000usize;
    // Bins 0..=cut-1 individually, then one tail bin.
    let cut = 40usize;
    let mut counts = vec![0usize; cut + 1];
    for _ in 0..n {
        let t = sample_visitation(&mdp, &policy, &mut rng).unwrap().trajectory_len;
        counts[t.min(cut)] += 1;
    }
    let mut stat = 0.0;
    for (t, &c) in counts.iter().enumerate() {
        let p = if t < cut {
            gamma.powi(t as i32) * (1.0 - gamma)
        } else {
            gamma.powi(cut as i32)
        };
        let expected = p * n as f64;
        stat += (c as f64 - expected).powi(2) / expected;
    }
    let dof = cut as f64; // (cut + 1) bins - 1
    let critical = ChiSquared::new(dof).unwrap().inverse_cdf(1.0 - 1e-3);
    assert!(stat < critical, "χ² = {stat} exceeds critical {critical} at significance 1e-3");
}

#[test]
fn critic_target_is_conditionally_unbiased_for_q() {
    let gamma: f64 = 0.9;
    let mdp = random_mdp(6, 2, gamma, 99).unwrap();
    let policy = PolicyTable::uniform(6, 2);
    let values = policy_evaluate(&mdp, &policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (s, a) = (2usize, 1usize);
    let n = 200_000usize;
    let scale = gamma / (1.0 - gamma);
    let mut sum = 0.0;
    for _ in 0..n {
        let next = sample_next_visitation(&mdp, &policy, s, a, &mut rng).unwrap();
        sum += mdp.cost(s, a) + scale * mdp.cost(next.state, next.action);
    }
    let mean = sum / n as f64;
    let q = values.q_at(s, a);
    // Noise is bounded by γC/(1-γ) = 9, so the standard error at 2·10^5
    // draws is ≲ 0.01; a 0.05 tolerance is ~5 standard errors.
    assert!((mean - q).abs() < 0.05, "target mean {mean} vs exact Q {q}");
}
