//! Sampling oracles for discounted visitation measures.
//!
//! A draw from the visitation measure `ν_ρ^π` is simulated by rolling a
//! trajectory and stopping after each step with probability `1-γ`: the
//! stopping time satisfies `P(T=t) = γ^t(1-γ)`, so the state-action pair at
//! time `T` is distributed as `ν̄_ρ^π` and the expected simulation cost is
//! `E[T+1] = 1/(1-γ)` transitions per draw.
//!
//! Critic regression targets couple one visitation draw with a second,
//! conditionally independent draw started from a forced transition through
//! `(s, a)`: `y = c(s, a) + γ/(1-γ)·c(s', a')`. Conditional on `(s, a)` the
//! target is an unbiased estimate of `Q^π(s, a)` with noise supported on an
//! interval of width `γ·C/(1-γ)`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{EnvError, Mdp, PolicyTable};

/// Hard cap on simulated steps per draw; hitting it is an error rather than a
/// silent truncation because it would bias the sampled law.
pub const MAX_TRAJECTORY_STEPS: usize = 10_000_000;

/// Errors from the sampling oracles.
#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("trajectory exceeded the hard cap of {cap} steps")]
    TrajectoryCap { cap: usize },
    #[error("probability row sums to {sum}; nothing to sample")]
    DegenerateRow { sum: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One draw from the discounted visitation measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisitationSample {
    pub state: usize,
    pub action: usize,
    /// Number of simulated transitions after the initial draw (the stopping
    /// time `T`); the simulation cost in oracle calls is `T + 1`.
    pub trajectory_len: usize,
}

/// One critic regression row: the sampled pair and its bounded target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticTarget {
    pub state: usize,
    pub action: usize,
    /// `c(s, a) + γ/(1-γ)·c(s', a') ∈ [0, C/(1-γ)]`.
    pub target: f64,
}

/// Per-action critic dataset sharing one batch of sampled states.
#[derive(Debug, Clone)]
pub struct CriticDataset {
    pub n_actions: usize,
    pub n_per_action: usize,
    /// Rows grouped by action: rows `[a·N .. (a+1)·N]` all carry action `a`.
    pub rows: Vec<CriticTarget>,
    /// Total environment transitions consumed while building the dataset.
    pub oracle_calls: usize,
}

/// Samples an index from a probability row by inverse transform; rows are
/// validated upstream, so any residual rounding mass collapses onto the last
/// positive entry.
fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> Result<usize, SamplerError> {
    let mut u: f64 = rng.random();
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = Some(i);
        if u < p {
            return Ok(i);
        }
        u -= p;
    }
    last_positive.ok_or(SamplerError::DegenerateRow { sum: probs.iter().sum() })
}

/// Draws `(s, a) ~ ν̄_ρ^π` by geometric stopping: start at `s_0 ~ ρ`,
/// `a_0 ~ π(·|s_0)`, and after each step continue with probability `γ`.
pub fn sample_visitation<R: Rng>(
    mdp: &Mdp,
    policy: &PolicyTable,
    rng: &mut R,
) -> Result<VisitationSample, SamplerError> {
    let mut state = sample_index(mdp.rho(), rng)?;
    let mut action = sample_index(policy.row(state), rng)?;
    let mut steps = 0usize;
    loop {
        let u: f64 = rng.random();
        if u >= mdp.gamma() {
            return Ok(VisitationSample { state, action, trajectory_len: steps });
        }
        if steps >= MAX_TRAJECTORY_STEPS {
            return Err(SamplerError::TrajectoryCap { cap: MAX_TRAJECTORY_STEPS });
        }
        state = sample_index(mdp.kernel_row(state, action), rng)?;
        action = sample_index(policy.row(state), rng)?;
        steps += 1;
    }
}

/// Draws `(s', a') ~ ν̄^π` with initial distribution `𝒫(·|s, a)`: one forced
/// transition through `(s, a)`, then geometric stopping as usual. At `γ = 0`
/// this returns exactly the one-step successor pair.
pub fn sample_next_visitation<R: Rng>(
    mdp: &Mdp,
    policy: &PolicyTable,
    state: usize,
    action: usize,
    rng: &mut R,
) -> Result<VisitationSample, SamplerError> {
    let mut s = sample_index(mdp.kernel_row(state, action), rng)?;
    let mut a = sample_index(policy.row(s), rng)?;
    let mut steps = 0usize;
    loop {
        let u: f64 = rng.random();
        if u >= mdp.gamma() {
            return Ok(VisitationSample { state: s, action: a, trajectory_len: steps });
        }
        if steps >= MAX_TRAJECTORY_STEPS {
            return Err(SamplerError::TrajectoryCap { cap: MAX_TRAJECTORY_STEPS });
        }
        s = sample_index(mdp.kernel_row(s, a), rng)?;
        a = sample_index(policy.row(s), rng)?;
        steps += 1;
    }
}

/// Builds `N` critic rows per action. For each action `a`, states are drawn
/// from `ν_ρ^π` and the second pair from the forced continuation, giving the
/// unbiased bounded target `c(s, a) + γ/(1-γ)·c(s', a')`.
///
/// Each action consumes its own RNG stream derived from `seed`, and streams
/// are merged in action order, so the dataset is a deterministic function of
/// `(mdp, policy, n_per_action, seed)` regardless of assembly strategy.
pub fn make_critic_dataset(
    mdp: &Mdp,
    policy: &PolicyTable,
    n_per_action: usize,
    seed: u64,
) -> Result<CriticDataset, SamplerError> {
    use rand::SeedableRng;
    let n_actions = mdp.n_actions();
    let gamma = mdp.gamma();
    let scale = if gamma > 0.0 { gamma / (1.0 - gamma) } else { 0.0 };
    let mut rows = Vec::with_capacity(n_actions * n_per_action);
    let mut oracle_calls = 0usize;
    for a in 0..n_actions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(a as u64 + 1);
        for _ in 0..n_per_action {
            let here = sample_visitation(mdp, policy, &mut rng)?;
            let next = sample_next_visitation(mdp, policy, here.state, a, &mut rng)?;
            oracle_calls += here.trajectory_len + 1 + next.trajectory_len + 1;
            let target = mdp.cost(here.state, a) + scale * mdp.cost(next.state, next.action);
            debug_assert!(
                target >= 0.0 && target <= mdp.value_bound() + 1e-12,
                "target {target} escapes [0, C/(1-γ)]"
            );
            rows.push(CriticTarget { state: here.state, action: a, target });
        }
    }
    Ok(CriticDataset { n_actions, n_per_action, rows, oracle_calls })
}

impl CriticDataset {
    /// Rows for one action.
    pub fn action_rows(&self, a: usize) -> &[CriticTarget] {
        &self.rows[a * self.n_per_action..][..self.n_per_action]
    }
}

/// Writes a dataset as CSV with fixed columns: action index, the state's
/// ambient coordinates (the bare state index when no net is attached), then
/// the target.
pub fn write_dataset_csv(
    dataset: &CriticDataset,
    mdp: &Mdp,
    path: &Path,
) -> Result<(), SamplerError> {
    let dim = mdp.manifold().map_or(1, |m| m.ambient_dim());
    let mut out = String::new();
    out.push_str("action");
    for k in 0..dim {
        let _ = write!(out, ",x{k}");
    }
    out.push_str(",target\n");
    for row in &dataset.rows {
        let _ = write!(out, "{}", row.action);
        match mdp.manifold() {
            Some(m) => {
                for c in m.point(row.state) {
                    let _ = write!(out, ",{c:.17e}");
                }
            }
            None => {
                let _ = write!(out, ",{}", row.state);
            }
        }
        let _ = writeln!(out, ",{:.17e}", row.target);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads back a dataset CSV written by [`write_dataset_csv`]; states are
/// recovered as nearest net points (exact for files written from the same
/// net).
pub fn read_dataset_csv(mdp: &Mdp, path: &Path) -> Result<Vec<CriticTarget>, SamplerError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |message: String| SamplerError::Parse { line: lineno + 1, message };
        if fields.len() < 3 {
            return Err(parse_err("expected at least 3 columns".into()));
        }
        let action: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad action `{}`", fields[0])))?;
        let target: f64 = fields[fields.len() - 1]
            .parse()
            .map_err(|_| parse_err(format!("bad target `{}`", fields[fields.len() - 1])))?;
        let coords: Vec<f64> = fields[1..fields.len() - 1]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(format!("bad coordinate `{t}`"))))
            .collect::<Result<_, _>>()?;
        let state = match mdp.manifold() {
            Some(m) => m.nearest_index(&coords),
            None => coords[0] as usize,
        };
        rows.push(CriticTarget { state, action, target });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::random_mdp;
    use rand::SeedableRng;

    #[test]
    fn zero_discount_returns_initial_pair_immediately() {
        let mdp = random_mdp(4, 2, 0.0, 3).unwrap();
        let policy = PolicyTable::uniform(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = sample_visitation(&mdp, &policy, &mut rng).unwrap();
            assert_eq!(s.trajectory_len, 0);
        }
    }

    #[test]
    fn zero_discount_next_pair_is_the_forced_successor() {
        // Deterministic chain 0→1→2→3→0 so the forced successor is known.
        let n = 4;
        let mut kernel = vec![0.0; n * 1 * n];
        for s in 0..n {
            kernel[(s * 1) * n + (s + 1) % n] = 1.0;
        }
        let mdp = Mdp::new(
            n,
            1,
            kernel,
            vec![0.0; n],
            1.0,
            0.0,
            vec![0.25; n],
            None,
        )
        .unwrap();
        let policy = PolicyTable::uniform(n, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in 0..n {
            let next = sample_next_visitation(&mdp, &policy, s, 0, &mut rng).unwrap();
            assert_eq!(next.state, (s + 1) % n);
            assert_eq!(next.trajectory_len, 0);
        }
    }

    #[test]
    fn stopping_time_mean_tracks_one_over_one_minus_gamma() {
        let gamma = 0.5;
        let mdp = random_mdp(6, 2, gamma, 9).unwrap();
        let policy = PolicyTable::uniform(6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let mut total = 0usize;
        for _ in 0..n {
            total += sample_visitation(&mdp, &policy, &mut rng).unwrap().trajectory_len + 1;
        }
        let mean = total as f64 / n as f64;
        let expected = 1.0 / (1.0 - gamma);
        assert!((mean - expected).abs() / expected < 0.02, "mean {mean} vs {expected}");
    }

    #[test]
    fn datasets_are_reproducible_given_the_seed() {
        let mdp = random_mdp(5, 3, 0.8, 21).unwrap();
        let policy = PolicyTable::uniform(5, 3);
        let a = make_critic_dataset(&mdp, &policy, 64, 77).unwrap();
        let b = make_critic_dataset(&mdp, &policy, 64, 77).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.oracle_calls, b.oracle_calls);
        let c = make_critic_dataset(&mdp, &policy, 64, 78).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn targets_stay_in_the_value_range() {
        let mdp = random_mdp(5, 2, 0.9, 5).unwrap();
        let policy = PolicyTable::uniform(5, 2);
        let ds = make_critic_dataset(&mdp, &policy, 256, 1).unwrap();
        let bound = mdp.value_bound();
        for row in &ds.rows {
            assert!(row.target >= 0.0 && row.target <= bound);
        }
        // Rows are grouped by action, N per action.
        for a in 0..2 {
            assert!(ds.action_rows(a).iter().all(|r| r.action == a));
        }
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let mdp = crate::env::point_goal_circle(16, 1, 0.9, 1.0, 2, 0).unwrap();
        let policy = PolicyTable::uniform(16, 2);
        let ds = make_critic_dataset(&mdp, &policy, 32, 5).unwrap();
        let dir = std::env::temp_dir().join("npmd_dataset_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dataset.csv");
        write_dataset_csv(&ds, &mdp, &path).unwrap();
        let back = read_dataset_csv(&mdp, &path).unwrap();
        assert_eq!(back.len(), ds.rows.len());
        for (orig, readback) in ds.rows.iter().zip(&back) {
            assert_eq!(orig.state, readback.state);
            assert_eq!(orig.action, readback.action);
            assert_eq!(orig.target, readback.target);
        }
    }
}
