//! Policy mirror descent drivers.
//!
//! Two loops share the same schedules and logging: an exact tabular baseline
//! that applies the closed-form mirror step per state and certifies a
//! geometric optimality-gap bound via a contracting potential, and the
//! sampled actor-critic loop in which both the action-value estimate and the
//! policy logits are convolutional networks fitted by empirical risk
//! minimization on geometrically-stopped rollouts.
//!
//! The step and temperature sequences are `η_k = (1-γ_ρ)/(C·γ_ρ^{k+1})` and
//! `λ_k = C·γ_ρ^k/(1-γ_ρ)`; both are evaluated in log space so that the
//! identities `η_k·λ_{k+1} = 1` and `λ_{k+1} = γ_ρ·λ_k` survive long runs
//! unharmed (the first is exact by construction: `ln η_k := -ln λ_{k+1}`).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{
    architecture_from_budget, check_restriction, eval_on_net, train_erm, CnnError, CnnModel,
    CnnSpec, RestrictedClassSpec, RestrictionReport, SizingConstants, TrainerConfig,
};
use crate::env::{
    mismatch_kappa, optimal_values, policy_evaluate, visitation_distribution, EnvError, Mdp,
    PolicyTable,
};
use crate::manifold::ManifoldError;
use crate::sampler::{make_critic_dataset, SamplerError};

/// Temperatures below this are handed off to an exact argmax policy.
pub const LAMBDA_FLOOR: f64 = 1e-9;

/// Errors from configuration, the training loops, and violated certificates.
#[derive(Debug, thiserror::Error)]
pub enum NpmdError {
    #[error("bad configuration: {reason}")]
    Config { reason: String },
    #[error("iteration {k}: optimality gap {gap} exceeds the certified bound {bound}")]
    GapBoundViolated { k: usize, gap: f64, bound: f64 },
    #[error("iteration {k}: potential grew from {previous} to {current}, above the {factor} contraction")]
    PotentialExpansion { k: usize, previous: f64, current: f64, factor: f64 },
    #[error("iteration {k}: actor target {value} escapes the certified band ±{bound}")]
    TargetOutOfRange { k: usize, value: f64, bound: f64 },
    #[error("state {state} has zero visitation under the reference policy")]
    ZeroVisitation { state: usize },
    #[error("this driver needs the MDP to carry a manifold net")]
    MissingManifold,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// The geometric step/temperature schedule, evaluated in log space.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    gamma_rho: f64,
    log_gamma_rho: f64,
    /// `ln(C / (1 - γ_ρ))`, the log of `λ_0`.
    log_coeff: f64,
}

impl Schedule {
    pub fn new(cost_bound: f64, gamma_rho: f64) -> Result<Self, NpmdError> {
        if !(cost_bound.is_finite() && cost_bound > 0.0) {
            return Err(NpmdError::Config {
                reason: format!("cost bound {cost_bound} must be positive"),
            });
        }
        if !(0.0 < gamma_rho && gamma_rho < 1.0) {
            return Err(NpmdError::Config {
                reason: format!("contraction factor {gamma_rho} must lie in (0, 1)"),
            });
        }
        Ok(Self {
            gamma_rho,
            log_gamma_rho: gamma_rho.ln(),
            log_coeff: cost_bound.ln() - (1.0 - gamma_rho).ln(),
        })
    }

    pub fn gamma_rho(&self) -> f64 {
        self.gamma_rho
    }

    /// `ln λ_k = ln C + k·ln γ_ρ - ln(1-γ_ρ)`.
    pub fn log_lambda(&self, k: usize) -> f64 {
        self.log_coeff + k as f64 * self.log_gamma_rho
    }

    /// `ln η_k`, defined as `-ln λ_{k+1}` so the product identity is exact.
    pub fn log_eta(&self, k: usize) -> f64 {
        -self.log_lambda(k + 1)
    }

    /// `λ_k = C·γ_ρ^k/(1-γ_ρ)`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.log_lambda(k).exp()
    }

    /// `η_k = (1-γ_ρ)/(C·γ_ρ^{k+1})`.
    pub fn eta(&self, k: usize) -> f64 {
        self.log_eta(k).exp()
    }
}

// ---------------------------------------------------------------------------
// Softmax policy head and the mirror-descent target
// ---------------------------------------------------------------------------

/// Max-subtracted softmax of raw logits: strictly positive, sums to one.
pub fn softmax_from_logits(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Action distribution from per-action scores at temperature `λ`:
/// `π(a) ∝ exp(f(a)/λ)`. Below [`LAMBDA_FLOOR`] the distribution degenerates
/// to an exact argmax with lowest-index tie-break.
pub fn policy_from_scores(scores: &[f64], lambda: f64) -> Vec<f64> {
    if lambda < LAMBDA_FLOOR {
        let mut best = 0usize;
        for (a, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = a;
            }
        }
        let mut out = vec![0.0; scores.len()];
        out[best] = 1.0;
        return out;
    }
    let logits: Vec<f64> = scores.iter().map(|&s| s / lambda).collect();
    softmax_from_logits(&logits)
}

/// Evaluates the per-action actor networks at `x` and applies the softmax
/// head at temperature `λ`.
pub fn softmax_policy(
    actor: &[CnnModel],
    lambda: f64,
    x: &[f64],
) -> Result<Vec<f64>, NpmdError> {
    let scores: Vec<f64> =
        actor.iter().map(|net| net.forward(x)).collect::<Result<_, _>>()?;
    Ok(policy_from_scores(&scores, lambda))
}

/// Materializes the softmax policy as a table over the MDP's net states.
pub fn policy_from_actor(
    mdp: &Mdp,
    actor: &[CnnModel],
    lambda: f64,
) -> Result<PolicyTable, NpmdError> {
    let net = mdp.manifold().ok_or(NpmdError::MissingManifold)?;
    let n = mdp.n_states();
    let n_actions = mdp.n_actions();
    let mut probs = Vec::with_capacity(n * n_actions);
    for s in 0..n {
        probs.extend(softmax_policy(actor, lambda, net.point(s))?);
    }
    Ok(PolicyTable::new(probs, n, n_actions)?)
}

/// The scaled mirror-descent target
/// `λ_{k+1}·g*_{k+1} = (λ_{k+1}/λ_k)·f - η_k·λ_{k+1}·q`; under the geometric
/// schedule the coefficients reduce to `γ_ρ·f - q`.
pub fn pmd_target_value(f: f64, q: f64, eta: f64, lambda_k: f64, lambda_next: f64) -> f64 {
    (lambda_next / lambda_k) * f - eta * lambda_next * q
}

/// [`pmd_target_value`] with the score and value read from the per-action
/// networks at `x`.
pub fn pmd_target(
    actor: &CnnModel,
    critic: &CnnModel,
    eta: f64,
    lambda_k: f64,
    lambda_next: f64,
    x: &[f64],
) -> Result<f64, NpmdError> {
    let f = actor.forward(x)?;
    let q = critic.forward(x)?;
    Ok(pmd_target_value(f, q, eta, lambda_k, lambda_next))
}

// ---------------------------------------------------------------------------
// Closed-form update, cross-checked by an independent numerical solve
// ---------------------------------------------------------------------------

/// Solves `argmin_{p ∈ Δ} ⟨q, p⟩ + (1/η)·KL(p ‖ π)` two ways — the closed
/// form `π·exp(-η·q)` renormalized via max-subtraction, and an independent
/// root-finding solve of the stationarity system by bisection on the
/// normalization multiplier — and asserts the two agree within total
/// variation `1e-8`. `η` is floored at `1e-12`, so `η = 0` degenerates to the
/// identity update. Panics on disagreement: that signals an implementation
/// bug, not a data problem.
pub fn closed_form_pmd_check(q_row: &[f64], pi_row: &[f64], eta: f64) -> Vec<f64> {
    assert!(!q_row.is_empty() && q_row.len() == pi_row.len());
    assert!(
        pi_row.iter().all(|&p| p > 0.0),
        "reference policy must be strictly positive"
    );
    let eta = eta.max(1e-12);
    let logits: Vec<f64> =
        pi_row.iter().zip(q_row).map(|(&p, &q)| p.ln() - eta * q).collect();
    let closed = softmax_from_logits(&logits);
    let numerical = bisection_pmd_solve(q_row, pi_row, eta);
    let tv = 0.5
        * closed
            .iter()
            .zip(&numerical)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    assert!(
        tv < 1e-8,
        "closed-form and numerical mirror steps disagree: TV = {tv:e}"
    );
    closed
}

/// Stationarity of the KL-regularized step forces `p_a = π_a·e^{-η·q_a + μ}`
/// for a multiplier `μ` fixed by `Σ p_a = 1`; the solver brackets `μ` and
/// bisects on the monotone mass function, evaluating plain exponentials with
/// the action values shifted by their minimum (the step is invariant under
/// constant shifts of `q`).
fn bisection_pmd_solve(q_row: &[f64], pi_row: &[f64], eta: f64) -> Vec<f64> {
    let q_min = q_row.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = q_row.iter().map(|&q| eta * (q - q_min)).collect();
    let mass = |mu: f64| -> f64 {
        pi_row
            .iter()
            .zip(&shifted)
            .map(|(&p, &s)| p * (mu - s).exp())
            .sum::<f64>()
    };
    // mass(0) ≤ 1 ≤ mass(s_max): the bracket is immediate.
    let mut lo = 0.0;
    let mut hi = shifted.iter().copied().fold(0.0f64, f64::max) + 1.0;
    debug_assert!(mass(lo) <= 1.0 + 1e-12 && mass(hi) >= 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let raw: Vec<f64> =
        pi_row.iter().zip(&shifted).map(|(&p, &s)| p * (mu - s).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / z).collect()
}

// ---------------------------------------------------------------------------
// Run configuration and logging
// ---------------------------------------------------------------------------

/// Configuration of one mirror-descent run. Optional fields are resolved
/// against the MDP: the contraction factor from the exact mismatch
/// coefficient, the cost bound from the environment, the value-smoothness
/// constant from the kernel report (falling back to the measured smoothness
/// of the initial exact action-values when the kernel constant is the
/// disjoint-support sentinel).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpmdConfig {
    pub iterations_k: usize,
    pub samples_per_action_n: usize,
    #[serde(default)]
    pub gamma_rho: Option<f64>,
    #[serde(default)]
    pub cost_bound_c: Option<f64>,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Critic sup-norm level; defaults to `C/(1-γ)`.
    #[serde(default)]
    pub sup_q: Option<f64>,
    /// Critic smoothness constant; see the resolution rules above.
    #[serde(default)]
    pub l_q: Option<f64>,
    /// Critic proximity slack; the actor slack is this over `1-γ_ρ`.
    #[serde(default)]
    pub epsilon_q: f64,
    /// Constant step size for the exact baseline's ablation mode; the
    /// geometric-rate certificates are not asserted when set.
    #[serde(default)]
    pub constant_step_eta: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub lipschitz_weight: f64,
    #[serde(default = "default_lipschitz_pairs")]
    pub lipschitz_pairs: usize,
    pub seed: u64,
    #[serde(default)]
    pub sizing: SizingConstants,
}

fn one() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    6
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_lipschitz_pairs() -> usize {
    8
}

impl NpmdConfig {
    /// Parses the configuration from TOML text (keys are the field names).
    pub fn from_toml_str(text: &str) -> Result<Self, NpmdError> {
        toml::from_str(text).map_err(|e| NpmdError::Config { reason: e.to_string() })
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<(), NpmdError> {
        let fail = |reason: String| Err(NpmdError::Config { reason });
        if self.samples_per_action_n == 0 {
            return fail("samples_per_action_n must be at least 1".into());
        }
        if let Some(gr) = self.gamma_rho {
            if !(mdp.gamma() <= gr && gr < 1.0) {
                return fail(format!(
                    "gamma_rho {gr} must lie in [γ={}, 1)",
                    mdp.gamma()
                ));
            }
        }
        if let Some(c) = self.cost_bound_c {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("cost_bound_c {c} must be positive"));
            }
        }
        if !(0.0 < self.alpha && self.alpha <= 1.0) {
            return fail(format!("alpha {} must lie in (0, 1]", self.alpha));
        }
        if self.epsilon_q < 0.0 {
            return fail(format!("epsilon_q {} must be nonnegative", self.epsilon_q));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }

    fn trainer(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            lipschitz_weight: self.lipschitz_weight,
            lipschitz_pairs: self.lipschitz_pairs,
            seed,
        }
    }
}

/// One run-log row. Fields that do not apply to a given row (the final row
/// records no training, tabular runs have no smoothness net) are `None` and
/// serialize as empty CSV cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `V^{π_k}(ρ) - V*(ρ)`, exact.
    pub optimality_gap: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_sup: Option<f64>,
    pub critic_sup_pass: Option<bool>,
    pub critic_lip: Option<f64>,
    pub critic_lip_pass: Option<bool>,
    pub actor_sup: Option<f64>,
    pub actor_sup_pass: Option<bool>,
    pub actor_lip: Option<f64>,
    pub actor_lip_pass: Option<bool>,
    /// `1 + χ²(ν^{π_{k+1}} ‖ ν^{π_k})`.
    pub chi2_next: Option<f64>,
    /// `1 + χ²(ν^{π*} ‖ ν^{π_k})`.
    pub chi2_star: Option<f64>,
    pub eta: f64,
    pub lambda: f64,
    /// Environment oracle calls consumed before this iteration — the cost of
    /// reaching the policy whose gap this row reports.
    pub cumulative_samples: u64,
    /// Wall time of the iteration; written to the timing sidecar, never to
    /// the run log (re-runs must produce byte-identical CSVs).
    pub wall_ms: f64,
}

/// Fixed run-log CSV header.
pub const RUNLOG_HEADER: &str = "k,optimality_gap,critic_loss,actor_loss,critic_sup,critic_sup_pass,critic_lip,critic_lip_pass,actor_sup,actor_sup_pass,actor_lip,actor_lip_pass,chi2_next,chi2_star,eta,lambda,cumulative_samples";

fn push_opt(line: &mut String, v: Option<f64>) {
    match v {
        Some(x) => {
            let _ = write!(line, ",{x:.17e}");
        }
        None => line.push(','),
    }
}

fn push_opt_bool(line: &mut String, v: Option<bool>) {
    match v {
        Some(b) => {
            let _ = write!(line, ",{b}");
        }
        None => line.push(','),
    }
}

/// Serializes records to the run-log CSV; deterministic byte-for-byte given
/// equal records (wall time deliberately excluded).
pub fn write_runlog_csv(records: &[IterationRecord], path: &Path) -> Result<(), NpmdError> {
    let mut out = String::from(RUNLOG_HEADER);
    out.push('\n');
    for r in records {
        let mut line = format!("{},{:.17e}", r.k, r.optimality_gap);
        push_opt(&mut line, r.critic_loss);
        push_opt(&mut line, r.actor_loss);
        push_opt(&mut line, r.critic_sup);
        push_opt_bool(&mut line, r.critic_sup_pass);
        push_opt(&mut line, r.critic_lip);
        push_opt_bool(&mut line, r.critic_lip_pass);
        push_opt(&mut line, r.actor_sup);
        push_opt_bool(&mut line, r.actor_sup_pass);
        push_opt(&mut line, r.actor_lip);
        push_opt_bool(&mut line, r.actor_lip_pass);
        push_opt(&mut line, r.chi2_next);
        push_opt(&mut line, r.chi2_star);
        let _ = write!(
            line,
            ",{:.17e},{:.17e},{}",
            r.eta, r.lambda, r.cumulative_samples
        );
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes per-iteration wall times to a sidecar CSV (non-deterministic by
/// nature, hence kept out of the run log).
pub fn write_timing_csv(records: &[IterationRecord], path: &Path) -> Result<(), NpmdError> {
    let mut out = String::from("k,wall_ms\n");
    for r in records {
        let _ = writeln!(out, "{},{:.3}", r.k, r.wall_ms);
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Exact diagnostics
// ---------------------------------------------------------------------------

/// Exact critic risk `E_{s~ν^π}[ Σ_a (q̂(s,a) - Q^π(s,a))² ]` as a finite sum
/// over the net.
pub fn exact_critic_loss(
    mdp: &Mdp,
    pi: &PolicyTable,
    q_approx: impl Fn(usize, usize) -> f64,
) -> Result<f64, NpmdError> {
    let vals = policy_evaluate(mdp, pi)?;
    let nu = visitation_distribution(mdp, pi)?;
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        let mut row = 0.0;
        for a in 0..mdp.n_actions() {
            let e = q_approx(s, a) - vals.q_at(s, a);
            row += e * e;
        }
        total += nu.states[s] * row;
    }
    Ok(total)
}

/// Exact actor risk
/// `E_{s~ν^{π_k}}[ Σ_a (f_next(s,a)/λ_{k+1} - f_prev(s,a)/λ_k + η_k·q̂(s,a))² ]`.
#[allow(clippy::too_many_arguments)]
pub fn exact_actor_loss(
    mdp: &Mdp,
    pi_k: &PolicyTable,
    f_next: impl Fn(usize, usize) -> f64,
    f_prev: impl Fn(usize, usize) -> f64,
    q_approx: impl Fn(usize, usize) -> f64,
    eta_k: f64,
    lambda_k: f64,
    lambda_next: f64,
) -> Result<f64, NpmdError> {
    let nu = visitation_distribution(mdp, pi_k)?;
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        let mut row = 0.0;
        for a in 0..mdp.n_actions() {
            let e = f_next(s, a) / lambda_next - f_prev(s, a) / lambda_k
                + eta_k * q_approx(s, a);
            row += e * e;
        }
        total += nu.states[s] * row;
    }
    Ok(total)
}

/// Concentrability diagnostics `1 + χ²(ν^π ‖ ν^{π_k})` for
/// `π ∈ {π_{k+1}, π*}`, exact finite sums over states.
pub fn concentrability_diagnostic(
    mdp: &Mdp,
    pi_k: &PolicyTable,
    pi_next: &PolicyTable,
    pi_star: &PolicyTable,
) -> Result<(f64, f64), NpmdError> {
    let nu_k = visitation_distribution(mdp, pi_k)?;
    let mut ratios = [0.0f64; 2];
    for (slot, pi) in [pi_next, pi_star].into_iter().enumerate() {
        let nu = visitation_distribution(mdp, pi)?;
        let mut sum = 0.0;
        for s in 0..mdp.n_states() {
            let denom = nu_k.states[s];
            if denom <= 0.0 {
                if nu.states[s] > 0.0 {
                    return Err(NpmdError::ZeroVisitation { state: s });
                }
                continue;
            }
            sum += nu.states[s] * nu.states[s] / denom;
        }
        ratios[slot] = sum;
    }
    Ok((ratios[0], ratios[1]))
}

// ---------------------------------------------------------------------------
// Exact tabular baseline
// ---------------------------------------------------------------------------

/// Options for the exact baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactPmdOptions {
    pub iterations: usize,
    /// Override of the contraction factor; `None` takes the exact mismatch
    /// value `1 - (1-γ)/κ`. Values above the exact one keep the (slower)
    /// certificates valid.
    pub gamma_rho: Option<f64>,
    /// Schedule-level override of the cost bound `C`. Declaring a smaller
    /// `C` enlarges every step `η_k`; the geometric-rate certificates assume
    /// the true bound and are skipped when this is set.
    pub cost_bound: Option<f64>,
    /// Constant-step ablation; disables the geometric-rate certificates.
    pub constant_eta: Option<f64>,
}

/// Result of the exact baseline run.
#[derive(Debug, Clone)]
pub struct ExactPmdRun {
    pub records: Vec<IterationRecord>,
    pub gamma_rho: f64,
    pub kappa: f64,
    pub cost_bound: f64,
    /// Certified bound `γ_ρ^k·(1+ln|𝒜|)·C/(1-γ)` per iteration.
    pub gap_bounds: Vec<f64>,
    /// Potential `gap_k + (C·γ_ρ^k/(1-γ)) · E_{ν^{π*}}[KL(π*‖π_k)]`.
    pub potentials: Vec<f64>,
}

/// Runs mirror descent with zero approximation error: exact action-values,
/// the exact closed-form update per state (maintained in log space), and the
/// geometric schedule. Under the geometric schedule the optimality gap is
/// certified against `γ_ρ^k·(1+ln|𝒜|)·C/(1-γ)` and the KL-weighted potential
/// against a per-step `γ_ρ` contraction (both within `1e-9`); a violation is
/// an error. The constant-step ablation skips both certificates.
pub fn run_exact_pmd(mdp: &Mdp, opts: &ExactPmdOptions) -> Result<ExactPmdRun, NpmdError> {
    let n = mdp.n_states();
    let n_actions = mdp.n_actions();
    let gamma = mdp.gamma();
    let cost_bound = opts.cost_bound.unwrap_or_else(|| mdp.cost_bound());
    let opt = optimal_values(mdp)?;
    let kappa_report = mismatch_kappa(mdp, &opt.policy)?;
    let gamma_rho = match opts.gamma_rho {
        Some(gr) => {
            if !(gamma <= gr && gr < 1.0) {
                return Err(NpmdError::Config {
                    reason: format!("gamma_rho {gr} must lie in [γ={gamma}, 1)"),
                });
            }
            gr
        }
        None => kappa_report.gamma_rho,
    };
    let schedule = Schedule::new(cost_bound, gamma_rho)?;
    let assert_rate = opts.constant_eta.is_none() && opts.cost_bound.is_none();
    let v_star_rho = opt.values.v_rho(mdp.rho());
    let nu_star = visitation_distribution(mdp, &opt.policy)?;
    // Optimal action per state (the greedy table is one-hot).
    let star_action: Vec<usize> = (0..n)
        .map(|s| {
            (0..n_actions)
                .find(|&a| opt.policy.prob(s, a) > 0.5)
                .expect("greedy policy rows are one-hot")
        })
        .collect();

    // Log-space policy table, initialized uniform.
    let mut log_pi = vec![-(n_actions as f64).ln(); n * n_actions];
    let materialize = |log_pi: &[f64]| -> Result<PolicyTable, NpmdError> {
        let mut probs = vec![0.0; n * n_actions];
        for s in 0..n {
            let row = &log_pi[s * n_actions..][..n_actions];
            let p = softmax_from_logits(row);
            probs[s * n_actions..][..n_actions].copy_from_slice(&p);
        }
        Ok(PolicyTable::new(probs, n, n_actions)?)
    };

    let bound_coeff = (1.0 + (n_actions as f64).ln()) * cost_bound / (1.0 - gamma);
    let mut records = Vec::with_capacity(opts.iterations + 1);
    let mut gap_bounds = Vec::with_capacity(opts.iterations + 1);
    let mut potentials = Vec::with_capacity(opts.iterations + 1);

    let mut pi_k = materialize(&log_pi)?;
    for k in 0..=opts.iterations {
        let clock = std::time::Instant::now();
        let vals = policy_evaluate(mdp, &pi_k)?;
        let gap = vals.v_rho(mdp.rho()) - v_star_rho;
        let contraction_pow = gamma_rho.powi(k as i32);
        let bound = contraction_pow * bound_coeff;
        // E_{ν^{π*}}[KL(π*‖π_k)] = Σ_s ν*(s)·(-ln π_k(a*(s)|s)).
        let kl_term: f64 = (0..n)
            .map(|s| -nu_star.states[s] * log_pi[s * n_actions + star_action[s]])
            .sum();
        let potential = gap + contraction_pow * cost_bound / (1.0 - gamma) * kl_term;
        if assert_rate {
            if gap > bound + 1e-9 {
                return Err(NpmdError::GapBoundViolated { k, gap, bound });
            }
            if let Some(&prev) = potentials.last() {
                if potential > gamma_rho * prev + 1e-9 {
                    return Err(NpmdError::PotentialExpansion {
                        k,
                        previous: prev,
                        current: potential,
                        factor: gamma_rho,
                    });
                }
            }
        }
        gap_bounds.push(bound);
        potentials.push(potential);

        let mut record = IterationRecord {
            k,
            optimality_gap: gap,
            eta: opts.constant_eta.unwrap_or_else(|| schedule.eta(k)),
            lambda: schedule.lambda(k),
            cumulative_samples: 0,
            ..Default::default()
        };
        if k == opts.iterations {
            record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            records.push(record);
            break;
        }

        // Mirror step per state, then renormalize in log space.
        let eta_k = record.eta;
        for s in 0..n {
            let row = &mut log_pi[s * n_actions..][..n_actions];
            for (a, l) in row.iter_mut().enumerate() {
                *l -= eta_k * vals.q_at(s, a);
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z = row.iter().map(|&l| (l - m).exp()).sum::<f64>().ln() + m;
            for l in row.iter_mut() {
                *l -= z;
            }
        }
        let pi_next = materialize(&log_pi)?;
        record.critic_loss = Some(0.0);
        record.actor_loss = Some(0.0);
        let (chi2_next, chi2_star) =
            concentrability_diagnostic(mdp, &pi_k, &pi_next, &opt.policy)?;
        record.chi2_next = Some(chi2_next);
        record.chi2_star = Some(chi2_star);
        record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        records.push(record);
        pi_k = pi_next;
    }

    Ok(ExactPmdRun {
        records,
        gamma_rho,
        kappa: kappa_report.kappa,
        cost_bound,
        gap_bounds,
        potentials,
    })
}

// ---------------------------------------------------------------------------
// Neural actor-critic loop
// ---------------------------------------------------------------------------

/// Per-action actor and critic networks plus the schedule position.
#[derive(Debug, Clone)]
pub struct NpmdState {
    pub k: usize,
    pub actor: Vec<CnnModel>,
    pub critic: Vec<CnnModel>,
    pub eta: f64,
    pub lambda: f64,
}

/// Result of a neural run: the log, resolved constants, and final networks.
#[derive(Debug)]
pub struct NpmdRun {
    pub records: Vec<IterationRecord>,
    pub state: NpmdState,
    pub gamma_rho: f64,
    pub kappa: f64,
    pub cost_bound: f64,
    /// Critic smoothness constant actually used (after resolution).
    pub l_q: f64,
    pub architecture: CnnSpec,
    pub oracle_calls: u64,
}

fn derive_seed(base: u64, k: usize, tag: u64) -> u64 {
    let mut z = base
        ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tag.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the sampled actor-critic loop on a net-carried MDP.
///
/// Per iteration: materialize `π_k` from the actor heads at `λ_k`; draw `N`
/// states per action from the discounted visitation (with the geometric
/// next-pair estimator for critic targets); fit the per-action critics by
/// ERM inside the value class (sup level `C/(1-γ)`, constant `L_Q`, slack
/// `ε_Q`); form actor targets `γ_ρ·f_{θ_k} - Q_{w_k}` at the same sampled
/// states and fit the next actor inside the scaled class (level
/// `C/((1-γ_ρ)(1-γ))`, constant `L_Q/(1-γ_ρ)`, slack `ε_Q/(1-γ_ρ)`); advance
/// the schedule. The exact optimality gap, exact critic/actor risks,
/// restriction audits, and concentrability diagnostics are logged every
/// iteration; restriction violations are recorded, never fatal. Actor
/// targets are certified against `C/((1-γ_ρ)(1-γ)) + 1e-9` — a violation is
/// an error, as is a non-finite training loss.
pub fn run_npmd(mdp: &Mdp, config: &NpmdConfig) -> Result<NpmdRun, NpmdError> {
    config.validate(mdp)?;
    let net = mdp.manifold().ok_or(NpmdError::MissingManifold)?;
    let n_actions = mdp.n_actions();
    let gamma = mdp.gamma();
    let cost_bound = config.cost_bound_c.unwrap_or_else(|| mdp.cost_bound());

    let opt = optimal_values(mdp)?;
    let kappa_report = mismatch_kappa(mdp, &opt.policy)?;
    let gamma_rho = config.gamma_rho.unwrap_or(kappa_report.gamma_rho);
    let schedule = Schedule::new(cost_bound, gamma_rho)?;
    let v_star_rho = opt.values.v_rho(mdp.rho());

    // Smoothness constant: config override, else the kernel-report bound,
    // else (when the kernel constant is the disjoint-support sentinel) 1.5x
    // the measured constant of the initial exact action-values.
    let l_q = match config.l_q {
        Some(l) => l,
        None => {
            let report = crate::env::lipschitz_mdp_report(mdp, config.alpha)?;
            if report.q_bound.is_finite() {
                report.q_bound
            } else {
                let uniform = PolicyTable::uniform(mdp.n_states(), n_actions);
                let vals = policy_evaluate(mdp, &uniform)?;
                let mut worst = 0.0f64;
                for a in 0..n_actions {
                    let col: Vec<f64> =
                        (0..mdp.n_states()).map(|s| vals.q_at(s, a)).collect();
                    worst = worst.max(net.estimate_lipschitz(&col, config.alpha, 0.0)?);
                }
                1.5 * worst
            }
        }
    };

    let sup_q = config.sup_q.unwrap_or(cost_bound / (1.0 - gamma));
    let actor_scale = 1.0 / (1.0 - gamma_rho);
    let critic_class = RestrictedClassSpec {
        sup_bound: sup_q,
        constant: l_q,
        exponent: config.alpha,
        proximity: config.epsilon_q,
        check_net: net.clone(),
    };
    let actor_class = RestrictedClassSpec {
        sup_bound: sup_q * actor_scale,
        constant: l_q * actor_scale,
        exponent: config.alpha,
        proximity: config.epsilon_q * actor_scale,
        check_net: net.clone(),
    };
    // With both truncation stages installed the scaled targets obey
    // `γ_ρ·A_actor + A_critic = A_critic/(1-γ_ρ) = A_actor`, which at the
    // default critic level equals `C/((1-γ_ρ)(1-γ))`.
    let target_bound = actor_class.sup_bound;

    let spec = architecture_from_budget(
        config.samples_per_action_n,
        net.ambient_dim(),
        net.intrinsic_dim(),
        config.alpha,
        &config.sizing,
    )?;

    // θ₀ = 0: the uniform policy at any temperature.
    let mut actor: Vec<CnnModel> = (0..n_actions)
        .map(|_| {
            let mut m = CnnModel::zeroed(spec)?;
            m.clamp = Some(actor_class.sup_bound);
            Ok(m)
        })
        .collect::<Result<_, NpmdError>>()?;
    let mut critic: Vec<CnnModel> = (0..n_actions)
        .map(|_| {
            let mut m = CnnModel::zeroed(spec)?;
            m.clamp = Some(critic_class.sup_bound);
            Ok(m)
        })
        .collect::<Result<_, NpmdError>>()?;

    let d = net.ambient_dim();
    let mut records: Vec<IterationRecord> = Vec::with_capacity(config.iterations_k + 1);
    let mut oracle_calls = 0u64;

    let mut pi_k = policy_from_actor(mdp, &actor, schedule.lambda(0))?;
    for k in 0..=config.iterations_k {
        let clock = std::time::Instant::now();
        let vals_k = policy_evaluate(mdp, &pi_k)?;
        let gap = vals_k.v_rho(mdp.rho()) - v_star_rho;
        let mut record = IterationRecord {
            k,
            optimality_gap: gap,
            eta: schedule.eta(k),
            lambda: schedule.lambda(k),
            cumulative_samples: oracle_calls,
            ..Default::default()
        };
        if k == config.iterations_k {
            record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            records.push(record);
            break;
        }

        // --- Critic fit: N geometric-stopping rows per action.
        let dataset = make_critic_dataset(
            mdp,
            &pi_k,
            config.samples_per_action_n,
            derive_seed(config.seed, k, 1),
        )?;
        oracle_calls += dataset.oracle_calls as u64;
        for a in 0..n_actions {
            let rows = dataset.action_rows(a);
            let mut xs = Vec::with_capacity(rows.len() * d);
            let mut ys = Vec::with_capacity(rows.len());
            for row in rows {
                xs.extend_from_slice(net.point(row.state));
                ys.push(row.target);
            }
            // Warm restart after the first iteration: the exact values drift
            // by O(γ_ρ^k), so the previous fit is the natural initializer.
            if k == 0 {
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                critic[a] = CnnModel {
                    spec,
                    params: crate::cnn::CnnParams::init(
                        &spec,
                        derive_seed(config.seed, k, 2 + a as u64),
                        mean,
                    ),
                    clamp: Some(critic_class.sup_bound),
                };
            }
            train_erm(
                &mut critic[a],
                &xs,
                &ys,
                Some(&critic_class),
                &config.trainer(derive_seed(config.seed, k, 100 + a as u64)),
            )?;
        }

        // --- Actor fit at the same sampled states.
        let lambda_k = schedule.lambda(k);
        let lambda_next = schedule.lambda(k + 1);
        let eta_k = schedule.eta(k);
        let prev_actor = actor.clone();
        for a in 0..n_actions {
            let rows = dataset.action_rows(a);
            let mut xs = Vec::with_capacity(rows.len() * d);
            let mut ys = Vec::with_capacity(rows.len());
            for row in rows {
                let x = net.point(row.state);
                let t = pmd_target(
                    &prev_actor[a],
                    &critic[a],
                    eta_k,
                    lambda_k,
                    lambda_next,
                    x,
                )?;
                if t.abs() > target_bound + 1e-9 {
                    return Err(NpmdError::TargetOutOfRange {
                        k,
                        value: t,
                        bound: target_bound,
                    });
                }
                xs.extend_from_slice(x);
                ys.push(t);
            }
            if k == 0 {
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                actor[a] = CnnModel {
                    spec,
                    params: crate::cnn::CnnParams::init(
                        &spec,
                        derive_seed(config.seed, k, 50 + a as u64),
                        mean,
                    ),
                    clamp: Some(actor_class.sup_bound),
                };
            }
            train_erm(
                &mut actor[a],
                &xs,
                &ys,
                Some(&actor_class),
                &config.trainer(derive_seed(config.seed, k, 200 + a as u64)),
            )?;
        }

        // --- Exact diagnostics on the net.
        let critic_vals: Vec<Vec<f64>> = critic
            .iter()
            .map(|m| eval_on_net(m, net))
            .collect::<Result<_, _>>()?;
        let prev_actor_vals: Vec<Vec<f64>> = prev_actor
            .iter()
            .map(|m| eval_on_net(m, net))
            .collect::<Result<_, _>>()?;
        let next_actor_vals: Vec<Vec<f64>> = actor
            .iter()
            .map(|m| eval_on_net(m, net))
            .collect::<Result<_, _>>()?;
        record.critic_loss =
            Some(exact_critic_loss(mdp, &pi_k, |s, a| critic_vals[a][s])?);
        record.actor_loss = Some(exact_actor_loss(
            mdp,
            &pi_k,
            |s, a| next_actor_vals[a][s],
            |s, a| prev_actor_vals[a][s],
            |s, a| critic_vals[a][s],
            eta_k,
            lambda_k,
            lambda_next,
        )?);

        let (critic_report, actor_report) = (
            merge_restriction_reports(&critic, &critic_class)?,
            merge_restriction_reports(&actor, &actor_class)?,
        );
        record.critic_sup = Some(critic_report.sup_norm);
        record.critic_sup_pass = Some(critic_report.sup_pass);
        record.critic_lip = Some(critic_report.lipschitz_estimate);
        record.critic_lip_pass = Some(critic_report.lipschitz_pass);
        record.actor_sup = Some(actor_report.sup_norm);
        record.actor_sup_pass = Some(actor_report.sup_pass);
        record.actor_lip = Some(actor_report.lipschitz_estimate);
        record.actor_lip_pass = Some(actor_report.lipschitz_pass);

        let pi_next = policy_from_actor(mdp, &actor, lambda_next)?;
        let (chi2_next, chi2_star) =
            concentrability_diagnostic(mdp, &pi_k, &pi_next, &opt.policy)?;
        record.chi2_next = Some(chi2_next);
        record.chi2_star = Some(chi2_star);
        record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        records.push(record);
        pi_k = pi_next;
    }

    let final_k = config.iterations_k;
    Ok(NpmdRun {
        records,
        state: NpmdState {
            k: final_k,
            actor,
            critic,
            eta: schedule.eta(final_k),
            lambda: schedule.lambda(final_k),
        },
        gamma_rho,
        kappa: kappa_report.kappa,
        cost_bound,
        l_q,
        architecture: spec,
        oracle_calls,
    })
}

/// Worst-case restriction report across a family of per-action networks.
fn merge_restriction_reports(
    models: &[CnnModel],
    class: &RestrictedClassSpec,
) -> Result<RestrictionReport, NpmdError> {
    let mut merged = RestrictionReport {
        sup_norm: 0.0,
        sup_pass: true,
        lipschitz_estimate: 0.0,
        lipschitz_pass: true,
    };
    for m in models {
        let r = check_restriction(m, class)?;
        merged.sup_norm = merged.sup_norm.max(r.sup_norm);
        merged.sup_pass &= r.sup_pass;
        merged.lipschitz_estimate = merged.lipschitz_estimate.max(r.lipschitz_estimate);
        merged.lipschitz_pass &= r.lipschitz_pass;
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::random_mdp;

    #[test]
    fn schedule_identities_are_exact_in_log_space() {
        let schedule = Schedule::new(2.5, 0.93).unwrap();
        for k in 0..200 {
            assert_eq!(
                schedule.log_eta(k) + schedule.log_lambda(k + 1),
                0.0,
                "log identity broke at k = {k}"
            );
            let ratio = schedule.log_lambda(k + 1) - schedule.log_lambda(k);
            assert!(
                (ratio - 0.93f64.ln()).abs() < 1e-12,
                "temperature ratio drifted at k = {k}: {ratio}"
            );
            assert!((schedule.eta(k) * schedule.lambda(k + 1) - 1.0).abs() < 1e-12);
        }
        // Closed forms at k = 0.
        assert!((schedule.lambda(0) - 2.5 / 0.07).abs() < 1e-9);
        assert!((schedule.eta(0) - 0.07 / (2.5 * 0.93)).abs() < 1e-12);
    }

    #[test]
    fn softmax_head_matches_hand_arithmetic() {
        // Equal scores are uniform at any temperature.
        let p = policy_from_scores(&[0.4, 0.4, 0.4], 1.7);
        for &v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // Huge temperature washes out bounded scores.
        let p = policy_from_scores(&[3.0, -2.0], 1e9);
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
        // Two actions, scores (2, 0) at unit temperature.
        let p = policy_from_scores(&[2.0, 0.0], 1.0);
        let e2 = 2.0f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e2 + 1.0)).abs() < 1e-12);
        // Below the temperature floor: exact argmax, lowest index on ties.
        let p = policy_from_scores(&[1.0, 5.0, 5.0], 1e-12);
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn policy_ignores_state_constant_score_shifts() {
        // Adding the same offset to every action's score — e.g. a
        // state-dependent constant folded into the update targets — must
        // leave the softmax policy unchanged.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let shift = rng.random_range(-100.0..100.0);
            let lambda = 10f64.powf(rng.random_range(-6.0..2.0));
            let base = policy_from_scores(&scores, lambda);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let moved = policy_from_scores(&shifted, lambda);
            for (b, m) in base.iter().zip(&moved) {
                assert!((b - m).abs() < 1e-12, "shift changed the policy");
            }
        }
    }

    #[test]
    fn target_kernel_covers_the_three_regimes() {
        // Zero step with frozen temperature: the score passes through.
        assert_eq!(pmd_target_value(1.7, 9.0, 0.0, 2.0, 2.0), 1.7);
        // Zero score: a pure scaled value step.
        let schedule = Schedule::new(1.0, 0.9).unwrap();
        let t = pmd_target_value(
            0.0,
            3.0,
            schedule.eta(4),
            schedule.lambda(4),
            schedule.lambda(5),
        );
        assert!((t + 3.0).abs() < 1e-12, "expected -q, got {t}");
        // Schedule arithmetic: γ_ρ·f - q.
        let t = pmd_target_value(
            2.0,
            1.0,
            schedule.eta(0),
            schedule.lambda(0),
            schedule.lambda(1),
        );
        assert!((t - 0.8).abs() < 1e-12);
    }

    #[test]
    fn closed_form_update_honors_shift_invariance_and_eta_zero() {
        let pi = vec![0.5, 0.3, 0.2];
        // Constant action values leave the policy unchanged.
        let p = closed_form_pmd_check(&[4.2, 4.2, 4.2], &pi, 0.7);
        for (got, want) in p.iter().zip(&pi) {
            assert!((got - want).abs() < 1e-12);
        }
        // η = 0 degenerates to the identity update.
        let p = closed_form_pmd_check(&[3.0, -1.0, 0.5], &pi, 0.0);
        for (got, want) in p.iter().zip(&pi) {
            assert!((got - want).abs() < 1e-9);
        }
        // Adding a state constant to the target leaves the softmax unchanged.
        let scores = [0.3, -0.4, 0.9];
        let shifted: Vec<f64> = scores.iter().map(|s| s + 11.0).collect();
        let p1 = policy_from_scores(&scores, 0.37);
        let p2 = policy_from_scores(&shifted, 0.37);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_check_survives_seeded_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(2..=6);
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let pi: Vec<f64> = raw.iter().map(|r| r / z).collect();
            let eta = rng.random_range(0.01..4.0);
            let p = closed_form_pmd_check(&q, &pi, eta);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn exact_pmd_on_a_single_state_matches_the_bandit_recursion() {
        // One state, two actions: the run reduces to a two-armed bandit whose
        // mirror step we can replay by hand on the log-odds.
        let mdp = Mdp::new(
            1,
            2,
            vec![1.0, 1.0],
            vec![0.3, 0.9],
            1.0,
            0.9,
            vec![1.0],
            None,
        )
        .unwrap();
        let k_max = 40;
        let run = run_exact_pmd(
            &mdp,
            &ExactPmdOptions { iterations: k_max, gamma_rho: None, cost_bound: None, constant_eta: None },
        )
        .unwrap();
        assert_eq!(run.records.len(), k_max + 1);
        assert!((run.gamma_rho - 0.9).abs() < 1e-12, "κ = 1 here, so γ_ρ = γ");

        // Replay: gap_k = π_k(bad)·(c_bad - c_good)/(1-γ); the mirror step
        // shifts the log-odds by η_k·(Q(bad) - Q(good)) = η_k·Δc/(1-γ)·...
        // — for a single state Q(a) = c(a) + γ·V, so ΔQ = Δc exactly.
        let schedule = Schedule::new(1.0, 0.9).unwrap();
        let mut log_odds = 0.0f64; // ln(π(good)/π(bad)), uniform start.
        for (k, r) in run.records.iter().enumerate() {
            let p_bad = 1.0 / (1.0 + log_odds.exp());
            let expected_gap = p_bad * 0.6 / (1.0 - 0.9);
            assert!(
                (r.optimality_gap - expected_gap).abs() < 1e-9,
                "k = {k}: {} vs {expected_gap}",
                r.optimality_gap
            );
            log_odds += schedule.eta(k) * 0.6;
        }
        // Aggressive late steps drive the gap to zero at machine scale.
        assert!(run.records[k_max].optimality_gap < 1e-12);
        for w in run.records.windows(2) {
            assert!(w[1].optimality_gap <= w[0].optimality_gap + 1e-12);
        }
    }

    #[test]
    fn zero_cost_mdp_keeps_zero_gap() {
        let mut mdp = random_mdp(6, 3, 0.9, 5).unwrap();
        // Rebuild with zero cost.
        let kernel: Vec<f64> = (0..6 * 3)
            .flat_map(|row| mdp.kernel_row(row / 3, row % 3).to_vec())
            .collect();
        mdp = Mdp::new(6, 3, kernel, vec![0.0; 18], 1.0, 0.9, mdp.rho().to_vec(), None)
            .unwrap();
        let run = run_exact_pmd(
            &mdp,
            &ExactPmdOptions { iterations: 5, gamma_rho: None, cost_bound: None, constant_eta: None },
        )
        .unwrap();
        for r in &run.records {
            assert!(r.optimality_gap.abs() < 1e-12);
        }
    }

    #[test]
    fn critic_loss_localizes_a_single_state_perturbation() {
        let mdp = random_mdp(8, 2, 0.9, 11).unwrap();
        let pi = PolicyTable::uniform(8, 2);
        let vals = policy_evaluate(&mdp, &pi).unwrap();
        let nu = visitation_distribution(&mdp, &pi).unwrap();
        let (s0, a0, delta) = (3usize, 1usize, 0.37);
        let loss = exact_critic_loss(&mdp, &pi, |s, a| {
            vals.q_at(s, a) + if s == s0 && a == a0 { delta } else { 0.0 }
        })
        .unwrap();
        let expected = nu.states[s0] * delta * delta;
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        // Exact values give zero loss.
        let zero = exact_critic_loss(&mdp, &pi, |s, a| vals.q_at(s, a)).unwrap();
        assert!(zero.abs() < 1e-15);
    }

    #[test]
    fn actor_loss_vanishes_when_the_next_scores_hit_the_target() {
        let mdp = random_mdp(8, 2, 0.9, 13).unwrap();
        let pi = PolicyTable::uniform(8, 2);
        let vals = policy_evaluate(&mdp, &pi).unwrap();
        let schedule = Schedule::new(1.0, 0.95).unwrap();
        let (eta, lk, ln) = (schedule.eta(2), schedule.lambda(2), schedule.lambda(3));
        // f_prev arbitrary smooth scores; f_next = λ_{k+1}·target exactly.
        let f_prev = |s: usize, a: usize| 0.3 * s as f64 - 0.1 * a as f64;
        let loss = exact_actor_loss(
            &mdp,
            &pi,
            |s, a| ln * (f_prev(s, a) / lk - eta * vals.q_at(s, a)),
            f_prev,
            |s, a| vals.q_at(s, a),
            eta,
            lk,
            ln,
        )
        .unwrap();
        assert!(loss.abs() < 1e-18, "actor loss {loss}");
    }

    #[test]
    fn concentrability_diagnostic_degenerate_cases() {
        let mdp = random_mdp(8, 2, 0.9, 7).unwrap();
        let pi = PolicyTable::uniform(8, 2);
        let (a, b) = concentrability_diagnostic(&mdp, &pi, &pi, &pi).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);

        let single = Mdp::new(1, 2, vec![1.0, 1.0], vec![0.1, 0.2], 1.0, 0.5, vec![1.0], None)
            .unwrap();
        let pi1 = PolicyTable::uniform(1, 2);
        let greedy = PolicyTable::greedy_from_q(&[0.1, 0.2], 1, 2);
        let (a, b) = concentrability_diagnostic(&single, &pi1, &greedy, &greedy).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn runlog_roundtrip_is_byte_stable() {
        let records = vec![
            IterationRecord {
                k: 0,
                optimality_gap: 0.125,
                critic_loss: Some(1e-3),
                actor_loss: Some(2e-3),
                critic_sup: Some(9.0),
                critic_sup_pass: Some(true),
                chi2_next: Some(1.5),
                chi2_star: Some(2.5),
                eta: 0.1,
                lambda: 10.0,
                cumulative_samples: 1234,
                wall_ms: 7.7,
                ..Default::default()
            },
            IterationRecord {
                k: 1,
                optimality_gap: 0.0625,
                eta: 0.2,
                lambda: 9.0,
                cumulative_samples: 2468,
                ..Default::default()
            },
        ];
        let dir = std::env::temp_dir().join("npmd_runlog_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("runlog.csv");
        write_runlog_csv(&records, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_runlog_csv(&records, &path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with(RUNLOG_HEADER));
        assert!(!text.contains("7.7"), "wall time must stay out of the run log");
        // Blank cells for the final row's training columns.
        assert!(text.lines().nth(2).unwrap().contains(",,"));
    }

    #[test]
    fn config_parses_from_toml_with_defaults() {
        let cfg = NpmdConfig::from_toml_str(
            "iterations_k = 5\nsamples_per_action_n = 64\nseed = 3\n\
             [sizing]\nkappa_j = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.iterations_k, 5);
        assert_eq!(cfg.epochs, 6);
        assert!((cfg.sizing.kappa_j - 0.1).abs() < 1e-15);
        assert!((cfg.sizing.kappa_m - 1.0).abs() < 1e-15);
        assert!(cfg.gamma_rho.is_none());
        let err = NpmdConfig::from_toml_str("iterations_k = 1\n").unwrap_err();
        assert!(err.to_string().contains("samples_per_action_n"));
    }
}
