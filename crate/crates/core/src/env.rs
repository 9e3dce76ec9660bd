//! Finite Markov decision processes and their exact oracles.
//!
//! States are indices `0..S`; optionally they are the points of an
//! [`EmbeddedManifold`] net, which gives every state ambient coordinates and
//! a geodesic metric (used by the smoothness reports and by function
//! approximation downstream). Costs live in `[0, C]` and are discounted with
//! `γ ∈ [0, 1)`, so all values live in `[0, C/(1-γ)]`.
//!
//! Everything here is exact up to linear-algebra rounding: policy evaluation
//! and discounted visitation solve `(I - γP_π)`-systems by LU factorization
//! with partial pivoting and re-check the residual, optimal values come from
//! policy iteration with a Bellman-residual certificate, and the
//! performance-difference identity is asserted rather than trusted.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::manifold::{EmbeddedManifold, ManifoldError};

/// Residual tolerance for linear solves and Bellman certificates.
const SOLVE_TOL: f64 = 1e-10;

/// Errors from MDP validation and oracle computations.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("state or action count is zero")]
    EmptySpace,
    #[error("kernel row (s={state}, a={action}) sums to {sum}, not 1")]
    KernelRowSum { state: usize, action: usize, sum: f64 },
    #[error("kernel entry (s={state}, a={action}, s'={next}) is negative or non-finite")]
    KernelEntry { state: usize, action: usize, next: usize },
    #[error("cost (s={state}, a={action}) = {value} outside [0, {bound}]")]
    CostOutOfRange { state: usize, action: usize, value: f64, bound: f64 },
    #[error("discount {gamma} outside [0, 1)")]
    BadGamma { gamma: f64 },
    #[error("initial distribution sums to {sum}, not 1")]
    RhoSum { sum: f64 },
    #[error("initial distribution has a negative or non-finite entry at state {state}")]
    RhoEntry { state: usize },
    #[error("operation requires a full-support initial distribution; state {state} has mass 0")]
    RhoNotFullSupport { state: usize },
    #[error("table has wrong size: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("policy row for state {state} sums to {sum}, not 1")]
    PolicyRowSum { state: usize, sum: f64 },
    #[error("policy entry (s={state}, a={action}) is negative or non-finite")]
    PolicyEntry { state: usize, action: usize },
    #[error("linear solve failed: max-norm residual {residual}")]
    LinearSolve { residual: f64 },
    #[error("value function escapes [0, C/(1-γ)]: value {value} at state {state}")]
    ValueOutOfRange { state: usize, value: f64 },
    #[error("policy iteration did not converge within {iterations} iterations")]
    PolicyIterationDiverged { iterations: usize },
    #[error("performance-difference identity violated: lhs {lhs} vs rhs {rhs}")]
    IdentityViolation { lhs: f64, rhs: f64 },
    #[error("operation requires an attached manifold net")]
    NoManifold,
    #[error("manifold has {points} points but the MDP has {states} states")]
    ManifoldSizeMismatch { points: usize, states: usize },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite MDP with costs in `[0, C]`, discount `γ`, and initial
/// distribution `ρ`; optionally carried on a manifold net.
#[derive(Debug, Clone)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// Transition kernel, indexed `[(s·A + a)·S + s']`.
    kernel: Vec<f64>,
    /// Cost table, indexed `[s·A + a]`.
    cost: Vec<f64>,
    cost_bound: f64,
    gamma: f64,
    rho: Vec<f64>,
    manifold: Option<EmbeddedManifold>,
}

impl Mdp {
    /// Validates and assembles an MDP. Kernel rows must sum to one within
    /// `1e-12`, costs must lie in `[0, cost_bound]`, and `ρ` must be a
    /// probability vector.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        cost: Vec<f64>,
        cost_bound: f64,
        gamma: f64,
        rho: Vec<f64>,
        manifold: Option<EmbeddedManifold>,
    ) -> Result<Self, EnvError> {
        if n_states == 0 || n_actions == 0 {
            return Err(EnvError::EmptySpace);
        }
        if kernel.len() != n_states * n_actions * n_states {
            return Err(EnvError::SizeMismatch {
                expected: n_states * n_actions * n_states,
                found: kernel.len(),
            });
        }
        if cost.len() != n_states * n_actions {
            return Err(EnvError::SizeMismatch {
                expected: n_states * n_actions,
                found: cost.len(),
            });
        }
        if rho.len() != n_states {
            return Err(EnvError::SizeMismatch { expected: n_states, found: rho.len() });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(EnvError::BadGamma { gamma });
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &kernel[(s * n_actions + a) * n_states..][..n_states];
                let mut sum = 0.0;
                for (next, &p) in row.iter().enumerate() {
                    if !p.is_finite() || p < 0.0 {
                        return Err(EnvError::KernelEntry { state: s, action: a, next });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(EnvError::KernelRowSum { state: s, action: a, sum });
                }
                let c = cost[s * n_actions + a];
                if !c.is_finite() || c < 0.0 || c > cost_bound {
                    return Err(EnvError::CostOutOfRange {
                        state: s,
                        action: a,
                        value: c,
                        bound: cost_bound,
                    });
                }
            }
        }
        let mut rho_sum = 0.0;
        for (s, &p) in rho.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(EnvError::RhoEntry { state: s });
            }
            rho_sum += p;
        }
        if (rho_sum - 1.0).abs() > 1e-12 {
            return Err(EnvError::RhoSum { sum: rho_sum });
        }
        if let Some(m) = &manifold {
            if m.len() != n_states {
                return Err(EnvError::ManifoldSizeMismatch { points: m.len(), states: n_states });
            }
        }
        Ok(Self { n_states, n_actions, kernel, cost, cost_bound, gamma, rho, manifold })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn manifold(&self) -> Option<&EmbeddedManifold> {
        self.manifold.as_ref()
    }

    /// Transition row `𝒫(·|s, a)`.
    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        &self.kernel[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    /// Upper bound `C/(1-γ)` on any discounted value.
    pub fn value_bound(&self) -> f64 {
        self.cost_bound / (1.0 - self.gamma)
    }

    /// True when every state carries initial mass.
    pub fn rho_full_support(&self) -> bool {
        self.rho.iter().all(|&p| p > 0.0)
    }
}

/// A stochastic tabular policy: one probability row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    /// Row-major probabilities, indexed `[s·A + a]`.
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(probs: Vec<f64>, n_states: usize, n_actions: usize) -> Result<Self, EnvError> {
        if probs.len() != n_states * n_actions {
            return Err(EnvError::SizeMismatch {
                expected: n_states * n_actions,
                found: probs.len(),
            });
        }
        for s in 0..n_states {
            let mut sum = 0.0;
            for a in 0..n_actions {
                let p = probs[s * n_actions + a];
                if !p.is_finite() || p < 0.0 {
                    return Err(EnvError::PolicyEntry { state: s, action: a });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(EnvError::PolicyRowSum { state: s, sum });
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    /// Uniform policy over all actions.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy selecting, per state, the action minimizing
    /// `q(s, ·)`; ties break toward the lowest action index.
    pub fn greedy_from_q(q: &[f64], n_states: usize, n_actions: usize) -> Self {
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let row = &q[s * n_actions..][..n_actions];
            let mut best = 0usize;
            for a in 1..n_actions {
                if row[a] < row[best] {
                    best = a;
                }
            }
            probs[s * n_actions + best] = 1.0;
        }
        Self { n_states, n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Probability row `π(·|s)`.
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..][..self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
}

/// State and state-action values of a fixed policy.
#[derive(Debug, Clone)]
pub struct ValueFunctions {
    n_states: usize,
    n_actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueFunctions {
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn q_at(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    /// Q-row `Q(s, ·)`.
    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..][..self.n_actions]
    }

    /// `V(ρ) = Σ_s ρ(s)·V(s)`.
    pub fn v_rho(&self, rho: &[f64]) -> f64 {
        debug_assert_eq!(rho.len(), self.n_states);
        self.v.iter().zip(rho).map(|(v, r)| v * r).sum()
    }
}

/// Optimal values together with the certifying greedy policy.
#[derive(Debug, Clone)]
pub struct OptimalValues {
    pub values: ValueFunctions,
    pub policy: PolicyTable,
}

/// Discounted state and state-action visitation measures.
#[derive(Debug, Clone)]
pub struct VisitationMeasure {
    n_actions: usize,
    /// `ν_ρ^π(s)`, a probability vector over states.
    pub states: Vec<f64>,
    /// `ν̄_ρ^π(s, a) = ν_ρ^π(s)·π(a|s)`, row-major `[s·A + a]`.
    pub pairs: Vec<f64>,
}

impl VisitationMeasure {
    pub fn pair(&self, s: usize, a: usize) -> f64 {
        self.pairs[s * self.n_actions + a]
    }
}

/// Distribution-mismatch summary: `κ = ‖dν_ρ^{π*}/dρ‖_∞` and the effective
/// contraction factor `γ_ρ = 1 - (1-γ)/κ` it induces.
#[derive(Debug, Clone, Copy)]
pub struct KappaReport {
    pub kappa: f64,
    pub gamma_rho: f64,
}

/// Empirical smoothness report for an MDP carried on a net.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzMdpReport {
    /// Largest cost Hölder ratio over net pairs and actions.
    pub cost_constant: f64,
    /// Largest kernel total-variation Hölder ratio; `+∞` when next-state
    /// supports are disjoint at the net's resolution.
    pub kernel_constant: f64,
    /// Induced bound `L_c + γ·C/(1-γ)·L_𝒫` on the Q-function constant.
    pub q_bound: f64,
    /// Scale-free form `(1-γ)·L_c/C + γ·L_𝒫`.
    pub normalized_q_bound: f64,
    /// Hölder exponent the ratios were measured against.
    pub exponent: f64,
}

// ---------------------------------------------------------------------------
// Exact oracles
// ---------------------------------------------------------------------------

/// Mean kernel and mean cost under a policy: `P_π` (`S×S`) and `c_π` (`S`).
fn policy_kernel_cost(mdp: &Mdp, policy: &PolicyTable) -> (DMatrix<f64>, DVector<f64>) {
    let s_n = mdp.n_states;
    let mut p = DMatrix::zeros(s_n, s_n);
    let mut c = DVector::zeros(s_n);
    for s in 0..s_n {
        let pi_row = policy.row(s);
        for a in 0..mdp.n_actions {
            let w = pi_row[a];
            if w == 0.0 {
                continue;
            }
            c[s] += w * mdp.cost(s, a);
            let row = mdp.kernel_row(s, a);
            for (next, &pr) in row.iter().enumerate() {
                p[(s, next)] += w * pr;
            }
        }
    }
    (p, c)
}

fn check_policy_shape(mdp: &Mdp, policy: &PolicyTable) -> Result<(), EnvError> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(EnvError::SizeMismatch {
            expected: mdp.n_states * mdp.n_actions,
            found: policy.n_states * policy.n_actions,
        });
    }
    Ok(())
}

/// Solves `(I - γP_π)V = c_π` by LU with partial pivoting, re-checks the
/// residual, and assembles `Q(s,a) = c(s,a) + γ·⟨𝒫(·|s,a), V⟩`.
pub fn policy_evaluate(mdp: &Mdp, policy: &PolicyTable) -> Result<ValueFunctions, EnvError> {
    check_policy_shape(mdp, policy)?;
    let s_n = mdp.n_states;
    let (p, c) = policy_kernel_cost(mdp, policy);
    let a = DMatrix::identity(s_n, s_n) - &p * mdp.gamma;
    let lu = a.clone().lu();
    let v = lu.solve(&c).ok_or(EnvError::LinearSolve { residual: f64::INFINITY })?;

    // Residual certificate: the factorization is not trusted blindly.
    let residual = (&a * &v - &c).amax();
    if !(residual < SOLVE_TOL) {
        return Err(EnvError::LinearSolve { residual });
    }
    let bound = mdp.value_bound();
    for (s, &value) in v.iter().enumerate() {
        if !(value >= -SOLVE_TOL && value <= bound + SOLVE_TOL) {
            return Err(EnvError::ValueOutOfRange { state: s, value });
        }
    }

    let mut q = vec![0.0; s_n * mdp.n_actions];
    for s in 0..s_n {
        for a_idx in 0..mdp.n_actions {
            let row = mdp.kernel_row(s, a_idx);
            let expect: f64 = row.iter().zip(v.iter()).map(|(p, vv)| p * vv).sum();
            q[s * mdp.n_actions + a_idx] = mdp.cost(s, a_idx) + mdp.gamma * expect;
        }
    }
    Ok(ValueFunctions { n_states: s_n, n_actions: mdp.n_actions, v: v.as_slice().to_vec(), q })
}

/// Optimal values by policy iteration (greedy improvement with lowest-index
/// tie-breaking), certified by a Bellman-optimality residual below `1e-10`.
pub fn optimal_values(mdp: &Mdp) -> Result<OptimalValues, EnvError> {
    let s_n = mdp.n_states;
    let a_n = mdp.n_actions;
    let mut policy = PolicyTable::greedy_from_q(&mdp.cost, s_n, a_n);
    let max_iterations = 16 * (s_n * a_n + 4);
    let mut values = policy_evaluate(mdp, &policy)?;
    for _ in 0..max_iterations {
        let improved = PolicyTable::greedy_from_q(&values.q, s_n, a_n);
        if improved == policy {
            // Certify optimality: V must satisfy the Bellman equation.
            let residual = (0..s_n)
                .map(|s| {
                    let row = values.q_row(s);
                    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                    (values.v[s] - min).abs()
                })
                .fold(0.0f64, f64::max);
            if residual >= SOLVE_TOL {
                return Err(EnvError::LinearSolve { residual });
            }
            return Ok(OptimalValues { values, policy });
        }
        policy = improved;
        values = policy_evaluate(mdp, &policy)?;
    }
    Err(EnvError::PolicyIterationDiverged { iterations: max_iterations })
}

/// Discounted visitation `ν_ρ^π = (1-γ)·ρᵀ(I - γP_π)^{-1}` and its
/// state-action refinement `ν̄(s,a) = ν(s)·π(a|s)`.
pub fn visitation_distribution(
    mdp: &Mdp,
    policy: &PolicyTable,
) -> Result<VisitationMeasure, EnvError> {
    check_policy_shape(mdp, policy)?;
    let s_n = mdp.n_states;
    let (p, _) = policy_kernel_cost(mdp, policy);
    // Transposed system: (I - γP_πᵀ)ν = (1-γ)ρ.
    let a = DMatrix::identity(s_n, s_n) - p.transpose() * mdp.gamma;
    let b = DVector::from_iterator(s_n, mdp.rho.iter().map(|&r| (1.0 - mdp.gamma) * r));
    let lu = a.clone().lu();
    let nu = lu.solve(&b).ok_or(EnvError::LinearSolve { residual: f64::INFINITY })?;
    let residual = (&a * &nu - &b).amax();
    if !(residual < SOLVE_TOL) {
        return Err(EnvError::LinearSolve { residual });
    }
    // ν dominates (1-γ)ρ componentwise; fail loudly if the solve broke it.
    for s in 0..s_n {
        if nu[s] < (1.0 - mdp.gamma) * mdp.rho[s] - 1e-12 {
            return Err(EnvError::LinearSolve { residual: nu[s] });
        }
    }
    let mut pairs = vec![0.0; s_n * mdp.n_actions];
    for s in 0..s_n {
        for a_idx in 0..mdp.n_actions {
            pairs[s * mdp.n_actions + a_idx] = nu[s] * policy.prob(s, a_idx);
        }
    }
    Ok(VisitationMeasure { n_actions: mdp.n_actions, states: nu.as_slice().to_vec(), pairs })
}

/// Evaluates both sides of the performance-difference identity
/// `V^{π'}(ρ) - V^π(ρ) = (1/(1-γ))·E_{s~ν^{π'}}⟨Q^π(s,·), π'(·|s) - π(·|s)⟩`
/// and returns the common value; disagreement beyond `1e-9` is an error
/// (it would mean one of the exact oracles is broken).
pub fn performance_difference(
    mdp: &Mdp,
    pi_prime: &PolicyTable,
    pi: &PolicyTable,
) -> Result<f64, EnvError> {
    let values = policy_evaluate(mdp, pi)?;
    let values_prime = policy_evaluate(mdp, pi_prime)?;
    let nu_prime = visitation_distribution(mdp, pi_prime)?;
    let mut lhs = 0.0;
    for s in 0..mdp.n_states {
        let q_row = values.q_row(s);
        let mut inner = 0.0;
        for a in 0..mdp.n_actions {
            inner += q_row[a] * (pi_prime.prob(s, a) - pi.prob(s, a));
        }
        lhs += nu_prime.states[s] * inner;
    }
    lhs /= 1.0 - mdp.gamma;
    let rhs = values_prime.v_rho(&mdp.rho) - values.v_rho(&mdp.rho);
    if (lhs - rhs).abs() > 1e-9 {
        return Err(EnvError::IdentityViolation { lhs, rhs });
    }
    Ok(lhs)
}

/// Distribution mismatch of `ρ` against the optimal visitation:
/// `κ = max_s ν_ρ^{π*}(s)/ρ(s)`, requiring full support of `ρ`.
pub fn mismatch_kappa(mdp: &Mdp, pi_star: &PolicyTable) -> Result<KappaReport, EnvError> {
    if let Some(state) = mdp.rho.iter().position(|&p| p <= 0.0) {
        return Err(EnvError::RhoNotFullSupport { state });
    }
    let nu = visitation_distribution(mdp, pi_star)?;
    let kappa = nu
        .states
        .iter()
        .zip(&mdp.rho)
        .map(|(n, r)| n / r)
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma_rho = 1.0 - (1.0 - mdp.gamma) / kappa;
    Ok(KappaReport { kappa, gamma_rho })
}

/// Total-variation distance between two probability rows (half ℓ₁).
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Measures cost and kernel Hölder constants at the net's resolution and the
/// induced Q-function bound `L_c + γ·C/(1-γ)·L_𝒫`.
///
/// The kernel constant is the largest ratio `TV(𝒫(·|s,a), 𝒫(·|s',a))/d(s,s')^α`
/// over net pairs. When some pair of nearest-neighbor states has fully
/// disjoint next-state supports (total variation 1), no finite constant can
/// hold in the continuum limit and the report returns the `+∞` sentinel.
pub fn lipschitz_mdp_report(mdp: &Mdp, exponent: f64) -> Result<LipschitzMdpReport, EnvError> {
    let manifold = mdp.manifold().ok_or(EnvError::NoManifold)?;
    let s_n = mdp.n_states;
    let a_n = mdp.n_actions;

    let mut cost_constant = 0.0f64;
    for a in 0..a_n {
        let column: Vec<f64> = (0..s_n).map(|s| mdp.cost(s, a)).collect();
        cost_constant = cost_constant.max(manifold.estimate_lipschitz(&column, exponent, 0.0)?);
    }

    let mut kernel_constant = 0.0f64;
    'outer: for s in 0..s_n {
        let row_d = manifold.geodesic_row(s);
        // Nearest distinct neighbor distance, for the disjoint-support probe.
        let mut nearest = f64::INFINITY;
        for (j, &d) in row_d.iter().enumerate() {
            if j != s && d < nearest {
                nearest = d;
            }
        }
        for j in (s + 1)..s_n {
            let d = row_d[j];
            if !d.is_finite() {
                continue;
            }
            for a in 0..a_n {
                let tv = total_variation(mdp.kernel_row(s, a), mdp.kernel_row(j, a));
                if tv == 0.0 {
                    continue;
                }
                if d == 0.0 || (tv >= 1.0 - 1e-9 && d <= nearest + 1e-12) {
                    kernel_constant = f64::INFINITY;
                    break 'outer;
                }
                kernel_constant = kernel_constant.max(tv / d.powf(exponent));
            }
        }
    }

    let c = mdp.cost_bound;
    let gamma = mdp.gamma;
    let q_bound = cost_constant + gamma * c / (1.0 - gamma) * kernel_constant;
    let normalized_q_bound = (1.0 - gamma) * cost_constant / c + gamma * kernel_constant;
    Ok(LipschitzMdpReport {
        cost_constant,
        kernel_constant,
        q_bound,
        normalized_q_bound,
        exponent,
    })
}

// ---------------------------------------------------------------------------
// Built-in environments
// ---------------------------------------------------------------------------

/// Geodesic distances from every net point to a goal point, raised to `α`.
fn goal_cost(manifold: &EmbeddedManifold, goal: usize, alpha: f64) -> Vec<f64> {
    manifold
        .geodesic_row(goal)
        .iter()
        .map(|d| d.powf(alpha))
        .collect()
}

/// Deterministic rotation on a circle net: every action advances the state by
/// `rot_steps` net positions; the cost is the geodesic distance to the goal
/// point `0` raised to `α` (identical across actions). The kernel is an
/// isometry of the net but nowhere TV-continuous, which makes it the canonical
/// case where the kernel smoothness report must flag `+∞` while Q stays
/// smooth.
pub fn rotation_circle(
    n: usize,
    rot_steps: usize,
    n_actions: usize,
    gamma: f64,
    alpha: f64,
    ambient_dim: usize,
    seed: u64,
) -> Result<Mdp, EnvError> {
    let manifold = circle_net_manifold(n, ambient_dim, seed)?;
    let goal = goal_cost(&manifold, 0, alpha);
    let cost_bound = goal.iter().fold(0.0f64, |m, &c| m.max(c));
    let mut kernel = vec![0.0; n * n_actions * n];
    let mut cost = vec![0.0; n * n_actions];
    for s in 0..n {
        let target = (s + rot_steps) % n;
        for a in 0..n_actions {
            kernel[(s * n_actions + a) * n + target] = 1.0;
            cost[s * n_actions + a] = goal[s];
        }
    }
    let rho = vec![1.0 / n as f64; n];
    Mdp::new(n, n_actions, kernel, cost, cost_bound, gamma, rho, Some(manifold))
}

/// Rotation on a circle net with a Gaussian-blurred kernel: action 0 rotates
/// by `+rot_steps`, action 1 by `-rot_steps` (further actions alternate), and
/// the landing position is smeared over the net with weights
/// `exp(-d_geo(·, target)²/(2σ²))`. The blur makes the kernel TV-Hölder at
/// the net's resolution, so the smoothness report stays finite.
pub fn smoothed_rotation_circle(
    n: usize,
    rot_steps: usize,
    sigma: f64,
    n_actions: usize,
    gamma: f64,
    alpha: f64,
    ambient_dim: usize,
    seed: u64,
) -> Result<Mdp, EnvError> {
    let manifold = circle_net_manifold(n, ambient_dim, seed)?;
    let goal = goal_cost(&manifold, 0, alpha);
    let cost_bound = goal.iter().fold(0.0f64, |m, &c| m.max(c));
    let mut kernel = vec![0.0; n * n_actions * n];
    let mut cost = vec![0.0; n * n_actions];
    for s in 0..n {
        for a in 0..n_actions {
            let signed = if a % 2 == 0 { rot_steps as isize } else { -(rot_steps as isize) };
            let target = (s as isize + signed).rem_euclid(n as isize) as usize;
            let weights: Vec<f64> = manifold
                .geodesic_row(target)
                .iter()
                .map(|&d| (-d * d / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let row = &mut kernel[(s * n_actions + a) * n..][..n];
            for (next, w) in weights.iter().enumerate() {
                row[next] = w / total;
            }
            // Exact renormalization so the row sums to one bit-exactly enough
            // for validation.
            let sum: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= sum;
            }
            cost[s * n_actions + a] = goal[s];
        }
    }
    let rho = vec![1.0 / n as f64; n];
    Mdp::new(n, n_actions, kernel, cost, cost_bound, gamma, rho, Some(manifold))
}

/// Goal-seeking on a circle net: action 0 steps counter-clockwise, action 1
/// clockwise (by `step` net positions, deterministically); the cost is the
/// geodesic distance to the goal point `0` raised to `α`; `ρ` is uniform.
pub fn point_goal_circle(
    n: usize,
    step: usize,
    gamma: f64,
    alpha: f64,
    ambient_dim: usize,
    seed: u64,
) -> Result<Mdp, EnvError> {
    let manifold = circle_net_manifold(n, ambient_dim, seed)?;
    let goal = goal_cost(&manifold, 0, alpha);
    let cost_bound = goal.iter().fold(0.0f64, |m, &c| m.max(c));
    let n_actions = 2;
    let mut kernel = vec![0.0; n * n_actions * n];
    let mut cost = vec![0.0; n * n_actions];
    for s in 0..n {
        for a in 0..n_actions {
            let signed = if a == 0 { step as isize } else { -(step as isize) };
            let target = (s as isize + signed).rem_euclid(n as isize) as usize;
            kernel[(s * n_actions + a) * n + target] = 1.0;
            cost[s * n_actions + a] = goal[s];
        }
    }
    let rho = vec![1.0 / n as f64; n];
    Mdp::new(n, n_actions, kernel, cost, cost_bound, gamma, rho, Some(manifold))
}

/// Dense random MDP with full-support kernel rows and uniform `ρ`; costs are
/// uniform on `[0, 1]`. Useful as a well-conditioned test bed.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
) -> Result<Mdp, EnvError> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = vec![0.0; n_states * n_actions * n_states];
    let mut cost = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = &mut kernel[(s * n_actions + a) * n_states..][..n_states];
            for p in row.iter_mut() {
                // Bounded away from zero: keeps every row full-support.
                *p = 0.05 + rng.random::<f64>();
            }
            let sum: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= sum;
            }
            cost[s * n_actions + a] = rng.random::<f64>();
        }
    }
    let rho = vec![1.0 / n_states as f64; n_states];
    Mdp::new(n_states, n_actions, kernel, cost, 1.0, gamma, rho, None)
}

fn circle_net_manifold(
    n: usize,
    ambient_dim: usize,
    seed: u64,
) -> Result<EmbeddedManifold, EnvError> {
    // Nearest-neighbor ring topology: the edge radius sits between one and two
    // chord lengths so geodesics follow the circle rather than crossing it.
    let spacing = 2.0 * (std::f64::consts::PI / n as f64).sin();
    Ok(crate::manifold::circle_manifold(n, ambient_dim, seed, Some(1.5 * spacing))?)
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// Writes the MDP (kernel rows, cost table, γ, ρ, and any attached net) to a
/// structured text file; floats are printed with full round-trip precision.
pub fn write_mdp_file(mdp: &Mdp, path: &Path) -> Result<(), EnvError> {
    let mut out = String::new();
    let _ = writeln!(out, "mdp-v1");
    let _ = writeln!(out, "states {}", mdp.n_states);
    let _ = writeln!(out, "actions {}", mdp.n_actions);
    let _ = writeln!(out, "gamma {:.17e}", mdp.gamma);
    let _ = writeln!(out, "cost_bound {:.17e}", mdp.cost_bound);
    let _ = writeln!(out, "rho");
    push_row(&mut out, &mdp.rho);
    let _ = writeln!(out, "cost");
    for s in 0..mdp.n_states {
        push_row(&mut out, &mdp.cost[s * mdp.n_actions..][..mdp.n_actions]);
    }
    let _ = writeln!(out, "kernel");
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            push_row(&mut out, mdp.kernel_row(s, a));
        }
    }
    match mdp.manifold() {
        None => {
            let _ = writeln!(out, "manifold none");
        }
        Some(m) => {
            let _ = writeln!(
                out,
                "manifold inline {} {} {:.17e}",
                m.ambient_dim(),
                m.intrinsic_dim(),
                m.edge_radius()
            );
            for i in 0..m.len() {
                push_row(&mut out, m.point(i));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn push_row(out: &mut String, row: &[f64]) {
    for (k, v) in row.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.17e}");
    }
    out.push('\n');
}

/// Line cursor over a text file, shared by the structured readers below.
struct LineCursor<'a> {
    lines: Vec<&'a str>,
    at: usize,
}

impl<'a> LineCursor<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines().collect(), at: 0 }
    }

    fn err(&self, message: impl Into<String>) -> EnvError {
        EnvError::Parse { line: self.at, message: message.into() }
    }

    fn next(&mut self, expect: &str) -> Result<&'a str, EnvError> {
        while self.at < self.lines.len() {
            let line = self.lines[self.at].trim();
            self.at += 1;
            if !line.is_empty() {
                return Ok(line);
            }
        }
        Err(EnvError::Parse { line: self.at, message: format!("missing {expect}") })
    }

    fn tagged(&mut self, name: &str) -> Result<String, EnvError> {
        let text = self.next(name)?;
        text.strip_prefix(name)
            .map(|rest| rest.trim().to_string())
            .ok_or_else(|| self.err(format!("expected `{name} ...`")))
    }

    fn floats(&mut self, label: &str, count: usize) -> Result<Vec<f64>, EnvError> {
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            let text = self.next(label)?;
            for token in text.split_whitespace() {
                let v: f64 = token
                    .parse()
                    .map_err(|_| self.err(format!("bad float `{token}` in {label}")))?;
                values.push(v);
            }
        }
        if values.len() != count {
            return Err(self.err(format!("{label}: expected exactly {count} values")));
        }
        Ok(values)
    }
}

/// Reads an MDP written by [`write_mdp_file`].
pub fn read_mdp_file(path: &Path) -> Result<Mdp, EnvError> {
    let text = std::fs::read_to_string(path)?;
    let mut cursor = LineCursor::new(&text);
    if cursor.next("header")? != "mdp-v1" {
        return Err(cursor.err("expected header `mdp-v1`"));
    }
    let n_states: usize = cursor
        .tagged("states")?
        .parse()
        .map_err(|_| cursor.err("bad state count"))?;
    let n_actions: usize = cursor
        .tagged("actions")?
        .parse()
        .map_err(|_| cursor.err("bad action count"))?;
    let gamma: f64 = cursor.tagged("gamma")?.parse().map_err(|_| cursor.err("bad gamma"))?;
    let cost_bound: f64 = cursor
        .tagged("cost_bound")?
        .parse()
        .map_err(|_| cursor.err("bad cost bound"))?;

    if cursor.next("rho")? != "rho" {
        return Err(cursor.err("expected `rho`"));
    }
    let rho = cursor.floats("rho", n_states)?;
    if cursor.next("cost")? != "cost" {
        return Err(cursor.err("expected `cost`"));
    }
    let cost = cursor.floats("cost", n_states * n_actions)?;
    if cursor.next("kernel")? != "kernel" {
        return Err(cursor.err("expected `kernel`"));
    }
    let kernel = cursor.floats("kernel", n_states * n_actions * n_states)?;

    let tag = cursor.next("manifold")?;
    let manifold = if tag == "manifold none" {
        None
    } else if let Some(rest) = tag.strip_prefix("manifold inline") {
        let parts: Vec<&str> = rest.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(cursor.err("expected `manifold inline <D> <d> <radius>`"));
        }
        let ambient: usize =
            parts[0].parse().map_err(|_| cursor.err("bad ambient dimension"))?;
        let intrinsic: usize =
            parts[1].parse().map_err(|_| cursor.err("bad intrinsic dimension"))?;
        let radius: f64 = parts[2].parse().map_err(|_| cursor.err("bad edge radius"))?;
        let coords = cursor.floats("manifold", n_states * ambient)?;
        Some(EmbeddedManifold::from_points(coords, ambient, intrinsic, Some(radius))?)
    } else {
        return Err(cursor.err("expected `manifold none` or `manifold inline`"));
    };

    Mdp::new(n_states, n_actions, kernel, cost, cost_bound, gamma, rho, manifold)
}
