//! Experiment configuration: a TOML file with an `[env]` table plus one
//! table per command, patched by `--override key.path=value` flags before
//! deserialization.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use npmd_core::env::{
    point_goal_circle, random_mdp, read_mdp_file, rotation_circle, smoothed_rotation_circle, Mdp,
};
use npmd_core::npmd::NpmdConfig;

/// Top-level config file. Every command reads `[env]`; the rest are
/// command-specific and optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    #[serde(default)]
    pub npmd: Option<NpmdConfig>,
    #[serde(default)]
    pub exact: Option<ExactSection>,
    #[serde(default)]
    pub sampler_check: Option<SamplerCheckSection>,
    #[serde(default)]
    pub spline_rate: Option<SplineRateSection>,
    #[serde(default)]
    pub lipschitz_report: Option<LipschitzReportSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Environment description. `kind` selects a constructor; unused fields are
/// ignored by the other kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// One of `point-goal-circle`, `rotation-circle`,
    /// `smoothed-rotation-circle`, `random`, `file`.
    pub kind: String,
    #[serde(default = "d64")]
    pub n: usize,
    /// Net indices moved per action (walk kinds) or rotation offset.
    #[serde(default = "d1")]
    pub step: usize,
    /// Kernel smoothing width for the smoothed rotation.
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d2")]
    pub n_actions: usize,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Cost exponent on the geodesic distance to the goal.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Ambient embedding dimension of the net.
    #[serde(default = "d2us")]
    pub embed_dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// MDP file for `kind = "file"`.
    #[serde(default)]
    pub path: Option<String>,
}

fn d64() -> usize {
    64
}
fn d1() -> usize {
    1
}
fn d2() -> usize {
    2
}
fn d2us() -> usize {
    2
}
fn d_sigma() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    0.9
}
fn d_alpha() -> f64 {
    1.0
}

impl EnvSection {
    /// Builds the MDP, optionally forcing the ambient embedding dimension
    /// (used by the resolution sweep).
    pub fn build(&self, embed_dim: Option<usize>) -> Result<Mdp> {
        let d = embed_dim.unwrap_or(self.embed_dim);
        let mdp = match self.kind.as_str() {
            "point-goal-circle" => {
                point_goal_circle(self.n, self.step, self.gamma, self.alpha, d, self.seed)?
            }
            "rotation-circle" => rotation_circle(
                self.n,
                self.step,
                self.n_actions,
                self.gamma,
                self.alpha,
                d,
                self.seed,
            )?,
            "smoothed-rotation-circle" => smoothed_rotation_circle(
                self.n,
                self.step,
                self.sigma,
                self.n_actions,
                self.gamma,
                self.alpha,
                d,
                self.seed,
            )?,
            "random" => random_mdp(self.n, self.n_actions, self.gamma, self.seed)?,
            "file" => {
                let path = self
                    .path
                    .as_deref()
                    .ok_or_else(|| anyhow!("env.kind = \"file\" needs env.path"))?;
                read_mdp_file(std::path::Path::new(path))
                    .with_context(|| format!("reading MDP from {path}"))?
            }
            other => bail!(
                "unknown env kind {other:?}; expected point-goal-circle, rotation-circle, \
                 smoothed-rotation-circle, random, or file"
            ),
        };
        Ok(mdp)
    }
}

/// Options for the exact tabular baseline.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactSection {
    pub iterations: usize,
    #[serde(default)]
    pub gamma_rho: Option<f64>,
    #[serde(default)]
    pub cost_bound: Option<f64>,
    #[serde(default)]
    pub constant_eta: Option<f64>,
}

/// Empirical-vs-exact visitation comparison.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerCheckSection {
    #[serde(default = "d_samples")]
    pub n_samples: usize,
    #[serde(default = "d_tv")]
    pub tv_tolerance: f64,
    #[serde(default = "d_len")]
    pub length_tolerance: f64,
}

fn d_samples() -> usize {
    100_000
}
fn d_tv() -> f64 {
    0.02
}
fn d_len() -> f64 {
    0.02
}

/// Sup-error-vs-bound audit of the dyadic interpolant on seeded test
/// functions.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineRateSection {
    #[serde(default = "d_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "d_levels")]
    pub levels: Vec<u32>,
    #[serde(default = "d_funcs")]
    pub functions_per_dim: usize,
    #[serde(default = "d_envc")]
    pub envelope_constant: f64,
    #[serde(default = "d_alpha")]
    pub exponent: f64,
    #[serde(default = "d_grid")]
    pub grid_factor: usize,
    #[serde(default = "d_anchors")]
    pub anchors: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_dims() -> Vec<usize> {
    vec![1, 2]
}
fn d_levels() -> Vec<u32> {
    vec![2, 3, 4]
}
fn d_funcs() -> usize {
    10
}
fn d_envc() -> f64 {
    2.0
}
fn d_grid() -> usize {
    4
}
fn d_anchors() -> usize {
    5
}

/// Value-smoothness audit across random policies.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzReportSection {
    #[serde(default = "d_pols")]
    pub n_policies: usize,
    #[serde(default = "d_alpha")]
    pub exponent: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_pols() -> usize {
    20
}

/// Grid for the resolution sweep: every (embed dim, sample size, seed) cell
/// is one run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub embed_dims: Vec<usize>,
    #[serde(default = "d_sizes")]
    pub sample_sizes: Vec<usize>,
}

fn d_sizes() -> Vec<usize> {
    vec![512]
}

/// Parses the config text after applying `--override` patches.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value: toml::Value = toml::from_str(text).context("parsing config TOML")?;
    for patch in overrides {
        apply_override(&mut value, patch)?;
    }
    value.try_into().context("interpreting config")
}

/// Applies one `key.path=value` patch. The value is parsed as TOML (so
/// numbers, booleans, and arrays work); anything unparsable is a string.
fn apply_override(root: &mut toml::Value, patch: &str) -> Result<()> {
    let (path, raw) = patch
        .split_once('=')
        .ok_or_else(|| anyhow!("override {patch:?} is not of the form key.path=value"))?;
    // Interpret the right-hand side as a TOML literal (integer, float, bool,
    // array, quoted string); bare words fall back to plain strings.
    let parsed = format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|mut doc| doc.as_table_mut().and_then(|t| t.remove("v")))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        bail!("override path {path:?} has an empty segment");
    }
    for seg in &segments[..segments.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path {path:?} descends into a non-table"))?
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| anyhow!("override path {path:?} descends into a non-table"))?
        .insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}
