//! Per-run artifacts: the metadata file each run directory carries next to
//! its `runlog.csv`, and a reader for the log itself.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use npmd_core::npmd::{IterationRecord, RUNLOG_HEADER};

/// Metadata describing one run directory; everything the report command
/// needs to reconstruct reference curves without re-running.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    /// `"npmd"` or `"exact-pmd"`.
    pub kind: String,
    pub env_kind: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub gamma_rho: f64,
    /// Schedule-level cost bound `C` (after any override).
    pub cost_bound: f64,
    pub kappa: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl RunMeta {
    /// Certified gap bound `γ_ρ^k·(1+ln|𝒜|)·C/(1-γ)` at iteration `k`.
    pub fn gap_bound(&self, k: usize) -> f64 {
        self.gamma_rho.powi(k as i32) * (1.0 + (self.n_actions as f64).ln()) * self.cost_bound
            / (1.0 - self.gamma)
    }
}

pub fn write_meta(meta: &RunMeta, dir: &Path) -> Result<()> {
    let text = toml::to_string(meta).context("serializing run metadata")?;
    std::fs::write(dir.join("meta.toml"), text)
        .with_context(|| format!("writing {}", dir.join("meta.toml").display()))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<RunMeta> {
    let path = dir.join("meta.toml");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Reads a run log written by the core CSV writer back into records.
pub fn read_runlog(path: &Path) -> Result<Vec<IterationRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != RUNLOG_HEADER {
        bail!("{} does not start with the run-log header", path.display());
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != RUNLOG_HEADER.split(',').count() {
            bail!("{} line {}: wrong cell count", path.display(), lineno + 2);
        }
        let f = |i: usize| -> Result<f64> {
            cells[i]
                .parse::<f64>()
                .with_context(|| format!("{} line {} cell {i}", path.display(), lineno + 2))
        };
        let opt_f = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() { Ok(None) } else { Ok(Some(f(i)?)) }
        };
        let opt_b = |i: usize| -> Result<Option<bool>> {
            match cells[i] {
                "" => Ok(None),
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                other => bail!("{} line {}: bad bool {other:?}", path.display(), lineno + 2),
            }
        };
        records.push(IterationRecord {
            k: cells[0].parse().context("iteration index")?,
            optimality_gap: f(1)?,
            critic_loss: opt_f(2)?,
            actor_loss: opt_f(3)?,
            critic_sup: opt_f(4)?,
            critic_sup_pass: opt_b(5)?,
            critic_lip: opt_f(6)?,
            critic_lip_pass: opt_b(7)?,
            actor_sup: opt_f(8)?,
            actor_sup_pass: opt_b(9)?,
            actor_lip: opt_f(10)?,
            actor_lip_pass: opt_b(11)?,
            chi2_next: opt_f(12)?,
            chi2_star: opt_f(13)?,
            eta: f(14)?,
            lambda: f(15)?,
            cumulative_samples: cells[16].parse().context("sample count")?,
            wall_ms: 0.0,
        });
    }
    Ok(records)
}

/// Reward trace statistics for the sweep table: reward is the negative
/// optimality gap; the smoothed value follows
/// `EMA_k = 0.9·EMA_{k-1} + 0.1·R_k` seeded with `EMA_0 = R_0`.
pub fn reward_summary(records: &[IterationRecord]) -> Option<(f64, f64, f64)> {
    let mut iter = records.iter();
    let mut ema = -iter.next()?.optimality_gap;
    let mut max_r = ema;
    for r in iter {
        let reward = -r.optimality_gap;
        ema = 0.9 * ema + 0.1 * reward;
        max_r = max_r.max(reward);
    }
    Some((-records.last()?.optimality_gap, ema, max_r))
}
