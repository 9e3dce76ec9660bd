//! The experiment commands. Each returns an outcome whose `passed` flag
//! feeds the process exit code: zero exactly when every invariant asserted
//! by the invoked suite held.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npmd_core::cnn::save_model;
use npmd_core::env::{
    lipschitz_mdp_report, policy_evaluate, total_variation, visitation_distribution, Mdp,
    PolicyTable,
};
use npmd_core::npmd::{
    run_exact_pmd, run_npmd, write_runlog_csv, write_timing_csv, ExactPmdOptions, NpmdConfig,
};
use npmd_core::sampler::sample_visitation;
use npmd_core::spline::{verify_rate, EnvelopeTestFunction};

use crate::config::ExperimentConfig;
use crate::runio::{read_meta, read_runlog, reward_summary, write_meta, RunMeta};
use crate::svg::{line_plot, PlotOptions, Series};

/// What a command reports back: human-readable lines plus the aggregate
/// invariant verdict.
#[derive(Debug)]
pub struct CommandOutcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

impl CommandOutcome {
    fn new() -> Self {
        Self { passed: true, lines: Vec::new() }
    }
    fn note(&mut self, line: String) {
        self.lines.push(line);
    }
    fn fail(&mut self, line: String) {
        self.passed = false;
        self.lines.push(line);
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn npmd_section(cfg: &ExperimentConfig) -> Result<&NpmdConfig> {
    cfg.npmd.as_ref().ok_or_else(|| anyhow!("this command needs an [npmd] config table"))
}

/// Worker-pool width: `NPMD_THREADS` caps it, hardware parallelism is the
/// default, and at least one worker always runs.
pub fn pool_width(cells: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("NPMD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(hw);
    cap.min(cells).max(1)
}

// ---------------------------------------------------------------------------
// npmd / exact-pmd
// ---------------------------------------------------------------------------

fn npmd_meta(cfg: &ExperimentConfig, mdp: &Mdp, run: &npmd_core::npmd::NpmdRun, seed: u64, iterations: usize) -> RunMeta {
    RunMeta {
        kind: "npmd".into(),
        env_kind: cfg.env.kind.clone(),
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        gamma: mdp.gamma(),
        gamma_rho: run.gamma_rho,
        cost_bound: run.cost_bound,
        kappa: run.kappa,
        iterations,
        seed,
    }
}

/// One sampled actor-critic run per seed, each in its own `seed{S}`
/// subdirectory with `runlog.csv`, `timing.csv`, `meta.toml`, and the final
/// per-action networks.
pub fn cmd_npmd(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<CommandOutcome> {
    let base = npmd_section(cfg)?;
    let mdp = cfg.env.build(None)?;
    let mut outcome = CommandOutcome::new();
    for &seed in seeds {
        let dir = out.join(format!("seed{seed}"));
        ensure_dir(&dir)?;
        let mut config = base.clone();
        config.seed = seed;
        match run_npmd(&mdp, &config) {
            Ok(run) => {
                write_runlog_csv(&run.records, &dir.join("runlog.csv"))?;
                write_timing_csv(&run.records, &dir.join("timing.csv"))?;
                write_meta(&npmd_meta(cfg, &mdp, &run, seed, config.iterations_k), &dir)?;
                for (a, model) in run.state.actor.iter().enumerate() {
                    save_model(model, &dir.join(format!("actor_a{a}.bin")))?;
                }
                for (a, model) in run.state.critic.iter().enumerate() {
                    save_model(model, &dir.join(format!("critic_a{a}.bin")))?;
                }
                let last = run.records.last().expect("runs always log at least one row");
                outcome.note(format!(
                    "seed {seed}: gap {:.6} -> {:.6} over {} iterations ({} oracle calls)",
                    run.records[0].optimality_gap,
                    last.optimality_gap,
                    config.iterations_k,
                    run.oracle_calls
                ));
            }
            Err(e) => outcome.fail(format!("seed {seed}: FAILED: {e}")),
        }
    }
    Ok(outcome)
}

/// The exact tabular baseline. Deterministic — the seed list is irrelevant
/// and the run writes directly into the output directory.
pub fn cmd_exact_pmd(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutcome> {
    let section = cfg
        .exact
        .as_ref()
        .ok_or_else(|| anyhow!("this command needs an [exact] config table"))?;
    let mdp = cfg.env.build(None)?;
    ensure_dir(out)?;
    let opts = ExactPmdOptions {
        iterations: section.iterations,
        gamma_rho: section.gamma_rho,
        cost_bound: section.cost_bound,
        constant_eta: section.constant_eta,
    };
    let mut outcome = CommandOutcome::new();
    match run_exact_pmd(&mdp, &opts) {
        Ok(run) => {
            write_runlog_csv(&run.records, &out.join("runlog.csv"))?;
            write_timing_csv(&run.records, &out.join("timing.csv"))?;
            let meta = RunMeta {
                kind: "exact-pmd".into(),
                env_kind: cfg.env.kind.clone(),
                n_states: mdp.n_states(),
                n_actions: mdp.n_actions(),
                gamma: mdp.gamma(),
                gamma_rho: run.gamma_rho,
                cost_bound: run.cost_bound,
                kappa: run.kappa,
                iterations: section.iterations,
                seed: 0,
            };
            write_meta(&meta, out)?;
            let last = run.records.last().expect("runs always log at least one row");
            let certified = opts.constant_eta.is_none() && opts.cost_bound.is_none();
            outcome.note(format!(
                "gap {:.6} -> {:.6} over {} iterations (gamma_rho {:.6}{})",
                run.records[0].optimality_gap,
                last.optimality_gap,
                section.iterations,
                run.gamma_rho,
                if certified { ", rate certified" } else { "" }
            ));
        }
        Err(e) => outcome.fail(format!("FAILED: {e}")),
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// sampler-check
// ---------------------------------------------------------------------------

/// Draws geometric-stopping samples under the uniform policy and compares
/// the empirical state-action frequencies against the closed-form discounted
/// visitation, and the mean trajectory length against `1/(1-γ)`.
pub fn cmd_sampler_check(
    cfg: &ExperimentConfig,
    out: &Path,
    seeds: &[u64],
) -> Result<CommandOutcome> {
    let section = cfg.sampler_check.clone().unwrap_or(crate::config::SamplerCheckSection {
        n_samples: 100_000,
        tv_tolerance: 0.02,
        length_tolerance: 0.02,
    });
    let mdp = cfg.env.build(None)?;
    ensure_dir(out)?;
    let policy = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
    let exact = visitation_distribution(&mdp, &policy)?;
    let expected_len = 1.0 / (1.0 - mdp.gamma());

    let mut outcome = CommandOutcome::new();
    let mut summary = String::from(
        "seed,n_samples,tv,tv_tolerance,tv_pass,mean_length,expected_length,length_tolerance,length_pass\n",
    );
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; mdp.n_states() * mdp.n_actions()];
        let mut total_len = 0u64;
        for _ in 0..section.n_samples {
            let s = sample_visitation(&mdp, &policy, &mut rng)?;
            counts[s.state * mdp.n_actions() + s.action] += 1;
            total_len += s.trajectory_len as u64 + 1;
        }
        let empirical: Vec<f64> =
            counts.iter().map(|&c| c as f64 / section.n_samples as f64).collect();
        let tv = total_variation(&empirical, &exact.pairs);
        let mean_len = total_len as f64 / section.n_samples as f64;
        let tv_pass = tv <= section.tv_tolerance;
        let len_pass =
            (mean_len - expected_len).abs() <= section.length_tolerance * expected_len;
        let _ = writeln!(
            summary,
            "{seed},{},{tv:.6},{},{tv_pass},{mean_len:.6},{expected_len:.6},{},{len_pass}",
            section.n_samples, section.tv_tolerance, section.length_tolerance
        );

        let mut pairs = String::from("state,action,empirical,exact\n");
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let _ = writeln!(
                    pairs,
                    "{s},{a},{:.6},{:.17e}",
                    empirical[s * mdp.n_actions() + a],
                    exact.pair(s, a)
                );
            }
        }
        std::fs::write(out.join(format!("pairs_seed{seed}.csv")), pairs)?;

        let line = format!(
            "seed {seed}: TV {tv:.4} (<= {}), mean length {mean_len:.3} vs {expected_len:.3}",
            section.tv_tolerance
        );
        if tv_pass && len_pass {
            outcome.note(line);
        } else {
            outcome.fail(format!("{line} — OUT OF TOLERANCE"));
        }
    }
    std::fs::write(out.join("sampler_check.csv"), summary)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// spline-rate
// ---------------------------------------------------------------------------

/// Fits the dyadic interpolant to seeded certified-smoothness test functions
/// and audits the sup error against its guarantee at every level.
pub fn cmd_spline_rate(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutcome> {
    let section = cfg.spline_rate.clone().unwrap_or_else(|| {
        crate::config::SplineRateSection {
            dims: vec![1, 2],
            levels: vec![2, 3, 4],
            functions_per_dim: 10,
            envelope_constant: 2.0,
            exponent: 1.0,
            grid_factor: 4,
            anchors: 5,
            seed: 0,
        }
    });
    ensure_dir(out)?;
    let mut outcome = CommandOutcome::new();
    let mut csv = String::from(
        "dim,function,level,n_coeffs,constant,exponent,sup_error,bound,pass\n",
    );
    let mut total = 0usize;
    let mut passed = 0usize;
    for &dim in &section.dims {
        for fi in 0..section.functions_per_dim {
            let seed = section.seed ^ ((dim as u64) << 32) ^ fi as u64;
            let f = EnvelopeTestFunction::new(dim, section.anchors, section.envelope_constant, seed);
            let constant = if (section.exponent - 1.0).abs() < 1e-12 {
                f.certified_lipschitz()
            } else {
                f.certified_holder(section.exponent)
            };
            let rows = verify_rate(
                |x| f.eval(x),
                dim,
                constant,
                section.exponent,
                &section.levels,
                section.grid_factor,
            )?;
            for row in rows {
                total += 1;
                passed += row.pass as usize;
                let _ = writeln!(
                    csv,
                    "{dim},{fi},{},{},{:.17e},{},{:.17e},{:.17e},{}",
                    row.level,
                    row.n_coeffs,
                    row.constant,
                    row.exponent,
                    row.sup_error,
                    row.bound,
                    row.pass
                );
                if !row.pass {
                    outcome.fail(format!(
                        "dim {dim} function {fi} level {}: sup error {:.3e} exceeds bound {:.3e}",
                        row.level, row.sup_error, row.bound
                    ));
                }
            }
        }
    }
    std::fs::write(out.join("spline_rate.csv"), csv)?;
    outcome.note(format!("{passed}/{total} level rows within the certified bound"));
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// lipschitz-report
// ---------------------------------------------------------------------------

/// Smoothness constants of the MDP plus measured action-value smoothness
/// across random policies, audited against the certified value bound.
pub fn cmd_lipschitz_report(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutcome> {
    let section = cfg.lipschitz_report.clone().unwrap_or(crate::config::LipschitzReportSection {
        n_policies: 20,
        exponent: 1.0,
        seed: 0,
    });
    let mdp = cfg.env.build(None)?;
    let net = mdp
        .manifold()
        .ok_or_else(|| anyhow!("lipschitz-report needs a net-carried environment"))?;
    ensure_dir(out)?;
    let report = lipschitz_mdp_report(&mdp, section.exponent)?;
    let mut constants = String::from(
        "cost_constant,kernel_constant,q_bound,normalized_q_bound,exponent\n",
    );
    let _ = writeln!(
        constants,
        "{:.17e},{:.17e},{:.17e},{:.17e},{}",
        report.cost_constant,
        report.kernel_constant,
        report.q_bound,
        report.normalized_q_bound,
        report.exponent
    );
    std::fs::write(out.join("lipschitz_constants.csv"), constants)?;

    let mut outcome = CommandOutcome::new();
    let sentinel = !report.q_bound.is_finite();
    outcome.note(if sentinel {
        format!(
            "kernel constant is the disjoint-support sentinel; auditing finiteness of {} policy estimates",
            section.n_policies
        )
    } else {
        format!(
            "value-smoothness bound {:.6}; auditing {} policies against it",
            report.q_bound, section.n_policies
        )
    });

    let mut rows = String::from("policy,action,estimate,bound,pass\n");
    let mut rng = ChaCha8Rng::seed_from_u64(section.seed);
    for p in 0..section.n_policies {
        let mut probs = vec![0.0; mdp.n_states() * mdp.n_actions()];
        for s in 0..mdp.n_states() {
            let row: Vec<f64> =
                (0..mdp.n_actions()).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = row.iter().sum();
            for (a, v) in row.iter().enumerate() {
                probs[s * mdp.n_actions() + a] = v / z;
            }
        }
        let policy = PolicyTable::new(probs, mdp.n_states(), mdp.n_actions())?;
        let vals = policy_evaluate(&mdp, &policy)?;
        for a in 0..mdp.n_actions() {
            let column: Vec<f64> = (0..mdp.n_states()).map(|s| vals.q_at(s, a)).collect();
            let estimate = net.estimate_lipschitz(&column, section.exponent, 0.0)?;
            let pass = if sentinel {
                estimate.is_finite()
            } else {
                estimate <= report.q_bound + 1e-9
            };
            let _ = writeln!(rows, "{p},{a},{estimate:.17e},{:.17e},{pass}", report.q_bound);
            if !pass {
                outcome.fail(format!(
                    "policy {p} action {a}: estimate {estimate:.6} violates the bound {:.6}",
                    report.q_bound
                ));
            }
        }
    }
    std::fs::write(out.join("lipschitz_report.csv"), rows)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// resolution-sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    embed_dim: usize,
    samples: usize,
    seed: u64,
}

struct CellResult {
    final_gap: Option<f64>,
    ema_reward: Option<f64>,
    max_reward: Option<f64>,
    iterations: usize,
    status: String,
}

/// Runs the (embed dim × sample size × seed) grid in a worker pool. Each
/// cell owns its RNG stream and subdirectory; failures are recorded in the
/// summary and the sweep continues. The summary merge is sequential in grid
/// order, so the CSV is deterministic regardless of scheduling.
pub fn cmd_resolution_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    seeds: &[u64],
) -> Result<CommandOutcome> {
    let base = npmd_section(cfg)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| anyhow!("this command needs a [sweep] config table"))?;
    if sweep.embed_dims.is_empty() || sweep.sample_sizes.is_empty() || seeds.is_empty() {
        bail!("sweep needs nonempty embed_dims, sample_sizes, and seeds");
    }
    ensure_dir(out)?;
    let mut cells = Vec::new();
    for &d in &sweep.embed_dims {
        for &n in &sweep.sample_sizes {
            for &seed in seeds {
                cells.push(SweepCell { embed_dim: d, samples: n, seed });
            }
        }
    }

    let results: Vec<Mutex<Option<CellResult>>> =
        (0..cells.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = pool_width(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                let result = run_sweep_cell(cfg, base, out, cell);
                *results[i].lock().expect("no poisoned cell slots") = Some(result);
            });
        }
    });

    let mut outcome = CommandOutcome::new();
    let mut csv = String::from(
        "embed_dim,samples_per_action,seed,iterations,final_gap,ema_reward,max_reward,status\n",
    );
    for (cell, slot) in cells.iter().zip(&results) {
        let r = slot
            .lock()
            .expect("no poisoned cell slots")
            .take()
            .expect("every cell ran exactly once");
        let fmt_opt =
            |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            cell.embed_dim,
            cell.samples,
            cell.seed,
            r.iterations,
            fmt_opt(r.final_gap),
            fmt_opt(r.ema_reward),
            fmt_opt(r.max_reward),
            r.status
        );
        match r.final_gap {
            Some(gap) => outcome.note(format!(
                "D={} N={} seed={}: final gap {gap:.6}",
                cell.embed_dim, cell.samples, cell.seed
            )),
            None => outcome.fail(format!(
                "D={} N={} seed={}: {}",
                cell.embed_dim, cell.samples, cell.seed, r.status
            )),
        }
    }
    std::fs::write(out.join("summary.csv"), csv)?;
    Ok(outcome)
}

fn run_sweep_cell(
    cfg: &ExperimentConfig,
    base: &NpmdConfig,
    out: &Path,
    cell: &SweepCell,
) -> CellResult {
    let mut config = base.clone();
    config.seed = cell.seed;
    config.samples_per_action_n = cell.samples;
    let dir = out.join(format!("d{}_n{}_seed{}", cell.embed_dim, cell.samples, cell.seed));
    let attempt = || -> Result<CellResult> {
        ensure_dir(&dir)?;
        let mdp = cfg.env.build(Some(cell.embed_dim))?;
        let run = run_npmd(&mdp, &config)?;
        write_runlog_csv(&run.records, &dir.join("runlog.csv"))?;
        write_timing_csv(&run.records, &dir.join("timing.csv"))?;
        write_meta(&npmd_meta(cfg, &mdp, &run, cell.seed, config.iterations_k), &dir)?;
        let (final_r, ema, max_r) =
            reward_summary(&run.records).ok_or_else(|| anyhow!("empty run log"))?;
        Ok(CellResult {
            final_gap: Some(-final_r),
            ema_reward: Some(ema),
            max_reward: Some(max_r),
            iterations: config.iterations_k,
            status: "ok".into(),
        })
    };
    attempt().unwrap_or_else(|e| CellResult {
        final_gap: None,
        ema_reward: None,
        max_reward: None,
        iterations: config.iterations_k,
        status: format!("error: {}", e.to_string().replace(',', ";")),
    })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Merges run logs into one CSV and renders gap-vs-iteration (log scale) and
/// gap-vs-samples plots. Exact-baseline runs additionally get their
/// certified bound curve, and the plotted gap must lie under it.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<CommandOutcome> {
    if run_dirs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let missing: Vec<String> = run_dirs
        .iter()
        .flat_map(|dir| {
            [dir.join("runlog.csv"), dir.join("meta.toml")]
                .into_iter()
                .filter(|p| !p.is_file())
                .map(|p| p.display().to_string())
        })
        .collect();
    if !missing.is_empty() {
        bail!("missing run inputs: {}", missing.join(", "));
    }
    ensure_dir(out)?;

    let mut outcome = CommandOutcome::new();
    let mut merged = String::from("run,");
    merged.push_str(npmd_core::npmd::RUNLOG_HEADER);
    merged.push('\n');
    let mut iter_series = Vec::new();
    let mut sample_series = Vec::new();
    for dir in run_dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let meta = read_meta(dir)?;
        let records = read_runlog(&dir.join("runlog.csv"))?;
        if records.is_empty() {
            bail!("{} contains an empty run log", dir.display());
        }
        let log_text = std::fs::read_to_string(dir.join("runlog.csv"))?;
        for line in log_text.lines().skip(1) {
            if !line.is_empty() {
                let _ = writeln!(merged, "{name},{line}");
            }
        }
        iter_series.push(Series {
            name: name.clone(),
            points: records.iter().map(|r| (r.k as f64, r.optimality_gap)).collect(),
            dashed: false,
        });
        sample_series.push(Series {
            name: name.clone(),
            points: records
                .iter()
                .map(|r| (r.cumulative_samples as f64, r.optimality_gap))
                .collect(),
            dashed: false,
        });
        if meta.kind == "exact-pmd" {
            let bound: Vec<(f64, f64)> =
                records.iter().map(|r| (r.k as f64, meta.gap_bound(r.k))).collect();
            let violations = records
                .iter()
                .filter(|r| r.optimality_gap > meta.gap_bound(r.k) + 1e-9)
                .count();
            if violations == 0 {
                outcome.note(format!("{name}: gap curve lies under the certified bound"));
            } else {
                outcome.fail(format!(
                    "{name}: gap exceeds the certified bound at {violations} iterations"
                ));
            }
            iter_series.push(Series {
                name: format!("{name} bound"),
                points: bound,
                dashed: true,
            });
        } else {
            outcome.note(format!("{name}: {} rows", records.len()));
        }
    }
    std::fs::write(out.join("merged.csv"), merged)?;
    std::fs::write(
        out.join("gap_vs_iteration.svg"),
        line_plot(
            &iter_series,
            &PlotOptions {
                title: "optimality gap vs iteration".into(),
                x_label: "iteration".into(),
                y_label: "gap".into(),
                log_y: true,
            },
        ),
    )?;
    std::fs::write(
        out.join("gap_vs_samples.svg"),
        line_plot(
            &sample_series,
            &PlotOptions {
                title: "optimality gap vs oracle calls".into(),
                x_label: "cumulative samples".into(),
                y_label: "gap".into(),
                log_y: true,
            },
        ),
    )?;
    Ok(outcome)
}
