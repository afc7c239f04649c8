mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hybrid_bai::design::{
    appendix_d_closed_forms, characteristic_time, cost_characteristic_time, local_lb_time, single_modality_time,
};
use hybrid_bai::harness::{derive_seed, execute_sweep, run_seeded, run_seeds, write_sweep_outputs};
use hybrid_bai::{HybridInstance, SweepOptions, SweepSpec};
use serde::Serialize;
use serde_json::json;

use config::{load, DesignConfig, RunConfig, ValidateConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "hybrid-bai", version, about = "Best-arm identification with reward and dueling feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// -v for info, -vv for debug logging
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One seeded run; writes result.json (and trace.csv with --trace)
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stream a per-round CSV trace to <out>/trace.csv
        #[arg(long)]
        trace: bool,
    },
    /// A grid of runs; writes results.csv, summary.csv and manifest.json
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent runs, 0 for all cores
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Record per-run wall-clock time (makes outputs non-reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Optimal design and characteristic times of an instance
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-form single-modality times of the two comparison instances
    Complexity {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks the modelling assumptions on an instance
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let res = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trace,
        } => cmd_run(&config, out.as_deref(), seed, trace),
        Command::Sweep {
            config,
            out,
            seed,
            jobs,
            timing,
        } => cmd_sweep(&config, &out, seed, jobs, timing),
        Command::Design { config, out, seed } => cmd_design(&config, out.as_deref(), seed),
        Command::Complexity { out } => cmd_complexity(out.as_deref()),
        Command::Validate { config, out, seed } => cmd_validate(&config, out.as_deref(), seed),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

/// Writes `value` as pretty JSON to `<out>/<name>`, or to stdout without `out`.
fn emit<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            std::fs::write(dir.join(name), text + "\n")?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn build_instance(spec: &hybrid_bai::GeneratorSpec, seed: u64) -> Result<HybridInstance> {
    Ok(spec.build(seed)?)
}

fn cmd_run(path: &Path, out: Option<&Path>, seed: Option<u64>, trace: bool) -> Result<u8> {
    let mut cfg: RunConfig = load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.algorithm.validate()?;
    // same seeding as the first run of a one-cell sweep with this base seed
    let cell_seed = derive_seed(cfg.seed, 0);
    let mut inst = build_instance(&cfg.instance, cell_seed)?;
    if let Some(c) = &cfg.costs {
        inst = inst.with_costs(c.clone())?;
    }
    let (env_seed, algo_seed) = run_seeds(cell_seed, 0, cfg.algorithm.mode);
    let result = if trace {
        let Some(dir) = out else {
            bail!("--trace needs --out");
        };
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
        let r = run_seeded(&inst, &cfg.algorithm, env_seed, algo_seed, Some(&mut w))?;
        w.flush()?;
        r
    } else {
        run_seeded(&inst, &cfg.algorithm, env_seed, algo_seed, None)?
    };
    log::info!(
        "stopped after {} queries, recommended arm {}",
        result.stopping_round,
        result.recommended
    );
    let doc = json!({
        "config": cfg,
        "instance_fingerprint": format!("{:016x}", inst.fingerprint()),
        "result": result,
    });
    emit(&doc, out, "result.json")?;
    Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_sweep(path: &Path, out: &Path, seed: Option<u64>, jobs: usize, timing: bool) -> Result<u8> {
    let mut spec: SweepSpec = load(path)?;
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    spec.validate()?;
    let rows = execute_sweep(&spec, &SweepOptions { jobs, timing })?;
    write_sweep_outputs(out, &spec, &rows)?;
    let bad = rows.iter().filter(|r| !r.converged).count();
    log::info!("{} rows written to {}, {bad} non-converged", rows.len(), out.display());
    Ok(0)
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct DesignReport {
    actions: Vec<String>,
    w: Vec<f64>,
    phi: f64,
    T_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_bar: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    T_star_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    T_loc: Option<f64>,
    fw_iterations: usize,
    converged: bool,
}

fn cmd_design(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<u8> {
    let mut cfg: DesignConfig = load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.fw.validate()?;
    let inst = build_instance(&cfg.instance, derive_seed(cfg.seed, 0))?;
    let view = inst.view();
    let actions = view.actions().iter().map(|a| a.to_string()).collect();
    let report = if let Some(m) = cfg.modality {
        let t = single_modality_time(&inst, m, &cfg.fw)?;
        DesignReport {
            actions,
            w: t.weights,
            phi: t.objective,
            T_star: t.value,
            p: None,
            w_bar: None,
            phi_cost: None,
            T_star_cost: None,
            T_loc: None,
            fw_iterations: t.iterations,
            converged: t.converged,
        }
    } else {
        let t = characteristic_time(&inst, &cfg.fw)?;
        let loc = local_lb_time(&inst, &cfg.fw)?;
        let mut report = DesignReport {
            actions,
            w: t.weights,
            phi: t.objective,
            T_star: t.value,
            p: None,
            w_bar: None,
            phi_cost: None,
            T_star_cost: None,
            T_loc: Some(loc.value),
            fw_iterations: t.iterations,
            converged: t.converged && loc.converged,
        };
        if let Some(c) = &cfg.costs {
            let costs = c.costs_for(view.actions());
            let tc = cost_characteristic_time(&inst, &costs, &cfg.fw)?;
            let total: f64 = tc.weights.iter().sum();
            report.w_bar = Some(tc.weights.iter().map(|p| p / total).collect());
            report.p = Some(tc.weights);
            report.phi_cost = Some(tc.objective);
            report.T_star_cost = Some(tc.value);
            report.converged &= tc.converged;
        }
        report
    };
    emit(&report, out, "design.json")?;
    if !report.converged {
        eprintln!("design solver did not reach its tolerance; best iterate reported");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_complexity(out: Option<&Path>) -> Result<u8> {
    let s = 5.0;
    let (b_c, b_d) = (2.0 * (1.0 + s), 2.0 * (1.0 + 2.0 * s));
    let mut cases = Vec::new();
    for case in [1u8, 2] {
        let (tr1, td1) = appendix_d_closed_forms(case, 1.0, 1.0)?;
        let (tr, td) = appendix_d_closed_forms(case, b_c, b_d)?;
        cases.push(json!({
            "case": case,
            "unit_constants": {"T_R": tr1, "T_D": td1},
            "logistic_constants": {"T_R": tr, "T_D": td},
        }));
    }
    let doc = json!({"S": s, "B_c": b_c, "B_d": b_d, "cases": cases});
    emit(&doc, out, "complexity.json")?;
    Ok(0)
}

fn cmd_validate(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<u8> {
    let mut cfg: ValidateConfig = load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let inst = build_instance(&cfg.instance, derive_seed(cfg.seed, 0))?;
    let view = inst.view();
    let report = inst.validate();
    let s = view.radius();

    let mut sc = Vec::new();
    let mut sc_ok = true;
    for fam in [view.family_reward(), view.family_dueling()] {
        let margin = fam.self_concordance_margin(4.0 * s, 4001)?;
        sc_ok &= margin >= -1e-12;
        sc.push(json!({"family": fam.kind().as_str(), "margin": margin}));
    }

    // x_aᵀθ over the ball |θ| <= S sweeps exactly [-S|x_a|, S|x_a|]
    let mut kappa = f64::INFINITY;
    for a in 0..view.num_actions() {
        let fam = view.family_of(view.actions()[a]);
        let half = s * view.feature(a).norm();
        for i in 0..=1000 {
            let eta = -half + 2.0 * half * i as f64 / 1000.0;
            kappa = kappa.min(fam.mean_prime(eta)?);
        }
    }
    let kappa_ok = kappa > 0.0;

    let mut min_dist = f64::INFINITY;
    for i in 0..view.num_arms() {
        for j in i + 1..view.num_arms() {
            min_dist = min_dist.min((view.arm(i) - view.arm(j)).norm());
        }
    }
    let distinct_ok = min_dist > 1e-12;

    let pass = report.all_ok() && sc_ok && kappa_ok && distinct_ok;
    let doc = json!({
        "checks": report,
        "self_concordance": sc,
        "self_concordance_ok": sc_ok,
        "kappa": kappa,
        "kappa_ok": kappa_ok,
        "min_arm_distance": min_dist,
        "distinct_arms_ok": distinct_ok,
        "pass": pass,
    });
    emit(&doc, out, "validation.json")?;
    Ok(if pass { 0 } else { EXIT_VALIDATION })
}
