//! `starhum`: star graph control experiments from JSON configurations.
//!
//! Exit status: 0 on success, 2 when the configuration violates the graph
//! hypotheses, 1 on any other error.

mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use starhum::hum::{hum_solve_with, HumOptions};
use starhum::multiplier_checks::{vertex_balance, VertexBalance};
use starhum::observability::{lambda_min_with, LanczosOptions};
use starhum::star_graph::{length_constants, t_min_optimal};
use starhum::*;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "starhum", version, about = "Boundary control experiments on star graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the graph hypotheses and report the minimal control time.
    Validate,
    /// Forward simulation with conservation diagnostics.
    Simulate,
    /// Extreme eigenvalues of the observability Gramian.
    Observe,
    /// Control synthesis (null control when no target is given).
    Control,
    /// Multiplier identity residuals.
    Identity,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let path = cli.config.as_deref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let graph = cfg.graph();
    let report = validate_config(&graph);
    if let Command::Validate = cli.command {
        return validate(&cfg, &report, &cli.out);
    }
    if !report.is_ok() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        return Ok(ExitCode::from(2));
    }
    cfg.check_grid()?;
    match cli.command {
        Command::Validate => unreachable!(),
        Command::Simulate => simulate(&cfg, &cli.out),
        Command::Observe => observe(&cfg, &cli.out),
        Command::Control => control(&cfg, &cli.out),
        Command::Identity => identity(&cfg, &cli.out),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn validate(cfg: &ExperimentConfig, report: &ValidationReport, out: &Path) -> anyhow::Result<ExitCode> {
    let graph = cfg.graph();
    let violations: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
    let value = if report.is_ok() {
        let lc = length_constants(&graph);
        let (eps_star, t_star) = t_min_optimal(&graph);
        let eps = cfg.epsilon()?;
        let tm = t_min(&graph, eps).ok();
        let t = cfg.horizon().ok();
        json!({
            "valid": true,
            "violations": violations,
            "L": lc.max_length,
            "L_bar": lc.lbar,
            "epsilon_star": eps_star,
            "T_star": t_star,
            "epsilon": eps,
            "T_min": tm,
            "T": t,
            "T_exceeds_T_min": matches!((t, tm), (Some(t), Some(tm)) if t > tm),
        })
    } else {
        json!({ "valid": false, "violations": violations })
    };
    write_json(out, "validate.json", &value)?;
    println!("{}", serde_json::to_string(&value)?);
    Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn setup(cfg: &ExperimentConfig, tips_free: bool) -> anyhow::Result<(DiscreteGraphSpace, GraphMatrices)> {
    let space = build_space(&cfg.graph(), cfg.elements_per_edge, tips_free)?;
    let matrices = assemble(&space);
    Ok((space, matrices))
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let t = cfg.horizon()?;
    let forced = !cfg.controls.is_empty();
    let (space, matrices) = setup(cfg, forced)?;
    let u0 = cfg.initial.build(&space, &matrices)?;
    let controls = if forced {
        Some(cfg.control_signal(space.n_slots(), t)?)
    } else {
        None
    };
    let prop = Propagator::new(&matrices, t / cfg.n_steps as f64)?;
    let traj = prop.forward(&u0, controls.as_ref(), cfg.n_steps, cfg.output_stride)?;
    traj.write_csv(create(out, "trajectory.csv")?)?;
    if let Some(h) = &controls {
        h.write_csv(create(out, "controls.csv")?)?;
    }
    let report = conservation_report(&matrices, &traj);
    write_json(out, "conservation.json", &report)?;
    println!(
        "drifts: mass {:.3e}, energy {:.3e}, gram {:.3e}",
        report.max_mass_drift, report.max_energy_drift, report.max_gram_drift
    );
    Ok(())
}

fn observe(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let t = cfg.horizon()?;
    let (space, matrices) = setup(cfg, true)?;
    let opts = LanczosOptions {
        tol: cfg.lanczos_tol,
        max_iterations: cfg.max_iterations,
        seed: cfg.seed,
    };
    let d = lambda_min_with(&space, &matrices, t, cfg.n_steps, opts, Some(cfg.epsilon()?))?;
    write_json(out, "gramian.json", &d)?;
    println!(
        "lambda_min {:.6e} (resolution {:.1e}), lambda_max {:.6e}, 1/C {}",
        d.lambda_min,
        d.lambda_min_resolution,
        d.lambda_max,
        d.one_over_c_theory.map_or("n/a".to_string(), |v| format!("{v:.6e}"))
    );
    if d.flagged {
        println!("flag: lambda_min < 1/(2C)");
    }
    Ok(())
}

fn control(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let t = cfg.horizon()?;
    let (space, matrices) = setup(cfg, true)?;
    let u0 = cfg.initial.build(&space, &matrices)?;
    let ut = match &cfg.target {
        Some(p) => p.build(&space, &matrices)?,
        None => GraphState::zeros(space.n_dof()),
    };
    let opts = HumOptions {
        cg_tol: cfg.cg_tol,
        max_iterations: cfg.max_iterations,
    };
    let r = hum_solve_with(&space, &matrices, &u0, &ut, t, cfg.n_steps, opts)?;
    r.write_controls_csv(create(out, "controls.csv")?)?;
    write_json(out, "hum.json", &r.summary())?;
    println!(
        "cg {} iterations, residual {:.3e}, steering error {:.3e} (M), {:.3e} (dual), control energy {:.6e}",
        r.cg_iterations, r.cg_residual, r.steering_error_m, r.steering_error_dual, r.control_energy
    );
    Ok(())
}

#[derive(Serialize)]
struct IdentityOutput {
    #[serde(rename = "T")]
    t: f64,
    n_steps: usize,
    identities: Vec<IdentityEntry>,
    vertex_balance: VertexBalance,
}

#[derive(Serialize)]
struct IdentityEntry {
    multiplier: multiplier_checks::MultiplierFunction,
    report: IdentityReport,
}

fn identity(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let t = cfg.horizon()?;
    let (space, matrices) = setup(cfg, false)?;
    let u0 = cfg.initial.build(&space, &matrices)?;
    let traj = solve_forward(&space, &matrices, &u0, None, t, cfg.n_steps)?;
    let mut identities = Vec::new();
    for q in &cfg.multipliers {
        let report = morawetz_residual(&space, &matrices, &traj, q)?;
        println!("{q:?}: relative residual {:.3e}", report.relative_residual());
        identities.push(IdentityEntry {
            multiplier: q.clone(),
            report,
        });
    }
    let value = IdentityOutput {
        t,
        n_steps: cfg.n_steps,
        identities,
        vertex_balance: vertex_balance(&space, &traj)?,
    };
    write_json(out, "identity.json", &value)
}
