use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use stiffgate::diagnostics::{ntk_matrix, KernelMode};
use stiffgate::dynamics::{energy, solve_reference, uniform_grid};
use stiffgate::evaluation::ReferenceCache;
use stiffgate::gradcheck::{check_loss_gradient, check_time_derivatives, random_params, FD_STEP};
use stiffgate::harness::{
    execute_run, expand_sweep, read_records, run_sweep, table1_observations, write_report, write_run_artifacts,
    write_table1_csv, RunConfig, SweepSpec,
};
use stiffgate::models::init_params;
use stiffgate::stats::{gate_comparison_table, Winner};
use stiffgate::training::TrainConfig;
use stiffgate::{GateKind, IcSpec, Model, ParamVector, PhysicsParams, State, TrunkKind};

#[derive(Parser)]
#[command(name = "stiffgate", version, about = "Gated-IC PINN workbench for the stiff spring pendulum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Residual,
    Output,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the reference trajectory and write it as CSV.
    SolveReference {
        #[arg(long, default_value_t = 20.0)]
        k: f64,
        #[arg(long, default_value_t = 1.5)]
        r0: f64,
        #[arg(long, default_value_t = 1.0)]
        theta0: f64,
        #[arg(long, default_value_t = 0.0)]
        rdot0: f64,
        #[arg(long, default_value_t = 0.0)]
        thetadot0: f64,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value_t = 2000)]
        n_eval: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare engine derivatives with finite differences.
    #[command(hide = true)]
    Gradcheck {
        #[arg(long)]
        model: TrunkKind,
        #[arg(long)]
        gate: GateKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        k: f64,
        /// Check this many random gradient coordinates (all by default).
        #[arg(long)]
        coords: Option<usize>,
    },
    /// Tangent kernel at initialization (or at saved parameters).
    Ntk {
        #[arg(long)]
        model: TrunkKind,
        #[arg(long)]
        gate: GateKind,
        #[arg(long, default_value_t = 20.0)]
        k: f64,
        #[arg(long, default_value_t = 64)]
        n_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameters from a run's params.bin instead of the seeded init.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Residual)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired gate comparison table from a results file.
    Stats {
        /// A sweep directory or its runs.csv.
        #[arg(long)]
        runs: PathBuf,
        /// Keep only this setting (e.g. noIC, lIC50).
        #[arg(long)]
        setting: Option<String>,
        #[arg(long, default_value = "adaptive_fourier")]
        model: TrunkKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configuration of a sweep not yet recorded.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate a results file into per-cell tables and figure data.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        lambda_ic: Option<f64>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn solve_reference_cmd(physics: &PhysicsParams, s0: State, n_eval: usize, out: &Path) -> Result<()> {
    physics.validate()?;
    let grid = uniform_grid(physics.t_final, n_eval);
    let traj = solve_reference(&s0, physics, &grid)?;
    let mut w = csv_writer(out)?;
    w.write_record(["t", "r", "theta", "r_dot", "theta_dot", "energy"])?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        w.write_record(
            [*t, s.r, s.theta, s.r_dot, s.theta_dot, energy(s, physics)].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    let e0 = energy(&traj.states[0], physics);
    let drift = traj
        .states
        .iter()
        .map(|s| (energy(s, physics) - e0).abs())
        .fold(0.0, f64::max)
        / e0.abs().max(f64::MIN_POSITIVE);
    println!("wrote {} samples to {} (max relative energy drift {drift:.3e})", traj.len(), out.display());
    Ok(())
}

fn train_cmd(config: &Path, out_dir: &Path) -> Result<()> {
    let cfg: RunConfig = read_json(config)?;
    let outcome = execute_run(&cfg, &ReferenceCache::from_env())?;
    write_run_artifacts(out_dir, &outcome)?;
    match &outcome.metrics {
        Some(m) => println!(
            "run {}: rel_l2_u {:.6e}, max_ae_u {:.6e} ({:.1}s)",
            outcome.run_id, m.rel_l2_u, m.max_ae_u, outcome.wall_time
        ),
        None => println!(
            "run {} aborted: {}",
            outcome.run_id,
            outcome.reason.as_deref().unwrap_or("unknown reason")
        ),
    }
    Ok(())
}

fn gradcheck_cmd(model: TrunkKind, gate: GateKind, seed: u64, k: f64, coords: Option<usize>) -> Result<()> {
    let physics = PhysicsParams::with_k(k);
    let m = Model::new(model, gate, IcSpec::default(), physics.r_min)?;
    let params = random_params(&m, seed, 0.1);
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..5 {
        let t = physics.t_final * (0.07 + 0.19 * i as f64);
        let (e1, e2) = check_time_derivatives(&m, &params, t, FD_STEP)?;
        worst = (worst.0.max(e1), worst.1.max(e2));
    }
    let rep = check_loss_gradient(&m, &params, &physics, &TrainConfig::default(), seed, coords, FD_STEP)?;
    println!("d1 max relative discrepancy: {:.3e}", worst.0);
    println!("d2 max relative discrepancy: {:.3e}", worst.1);
    println!(
        "loss gradient max relative discrepancy: {:.3e} over {} coordinates (worst index {})",
        rep.max_rel, rep.n_checked, rep.worst_index
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ntk_cmd(
    model: TrunkKind,
    gate: GateKind,
    k: f64,
    n_points: usize,
    seed: u64,
    params: Option<&Path>,
    mode: ModeArg,
    out: &Path,
) -> Result<()> {
    let physics = PhysicsParams::with_k(k);
    let m = Model::new(model, gate, IcSpec::default(), physics.r_min)?;
    let params = match params {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            ParamVector::from_bytes(&bytes)?
        }
        None => init_params(model, seed),
    };
    let mode = match mode {
        ModeArg::Residual => KernelMode::Residual,
        ModeArg::Output => KernelMode::Output,
    };
    let t = uniform_grid(physics.t_final, n_points);
    let rep = ntk_matrix(&m, params.as_slice(), &physics, &t, mode)?;

    let mut w = csv_writer(out)?;
    w.write_record(["section", "i", "j", "value"])?;
    for (i, ti) in rep.t_points.iter().enumerate() {
        w.write_record(["t".into(), i.to_string(), String::new(), ti.to_string()])?;
    }
    for i in 0..rep.k.nrows() {
        for j in 0..rep.k.ncols() {
            w.write_record(["K".into(), i.to_string(), j.to_string(), rep.k[(i, j)].to_string()])?;
        }
    }
    for (i, l) in rep.eigenvalues.iter().enumerate() {
        w.write_record(["eigenvalue".into(), i.to_string(), String::new(), l.to_string()])?;
    }
    w.write_record(["effective_rank", "", "", &rep.effective_rank.to_string()])?;
    w.write_record(["condition_number", "", "", &rep.condition_number.to_string()])?;
    w.flush()?;
    println!(
        "{}x{} kernel: lambda_max {:.6e}, effective rank {:.4}, condition number {:.4e}",
        rep.k.nrows(),
        rep.k.ncols(),
        rep.eigenvalues.first().copied().unwrap_or(0.0),
        rep.effective_rank,
        rep.condition_number
    );
    Ok(())
}

fn results_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("runs.csv")
    } else {
        path.to_path_buf()
    }
}

fn stats_cmd(runs: &Path, setting: Option<&str>, model: TrunkKind, out: &Path) -> Result<()> {
    let records = read_records(&results_path(runs))?;
    let mut obs = table1_observations(&records, model);
    if let Some(s) = setting {
        obs.retain(|o| o.setting == s);
    }
    if obs.is_empty() {
        bail!("no completed {model} runs{}", setting.map(|s| format!(" in setting {s}")).unwrap_or_default());
    }
    let rows = gate_comparison_table(&obs)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_table1_csv(out, &rows)?;
    println!("A = exp gate, B = linear gate");
    for r in &rows {
        let winner = match r.winner {
            Some(Winner::A) => "A",
            Some(Winner::B) => "B",
            None => "-",
        };
        println!(
            "{:>6} k={:<5} {:<8} winner {winner} n={:<3} mean A {:.4e} B {:.4e} frac {:.2} p {:.3e} p_holm {:.3e} p_1s {:.3e}",
            r.setting, r.k, r.metric, r.n, r.mean_a, r.mean_b, r.frac_win, r.p_raw, r.p_holm, r.p_one_sided
        );
    }
    Ok(())
}

fn sweep_cmd(config: &Path, out_dir: &Path, workers: Option<usize>) -> Result<()> {
    let spec: SweepSpec = read_json(config)?;
    let runs = expand_sweep(&spec)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    info!("{} runs on {workers} workers", runs.len());
    let summary = run_sweep(&runs, out_dir, workers, &ReferenceCache::from_env())?;
    println!(
        "executed {} ({} aborted, {} failed), skipped {} already recorded; results in {}",
        summary.executed,
        summary.aborted,
        summary.failed,
        summary.skipped,
        summary.results_path.display()
    );
    if summary.failed > 0 {
        bail!("{} runs failed", summary.failed);
    }
    Ok(())
}

fn report_cmd(results: &Path, out_dir: &Path, lambda_ic: Option<f64>) -> Result<()> {
    let records = read_records(&results_path(results))?;
    for path in write_report(&records, out_dir, lambda_ic)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::SolveReference {
            k,
            r0,
            theta0,
            rdot0,
            thetadot0,
            t_final,
            n_eval,
            out,
        } => {
            let physics = PhysicsParams {
                t_final,
                ..PhysicsParams::with_k(k)
            };
            solve_reference_cmd(&physics, State::new(r0, theta0, rdot0, thetadot0), n_eval, &out)
        }
        Command::Train { config, out_dir } => train_cmd(&config, &out_dir),
        Command::Gradcheck {
            model,
            gate,
            seed,
            k,
            coords,
        } => gradcheck_cmd(model, gate, seed, k, coords),
        Command::Ntk {
            model,
            gate,
            k,
            n_points,
            seed,
            params,
            mode,
            out,
        } => ntk_cmd(model, gate, k, n_points, seed, params.as_deref(), mode, &out),
        Command::Stats {
            runs,
            setting,
            model,
            out,
        } => stats_cmd(&runs, setting.as_deref(), model, &out),
        Command::Sweep {
            config,
            out_dir,
            workers,
        } => sweep_cmd(&config, &out_dir, workers),
        Command::Report {
            results,
            out_dir,
            lambda_ic,
        } => report_cmd(&results, &out_dir, lambda_ic),
    }
}
