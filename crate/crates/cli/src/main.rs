//! `wdrc`: solve, analyze and simulate Wasserstein-penalized minimax LQ problems.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use wdrc_core::export::{self, fmt_matrix};
use wdrc_core::finite_horizon::{solve_finite, stage_policies, worst_case_policy};
use wdrc_core::hinf::{lambda_star, FeasibilityMode};
use wdrc_core::model::{load_samples, normalize_samples, parse_model, Tolerances};
use wdrc_core::powergrid::{build_experiment, parse_grid, ExperimentConfig, ExperimentMeta};
use wdrc_core::simulate::{
    evaluate_cost, fmt17, rollout_batch, BatchStats, DisturbanceSource, GainSchedule, Trajectory,
};
use wdrc_core::steady_state::{
    certify_stability, check_assumptions, solve_iterative, solve_lqg, solve_spectral, solve_steady, IterOptions,
};
use wdrc_core::{DisturbanceModel64, Error, SystemModel64};

#[derive(Parser, Debug)]
#[command(name = "wdrc", version, about = "Wasserstein-penalized minimax LQ control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Backward Riccati recursion over a finite horizon.
    SolveFinite {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        horizon: usize,
    },
    /// Steady-state solution with assumption report and stability certificate.
    SolveInfinite {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
    },
    /// Smallest feasible penalty by bisection.
    LambdaStar {
        #[command(flatten)]
        common: Common,
        /// `infinite` or `finite:T`.
        #[arg(long, default_value = "infinite")]
        mode: String,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Monte Carlo rollouts of the minimax controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        lambda: f64,
        /// Use the time-varying finite-horizon policy over this many steps.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum, default_value_t = Source::WorstCase)]
        source: Source,
    },
    /// Minimax versus LQG under the minimax worst-case distribution.
    CompareLqg {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, conflicts_with = "lambda_sweep", required_unless_present = "lambda_sweep")]
        lambda: Option<f64>,
        /// `lo:hi:n`, evenly spaced.
        #[arg(long)]
        lambda_sweep: Option<String>,
    },
    /// Discretize a grid file into a model and draw disturbance samples.
    GridBuild {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Model JSON, or a grid file (recognized by its `generators` key).
    #[arg(long)]
    model: PathBuf,
    /// Disturbance samples, one per CSV row. Defaults to a single zero sample,
    /// or to draws from the experiment protocol for grid files.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Output directory; falls back to $WDRC_OUT, then the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling time for grid files.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long)]
    psd_tol: Option<f64>,
    #[arg(long)]
    sym_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated initial state.
    #[arg(long)]
    x0: Option<String>,
    /// State component summarized in the box-plot quantiles.
    #[arg(long)]
    component: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Method {
    Auto,
    Spectral,
    Iterative,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Source {
    WorstCase,
    Empirical,
}

/// Error in the invocation itself (exit 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_user_error() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SolveFinite { common, lambda, horizon } => cmd_solve_finite(&common, lambda, horizon),
        Command::SolveInfinite { common, lambda, method } => cmd_solve_infinite(&common, lambda, method),
        Command::LambdaStar { common, mode, lo, hi, tol } => cmd_lambda_star(&common, &mode, lo, hi, tol),
        Command::Simulate {
            common,
            run,
            lambda,
            horizon,
            source,
        } => cmd_simulate(&common, &run, lambda, horizon, source),
        Command::CompareLqg {
            common,
            run,
            lambda,
            lambda_sweep,
        } => cmd_compare(&common, &run, lambda, lambda_sweep.as_deref()),
        Command::GridBuild { grid, dt, seed, out } => cmd_grid_build(&grid, dt, seed, out),
    }
}

struct Loaded {
    model: SystemModel64,
    data: DisturbanceModel64,
    experiment: Option<ExperimentMeta>,
}

fn out_dir(flag: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os("WDRC_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path, source })?;
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<String> {
    Ok(fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?)
}

fn load(common: &Common, seed: u64) -> anyhow::Result<Loaded> {
    let mut tol = Tolerances::default();
    if let Some(t) = common.psd_tol {
        tol.psd_rel = t;
    }
    if let Some(t) = common.sym_tol {
        tol.sym_rel = t;
    }
    let text = read(&common.model)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", common.model.display())))?;
    let (model, experiment) = if value.get("generators").is_some() {
        let spec = parse_grid(&text)?;
        let (model, meta) = build_experiment::<f64>(&spec, common.dt, &ExperimentConfig::default())?;
        (model, Some(meta))
    } else {
        (parse_model::<f64>(&text, &tol)?, None)
    };
    let raw = match (&common.samples, &experiment) {
        (Some(path), _) => load_samples::<f64>(path)?,
        (None, Some(meta)) => meta.draw_samples(seed),
        (None, None) => vec![DVector::zeros(model.k())],
    };
    let data = normalize_samples(&raw)?;
    if data.k() != model.k() {
        return Err(Error::Dimension(format!("samples have dimension {}, model expects {}", data.k(), model.k())).into());
    }
    Ok(Loaded {
        model,
        data,
        experiment,
    })
}

fn cmd_solve_finite(common: &Common, lambda: f64, horizon: usize) -> anyhow::Result<()> {
    let l = load(common, 0)?;
    let sol = solve_finite(&l.model, &l.data, lambda, horizon)?;
    let dir = out_dir(&common.out)?;
    write(&dir, "finite_horizon.json", &export::to_json(&export::finite_solution_json(&sol, Some(lambda))))?;
    let min_margin = sol.margins.iter().copied().fold(f64::INFINITY, f64::min);
    println!("finite horizon T = {horizon}, lambda = {}", fmt17(lambda));
    println!("P_0 =\n{}", fmt_matrix(&sol.p[0]));
    println!("K_0 =\n{}", fmt_matrix(&sol.k[0]));
    println!("z_0 = {}", fmt17(sol.z[0]));
    println!("smallest margin = {}", fmt17(min_margin));
    Ok(())
}

fn cmd_solve_infinite(common: &Common, lambda: f64, method: Method) -> anyhow::Result<()> {
    let l = load(common, 0)?;
    let report = check_assumptions(&l.model, lambda, &Tolerances::default());
    let sol = match method {
        Method::Auto => solve_steady(&l.model, &l.data, lambda)?,
        Method::Spectral => solve_spectral(&l.model, &l.data, lambda)?,
        Method::Iterative => solve_iterative(&l.model, &l.data, lambda, &IterOptions::default())?,
    };
    let certificate = certify_stability(&sol, &l.model, lambda);
    let dir = out_dir(&common.out)?;
    let doc = export::steady_solution_json(&sol, Some(lambda), Some(&report), certificate.as_ref().ok());
    write(&dir, "steady_state.json", &export::to_json(&doc))?;
    println!("steady state, lambda = {}, method = {:?}", fmt17(lambda), sol.method);
    if let Some(reason) = &sol.fallback {
        println!("note: {reason}");
    }
    println!("P_ss =\n{}", fmt_matrix(&sol.p));
    println!("K_ss =\n{}", fmt_matrix(&sol.k));
    println!("spectral radius = {}", fmt17(sol.spectral_radius));
    match certificate {
        Ok(c) => println!("stability certified (rho = {})", fmt17(c.spectral_radius)),
        Err(e) => println!("no stability certificate: {e}"),
    }
    Ok(())
}

fn parse_mode(mode: &str) -> anyhow::Result<FeasibilityMode> {
    if mode == "infinite" {
        return Ok(FeasibilityMode::Infinite);
    }
    match mode.strip_prefix("finite:").map(str::parse::<usize>) {
        Some(Ok(t)) if t > 0 => Ok(FeasibilityMode::Finite(t)),
        _ => Err(usage(format!("--mode must be `infinite` or `finite:T`, got `{mode}`"))),
    }
}

fn cmd_lambda_star(common: &Common, mode: &str, lo: Option<f64>, hi: Option<f64>, tol: f64) -> anyhow::Result<()> {
    let mode = parse_mode(mode)?;
    let l = load(common, 0)?;
    let res = lambda_star(&l.model, mode, lo, hi, tol)?;
    let dir = out_dir(&common.out)?;
    write(&dir, "lambda_star.json", &export::to_json(&export::lambda_star_json(&res)))?;
    println!("lambda* = {}", fmt17(res.lambda_star));
    println!("bracket = [{}, {}] after {} bisection steps", fmt17(res.bracket.0), fmt17(res.bracket.1), res.iterations);
    Ok(())
}

fn parse_x0(run: &RunArgs, loaded: &Loaded) -> anyhow::Result<DVector<f64>> {
    let n = loaded.model.n();
    match (&run.x0, &loaded.experiment) {
        (Some(text), _) => {
            let values: Vec<f64> = text
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| usage(format!("--x0: {e}")))?;
            if values.len() != n {
                return Err(usage(format!("--x0 has {} entries, model has {n} states", values.len())));
            }
            Ok(DVector::from_vec(values))
        }
        (None, Some(meta)) => Ok(meta.x0()),
        (None, None) => {
            let mut x = DVector::zeros(n);
            if n > 0 {
                x[0] = 1.0;
            }
            Ok(x)
        }
    }
}

fn component(run: &RunArgs, loaded: &Loaded) -> anyhow::Result<usize> {
    let c = run
        .component
        .unwrap_or_else(|| loaded.experiment.as_ref().map_or(0, ExperimentMeta::omega_index));
    if c >= loaded.model.n() {
        return Err(usage(format!("--component {c} out of range for {} states", loaded.model.n())));
    }
    Ok(c)
}

fn default_steps(run: &RunArgs, loaded: &Loaded) -> usize {
    run.steps
        .unwrap_or_else(|| loaded.experiment.as_ref().map_or(50, |m| m.steps))
}

fn pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))
}

fn cmd_simulate(common: &Common, run: &RunArgs, lambda: f64, horizon: Option<usize>, source: Source) -> anyhow::Result<()> {
    let l = load(common, run.seed)?;
    let x0 = parse_x0(run, &l)?;
    let comp = component(run, &l)?;
    let (gains, policies, steps, terminal) = match horizon {
        Some(t) => {
            if run.steps.is_some_and(|s| s != t) {
                return Err(usage("--steps must equal --horizon when both are given"));
            }
            let sol = solve_finite(&l.model, &l.data, lambda, t)?;
            let policies = stage_policies(&sol, &l.model, lambda, &l.data)?;
            (GainSchedule::from_finite(&sol), policies, t, true)
        }
        None => {
            let sol = solve_steady(&l.model, &l.data, lambda)?;
            let policy = worst_case_policy(&sol.p, &sol.k, &l.model, lambda, &l.data)?;
            (GainSchedule::Constant(sol.k), vec![policy], default_steps(run, &l), false)
        }
    };
    let src = match source {
        Source::WorstCase => DisturbanceSource::WorstCase(policies),
        Source::Empirical => DisturbanceSource::Empirical(l.data.clone()),
    };
    let trajs = pool(run.jobs)?.install(|| rollout_batch(&l.model, &gains, &src, &x0, steps, run.seed, run.trials))?;
    let costs: Vec<_> = trajs
        .iter()
        .map(|t| evaluate_cost(t, &l.model, lambda, &src, terminal))
        .collect();
    let stats = BatchStats::from_trajectories(&trajs, comp);
    let mean = |f: fn(&wdrc_core::simulate::CostReport) -> f64| costs.iter().map(f).sum::<f64>() / costs.len().max(1) as f64;

    let dir = out_dir(&common.out)?;
    if let Some(first) = trajs.first() {
        write(&dir, "trajectory_0.csv", &first.to_csv())?;
    }
    write(&dir, "quantiles.csv", &stats.to_csv())?;
    let doc = export::tagged(
        "simulation",
        json!({
            "lambda": lambda,
            "source": format!("{source:?}"),
            "trials": run.trials,
            "steps": steps,
            "seed": run.seed,
            "x0": x0.as_slice(),
            "mean_total_cost": mean(|c| c.total),
            "mean_state_input_cost": mean(|c| c.state_input_cost),
            "mean_penalty_term": mean(|c| c.penalty_term),
            "mean_control_energy": mean(|c| c.control_energy),
            "costs": costs,
            "box_plot": stats,
        }),
    );
    write(&dir, "simulation.json", &export::to_json(&doc))?;
    println!("{} trials x {steps} steps, seed {}", run.trials, run.seed);
    println!("mean total cost = {}", fmt17(mean(|c| c.total)));
    println!("mean control energy = {}", fmt17(mean(|c| c.control_energy)));
    Ok(())
}

fn parse_sweep(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || usage(format!("--lambda-sweep must be lo:hi:n, got `{text}`"));
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || lo.is_nan() || lo <= 0.0 || hi < lo {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

struct Comparison {
    minimax: BatchStats,
    lqg: BatchStats,
}

fn compare_at(l: &Loaded, lqg_k: &DMatrix<f64>, lambda: f64, x0: &DVector<f64>, steps: usize, run: &RunArgs, comp: usize) -> anyhow::Result<Comparison> {
    let sol = solve_steady(&l.model, &l.data, lambda)?;
    let policy = worst_case_policy(&sol.p, &sol.k, &l.model, lambda, &l.data)?;
    let src = DisturbanceSource::WorstCase(vec![policy]);
    let batch = |k: &DMatrix<f64>| -> anyhow::Result<Vec<Trajectory<f64>>> {
        Ok(rollout_batch(&l.model, &GainSchedule::Constant(k.clone()), &src, x0, steps, run.seed, run.trials)?)
    };
    Ok(Comparison {
        minimax: BatchStats::from_trajectories(&batch(&sol.k)?, comp),
        lqg: BatchStats::from_trajectories(&batch(lqg_k)?, comp),
    })
}

fn cmd_compare(common: &Common, run: &RunArgs, lambda: Option<f64>, sweep: Option<&str>) -> anyhow::Result<()> {
    let l = load(common, run.seed)?;
    let x0 = parse_x0(run, &l)?;
    let comp = component(run, &l)?;
    let steps = default_steps(run, &l);
    let lqg = solve_lqg(&l.model, &l.data, &IterOptions::default())?;
    let workers = pool(run.jobs)?;
    let nominal = workers.install(|| {
        rollout_batch(&l.model, &GainSchedule::Constant(lqg.k.clone()), &DisturbanceSource::Empirical(l.data.clone()), &x0, steps, run.seed, run.trials)
    })?;
    let nominal_energy = BatchStats::from_trajectories(&nominal, comp).mean_control_energy;
    let dir = out_dir(&common.out)?;

    if let Some(lambda) = lambda {
        let c = workers.install(|| compare_at(&l, &lqg.k, lambda, &x0, steps, run, comp))?;
        write(&dir, "quantiles_minimax.csv", &c.minimax.to_csv())?;
        write(&dir, "quantiles_lqg.csv", &c.lqg.to_csv())?;
        let doc = export::tagged(
            "compare_lqg",
            json!({
                "lambda": lambda,
                "trials": run.trials,
                "steps": steps,
                "seed": run.seed,
                "component": comp,
                "minimax": {"mean_iqr": c.minimax.mean_iqr(1), "mean_control_energy": c.minimax.mean_control_energy},
                "lqg": {"mean_iqr": c.lqg.mean_iqr(1), "mean_control_energy": c.lqg.mean_control_energy},
                "lqg_nominal_control_energy": nominal_energy,
            }),
        );
        write(&dir, "compare_lqg.json", &export::to_json(&doc))?;
        println!("lambda = {}, component {comp}, {} trials", fmt17(lambda), run.trials);
        println!("mean IQR: minimax {} vs LQG {}", fmt17(c.minimax.mean_iqr(1)), fmt17(c.lqg.mean_iqr(1)));
        println!("control energy: minimax {} vs LQG {}", fmt17(c.minimax.mean_control_energy), fmt17(c.lqg.mean_control_energy));
        return Ok(());
    }

    let lambdas = parse_sweep(sweep.expect("clap requires one of --lambda, --lambda-sweep"))?;
    let mut csv = String::from("lambda,minimax_energy,lqg_energy,minimax_mean_iqr,lqg_mean_iqr\n");
    let mut rows = Vec::new();
    for lambda in lambdas {
        let c = workers
            .install(|| compare_at(&l, &lqg.k, lambda, &x0, steps, run, comp))
            .with_context(|| format!("at lambda = {lambda}"))?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt17(lambda),
            fmt17(c.minimax.mean_control_energy),
            fmt17(c.lqg.mean_control_energy),
            fmt17(c.minimax.mean_iqr(1)),
            fmt17(c.lqg.mean_iqr(1))
        ));
        println!("lambda {}: minimax energy {}", fmt17(lambda), fmt17(c.minimax.mean_control_energy));
        rows.push(json!({"lambda": lambda, "minimax_energy": c.minimax.mean_control_energy, "lqg_energy": c.lqg.mean_control_energy}));
    }
    write(&dir, "energy_sweep.csv", &csv)?;
    let doc = export::tagged(
        "lambda_sweep",
        json!({"trials": run.trials, "steps": steps, "seed": run.seed, "lqg_nominal_control_energy": nominal_energy, "points": rows}),
    );
    write(&dir, "energy_sweep.json", &export::to_json(&doc))?;
    println!("LQG energy (empirical source) = {}", fmt17(nominal_energy));
    Ok(())
}

fn cmd_grid_build(grid: &Path, dt: f64, seed: u64, out: Option<PathBuf>) -> anyhow::Result<()> {
    let spec = parse_grid(&read(grid)?)?;
    let (model, meta) = build_experiment::<f64>(&spec, dt, &ExperimentConfig::default())?;
    let samples = meta.draw_samples::<f64>(seed);
    if samples.is_empty() {
        bail!("experiment protocol produced no samples");
    }
    let dir = out_dir(&out)?;
    write(&dir, "model.json", &export::to_json(&model.to_file()))?;
    let mut csv = (1..=meta.generators).map(|i| format!("w_{i}")).collect::<Vec<_>>().join(",");
    csv.push('\n');
    for w in &samples {
        csv.push_str(&w.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    write(&dir, "samples.csv", &csv)?;
    write(&dir, "experiment.json", &export::to_json(&export::tagged("experiment", json!({"seed": seed, "protocol": meta}))))?;
    println!("{}", wdrc_core::powergrid::summary(&spec));
    println!("dt = {dt}, {} states, {} inputs, {} samples", model.n(), model.m(), samples.len());
    Ok(())
}
