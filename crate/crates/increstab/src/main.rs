//! Command-line front end for the `increstab` pipeline.
//!
//! Subcommands mirror the pipeline stages: `simulate` integrates the open or
//! closed loop, `synthesize-law` builds the feedback law, `verify` runs the
//! sampled certificate battery, `abstract` quantizes the closed loop,
//! `check-epsilon` compares continuous and abstract runs, `synthesize`
//! solves the scheduled reach-avoid-stay game, and `replay` drives the
//! continuous loop with the discrete controller.
//!
//! Exit codes: 0 success, 1 a verification or synthesis check failed,
//! 2 configuration/usage error, 3 runtime failure (missing artifact,
//! divergence, replay breakdown).

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand};

use increstab::abstraction::{build_abstraction, check_epsilon, Abstraction};
use increstab::config::ProjectConfig;
use increstab::contraction::{build_block_metric, check_contraction_states_inputs, MetricField};
use increstab::domain::BoxDomain;
use increstab::dynamics::{integrate, InputSignal, Trajectory, VectorField};
use increstab::error::{Error, Result};
use increstab::lyapunov::{sqrt_spd, verify_condition_iii, VerificationReport};
use increstab::svg::SvgPlot;
use increstab::synthesis::{
    closed_loop_replay, solve_reach_avoid_stay, Controller, GameRegions, ReplayLog,
};
use increstab::systems::{self, SystemBundle};

/// Comma-separated vector argument, e.g. `--x0 0.8,0.9`.
#[derive(Clone, Debug)]
struct VecArg(Vec<f64>);

impl FromStr for VecArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let vals = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if vals.is_empty() {
            return Err("empty vector".into());
        }
        Ok(VecArg(vals))
    }
}

#[derive(Parser)]
#[command(
    name = "increstab",
    version,
    about = "Backstepping synthesis, incremental-stability certificates, finite abstractions, \
             and scheduled reach-avoid-stay synthesis"
)]
struct Cli {
    /// TOML project file; the built-in sat-cascade study when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sampled checks and the abstraction build
    /// (default: all cores). Artifacts are identical at any count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Base seed override for every sampled check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop (or the raw plant) and dump a trajectory.
    Simulate {
        /// Initial state, comma-separated; default: first replay state.
        #[arg(long)]
        x0: Option<VecArg>,
        /// Time span to integrate.
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        /// Fixed integration step.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Constant input held over the whole run (synthetic input of the
        /// closed loop, or the physical input with --open-loop).
        #[arg(long)]
        input: Option<VecArg>,
        /// Integrate the raw plant instead of the closed loop.
        #[arg(long)]
        open_loop: bool,
        /// Trajectory CSV path (default: <output.dir>/trajectory.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render the planar trajectory to this SVG file.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Synthesize the cascade feedback law and write its description.
    SynthesizeLaw {
        /// Synthesis gain; default: the system's stock gain.
        #[arg(long)]
        lambda: Option<f64>,
        /// Law description JSON path (default: <output.dir>/law.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every sampled certificate check on the stock closed loop.
    Verify {
        /// Samples per check.
        #[arg(long)]
        samples: Option<usize>,
        /// Largest accepted defect.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Build the finite abstraction of the closed loop and store it.
    Abstract {
        /// State quantization pitch override.
        #[arg(long)]
        eta: Option<f64>,
        /// Sampling period override.
        #[arg(long)]
        tau: Option<f64>,
        /// Abstraction file path (default: <output.dir>/abstraction.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare continuous and abstract runs against the deviation budget.
    CheckEpsilon {
        /// Abstraction file (default: <output.dir>/abstraction.bin).
        #[arg(long)]
        abstraction: Option<PathBuf>,
        /// Deviation budget override.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Number of random runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Sampling periods per run.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Solve the scheduled reach-avoid-stay game on the abstraction.
    Synthesize {
        /// Abstraction file (default: <output.dir>/abstraction.bin).
        #[arg(long)]
        abstraction: Option<PathBuf>,
        /// Controller CSV path (default: <output.dir>/controller.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive the continuous loop with a synthesized controller.
    Replay {
        /// Abstraction file (default: <output.dir>/abstraction.bin).
        #[arg(long)]
        abstraction: Option<PathBuf>,
        /// Controller CSV (default: <output.dir>/controller.csv).
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Sampling periods to replay.
        #[arg(long)]
        slots: Option<usize>,
        /// Replay only this initial state instead of the configured list.
        #[arg(long)]
        x0: Option<VecArg>,
        /// Also render each replay to <output.dir>/replay-<i>.svg.
        #[arg(long)]
        svg: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::DimensionMismatch(_)
                | Error::Unsupported(_)
                | Error::NotSymmetric(_)
                | Error::NotPositiveDefinite(_) => 2,
                Error::MissingArtifact { .. }
                | Error::CorruptFile(_)
                | Error::Io(_)
                | Error::Divergence { .. }
                | Error::ReplayFailed { .. } => 3,
            }
        }
    };
    std::process::exit(code);
}

/// `Ok(true)` = all checks passed, `Ok(false)` = a check failed (exit 1).
fn run(cli: Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(path) => ProjectConfig::load(path)?,
        None => ProjectConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let dispatch = || dispatch(cli.command, &config);
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(dispatch)
        }
        None => dispatch(),
    }
}

fn dispatch(command: Command, config: &ProjectConfig) -> Result<bool> {
    let bundle = systems::lookup(&config.system)?;
    match command {
        Command::Simulate { x0, horizon, step, input, open_loop, out, svg } => {
            cmd_simulate(config, &bundle, x0, horizon, step, input, open_loop, out, svg)
        }
        Command::SynthesizeLaw { lambda, out } => cmd_synthesize_law(config, &bundle, lambda, out),
        Command::Verify { samples, tolerance } => cmd_verify(config, &bundle, samples, tolerance),
        Command::Abstract { eta, tau, out } => cmd_abstract(config, &bundle, eta, tau, out),
        Command::CheckEpsilon { abstraction, epsilon, runs, steps } => {
            cmd_check_epsilon(config, &bundle, abstraction, epsilon, runs, steps)
        }
        Command::Synthesize { abstraction, out } => {
            cmd_synthesize(config, &bundle, abstraction, out)
        }
        Command::Replay { abstraction, controller, slots, x0, svg } => {
            cmd_replay(config, &bundle, abstraction, controller, slots, x0, svg)
        }
    }
}

fn out_path(config: &ProjectConfig, explicit: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let path = explicit.unwrap_or_else(|| Path::new(&config.output.dir).join(name));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(path)
}

fn load_abstraction(
    config: &ProjectConfig,
    explicit: Option<PathBuf>,
    produce_with: &'static str,
) -> Result<Abstraction> {
    let path =
        explicit.unwrap_or_else(|| Path::new(&config.output.dir).join("abstraction.bin"));
    if !path.exists() {
        return Err(Error::MissingArtifact { path, produce_with });
    }
    Abstraction::load(path)
}

fn fmt_state(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    x0: Option<VecArg>,
    horizon: f64,
    step: f64,
    input: Option<VecArg>,
    open_loop: bool,
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
) -> Result<bool> {
    let field: &VectorField = if open_loop { &bundle.plant } else { &bundle.closed_loop };
    let x0 = match x0 {
        Some(v) => v.0,
        None => config
            .replay
            .initial_states
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("no initial state configured".into()))?,
    };
    let u = match input {
        Some(v) => v.0,
        None => vec![0.0; field.input_dim()],
    };
    if u.len() != field.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "input has {} components, the {} loop takes {}",
            u.len(),
            if open_loop { "open" } else { "closed" },
            field.input_dim()
        )));
    }
    // The configured domain only matters to the grid stages; here it is
    // advisory.
    if x0.len() == config.grid.domain.len() && !config.domain()?.contains(&x0) {
        eprintln!("warning: initial state {} lies outside the configured domain", fmt_state(&x0));
    }
    let traj = integrate(field, &x0, &InputSignal::constant(u), horizon, step)?;
    let csv_path = out_path(config, out, "trajectory.csv")?;
    std::fs::write(&csv_path, traj.to_csv())?;
    if let Some(svg_file) = svg {
        let svg_path = out_path(config, Some(svg_file), "")?;
        std::fs::write(&svg_path, render_trajectory(&traj)?)?;
        println!("plot written to {}", svg_path.display());
    }
    println!(
        "simulated the {} loop for {horizon} time units ({} states recorded)",
        if open_loop { "open" } else { "closed" },
        traj.len(),
    );
    println!("final state {}", fmt_state(traj.last_state()));
    println!("trajectory written to {}", csv_path.display());
    Ok(true)
}

fn render_trajectory(traj: &Trajectory) -> Result<String> {
    if traj.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "svg rendering needs a planar trajectory, state is {}-D",
            traj.dim()
        )));
    }
    let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for k in 0..traj.len() {
        let x = traj.state(k);
        for (b, &v) in bounds.iter_mut().zip(x) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }
    let padded: Vec<(f64, f64)> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let pad = 0.1 * (hi - lo).max(1e-6);
            (lo - pad, hi + pad)
        })
        .collect();
    let window = BoxDomain::new(padded)?;
    let mut plot = SvgPlot::new(&window, 600, 600)?;
    let points: Vec<(f64, f64)> =
        (0..traj.len()).map(|k| (traj.state(k)[0], traj.state(k)[1])).collect();
    plot.polyline(&points, "#1f4e9c", 1.5);
    plot.marker(points[0].0, points[0].1, 4.0, "#1f4e9c");
    Ok(plot.finish())
}

fn cmd_synthesize_law(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    lambda: Option<f64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let lambda = lambda.or(config.gains.lambda).unwrap_or(bundle.default_lambda);
    let law = bundle.plant_law(lambda)?;
    let json = serde_json::to_string_pretty(law.description())
        .expect("law description serializes");
    let path = out_path(config, out, "law.json")?;
    std::fs::write(&path, json + "\n")?;
    println!("synthesized {} at gain {lambda}", law.description().construction);
    for warning in law.gain_warnings(&bundle.certificates()) {
        println!("warning: {warning}");
    }
    println!("law description written to {}", path.display());
    Ok(true)
}

fn report_line(name: &str, report: &VerificationReport) {
    println!(
        "{} {name:<18} max defect {:>13.6e}  samples {}  excluded {}",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_violation,
        report.n_samples,
        report.excluded,
    );
}

fn cmd_verify(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    samples: Option<usize>,
    tolerance: Option<f64>,
) -> Result<bool> {
    let samples = samples.unwrap_or(config.verify.samples);
    let tol = tolerance.unwrap_or(config.verify.tolerance);
    let seed = config.seed;
    let state_box = config.state_bounds()?;
    let input_box = config.input_box()?;
    let driven_box = BoxDomain::new(vec![state_box.bounds()[0]])?;

    let mut all = true;
    let mut step = |name: &str, report: VerificationReport| {
        all &= report.pass;
        report_line(name, &report);
    };

    step(
        "driven-sandwich",
        bundle.eta_certificate.verify_condition_i(&driven_box, samples, tol, seed)?,
    );
    step(
        "driven-decay",
        verify_condition_iii(
            &bundle.eta_closed,
            &bundle.eta_certificate,
            &driven_box,
            &input_box,
            samples,
            tol,
            seed.wrapping_add(1),
        )?,
    );
    step(
        "composed-sandwich",
        bundle.composed_certificate.verify_condition_i(&state_box, samples, tol, seed)?,
    );
    step(
        "composed-decay",
        verify_condition_iii(
            &bundle.closed_loop_chi,
            &bundle.composed_certificate,
            &state_box,
            &input_box,
            samples,
            tol,
            seed.wrapping_add(2),
        )?,
    );
    let (lambda_hat, alpha) = bundle.eta_metric_rates;
    step(
        "driven-metric",
        check_contraction_states_inputs(
            &bundle.eta_closed,
            &bundle.eta_metric,
            lambda_hat,
            alpha,
            &driven_box,
            &input_box,
            samples,
            tol,
            seed.wrapping_add(3),
        )?,
    );
    // Extend the driven metric through the stabilized integrator layer; the
    // composed loop then contracts at the composed certificate's rate, and
    // the input gain follows from the (constant) input column.
    if let (Some(g_hat), Some((k, _))) =
        (bundle.eta_metric.as_constant(), bundle.psi.affine_parts())
    {
        let block = build_block_metric(g_hat, k)?;
        let origin = vec![0.0; bundle.closed_loop_chi.state_dim()];
        let zero_u = vec![0.0; bundle.closed_loop_chi.input_dim()];
        let b = bundle.closed_loop_chi.jacobian_u(&origin, &zero_u);
        let scaled = sqrt_spd(&block)? * &b;
        let alpha_composed =
            2.0 * scaled.singular_values().iter().copied().fold(0.0, f64::max);
        step(
            "composed-metric",
            check_contraction_states_inputs(
                &bundle.closed_loop_chi,
                &MetricField::constant(block)?,
                bundle.composed_certificate.kappa,
                alpha_composed,
                &state_box,
                &input_box,
                samples,
                tol,
                seed.wrapping_add(4),
            )?,
        );
    } else {
        println!("SKIP composed-metric    (needs a constant driven metric and affine stabilizer)");
    }

    let lambda = config.gains.lambda.unwrap_or(bundle.default_lambda);
    let warnings = bundle.cascade_law(lambda)?.gain_warnings(&bundle.certificates());
    if warnings.is_empty() {
        println!("PASS gain-gate          gain {lambda} clears both composition thresholds");
    } else {
        all = false;
        for warning in &warnings {
            println!("FAIL gain-gate          {warning}");
        }
    }

    println!("{}", if all { "all checks passed" } else { "CHECKS FAILED" });
    Ok(all)
}

fn cmd_abstract(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    eta: Option<f64>,
    tau: Option<f64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let eta = eta.unwrap_or(config.grid.eta);
    let tau = tau.unwrap_or(config.grid.tau);
    let domain = config.domain()?;
    let input_box = config.input_box()?;
    let started = Instant::now();
    let abstraction = build_abstraction(
        &bundle.closed_loop,
        &domain,
        eta,
        &input_box,
        config.grid.mu,
        tau,
        config.grid.inner_step,
    )?;
    let elapsed = started.elapsed();
    let path = out_path(config, out, "abstraction.bin")?;
    abstraction.save(&path)?;
    let total = (abstraction.n_states() * abstraction.n_inputs()) as u64;
    println!(
        "abstraction: {} states x {} inputs, {} of {} transitions blocked ({:.2}%)",
        abstraction.n_states(),
        abstraction.n_inputs(),
        abstraction.blocked_count(),
        total,
        100.0 * abstraction.blocked_count() as f64 / total as f64,
    );
    println!("built in {:.2} s, written to {}", elapsed.as_secs_f64(), path.display());
    Ok(true)
}

fn cmd_check_epsilon(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    abstraction: Option<PathBuf>,
    epsilon: Option<f64>,
    runs: Option<usize>,
    steps: Option<usize>,
) -> Result<bool> {
    let abstraction = load_abstraction(config, abstraction, "abstract")?;
    let epsilon = epsilon.unwrap_or(config.epsilon.epsilon);
    let report = check_epsilon(
        &bundle.closed_loop,
        &abstraction,
        &config.domain()?,
        epsilon,
        runs.unwrap_or(config.epsilon.runs),
        steps.unwrap_or(config.epsilon.steps),
        config.grid.inner_step,
        config.seed,
    )?;
    println!(
        "{} deviation         max {:.6e} over {} runs x {} periods (budget {epsilon}, {} truncated)",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_deviation,
        report.n_runs,
        report.steps_per_run,
        report.truncated_runs,
    );
    Ok(report.pass)
}

fn cmd_synthesize(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    abstraction: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let _ = bundle;
    let abstraction = load_abstraction(config, abstraction, "abstract")?;
    let scheduler = config.scheduler()?;
    let regions = GameRegions { target: config.target()?, obstacles: config.obstacles()? };
    let started = Instant::now();
    let controller = solve_reach_avoid_stay(&abstraction, &scheduler, &regions)?;
    let elapsed = started.elapsed();
    let product = abstraction.n_states() * scheduler.len();
    println!(
        "winning set: {} of {} product states (invariance core {}), max depth {} slots",
        controller.n_winning(),
        product,
        controller.n_core(),
        controller.max_depth(),
    );
    println!("solved in {:.2} s", elapsed.as_secs_f64());
    let path = out_path(config, out, "controller.csv")?;
    std::fs::write(&path, controller.to_csv(&abstraction)?)?;
    println!("controller written to {}", path.display());

    let mut all = true;
    for x0 in &config.replay.initial_states {
        match abstraction.state_grid().snap(x0) {
            Some(state) => {
                let won = controller.is_winning(state, scheduler.initial());
                all &= won;
                println!(
                    "{} initial state {} snaps to a {} grid state",
                    if won { "PASS" } else { "FAIL" },
                    fmt_state(x0),
                    if won { "winning" } else { "losing" },
                );
            }
            None => {
                all = false;
                println!("FAIL initial state {} lies outside the grid", fmt_state(x0));
            }
        }
    }
    Ok(all)
}

fn render_replay(
    log: &ReplayLog,
    domain: &BoxDomain,
    regions: &GameRegions,
    state_dim: usize,
) -> Result<String> {
    let padded: Vec<(f64, f64)> = domain
        .bounds()
        .iter()
        .map(|&(lo, hi)| {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        })
        .collect();
    let mut plot = SvgPlot::new(&BoxDomain::new(padded)?, 600, 600)?;
    plot.rect(domain, "none", "#888888")?;
    plot.rect(&regions.target, "#d2f0d2", "#2a7f2a")?;
    for obstacle in &regions.obstacles {
        plot.rect(obstacle, "#f0d2d2", "#a02a2a")?;
    }
    let points: Vec<(f64, f64)> = (0..log.times.len())
        .map(|k| (log.states[k * state_dim], log.states[k * state_dim + 1]))
        .collect();
    plot.polyline(&points, "#1f4e9c", 1.5);
    plot.marker(points[0].0, points[0].1, 4.0, "#1f4e9c");
    Ok(plot.finish())
}

fn cmd_replay(
    config: &ProjectConfig,
    bundle: &SystemBundle,
    abstraction: Option<PathBuf>,
    controller: Option<PathBuf>,
    slots: Option<usize>,
    x0: Option<VecArg>,
    svg: bool,
) -> Result<bool> {
    let abstraction = load_abstraction(config, abstraction, "abstract")?;
    let controller_path = controller
        .unwrap_or_else(|| Path::new(&config.output.dir).join("controller.csv"));
    if !controller_path.exists() {
        return Err(Error::MissingArtifact { path: controller_path, produce_with: "synthesize" });
    }
    let scheduler = config.scheduler()?;
    let controller = Controller::from_csv(
        &std::fs::read_to_string(&controller_path)?,
        &abstraction,
        &scheduler,
    )?;
    let regions = GameRegions { target: config.target()?, obstacles: config.obstacles()? };
    let domain = config.domain()?;
    let slots = slots.unwrap_or(config.replay.slots);
    let initial_states: Vec<Vec<f64>> = match x0 {
        Some(v) => vec![v.0],
        None => config.replay.initial_states.clone(),
    };

    let mut all = true;
    for (i, x0) in initial_states.iter().enumerate() {
        let log = closed_loop_replay(
            &bundle.closed_loop,
            &abstraction,
            &controller,
            &regions,
            &domain,
            x0,
            slots,
            config.grid.inner_step,
        )?;
        let csv_path = out_path(config, None, &format!("replay-{}.csv", i + 1))?;
        std::fs::write(&csv_path, log.to_csv())?;
        if svg {
            let svg_path = out_path(config, None, &format!("replay-{}.svg", i + 1))?;
            std::fs::write(
                &svg_path,
                render_replay(&log, &domain, &regions, bundle.closed_loop.state_dim())?,
            )?;
        }
        let settled = log.entered_target_at.is_some()
            && log.slots.last().is_some_and(|s| s.in_target);
        all &= settled;
        match log.entered_target_at {
            Some(k) => println!(
                "{} replay {} from {}: entered the target at slot {k}, inside for the final {} slots",
                if settled { "PASS" } else { "FAIL" },
                i + 1,
                fmt_state(x0),
                log.target_tail,
            ),
            None => println!(
                "FAIL replay {} from {}: never entered the target in {slots} slots",
                i + 1,
                fmt_state(x0),
            ),
        }
        println!("  log written to {}", csv_path.display());
    }
    Ok(all)
}
