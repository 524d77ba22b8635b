//! Command-line runner for the proxsplit toolkit: run a scheme on a
//! portfolio problem, compare all benchmark variants, print rate
//! certificates, run the invariant suite, or generate synthetic data.
//!
//! Exit codes: 0 ok, 1 property violation, 2 configuration error, 3 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use proxsplit::bench::{
    build_problem, configure_variant, estimate, eventually_monotone, load_returns,
    reference_solution, run_variant, save_returns, synthetic_data, LipschitzConvention,
    PortfolioProblem, VariantKind, ALL_VARIANTS, BENCH_RESIDUAL_TOL,
};
use proxsplit::operators::{op_l1_shifted, op_quadratic};
use proxsplit::ppp::{
    check_firm_nonexpansive, check_graph_monotone, check_woodbury, monitor_fejer, ppp_iterate,
    rppp_iterate, IterateOptions, RelaxationSchedule, StoppingRule, TraceStatus,
};
use proxsplit::rates::{drs_contraction_factor, CaseSide, RateCase};
use proxsplit::schemes::{
    build_cp, build_drs, build_fdr, build_parallel_fdr, build_relaxed_drs, build_sequential_fdr,
    validate_params, Scheme, SchemeConfig, ThetaSchedule,
};
use proxsplit::spaces::Factorization;
use proxsplit::Error;

#[derive(Parser)]
#[command(
    name = "proxsplit",
    about = "Operator-splitting solvers on a portfolio benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme or benchmark variant and write its trace.
    Run(RunArgs),
    /// Run benchmark variants against a shared reference solution.
    Compare(CompareArgs),
    /// Print linear-rate certificates for the three Douglas-Rachford cases.
    Rates(RatesArgs),
    /// Run the invariant suite; exits nonzero on any violation.
    Check(CheckArgs),
    /// Write a synthetic returns CSV.
    Gendata(GendataArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// Returns CSV path; omitted means the builtin synthetic problem.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for the builtin synthetic problem.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Assets in the builtin synthetic problem.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Days in the builtin synthetic problem.
    #[arg(long, default_value_t = 100)]
    days: usize,
    /// Ridge weight of the smooth objective part.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Estimate moments on a trailing window starting at this day (rolling mode).
    #[arg(long)]
    window_start: Option<usize>,
    /// Window length for rolling-mode estimation.
    #[arg(long)]
    window_len: Option<usize>,
    /// Use the looser step convention L = lambda_max(Sigma) (the constant
    /// of w -> Sigma*w) instead of the gradient constant 2*lambda_max(Sigma).
    #[arg(long)]
    eig_lipschitz: bool,
}

impl ProblemArgs {
    fn convention(&self) -> LipschitzConvention {
        if self.eig_lipschitz {
            LipschitzConvention::LargestEigenvalue
        } else {
            LipschitzConvention::GradientOfF
        }
    }

    fn load(&self) -> Result<PortfolioProblem, Error> {
        let data = match &self.data {
            Some(path) => load_returns(path)?,
            None => synthetic_data(self.seed, self.n, self.days),
        };
        let data = match (self.window_start, self.window_len) {
            (None, None) => data,
            (start, len) => {
                let start = start.unwrap_or(0);
                let len = len.unwrap_or(data.days().saturating_sub(start));
                if start + len > data.days() || len < 2 {
                    return Err(Error::Config(format!(
                        "window [{start}, {}) exceeds the {} available days",
                        start + len,
                        data.days()
                    )));
                }
                proxsplit::bench::ReturnsData {
                    returns: data.returns.rows(start, len).into_owned(),
                    asset_names: data.asset_names.clone(),
                }
            }
        };
        let (r, sigma) = estimate(&data)?;
        let n = r.len();
        let w0 = DVector::from_element(n, 1.0 / n as f64);
        build_problem(r, sigma, self.delta, w0)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scheme: a variant (seq-fdr-v1|seq-fdr-v2|seq-fdr-v3|par-fdr|gen-bf|par-dr)
    /// or a raw kind (drs|cp|relaxed-drs|fdr) on a two/three-term demo split.
    #[arg(long)]
    scheme: String,
    /// JSON file with a SchemeConfig; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    /// direct, block, or both (lockstep comparison).
    #[arg(long, default_value = "direct")]
    mode: String,
    /// Output directory for trace.csv / trace.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Absolute fixed-point-residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Record iterates and replay the Fejér monitor after the run.
    #[arg(long)]
    monitor: bool,
    /// Include wallclock values in the trace (breaks byte determinism).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated variant list; default all six.
    #[arg(long)]
    variants: Option<String>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2_000_000)]
    max_iter: usize,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Block dimensions to exercise, comma-separated.
    #[arg(long, default_value = "3,6")]
    sizes: String,
    /// Random pairs per sampled property.
    #[arg(long, default_value_t = 500)]
    samples: usize,
}

#[derive(Args)]
struct GendataArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    days: usize,
    /// Output CSV path.
    #[arg(long)]
    path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Rates(args) => cmd_rates(args),
        Command::Check(args) => cmd_check(args),
        Command::Gendata(args) => cmd_gendata(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::ParseError { .. } => 3,
        Error::OracleDisagreement { .. } => 1,
        _ => 2,
    }
}

fn ensure_out_dir(out: &Option<PathBuf>) -> Result<PathBuf, Error> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Builds the scheme requested by name. Raw kinds run demo splits of the
/// portfolio objective: drs/cp minimize f over the simplex, relaxed-drs the
/// same pair with relaxation, fdr adds the l1 transaction term via its prox.
fn build_named_scheme(
    name: &str,
    problem: &PortfolioProblem,
    convention: LipschitzConvention,
    cfg: Option<&SchemeConfig>,
) -> Result<Scheme, Error> {
    if let Ok(kind) = VariantKind::parse(name) {
        return Ok(configure_variant(kind, problem, convention)?.scheme);
    }
    let n = problem.dim();
    let theta = cfg.map(|c| c.theta.clone()).unwrap_or_default();
    match name {
        "drs" => {
            let sigma = cfg.and_then(|c| c.sigma.or(c.gamma)).unwrap_or(1.0);
            build_drs(&problem.op_g2(), &problem.op_f_prox(), sigma, theta, n)
        }
        "relaxed-drs" => {
            let gamma = cfg.and_then(|c| c.gamma).unwrap_or(1.0);
            let f = problem.op_f_prox();
            let mu1 = f.mu.unwrap_or(problem.delta);
            build_relaxed_drs(&problem.op_g2(), &f, gamma, theta, 0.0, mu1, n)
        }
        "fdr" => {
            let c = problem.op_grad_f(1.0, convention);
            let gamma = cfg
                .and_then(|c| c.gamma)
                .unwrap_or(1.0 / c.beta.unwrap_or(1.0));
            build_fdr(&problem.op_g0(), &problem.op_g2(), &c, gamma, theta, n)
        }
        "cp" => {
            let tau = cfg.and_then(|c| c.tau).unwrap_or(1.0);
            let sigma = cfg.and_then(|c| c.sigma).unwrap_or(1.0);
            build_cp(
                &problem.op_f_prox(),
                &problem.op_g2(),
                DMatrix::identity(n, n),
                tau,
                sigma,
                theta,
            )
        }
        other => Err(Error::Config(format!(
            "unknown scheme {other:?}; variants: {:?}, kinds: drs|cp|relaxed-drs|fdr",
            ALL_VARIANTS.map(|v| v.name())
        ))),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Error> {
    let problem = args.problem.load()?;
    let config = match &args.config {
        Some(path) => Some(SchemeConfig::from_json(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    if let Some(cfg) = &config {
        let validation = validate_params(cfg)?;
        for warning in &validation.warnings {
            eprintln!("warning: {warning}");
        }
        if !validation.ok() {
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&validation).expect("validation serializes")
            );
            return Err(Error::Config(
                "scheme configuration violates its bounds".into(),
            ));
        }
    }
    let scheme = build_named_scheme(
        &args.scheme,
        &problem,
        args.problem.convention(),
        config.as_ref(),
    )?;
    let dir = ensure_out_dir(&args.out)?;
    let stop = StoppingRule::absolute(args.tol, args.max_iter);
    let w0 = DVector::zeros(scheme.direct_dim());

    let trace = match args.mode.as_str() {
        "direct" => scheme.run_direct(&w0, &stop, None)?,
        "block" => {
            let u0 = scheme.lift(&w0)?;
            let opts = IterateOptions {
                record_iterates: args.monitor,
                ..Default::default()
            };
            let trace = scheme.run_block(&u0, &stop, &opts)?;
            if args.monitor {
                if trace.status == TraceStatus::Converged {
                    let u_ref = trace
                        .final_full
                        .clone()
                        .expect("block run stores its iterate");
                    let report =
                        monitor_fejer(&trace, scheme.assembly.preconditioner(), &u_ref, 1e-10)?;
                    if !report.passed() {
                        eprintln!(
                            "Fejér monotonicity in the M-seminorm violated: {:?}",
                            report.distance_violations
                        );
                        return Ok(ExitCode::from(1));
                    }
                    eprintln!("monitor: Fejér monotonicity held on every iteration");
                } else {
                    eprintln!("monitor skipped: run did not converge to a reference point");
                }
            }
            trace
        }
        "both" => {
            let runs = scheme.run_both(&w0, args.max_iter.min(5_000), None)?;
            eprintln!(
                "max deviation between direct and block reduced iterates: {:.3e}",
                runs.max_deviation
            );
            if runs.max_deviation > 1e-10 {
                eprintln!("reduction equivalence w^k = C*u^k violated");
                return Ok(ExitCode::from(1));
            }
            runs.direct
        }
        other => {
            return Err(Error::Config(format!(
                "unknown mode {other:?}; expected direct|block|both"
            )))
        }
    };
    let csv_path = dir.join(format!("{}_trace.csv", args.scheme));
    let json_path = dir.join(format!("{}_trace.json", args.scheme));
    trace.save_csv(&csv_path, args.timing)?;
    trace.save_json(&json_path, args.timing)?;
    println!(
        "{}: {} after {} iterations, residual {:.3e} -> {}",
        args.scheme,
        match trace.status {
            TraceStatus::Converged => "converged",
            TraceStatus::MaxIters => "iteration budget exhausted",
        },
        trace.iterations(),
        trace.final_residual(),
        csv_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn thread_cap() -> usize {
    std::env::var("PROXSPLIT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()))
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, Error> {
    let problem = args.problem.load()?;
    let convention = args.problem.convention();
    let variants: Vec<VariantKind> = match &args.variants {
        None => ALL_VARIANTS.to_vec(),
        Some(list) => list
            .split(',')
            .map(|s| VariantKind::parse(s.trim()))
            .collect::<Result<_, _>>()?,
    };
    let dir = ensure_out_dir(&args.out)?;
    let reference = reference_solution(&problem, 0.03)?;
    eprintln!(
        "reference: residual {:.2e}, subgradient agreement {:.2e}",
        reference.fixed_point_residual, reference.subgradient_distance
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap().min(variants.len().max(1)))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Result<Vec<_>, Error> = pool.install(|| {
        use rayon::prelude::*;
        variants
            .par_iter()
            .map(|&kind| {
                let setup = configure_variant(kind, &problem, convention)?;
                run_variant(setup, &reference.w_star, args.max_iter)
            })
            .collect()
    });
    let runs = runs?;
    let mut violation = false;
    println!(
        "{:<12} {:>10} {:>14} {:>14}  monotone",
        "variant", "iters@1e-6", "final residual", "dist to ref"
    );
    for run in &runs {
        let csv_path = dir.join(format!("{}.csv", run.kind.name()));
        run.trace.save_csv(&csv_path, args.timing)?;
        let monotone = eventually_monotone(&run.trace.dist_refs(), 1e-10);
        if run.final_residual > BENCH_RESIDUAL_TOL || !monotone {
            violation = true;
        }
        println!(
            "{:<12} {:>10} {:>14.3e} {:>14.3e}  {}",
            run.kind.name(),
            run.iters_to_tol.map_or("-".into(), |k| k.to_string()),
            run.final_residual,
            run.final_distance,
            if monotone { "yes" } else { "NO" }
        );
    }
    let result = proxsplit::bench::BenchmarkResult { reference, runs };
    let summary_path = dir.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&result.summary_json())?,
    )?;
    println!("summary -> {}", summary_path.display());
    Ok(if violation {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_rates(args: RatesArgs) -> Result<ExitCode, Error> {
    let mut certificates = Vec::new();
    for (case, side) in [
        (RateCase::Case1, CaseSide::A),
        (RateCase::Case2, CaseSide::A),
        (RateCase::Case3, CaseSide::A),
    ] {
        certificates.push(drs_contraction_factor(
            case, side, args.sigma, args.mu, args.beta,
        )?);
    }
    println!("{}", serde_json::to_string_pretty(&certificates)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gendata(args: GendataArgs) -> Result<ExitCode, Error> {
    let data = synthetic_data(args.seed, args.n, args.days);
    save_returns(&data, &args.path)?;
    println!(
        "wrote {} days x {} assets -> {}",
        data.days(),
        data.assets(),
        args.path.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Schemes with randomized strongly monotone operators for the check suite.
fn check_zoo(rng: &mut StdRng, n: usize) -> Vec<(String, Scheme)> {
    let randv = |rng: &mut StdRng| DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
    let quad = |rng: &mut StdRng| {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        op_quadratic(&g * g.transpose() * 0.4, randv(rng) * 0.1, 0.4)
    };
    let grad = |rng: &mut StdRng| {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
        op_quadratic(&g * g.transpose() * 0.5, DVector::zeros(n), 0.2)
    };
    let theta = ThetaSchedule::Constant(1.0);
    let mut zoo = Vec::new();
    zoo.push((
        format!("drs(n={n})"),
        build_drs(
            &quad(rng),
            &op_l1_shifted(randv(rng)),
            0.9,
            theta.clone(),
            n,
        )
        .expect("valid parameters"),
    ));
    zoo.push((
        format!("relaxed-drs(n={n})"),
        build_relaxed_drs(
            &quad(rng),
            &quad(rng),
            0.8,
            ThetaSchedule::Constant(1.5),
            0.4,
            0.4,
            n,
        )
        .expect("valid parameters"),
    ));
    let c = grad(rng);
    let gamma = 0.9 / c.beta.expect("quadratic gradients carry beta");
    zoo.push((
        format!("fdr(n={n})"),
        build_fdr(
            &quad(rng),
            &op_l1_shifted(randv(rng)),
            &c,
            gamma,
            theta.clone(),
            n,
        )
        .expect("valid parameters"),
    ));
    let branches = vec![
        (op_l1_shifted(randv(rng)), Some(grad(rng))),
        (quad(rng), None),
        (op_l1_shifted(randv(rng)), Some(grad(rng))),
    ];
    let beta = branches
        .iter()
        .filter_map(|(_, c)| c.as_ref().and_then(|c| c.beta))
        .fold(0.0_f64, f64::max);
    zoo.push((
        format!("parallel-fdr(n={n},N=3)"),
        build_parallel_fdr(&quad(rng), &branches, 0.8 / beta, theta.clone(), n)
            .expect("valid parameters"),
    ));
    let branches = vec![
        (op_l1_shifted(randv(rng)), Some(grad(rng))),
        (quad(rng), None),
        (op_l1_shifted(randv(rng)), Some(grad(rng))),
    ];
    let beta = branches
        .iter()
        .filter_map(|(_, c)| c.as_ref().and_then(|c| c.beta))
        .fold(0.0_f64, f64::max);
    zoo.push((
        format!("sequential-fdr(n={n},N=3)"),
        build_sequential_fdr(&quad(rng), &branches, 0.8 / beta, theta, n)
            .expect("valid parameters"),
    ));
    zoo
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, Error> {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad size {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    let mut rng = StdRng::seed_from_u64(args.seed);
    let mut failures: Vec<String> = Vec::new();
    let mut checks = 0usize;

    for &n in &sizes {
        for (name, scheme) in check_zoo(&mut rng, n) {
            // M-firm nonexpansiveness of T.
            checks += 1;
            let fne = check_firm_nonexpansive(&scheme.assembly, args.samples, 1e-9, &mut rng)?;
            if !fne.passed() {
                failures.push(format!(
                    "{name}: M-firm nonexpansiveness violated on {}/{} pairs (worst {:.3e})",
                    fne.violations, fne.samples, fne.max_violation
                ));
            }
            // M-monotonicity of the operator graph.
            checks += 1;
            let mono = check_graph_monotone(&scheme.assembly, args.samples, 1e-9, &mut rng)?;
            if !mono.passed() {
                failures.push(format!(
                    "{name}: graph M-monotonicity violated on {}/{} pairs",
                    mono.violations, mono.samples
                ));
            }
            // Reduction equivalence w^k = C*u^k.
            checks += 1;
            let u0 = proxsplit::spaces::BlockVector::new(
                scheme
                    .assembly
                    .layout()
                    .iter()
                    .map(|&m| DVector::from_fn(m, |_, _| rng.gen_range(-1.5..1.5)))
                    .collect(),
            );
            let w0 = scheme.factorization.apply_cstar(&u0)?;
            let sched = RelaxationSchedule::constant((1.0 + scheme.alpha).min(2.0))?;
            let stop = StoppingRule::iterations_only(150);
            let opts = IterateOptions {
                record_iterates: true,
                ..Default::default()
            };
            let full = ppp_iterate(&scheme.assembly, &u0, &sched, &stop, &opts)?;
            let reduced = rppp_iterate(
                &scheme.assembly,
                &scheme.factorization,
                &w0,
                &sched,
                &stop,
                &opts,
            )?;
            let scale = 1.0 + u0.norm();
            let max_err = full
                .snapshots_full
                .as_ref()
                .unwrap()
                .iter()
                .zip(reduced.snapshots_reduced.as_ref().unwrap())
                .map(|(u, w)| (scheme.factorization.apply_cstar(u).unwrap() - w).norm())
                .fold(0.0_f64, f64::max);
            if max_err > 1e-10 * scale {
                failures.push(format!(
                    "{name}: reduction equivalence w^k = C*u^k broke by {max_err:.3e}"
                ));
            }
            // Fejér monotonicity against a converged fixed point.
            checks += 1;
            match fejer_check(&scheme, &mut rng) {
                Ok(true) => {}
                Ok(false) => failures.push(format!(
                    "{name}: Fejér monotonicity in the M-seminorm violated"
                )),
                Err(e) => failures.push(format!("{name}: Fejér check aborted: {e}")),
            }
        }

        // Woodbury identity on random linear operators.
        checks += 1;
        let mut worst = 0.0_f64;
        for _ in 0..30 {
            let d = rng.gen_range(1..=n.max(2));
            let r = rng.gen_range(1..=d);
            let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let a = &g * g.transpose() + DMatrix::identity(d, d) * 0.3;
            let c = DMatrix::from_fn(d, r, |_, _| rng.gen_range(-1.0..1.0));
            worst = worst.max(check_woodbury(&a, &Factorization::from_c(c, vec![d])?)?);
        }
        if worst > 1e-9 {
            failures.push(format!(
                "Woodbury identity (I+C*A^-1 C)^-1 = I - C*(CC*+A)^-1 C residual {worst:.3e}"
            ));
        }

        // N=1 chains collapse to plain forward DRS.
        checks += 1;
        if let Err(msg) = n1_reduction_check(&mut rng, n) {
            failures.push(msg);
        }
    }

    if failures.is_empty() {
        println!("all {checks} property checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            eprintln!("FAIL {f}");
        }
        eprintln!("{} of {checks} property checks failed", failures.len());
        Ok(ExitCode::from(1))
    }
}

fn fejer_check(scheme: &Scheme, rng: &mut StdRng) -> Result<bool, Error> {
    let draw = |rng: &mut StdRng| {
        proxsplit::spaces::BlockVector::new(
            scheme
                .assembly
                .layout()
                .iter()
                .map(|&m| DVector::from_fn(m, |_, _| rng.gen_range(-1.5..1.5)))
                .collect(),
        )
    };
    let opts = IterateOptions {
        record_iterates: true,
        ..Default::default()
    };
    let tight = scheme.run_block(&draw(rng), &StoppingRule::absolute(1e-13, 200_000), &opts)?;
    if tight.status != TraceStatus::Converged {
        return Ok(false);
    }
    let u_star = tight.final_full.expect("block run stores its iterate");
    let run = scheme.run_block(&draw(rng), &StoppingRule::iterations_only(150), &opts)?;
    let report = monitor_fejer(&run, scheme.assembly.preconditioner(), &u_star, 1e-10)?;
    Ok(report.passed())
}

fn n1_reduction_check(rng: &mut StdRng, n: usize) -> Result<(), String> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
    let a0 = op_quadratic(&g * g.transpose() * 0.4, DVector::zeros(n), 0.3);
    let a1 = op_l1_shifted(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)));
    let g2 = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
    let c = op_quadratic(&g2 * g2.transpose() * 0.5, DVector::zeros(n), 0.2);
    let gamma = 0.9 / c.beta.expect("quadratic gradients carry beta");
    let theta = ThetaSchedule::Constant(1.0);
    let fdr = build_fdr(&a0, &a1, &c, gamma, theta.clone(), n).map_err(|e| e.to_string())?;
    let branches = vec![(a1, Some(c))];
    let par =
        build_parallel_fdr(&a0, &branches, gamma, theta.clone(), n).map_err(|e| e.to_string())?;
    let seq = build_sequential_fdr(&a0, &branches, gamma, theta, n).map_err(|e| e.to_string())?;
    let mut w = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
    let (mut wp, mut ws) = (w.clone(), w.clone());
    for k in 0..100 {
        let sf = fdr.direct_step(&w, 1.0);
        let sp = par.direct_step(&wp, 1.0);
        let ss = seq.direct_step(&ws, 1.0);
        if (&sf.next - &sp.next).norm() > 1e-12 || (&sf.next - &ss.next).norm() > 1e-12 {
            return Err(format!(
                "N=1 reduction: parallel/sequential chain deviates from forward DRS at iteration {k}"
            ));
        }
        w = sf.next;
        wp = sp.next;
        ws = ss.next;
    }
    Ok(())
}
