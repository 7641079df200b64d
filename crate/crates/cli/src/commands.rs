use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use deautoconv::diagnostics::rate_bounds;
use deautoconv::experiment::{run_experiment, ExperimentPlan, NoiseLevels, SolutionScale};
use deautoconv::forward::{autoconvolve, Kernel};
use deautoconv::signal::{add_noise, Domain, GridSignal, NoiseSpec};
use deautoconv::solver::{gauss_newton_solve, random_start, Preconditioner, SolveReport, TikhonovConfig};
use deautoconv::spectral::{builtin_min_resolution, builtin_source, construct_source, SourceCertificate, SourceOptions};
use deautoconv::verify::{run_suite, Suite, VerifyOptions};
use num_complex::Complex64;

use crate::config::Config;
use crate::{BadArgs, Cli, Command, Common, Failed};

#[derive(Args, Debug)]
pub struct ConstructSourceArgs {
    /// Source element: 1, 2, 3 (built-in), const:<value>, or a signal CSV on [0,2].
    #[arg(long)]
    pub phi: Option<String>,
    /// Sampled kernel CSV (default: k ≡ 1).
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Accept resolutions too coarse for the built-in source features.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Data signal CSV on [0,2]. Without it, data are synthesized from --cert.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Source certificate; provides u†, exact data and the kernel.
    #[arg(long)]
    pub cert: Option<PathBuf>,
    /// Sampled kernel CSV when no certificate is given.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Relative noise level δ/‖u†‖ for synthesized data.
    #[arg(long = "delta-rel")]
    pub delta_rel: Option<f64>,
    /// Regularization weight α.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// α = factor·δ when --alpha is absent.
    #[arg(long = "alpha-factor")]
    pub alpha_factor: Option<f64>,
    /// Allow α = 0.
    #[arg(long = "allow-unregularized")]
    pub allow_unregularized: bool,
    /// Start value: true (u†), random:<radius>, const:<value>, or a signal CSV.
    #[arg(long)]
    pub start: Option<String>,
    /// Rescaling of u† before solving: certified, norm:<value>, ratio:<value>.
    #[arg(long)]
    pub scale: Option<String>,
    /// Where to write the report row (CSV with header).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long = "outer-max")]
    pub outer_max: Option<usize>,
    #[arg(long = "outer-tol")]
    pub outer_tol: Option<f64>,
    #[arg(long = "cg-max")]
    pub cg_max: Option<usize>,
    #[arg(long = "cg-tol")]
    pub cg_tol: Option<f64>,
    /// identity or circulant.
    #[arg(long)]
    pub preconditioner: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Source certificate file.
    #[arg(long)]
    pub cert: Option<PathBuf>,
    /// Build the certificate on the fly from this source element (see construct-source).
    #[arg(long)]
    pub phi: Option<String>,
    #[arg(long = "min-delta")]
    pub min_delta: Option<f64>,
    #[arg(long = "max-delta")]
    pub max_delta: Option<f64>,
    /// Number of geometric noise levels.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long = "alpha-factor")]
    pub alpha_factor: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Relative start radius around u†.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Rescaling of u†: certified, norm:<value>, ratio:<value> (default ratio:100).
    #[arg(long)]
    pub scale: Option<String>,
    /// identity or circulant.
    #[arg(long)]
    pub preconditioner: Option<String>,
    #[arg(long = "outer-max")]
    pub outer_max: Option<usize>,
    #[arg(long = "cg-max")]
    pub cg_max: Option<usize>,
    /// Suppress the exit-code-1 on bound violations.
    #[arg(long = "allow-violations")]
    pub allow_violations: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Restrict to these suites (signal, forward/adjoint, spectral, solver, diagnostics, subdiff).
    #[arg(long)]
    pub suite: Vec<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.common.config {
        Some(path) => Config::load(path).map_err(|e| BadArgs(format!("{e:#}")))?,
        None => Config::default(),
    };
    match cli.command {
        Command::ConstructSource(args) => construct_source_cmd(&cli.common, &cfg, args),
        Command::Solve(args) => solve_cmd(&cli.common, &cfg, args),
        Command::Experiment(args) => experiment_cmd(&cli.common, &cfg, args),
        Command::Verify(args) => verify_cmd(&cfg, args),
    }
}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    BadArgs(msg.into()).into()
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_signal(path: &Path) -> Result<GridSignal> {
    GridSignal::from_csv(&read_input(path)?).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn load_kernel(path: Option<&Path>) -> Result<Kernel> {
    match path {
        None => Ok(Kernel::Trivial),
        Some(p) => Kernel::from_csv(&read_input(p)?).map_err(|e| bad(format!("{}: {e}", p.display()))),
    }
}

fn load_cert(path: &Path) -> Result<SourceCertificate> {
    SourceCertificate::from_text(&read_input(path)?).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn parse_real(text: &str, what: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| bad(format!("{what}: cannot parse '{text}' as a number")))
}

/// Resolves a source element spec into a signal on [0,2].
fn source_element(spec: &str, resolution: Option<usize>, force: bool) -> Result<GridSignal> {
    if let Some(c) = spec.strip_prefix("const:") {
        let n = resolution.ok_or_else(|| bad("--N is required for const: sources"))?;
        let value = parse_real(c, "const source")?;
        return Ok(GridSignal::constant(Complex64::new(value, 0.0), n, Domain::Double));
    }
    if let Ok(which) = spec.parse::<u8>() {
        if !(1..=3).contains(&which) {
            return Err(bad(format!("built-in sources are 1, 2 and 3, got {which}")));
        }
        let n = resolution.ok_or_else(|| bad("--N is required for built-in sources"))?;
        let min = builtin_min_resolution(which)?;
        if n < min {
            if !force {
                return Err(bad(format!(
                    "N = {n} is too coarse to resolve source {which} (needs N >= {min}); pass --force to proceed"
                )));
            }
            eprintln!("warning: N = {n} under-resolves source {which} (recommended N >= {min})");
        }
        return Ok(builtin_source(which, n)?);
    }
    let phi = load_signal(Path::new(spec))?;
    if phi.domain() != Domain::Double {
        return Err(bad(format!("{spec}: source element must live on [0,2]")));
    }
    Ok(phi)
}

fn parse_scale(spec: &str) -> Result<SolutionScale> {
    if spec == "certified" {
        return Ok(SolutionScale::AsCertified);
    }
    if let Some(v) = spec.strip_prefix("norm:") {
        return Ok(SolutionScale::Norm(parse_real(v, "scale")?));
    }
    if let Some(v) = spec.strip_prefix("ratio:") {
        return Ok(SolutionScale::DataRatio(parse_real(v, "scale")?));
    }
    Err(bad(format!("unknown scale '{spec}' (certified, norm:<x>, ratio:<x>)")))
}

fn parse_preconditioner(spec: Option<String>) -> Result<Preconditioner> {
    match spec.as_deref() {
        None | Some("identity") => Ok(Preconditioner::Identity),
        Some("circulant") => Ok(Preconditioner::Circulant),
        Some(other) => Err(bad(format!("unknown preconditioner '{other}' (identity, circulant)"))),
    }
}

fn construct_source_cmd(common: &Common, cfg: &Config, args: ConstructSourceArgs) -> Result<()> {
    let spec: String = cfg.require(args.phi, "phi")?;
    let resolution = cfg.pick(common.resolution, "N")?;
    let force = cfg.switch(args.force, "force")?;
    let kernel_path: Option<PathBuf> = cfg.pick(args.kernel, "kernel")?;
    let out: Option<PathBuf> = cfg.pick(common.out.clone(), "out")?;

    let phi = source_element(&spec, resolution, force)?;
    let kernel = load_kernel(kernel_path.as_deref())?;
    let cert = construct_source(&phi, &kernel, SourceOptions::default())
        .map_err(|e| Failed(format!("certificate construction failed: {e}")))?;
    println!("lambda1={:e}", cert.lambda1_original);
    println!("lambda2={:e}", cert.lambda2);
    println!("phi_norm={:e}", cert.phi_rescaled.norm());
    println!("u_norm={:e}", cert.u_true.norm());
    println!("g_norm={:e}", cert.g_true.norm());
    println!("eigen_residual={:e}", cert.eigen_residual()?);
    if let Some(path) = out {
        write_output(&path, &cert.to_text())?;
    }
    Ok(())
}

fn parse_start(spec: &str, cert: Option<&SourceCertificate>, resolution: usize, seed: u64) -> Result<GridSignal> {
    let need_cert = || cert.ok_or_else(|| bad(format!("--start {spec} needs --cert")));
    if spec == "true" {
        return Ok(need_cert()?.u_true.clone());
    }
    if let Some(r) = spec.strip_prefix("random:") {
        let radius = parse_real(r, "start radius")?;
        return Ok(random_start(&need_cert()?.u_true, radius, seed).map_err(|e| bad(e.to_string()))?);
    }
    if let Some(c) = spec.strip_prefix("const:") {
        let value = parse_real(c, "start constant")?;
        return Ok(GridSignal::constant(Complex64::new(value, 0.0), resolution, Domain::Unit));
    }
    load_signal(Path::new(spec))
}

fn solve_cmd(common: &Common, cfg: &Config, args: SolveArgs) -> Result<()> {
    let seed = cfg.or(common.seed, "seed", 0u64)?;
    let cert_path: Option<PathBuf> = cfg.pick(args.cert, "cert")?;
    let data_path: Option<PathBuf> = cfg.pick(args.data, "data")?;
    let kernel_path: Option<PathBuf> = cfg.pick(args.kernel, "kernel")?;
    let scale = parse_scale(&cfg.or(args.scale, "scale", "certified".to_string())?)?;
    let cert = match &cert_path {
        Some(p) => Some(scale.apply(&load_cert(p)?)?),
        None => None,
    };

    let mut delta = None;
    let data = match (&data_path, &cert) {
        (Some(p), _) => load_signal(p)?,
        (None, Some(c)) => {
            let rel = cfg.or(args.delta_rel, "delta-rel", 0.0)?;
            let d = rel * c.u_true.norm();
            delta = Some(d);
            add_noise(&c.g_true, NoiseSpec::new(d, seed).map_err(|e| bad(e.to_string()))?)?
        }
        (None, None) => return Err(bad("solve needs --data or --cert")),
    };
    if data.domain() != Domain::Double {
        return Err(bad("data must live on [0,2]"));
    }
    let kernel = match (&cert, &kernel_path) {
        (_, Some(p)) => load_kernel(Some(p))?,
        (Some(c), None) => c.kernel.clone(),
        (None, None) => Kernel::Trivial,
    };

    let alpha = match (cfg.pick(args.alpha, "alpha")?, cfg.pick(args.alpha_factor, "alpha-factor")?, delta) {
        (Some(a), _, _) => a,
        (None, Some(f), Some(d)) => f * d,
        _ => return Err(bad("give --alpha, or --alpha-factor with synthesized noisy data")),
    };
    let start_spec = cfg.or(args.start, "start", if cert.is_some() { "random:0.5".into() } else { String::new() })?;
    if start_spec.is_empty() {
        return Err(bad("--start is required without --cert"));
    }
    let start = parse_start(&start_spec, cert.as_ref(), data.resolution(), seed ^ 0x5747)?;

    let mut config = TikhonovConfig::new(alpha, start);
    config.allow_unregularized = cfg.switch(args.allow_unregularized, "allow-unregularized")?;
    config.outer_max = cfg.or(args.outer_max, "outer-max", config.outer_max)?;
    config.outer_tol = cfg.or(args.outer_tol, "outer-tol", config.outer_tol)?;
    config.cg_max = cfg.or(args.cg_max, "cg-max", config.cg_max)?;
    config.cg_tol = cfg.or(args.cg_tol, "cg-tol", config.cg_tol)?;
    config.preconditioner = parse_preconditioner(cfg.pick(args.preconditioner, "preconditioner")?)?;
    config.validate().map_err(|e| bad(e.to_string()))?;

    let report = gauss_newton_solve(&data, &kernel, &config).map_err(|e| bad(e.to_string()))?;
    let discrepancy = (&autoconvolve(&report.minimizer, &kernel)? - &data).norm();
    println!("{}", SolveReport::CSV_HEADER);
    println!("{}", report.csv_row());
    println!("discrepancy={discrepancy:e}");
    if let (Some(c), Some(d)) = (&cert, delta) {
        if alpha > 0.0 {
            let (_, bound) = rate_bounds(d, alpha, c)?;
            println!("delta={d:e} discrepancy_bound={bound:e}");
        }
    }
    if !report.converged {
        eprintln!("warning: solver stopped without converging ({:?})", report.termination);
    }
    if let Some(path) = cfg.pick(args.report, "report")? {
        write_output(&path, &format!("{}\n{}\n", SolveReport::CSV_HEADER, report.csv_row()))?;
    }
    if let Some(path) = cfg.pick::<PathBuf>(common.out.clone(), "out")? {
        write_output(&path, &report.minimizer.to_csv())?;
    }
    Ok(())
}

fn experiment_cmd(common: &Common, cfg: &Config, args: ExperimentArgs) -> Result<()> {
    let cert = match (cfg.pick::<PathBuf>(args.cert, "cert")?, cfg.pick::<String>(args.phi, "phi")?) {
        (Some(p), _) => load_cert(&p)?,
        (None, Some(spec)) => {
            let n = cfg.or(common.resolution, "N", 1024)?;
            let phi = source_element(&spec, Some(n), cfg.switch(false, "force")?)?;
            construct_source(&phi, &Kernel::Trivial, SourceOptions::default())
                .map_err(|e| Failed(format!("certificate construction failed: {e}")))?
        }
        (None, None) => return Err(bad("experiment needs --cert or --phi")),
    };
    let defaults = ExperimentPlan::default();
    let plan = ExperimentPlan {
        levels: NoiseLevels {
            min: cfg.or(args.min_delta, "min-delta", defaults.levels.min)?,
            max: cfg.or(args.max_delta, "max-delta", defaults.levels.max)?,
            count: cfg.or(args.levels, "levels", defaults.levels.count)?,
        },
        alpha_factor: cfg.or(args.alpha_factor, "alpha-factor", defaults.alpha_factor)?,
        restarts: cfg.or(args.restarts, "restarts", defaults.restarts)?,
        radius: cfg.or(args.radius, "radius", defaults.radius)?,
        master_seed: cfg.or(common.seed, "seed", defaults.master_seed)?,
        workers: cfg.or(common.workers, "workers", defaults.workers)?,
        solution_scale: match cfg.pick::<String>(args.scale, "scale")? {
            Some(s) => parse_scale(&s)?,
            None => defaults.solution_scale,
        },
        preconditioner: parse_preconditioner(cfg.pick(args.preconditioner, "preconditioner")?)?,
        outer_max: cfg.or(args.outer_max, "outer-max", defaults.outer_max)?,
        cg_max: cfg.or(args.cg_max, "cg-max", defaults.cg_max)?,
    };
    plan.validate().map_err(|e| bad(e.to_string()))?;

    let result = run_experiment(&cert, &plan)?;
    let csv = result.to_csv();
    match cfg.pick::<PathBuf>(common.out.clone(), "out")? {
        Some(path) => write_output(&path, &csv)?,
        None => print!("{csv}"),
    }

    let violations = result
        .records()
        .filter(|r| r.converged && !r.within_bounds(0.0))
        .count();
    eprintln!(
        "cells={} non-converged={:.1}% bound violations={} solution scale={:e}",
        result.cells.len(),
        100.0 * result.nonconverged_fraction(),
        violations,
        result.solution_scale
    );
    for row in &result.summary {
        match row.fit {
            Some(fit) => eprintln!("slope {:<14} {:.4}", row.quantity, fit.slope),
            None => eprintln!("slope {:<14} n/a", row.quantity),
        }
    }
    if violations > 0 && !cfg.switch(args.allow_violations, "allow-violations")? {
        return Err(Failed(format!("{violations} converged runs violate the theoretical bounds")).into());
    }
    Ok(())
}

fn verify_cmd(cfg: &Config, args: VerifyArgs) -> Result<()> {
    let mut names = args.suite;
    if names.is_empty() {
        if let Some(list) = cfg.raw("suite") {
            names = list.split(',').map(|s| s.trim().to_string()).collect();
        }
    }
    let suites: Vec<Suite> = if names.is_empty() {
        Suite::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| n.parse::<Suite>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_>>()?
    };
    let opts = VerifyOptions::default();
    let mut failed = Vec::new();
    for suite in suites {
        let report = run_suite(suite, &opts)?;
        print!("{report}");
        if !report.passed() {
            failed.push(suite.name());
        }
    }
    if !failed.is_empty() {
        return Err(Failed(format!("failing suites: {}", failed.join(", "))).into());
    }
    Ok(())
}
