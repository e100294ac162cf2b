use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cnf_core::alpf::{
    format_table, solve_alpf, solve_decomposed, solve_penalty, AlpfConfig, AlpfError, AlpfTrace, BlockPartition,
    Column, StopStatus,
};
use cnf_core::certificate::{certify, Verdict, DEFAULT_GATE_TOL};
use cnf_core::expr::Point;
use cnf_core::inner::InnerConfig;
use cnf_core::model::CnfProblem;
use cnf_core::problems::{build, CatalogEntry, CatalogId, CatalogParams, NAMES};

const EXIT_SOLVER: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "cnf", version, about = "Solve and certify convertible nonconvex problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver and report its iterations.
    Solve(SolveArgs),
    /// Check whether a lifted point is a global minimizer.
    Certify(CertifyArgs),
    /// List the built-in problems.
    Catalog(CatalogArgs),
    /// Check a problem's convexity and exactness by sampling.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Source {
    /// Problem in the text format.
    #[arg(long, conflicts_with = "catalog", required_unless_present = "catalog")]
    file: Option<PathBuf>,
    /// Built-in problem name, e.g. ex7 or ex9.
    #[arg(long)]
    catalog: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    /// Seed for generated problem data and for sampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value_t = Solver::Alpf)]
    solver: Solver,
    #[arg(long)]
    eps: Option<f64>,
    /// Initial penalty weight.
    #[arg(long)]
    rho0: Option<f64>,
    /// Penalty growth factor.
    #[arg(long)]
    growth: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long, value_enum)]
    inner: Option<Inner>,
    /// Comma-separated start (x then y); missing entries are zero.
    #[arg(long, conflicts_with = "start_pattern", allow_hyphen_values = true)]
    start: Option<String>,
    /// Generated start: `linear` is v, v+1, v+2, ...; `constant` is v everywhere.
    #[arg(long, value_enum)]
    start_pattern: Option<Pattern>,
    /// The value v used by --start-pattern.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    start_value: f64,
    /// Number of blocks for the decomposed solver.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, value_enum)]
    output: Option<Output>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    source: Source,
    /// Comma-separated lifted point, or just x when the problem has a lift map.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    #[arg(long, default_value_t = DEFAULT_GATE_TOL)]
    tol: f64,
}

#[derive(Args)]
struct CatalogArgs {
    #[arg(long, value_enum)]
    output: Option<Output>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, value_enum)]
    output: Option<Output>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Alpf,
    Penalty,
    Decomposed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inner {
    Gd,
    Newton,
    Bfgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Linear,
    Constant,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Table,
    Json,
    Jsonl,
}

fn resolve_output(o: Option<Output>) -> Output {
    o.unwrap_or_else(|| if std::io::stdout().is_terminal() { Output::Table } else { Output::Jsonl })
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Solver(String),
}

impl From<AlpfError> for Failure {
    fn from(e: AlpfError) -> Self {
        match e {
            AlpfError::InvalidConfig(_) | AlpfError::Partition(_) => Failure::Usage(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

struct Loaded {
    problem: CnfProblem,
    entry: Option<CatalogEntry>,
}

fn load(src: &Source) -> Result<Loaded, Failure> {
    if let Some(path) = &src.file {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let problem = CnfProblem::from_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        return Ok(Loaded { problem, entry: None });
    }
    let name = src.catalog.as_deref().ok_or_else(|| usage("one of --file or --catalog is required"))?;
    let params = CatalogParams { n: src.n, lambda: src.lambda, classes: src.classes, seed: src.seed };
    let id = CatalogId::from_name(name, &params).map_err(usage)?;
    let entry = build(&id).map_err(usage)?;
    Ok(Loaded { problem: entry.problem.clone(), entry: Some(entry) })
}

fn parse_vector(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("'{s}' is not a number"))))
        .collect()
}

fn start_point(args: &SolveArgs, prob: &CnfProblem) -> Result<Option<Point>, Failure> {
    let dim = prob.dim();
    let flat = if let Some(text) = &args.start {
        let mut v = parse_vector(text)?;
        if v.len() > dim {
            return Err(usage(format!("--start has {} values, the problem has {dim} variables", v.len())));
        }
        v.resize(dim, 0.0);
        v
    } else if let Some(p) = args.start_pattern {
        let v0 = args.start_value;
        match p {
            Pattern::Linear => (0..dim).map(|i| v0 + i as f64).collect(),
            Pattern::Constant => vec![v0; dim],
        }
    } else {
        return Ok(None);
    };
    Ok(Some(Point::from_flat(&flat, prob.n())))
}

fn solve_config(args: &SolveArgs, loaded: &Loaded) -> Result<AlpfConfig, Failure> {
    let mut cfg = match &loaded.entry {
        Some(e) => AlpfConfig { start: Some(e.start.clone()), ..e.params.clone() },
        None => AlpfConfig::default(),
    };
    if let Some(v) = args.eps {
        cfg.eps = v;
    }
    if let Some(v) = args.rho0 {
        cfg.rho0 = v;
    }
    if let Some(v) = args.growth {
        cfg.growth = v;
    }
    if let Some(v) = args.max_outer {
        cfg.max_outer = v;
    }
    if let Some(i) = args.inner {
        cfg.inner = match i {
            Inner::Gd => InnerConfig::default(),
            Inner::Newton => InnerConfig::newton(),
            Inner::Bfgs => InnerConfig::bfgs(),
        };
    }
    if let Some(seed) = args.source.seed {
        cfg.seed = seed;
    }
    if let Some(p) = start_point(args, &loaded.problem)? {
        cfg.start = Some(p);
    }
    cfg.validate().map_err(Failure::from)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Summary {
    status: StopStatus,
    outer_iterations: usize,
    x: Vec<f64>,
    f: Option<f64>,
    g: f64,
    e: f64,
    verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate_error: Option<String>,
}

fn summarize(trace: &AlpfTrace, prob: &CnfProblem) -> Option<Summary> {
    let last = trace.last()?;
    let f = prob.reference().and_then(|_| prob.reference_value(&last.x).ok());
    let (verdict, certificate_error) = match certify(prob, &last.point(), DEFAULT_GATE_TOL) {
        Ok(c) => (Some(c.verdict), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Some(Summary {
        status: trace.status,
        outer_iterations: trace.outer_iterations(),
        x: last.x.clone(),
        f,
        g: last.g,
        e: last.e,
        verdict,
        certificate_error,
    })
}

/// The serialized name of a unit enum variant.
fn snake(v: &impl Serialize) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn summary_line(s: &Summary) -> String {
    let xs: Vec<String> = s.x.iter().map(|v| format!("{v:.6}")).collect();
    let f = s.f.map(|f| format!("{f:.6}")).unwrap_or_else(|| "n/a".into());
    let verdict = match (&s.verdict, &s.certificate_error) {
        (Some(v), _) => snake(v),
        (None, Some(e)) => format!("not certified ({e})"),
        (None, None) => String::new(),
    };
    format!(
        "{} after {} outer iterations: x = ({}), f(x) = {f}, e = {:.3e}, certificate: {verdict}",
        snake(&s.status),
        s.outer_iterations,
        xs.join(", "),
        s.e
    )
}

fn run_solve(args: &SolveArgs) -> Result<ExitCode, Failure> {
    let loaded = load(&args.source)?;
    let prob = &loaded.problem;
    let cfg = solve_config(args, &loaded)?;
    if args.blocks.is_some() && args.solver != Solver::Decomposed {
        return Err(usage("--blocks only applies to --solver decomposed"));
    }
    log::info!("solving {} with n = {}, m = {}", prob.name(), prob.n(), prob.m());
    let trace = match args.solver {
        Solver::Alpf => solve_alpf(prob, &cfg)?,
        Solver::Penalty => solve_penalty(prob, &cfg)?,
        Solver::Decomposed => {
            let p = args.blocks.ok_or_else(|| usage("--solver decomposed requires --blocks"))?;
            let part = BlockPartition::contiguous(prob, p)?;
            solve_decomposed(prob, &part, &cfg)?
        }
    };
    let summary = summarize(&trace, prob);
    match resolve_output(args.output) {
        Output::Table => {
            let surrogate = |p: &Point| loaded.entry.as_ref().and_then(|e| e.surrogate(p)).unwrap_or(f64::NAN);
            let has_surrogate =
                loaded.entry.as_ref().is_some_and(|e| e.surrogate(&Point::zeros(prob.n(), prob.m())).is_some());
            let extra = [Column { title: "sum y^2", value: &surrogate }];
            print!("{}", format_table(&trace, prob, if has_surrogate { &extra } else { &[] }));
            if let Some(s) = &summary {
                println!("{}", summary_line(s));
            }
        }
        Output::Json => {
            let doc = serde_json::json!({ "trace": trace, "summary": summary });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        }
        Output::Jsonl => {
            print!("{}", trace.to_jsonl());
            println!("{}", serde_json::json!({ "summary": summary }));
        }
    }
    Ok(if trace.status.is_success() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_SOLVER) })
}

fn run_certify(args: &CertifyArgs) -> Result<ExitCode, Failure> {
    let loaded = load(&args.source)?;
    let prob = &loaded.problem;
    let v = parse_vector(&args.point)?;
    let p = if v.len() == prob.dim() {
        Point::from_flat(&v, prob.n())
    } else if v.len() == prob.n() && prob.has_lift() {
        prob.lift(&v).map_err(|e| Failure::Solver(e.to_string()))?
    } else {
        return Err(usage(format!(
            "--point has {} values, expected {} (or {} with a lift map)",
            v.len(),
            prob.dim(),
            prob.n()
        )));
    };
    let cert = certify(prob, &p, args.tol).map_err(|e| Failure::Solver(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&cert).expect("serializable"));
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CatalogRow {
    name: &'static str,
    id: String,
    n: usize,
    m: usize,
    s: usize,
    r: usize,
    exact: bool,
    known: Option<String>,
}

fn run_catalog(args: &CatalogArgs) -> Result<ExitCode, Failure> {
    let mut rows = Vec::new();
    for name in NAMES {
        let id = CatalogId::from_name(name, &CatalogParams::default()).map_err(usage)?;
        let e = build(&id).map_err(usage)?;
        let p = &e.problem;
        rows.push(CatalogRow {
            name,
            id: e.id.to_string(),
            n: p.n(),
            m: p.m(),
            s: p.s(),
            r: p.r(),
            exact: p.is_exact(),
            known: e.known.map(|k| k.description),
        });
    }
    match resolve_output(args.output) {
        Output::Table => {
            println!("{:<6} {:<28} {:>4} {:>4} {:>4} {:>4} {:>6}  known", "name", "id", "n", "m", "s", "r", "exact");
            for r in &rows {
                println!(
                    "{:<6} {:<28} {:>4} {:>4} {:>4} {:>4} {:>6}  {}",
                    r.name,
                    r.id,
                    r.n,
                    r.m,
                    r.s,
                    r.r,
                    r.exact,
                    r.known.as_deref().unwrap_or("")
                );
            }
        }
        Output::Json => println!("{}", serde_json::to_string_pretty(&rows).expect("serializable")),
        Output::Jsonl => {
            for r in &rows {
                println!("{}", serde_json::to_string(r).expect("serializable"));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Validation {
    problem: String,
    n: usize,
    m: usize,
    s: usize,
    r: usize,
    convexity_violations: usize,
    exact: bool,
    exactness_gap: Option<f64>,
    lift_infeasible_samples: Option<usize>,
    ok: bool,
}

fn run_validate(args: &ValidateArgs) -> Result<ExitCode, Failure> {
    let loaded = load(&args.source)?;
    let prob = &loaded.problem;
    let seed = args.source.seed.unwrap_or(0);
    let convexity_violations = prob.sample_convexity(args.samples, seed, None);
    let claims_exact = prob.is_exact() && !loaded.entry.as_ref().is_some_and(|e| e.expected_discrepancy);
    let (exactness_gap, lift_infeasible_samples) = if prob.has_lift() {
        let gap = prob.validate_exactness(args.samples, seed).ok();
        let (lo, hi) = prob.bounds();
        let step = (hi - lo) / (args.samples.max(2) - 1) as f64;
        let mut bad = 0;
        for k in 0..args.samples {
            let x: Vec<f64> =
                (0..prob.n()).map(|i| lo + step * ((k * (2 * i + 1) + i) % args.samples) as f64).collect();
            let ok = prob.lift(&x).and_then(|p| prob.check_feasible(&p, 1e-8)).is_ok_and(|r| r.in_xf);
            bad += usize::from(!ok);
        }
        (gap, Some(bad))
    } else {
        (None, None)
    };
    let ok = convexity_violations == 0
        && lift_infeasible_samples.unwrap_or(0) == 0
        && (!claims_exact || exactness_gap.is_none_or(|g| g <= 1e-8));
    let report = Validation {
        problem: prob.name().to_string(),
        n: prob.n(),
        m: prob.m(),
        s: prob.s(),
        r: prob.r(),
        convexity_violations,
        exact: prob.is_exact(),
        exactness_gap,
        lift_infeasible_samples,
        ok,
    };
    match resolve_output(args.output) {
        Output::Table => {
            println!(
                "problem {} (n = {}, m = {}, s = {}, r = {})",
                report.problem, report.n, report.m, report.s, report.r
            );
            println!("convexity violations: {}", report.convexity_violations);
            match report.exactness_gap {
                Some(g) => println!("exactness gap: {g:.3e} (exact form: {})", report.exact),
                None => println!("exactness gap: n/a (no lift map)"),
            }
            if let Some(b) = report.lift_infeasible_samples {
                println!("infeasible lifted samples: {b}");
            }
            println!("{}", if ok { "ok" } else { "FAILED" });
        }
        _ => println!("{}", serde_json::to_string(&report).expect("serializable")),
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_SOLVER) })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Certify(a) => run_certify(a),
        Command::Catalog(a) => run_catalog(a),
        Command::Validate(a) => run_validate(a),
    };
    match res {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
