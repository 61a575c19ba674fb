mod alloc;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use emtdq::analysis::{
    aggregate, eigen_diff, eigenvalues, fit_scaling, peak_rss_bytes, state_matrix_ode, AnalysisError, BenchRecord,
    SampledTrajectory,
};
use emtdq::builder::{
    assemble_raw, builtin, builtin_names, report_counts, scale_case, table_case, BuildError, Builtin, ComposedModel,
    NetworkCase, RawSystem, ScalingSpec,
};
use emtdq::init::{
    composed_from_point, initialize_with, raw_model, reference_model, InitError, InitOptions, OperatingPoint,
};
use emtdq::integrator::{integrate, Event, IntegrationError, IntegratorConfig, OdeModel, Trajectory};
use emtdq::reduction::{reference_reduce, ReductionError};
use emtdq::structural::{FindingKind, IndexClass};

#[global_allocator]
static GLOBAL: alloc::Counting = alloc::Counting;

const OUT_DIR_ENV: &str = "EMTDQ_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "emtdq", version, about = "Index-2 detection and index reduction for EMT-dq network models")]
struct Cli {
    /// Directory for output files (defaults to $EMTDQ_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug, Clone)]
struct CaseArgs {
    /// Built-in case name or path to a case file.
    #[arg(long)]
    case: String,
    /// Replicate the case into this many interconnected instances.
    #[arg(long)]
    scale: Option<usize>,
    /// Seed for the interconnection graph when scaling.
    #[arg(long, requires = "scale")]
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Formulation {
    Raw,
    Reduced,
    ReferenceReduced,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Structural index and topological index-2 findings of the raw model.
    Detect {
        #[command(flatten)]
        case: CaseArgs,
    },
    /// Reference index reduction of the raw model.
    Reduce {
        #[command(flatten)]
        case: CaseArgs,
        /// Print the full reduction report.
        #[arg(long)]
        report: bool,
    },
    /// Builds the reduced formulation and writes `counts.csv`.
    Build {
        /// One or more cases (built-in names, files, or a range `c1..c8`).
        #[arg(long = "case", required = true, num_args = 1..)]
        cases: Vec<String>,
    },
    /// Computes a consistent operating point and writes it as CSV.
    Init {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value = "ic.csv")]
        out: String,
        /// Skip the equilibrium Newton refinement.
        #[arg(long)]
        no_refine: bool,
    },
    /// Time-domain simulation; writes the trajectory on a uniform grid.
    Simulate(SimulateArgs),
    /// Difference norms between two trajectory files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Compare only the variables present in both files.
        #[arg(long)]
        intersect: bool,
        #[arg(long, default_value = "equivalence.csv")]
        out: String,
    },
    /// Eigenvalues of the state matrix at the initial condition.
    Eig {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_enum, default_value = "reduced")]
        formulation: Formulation,
        /// Also compute the other reduced formulation and report the spectral difference.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value = "eig.csv")]
        out: String,
    },
    /// Times reduced-model builds in fresh subprocesses.
    Bench {
        /// Case ids, e.g. `c1..c8` or `c1 c2`.
        #[arg(long = "cases", required = true, num_args = 1..)]
        cases: Vec<String>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    #[command(hide = true)]
    BenchOne {
        #[arg(long)]
        case: String,
        #[arg(long)]
        ic: PathBuf,
    },
    /// Splits a trajectory file into one `t,value` file per variable.
    Plotdata {
        traj: PathBuf,
        /// Variables to extract (all when omitted).
        #[arg(long, value_delimiter = ',')]
        vars: Vec<String>,
    },
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, value_enum, default_value = "reduced")]
    formulation: Formulation,
    /// Load step `bus=<bus>,frac=<fraction>,t=<time>`.
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    tstop: f64,
    #[arg(long, default_value_t = 1e-7)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-9)]
    atol: f64,
    /// Output grid spacing.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long)]
    max_step: Option<f64>,
    /// Initial condition file from `init` (computed when omitted).
    #[arg(long)]
    ic: Option<PathBuf>,
    /// Integrate the raw formulation even though it is index 2.
    #[arg(long)]
    allow_index2: bool,
    #[arg(long, default_value = "trajectory.csv")]
    out: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Dae(_) => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<InitError> for CliError {
    fn from(e: InitError) -> Self {
        match e {
            InitError::Build(b) => b.into(),
            InitError::Missing(_) | InitError::Parse { .. } | InitError::Unsupported(_) => CliError::Usage(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<IntegrationError> for CliError {
    fn from(e: IntegrationError) -> Self {
        match e {
            IntegrationError::Config(_) | IntegrationError::Dimension { .. } => CliError::Usage(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Parse { .. } | AnalysisError::DisjointVariables | AnalysisError::TooFewPoints(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn out_dir(cli: &Option<PathBuf>) -> PathBuf {
    cli.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn load_builtin_or_file(name: &str) -> Result<Builtin> {
    if let Some(b) = builtin(name) {
        return Ok(b);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "`{name}` is neither a built-in case ({}) nor an existing file",
            builtin_names().join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(Builtin::Network(NetworkCase::from_toml(&text)?))
}

fn load(args: &CaseArgs) -> Result<Builtin> {
    let b = load_builtin_or_file(&args.case)?;
    match args.scale {
        None => Ok(b),
        Some(n) => {
            let Builtin::Network(_) = &b else {
                return Err(CliError::Usage(format!("`{}` cannot be scaled", args.case)));
            };
            if n == 0 {
                return Err(CliError::Usage("--scale must be at least 1".into()));
            }
            let mut spec = ScalingSpec::new(n);
            if let Some(s) = args.seed {
                spec.seed = s;
            }
            Ok(Builtin::Network(scale_case(&spec)))
        }
    }
}

fn network(args: &CaseArgs) -> Result<NetworkCase> {
    match load(args)? {
        Builtin::Network(c) => Ok(c),
        Builtin::Raw(_) => Err(CliError::Usage(format!("`{}` is a structural fixture without a network case", args.case))),
    }
}

fn raw_of(b: &Builtin) -> Result<RawSystem> {
    Ok(b.raw()?)
}

/// `c1..c8` expands to `c1 … c8`; anything else is kept.
fn expand_cases(items: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for it in items {
        match it.split_once("..") {
            Some((a, b)) => {
                let num = |s: &str| s.strip_prefix('c').and_then(|d| d.parse::<u32>().ok());
                let (Some(x), Some(y)) = (num(a), num(b)) else {
                    return Err(CliError::Usage(format!("bad case range `{it}`")));
                };
                out.extend((x..=y).map(|k| format!("c{k}")));
            }
            None => out.push(it.clone()),
        }
    }
    Ok(out)
}

fn cmd_detect(args: &CaseArgs) -> Result<()> {
    let raw = raw_of(&load(args)?)?;
    let rep = raw.index_report();
    let findings = raw.findings();
    let count = |k: FindingKind| findings.iter().filter(|f| f.kind == k).count();
    let (cut, lp) = (count(FindingKind::LiCutset), count(FindingKind::CvLoop));
    let s = raw.sys.summary();
    println!("{s}");
    let mut parts = Vec::new();
    if cut > 0 {
        parts.push(format!("{cut} LI-cutset{}", if cut == 1 { "" } else { "s" }));
    }
    if lp > 0 {
        parts.push(format!("{lp} CV-loop{}", if lp == 1 { "" } else { "s" }));
    }
    let findings_text = if parts.is_empty() { "none".to_string() } else { parts.join(", ") };
    println!("{rep}, findings: {findings_text}");
    for f in &findings {
        println!("  {}: nodes [{}] devices [{}]", f.kind, f.nodes.join(", "), f.devices.join(", "));
    }
    if rep.class == IndexClass::IndexAtLeast2 {
        let labels: Vec<String> = rep.constraint_rows.iter().map(|&r| raw.sys.equation_label(r)).collect();
        println!("constraint equations: {}", labels.join("; "));
    }
    Ok(())
}

fn cmd_reduce(args: &CaseArgs, report: bool) -> Result<()> {
    let b = load(args)?;
    let raw = raw_of(&b)?;
    let before = raw.index_report();
    let t = Instant::now();
    let (ode, rep) = reference_reduce(raw.sys)?;
    let elapsed = t.elapsed().as_secs_f64();
    println!("raw: {before}");
    println!("reduced: {} ODE states ({} torn variables), {:.3} s", ode.dim(), ode.n_torn(), elapsed);
    if report {
        println!("{rep}");
    }
    if let Builtin::Network(case) = &b {
        let model = ComposedModel::build(case)?;
        println!("composed reduced model: {} states", model.dim());
    }
    Ok(())
}

fn cmd_build(cases: &[String], dir: &Path) -> Result<()> {
    let mut csv = format!("{}\n", emtdq::builder::CountsRow::HEADER);
    for name in expand_cases(cases)? {
        let case = match load_builtin_or_file(&name)? {
            Builtin::Network(c) => c,
            Builtin::Raw(_) => return Err(CliError::Usage(format!("`{name}` has no network case"))),
        };
        let t = Instant::now();
        let model = ComposedModel::build(&case)?;
        info!("built {} in {:.3} s", case.name, t.elapsed().as_secs_f64());
        let row = report_counts(&case, model.dim(), 0);
        println!("{row}");
        writeln!(csv, "{row}").unwrap();
    }
    let p = write_out(dir, "counts.csv", &csv)?;
    info!("wrote {}", p.display());
    Ok(())
}

fn init_options(no_refine: bool) -> InitOptions {
    InitOptions { refine: !no_refine, ..InitOptions::default() }
}

fn cmd_init(args: &CaseArgs, out: &str, no_refine: bool, dir: &Path) -> Result<()> {
    let case = network(args)?;
    let init = initialize_with(&case, init_options(no_refine))?;
    println!(
        "power flow: {} iterations (mismatch {:.3e}); equilibrium residual {:.3e} after {} Newton iterations",
        init.pf.iterations,
        init.pf.mismatch,
        init.stats.history.last().copied().unwrap_or(0.0),
        init.stats.iterations
    );
    let p = write_out(dir, out, &init.point.to_csv())?;
    info!("wrote {}", p.display());
    Ok(())
}

struct Perturbation {
    bus: String,
    frac: f64,
    t: f64,
}

fn parse_perturb(s: &str) -> Result<Perturbation> {
    let mut bus = None;
    let mut frac = None;
    let mut t = None;
    for kv in s.split(',') {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("bad perturbation item `{kv}`")))?;
        let num = || v.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("`{kv}`: {e}")));
        match k.trim() {
            "bus" => bus = Some(v.trim().to_string()),
            "frac" => frac = Some(num()?),
            "t" => t = Some(num()?),
            other => return Err(CliError::Usage(format!("unknown perturbation key `{other}`"))),
        }
    }
    match (bus, frac, t) {
        (Some(bus), Some(frac), Some(t)) => Ok(Perturbation { bus, frac, t }),
        _ => Err(CliError::Usage("perturbation needs bus=, frac= and t=".into())),
    }
}

fn operating_point(case: &NetworkCase, ic: &Option<PathBuf>) -> Result<OperatingPoint> {
    match ic {
        Some(p) => Ok(OperatingPoint::from_csv(&std::fs::read_to_string(p)?)?),
        None => Ok(initialize_with(case, InitOptions::default())?.point),
    }
}

fn run_model<M: OdeModel + ?Sized>(model: &mut M, y0: &[f64], cfg: &IntegratorConfig, events: &[Event]) -> Result<Trajectory> {
    Ok(integrate(model, y0, cfg, events)?)
}

fn cmd_simulate(a: &SimulateArgs, dir: &Path) -> Result<()> {
    if a.allow_index2 && a.formulation != Formulation::Raw {
        return Err(CliError::Usage("--allow-index2 only applies to --formulation raw".into()));
    }
    let case = network(&a.case)?;
    let events = match &a.perturb {
        Some(p) => {
            let p = parse_perturb(p)?;
            case.load_step(&p.bus, p.frac, p.t)?
        }
        None => Vec::new(),
    };
    let cfg = IntegratorConfig {
        rtol: a.rtol,
        atol: a.atol,
        h_max: a.max_step.unwrap_or(f64::INFINITY),
        ..IntegratorConfig::span(0.0, a.tstop)
    };
    cfg.validate()?;
    if a.tstop == 0.0 {
        let names = match a.formulation {
            Formulation::Reduced => ComposedModel::build(&case)?.names,
            _ => Vec::new(),
        };
        let mut header = String::from("t");
        for n in names {
            header.push(',');
            header.push_str(&n);
        }
        header.push('\n');
        write_out(dir, &a.out, &header)?;
        return Ok(());
    }
    let point = operating_point(&case, &a.ic)?;
    let traj = match a.formulation {
        Formulation::Reduced => {
            let (mut m, y0) = composed_from_point(&case, &point)?;
            run_model(&mut m, &y0, &cfg, &events)?
        }
        Formulation::ReferenceReduced => {
            let (mut m, _, y0) = reference_model(&case, &point)?;
            run_model(&mut m, &y0, &cfg, &events)?
        }
        Formulation::Raw => {
            let rep = assemble_raw(&case)?.index_report();
            if rep.class == IndexClass::IndexAtLeast2 && !a.allow_index2 {
                return Err(CliError::Usage(format!(
                    "raw formulation is {rep}; pass --allow-index2 to integrate it anyway"
                )));
            }
            warn!("integrating the raw formulation ({rep}); expect step-size collapse or a singular iteration matrix");
            let (mut m, y0) = raw_model(&case, &point)?;
            run_model(&mut m, &y0, &cfg, &events)?
        }
    };
    let csv = traj.to_csv(a.dt)?;
    let p = write_out(dir, &a.out, &csv)?;
    eprint!("{}", traj.stats_block());
    info!("wrote {}", p.display());
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path, intersect: bool, out: &str, dir: &Path) -> Result<()> {
    let ta = SampledTrajectory::from_csv(&std::fs::read_to_string(a)?)?;
    let tb = SampledTrajectory::from_csv(&std::fs::read_to_string(b)?)?;
    if !intersect {
        let mut na = ta.names.clone();
        let mut nb = tb.names.clone();
        na.sort();
        nb.sort();
        if na != nb {
            let only_a: Vec<&String> = ta.names.iter().filter(|n| !tb.names.contains(n)).take(5).collect();
            let only_b: Vec<&String> = tb.names.iter().filter(|n| !ta.names.contains(n)).take(5).collect();
            return Err(CliError::Usage(format!(
                "variable sets differ (only in first: {only_a:?}; only in second: {only_b:?}); use --intersect"
            )));
        }
    }
    let rep = ta.diff(&tb)?;
    println!("variables compared: {}", rep.per_variable.len());
    println!("max  ||x_a - x_b||_inf = {:.6e}", rep.max);
    println!("mean ||x_a - x_b||_inf = {:.6e}", rep.mean);
    if let Some((n, v)) = rep.worst() {
        println!("worst variable: {n} ({v:.6e})");
    }
    write_out(dir, out, &rep.to_csv())?;
    Ok(())
}

fn spectrum(case: &NetworkCase, point: &OperatingPoint, f: Formulation) -> Result<Vec<emtdq::analysis::Complex64>> {
    let a = match f {
        Formulation::Reduced => {
            let (mut m, y0) = composed_from_point(case, point)?;
            state_matrix_ode(&mut m, 0.0, &y0)?
        }
        Formulation::ReferenceReduced => {
            let (mut m, _, y0) = reference_model(case, point)?;
            state_matrix_ode(&mut m, 0.0, &y0)?
        }
        Formulation::Raw => {
            return Err(CliError::Usage("the raw formulation has a singular g_z; use a reduced formulation".into()))
        }
    };
    Ok(eigenvalues(&a)?)
}

fn cmd_eig(args: &CaseArgs, f: Formulation, compare: bool, out: &str, dir: &Path) -> Result<()> {
    let case = network(args)?;
    let point = initialize_with(&case, InitOptions::default())?.point;
    let ev = spectrum(&case, &point, f)?;
    let mut csv = String::from("re,im\n");
    for z in &ev {
        writeln!(csv, "{:.16e},{:.16e}", z.re, z.im).unwrap();
    }
    write_out(dir, out, &csv)?;
    let top = ev.last().copied().unwrap_or_default();
    println!("{} eigenvalues; largest real part {:.6e} (imag {:.6e})", ev.len(), top.re, top.im);
    if compare {
        let other = if f == Formulation::Reduced { Formulation::ReferenceReduced } else { Formulation::Reduced };
        let ev2 = spectrum(&case, &point, other)?;
        println!("||lambda_a - lambda_b||_inf = {:.6e}", eigen_diff(&ev, &ev2)?);
    }
    Ok(())
}

fn cmd_bench(cases: &[String], reps: usize, dir: &Path) -> Result<()> {
    let names = expand_cases(cases)?;
    for n in &names {
        if table_case(n).is_none() {
            return Err(CliError::Usage(format!("unknown case id `{n}` (expected c1..c8)")));
        }
    }
    if reps <= 1 {
        warn!("with {reps} repetition(s) only the warm-up run exists; aggregates will be empty");
    }
    let exe = std::env::current_exe()?;
    let mut records = Vec::new();
    let ic_dir = dir.join("bench-ic");
    std::fs::create_dir_all(&ic_dir)?;
    for name in &names {
        let case = table_case(name).unwrap();
        let ic_path = ic_dir.join(format!("{name}.csv"));
        if !ic_path.exists() {
            // the saved point only has to be complete, not refined
            let init = initialize_with(&case, init_options(true))?;
            std::fs::write(&ic_path, init.point.to_csv())?;
        }
        for rep in 0..reps {
            let out = Command::new(&exe)
                .args(["bench-one", "--case", name, "--ic"])
                .arg(&ic_path)
                .output()?;
            if !out.status.success() {
                warn!("{name} rep {rep} failed: {}", String::from_utf8_lossy(&out.stderr).trim());
                continue;
            }
            let line = String::from_utf8_lossy(&out.stdout);
            let f: Vec<&str> = line.trim().split(',').collect();
            let parse = |k: usize| f.get(k).and_then(|s| s.parse::<f64>().ok());
            let (Some(wall), Some(rss), Some(alloc)) = (parse(0), parse(1), parse(2)) else {
                warn!("{name} rep {rep}: unreadable measurement `{}`", line.trim());
                continue;
            };
            let rec = BenchRecord {
                case: name.clone(),
                buses: case.buses.len(),
                wall_time: wall,
                peak_rss: rss as u64,
                allocated: Some(alloc as u64),
                repetition: rep,
            };
            println!("{}", rec.csv_row());
            records.push(rec);
        }
    }
    let mut csv = format!("{}\n", BenchRecord::HEADER);
    for r in records.iter().filter(|r| r.repetition > 0) {
        writeln!(csv, "{}", r.csv_row()).unwrap();
    }
    write_out(dir, "bench.csv", &csv)?;
    let agg = aggregate(&records);
    let mut txt = String::from("case,buses,reps,mean_wall_time_s,mean_peak_rss_bytes,mean_allocated_bytes\n");
    for a in &agg {
        writeln!(
            txt,
            "{},{},{},{:.6e},{:.0},{:.0}",
            a.case,
            a.buses,
            a.reps,
            a.wall_time,
            a.peak_rss,
            a.allocated.unwrap_or(f64::NAN)
        )
        .unwrap();
    }
    let fit_of = |metric: &dyn Fn(&emtdq::analysis::BenchAggregate) -> f64| {
        fit_scaling(&agg.iter().map(|a| (a.buses as f64, metric(a))).collect::<Vec<_>>())
    };
    for (label, fit) in [
        ("wall time", fit_of(&|a| a.wall_time)),
        ("peak RSS", fit_of(&|a| a.peak_rss)),
        ("allocated", fit_of(&|a| a.allocated.unwrap_or(0.0))),
    ] {
        match fit {
            Ok(f) => writeln!(txt, "{label}: {f}").unwrap(),
            Err(e) => writeln!(txt, "{label}: no fit ({e})").unwrap(),
        }
    }
    print!("{txt}");
    write_out(dir, "scaling.txt", &txt)?;
    Ok(())
}

fn cmd_bench_one(case: &str, ic: &Path) -> Result<()> {
    let case = table_case(case).ok_or_else(|| CliError::Usage(format!("unknown case `{case}`")))?;
    let point = OperatingPoint::from_csv(&std::fs::read_to_string(ic)?)?;
    let a0 = alloc::allocated();
    let t = Instant::now();
    let (model, y0) = composed_from_point(&case, &point)?;
    let wall = t.elapsed().as_secs_f64();
    let bytes = alloc::allocated() - a0;
    std::hint::black_box((&model, &y0));
    println!("{wall:.9e},{},{bytes}", peak_rss_bytes().unwrap_or(0));
    Ok(())
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1];
        for (j, cb) in b.iter().enumerate() {
            cur.push((prev[j] + usize::from(ca != *cb)).min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

fn close_matches<'a>(name: &str, names: &'a [String]) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = names.iter().map(|n| (edit_distance(name, n), n.as_str())).collect();
    scored.sort();
    scored.into_iter().take(5).map(|p| p.1).collect()
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_plotdata(traj: &Path, vars: &[String], dir: &Path) -> Result<()> {
    let t = SampledTrajectory::from_csv(&std::fs::read_to_string(traj)?)?;
    let selected: Vec<String> = if vars.is_empty() { t.names.clone() } else { vars.to_vec() };
    for v in &selected {
        if !t.names.contains(v) {
            return Err(CliError::Usage(format!(
                "unknown variable `{v}`; close matches: {}",
                close_matches(v, &t.names).join(", ")
            )));
        }
    }
    for v in &selected {
        let col = t.column(v).unwrap();
        let mut s = format!("t,{v}\n");
        for (time, x) in t.times.iter().zip(col) {
            writeln!(s, "{time:.16e},{x:.16e}").unwrap();
        }
        write_out(dir, &format!("{}.csv", sanitize(v)), &s)?;
    }
    println!("wrote {} files to {}", selected.len(), dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let dir = out_dir(&cli.out_dir);
    match &cli.command {
        Cmd::Detect { case } => cmd_detect(case),
        Cmd::Reduce { case, report } => cmd_reduce(case, *report),
        Cmd::Build { cases } => cmd_build(cases, &dir),
        Cmd::Init { case, out, no_refine } => cmd_init(case, out, *no_refine, &dir),
        Cmd::Simulate(a) => cmd_simulate(a, &dir),
        Cmd::Compare { a, b, intersect, out } => cmd_compare(a, b, *intersect, out, &dir),
        Cmd::Eig { case, formulation, compare, out } => cmd_eig(case, *formulation, *compare, out, &dir),
        Cmd::Bench { cases, reps } => cmd_bench(cases, *reps, &dir),
        Cmd::BenchOne { case, ic } => cmd_bench_one(case, ic),
        Cmd::Plotdata { traj, vars } => cmd_plotdata(traj, vars, &dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
