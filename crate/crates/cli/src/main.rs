//! Command-line driver for the PTL performance-modeling pipeline.
//!
//! Subcommands mirror the pipeline stages: `run` executes a program under
//! taint analysis, `analyze` derives the dependency report, `design` reduces
//! value grids to a measurement plan, `model` fits formulas to measurements,
//! `classify` selects instrumentation targets, `validate` checks a finished
//! experiment, `synth` generates corpus programs and measurements, and `fmt`
//! prints the canonical form of a program.
//!
//! Exit codes: 0 on success, 1 on error, 2 on success with warnings (e.g.
//! recursion during tracing, or validity findings).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ptl_core::ast::Program;
use ptl_core::libdb::LibraryDB;
use ptl_core::measure::{cov_filter, CovReport, MeasurementSet, TargetKey};
use ptl_core::model::{select_blackbox, select_guided, PerfModel, SearchSpace};
use ptl_core::parser::parse;
use ptl_core::pretty::print_program;
use ptl_core::synth::{generate, synth_measurements, CorpusSpec};
use ptl_core::taint::{run, CallPath, RunOptions, TraceReport};
use ptl_core::validate::validate;
use ptl_core::validity::{validate_experiment, ValidityOptions};
use ptl_core::volume::{classify_dependencies, compose_volume, upper_bound_check, DependencyReport};

#[derive(Parser)]
#[command(name = "ptl", version, about = "Hybrid performance modeling for PTL programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a program under taint analysis and write the trace report.
    Run(RunArgs),
    /// Derive the parameter-dependency report (volume + groups) from a run.
    Analyze(AnalyzeArgs),
    /// Reduce per-parameter value grids to a measurement plan.
    Design(DesignArgs),
    /// Fit a performance model to measurements.
    Model(ModelArgs),
    /// Classify functions and select instrumentation targets.
    Classify(ClassifyArgs),
    /// Check a measured experiment for noise, contention, and regime changes.
    Validate(ValidateArgs),
    /// Generate a synthetic program corpus and optional measurements.
    Synth(SynthArgs),
    /// Print the canonical formatting of a program.
    Fmt(FmtArgs),
}

#[derive(Args)]
struct ProgramArgs {
    /// Path to the .ptl program.
    program: PathBuf,
    /// Parameter value, repeatable: --param size=32
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Library database JSON (defaults to the built-in MPI set).
    #[arg(long)]
    db: Option<PathBuf>,
    /// Disable implicit (control-flow) taint propagation.
    #[arg(long)]
    no_implicit_flows: bool,
    /// Abort any single loop after this many iterations.
    #[arg(long, value_name = "N")]
    loop_guard: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Output file (stdout if omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Output file for the dependency report (stdout if omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the per-block volume upper-bound check report here.
    #[arg(long, value_name = "FILE")]
    bounds_out: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    /// Dependency report from `ptl analyze`.
    #[arg(long)]
    deps: PathBuf,
    /// Value grid, repeatable: --values size=8,16,32,64
    #[arg(long = "values", value_name = "NAME=V1,V2,...")]
    values: Vec<String>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Measurement CSV (function,callpath,<params...>,rep,value).
    #[arg(long)]
    measurements: PathBuf,
    /// Target function to model.
    #[arg(long, default_value = "main")]
    function: String,
    /// Target call path (slash-joined ids; empty = entry frame).
    #[arg(long, default_value = "")]
    callpath: String,
    /// guided | blackbox | both
    #[arg(long, default_value = "guided")]
    mode: String,
    /// Dependency report (required for guided and both modes).
    #[arg(long)]
    deps: Option<PathBuf>,
    /// Maximum number of model terms.
    #[arg(long, default_value_t = 2)]
    max_terms: usize,
    /// Drop configurations whose repetition CoV exceeds this before fitting.
    #[arg(long, value_name = "T")]
    cov_threshold: Option<f64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Measurement CSV for the finished experiment.
    #[arg(long)]
    measurements: PathBuf,
    /// Dependency report from `ptl analyze`.
    #[arg(long)]
    deps: PathBuf,
    #[arg(long, default_value = "main")]
    function: String,
    #[arg(long, default_value = "")]
    callpath: String,
    /// Trace report, for one-sided tainted-branch warnings.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    cov_threshold: f64,
    #[arg(long, default_value_t = 0.8)]
    spearman_threshold: f64,
    #[arg(long, default_value_t = 5)]
    min_values: usize,
    #[arg(long, default_value_t = 0.15)]
    smape_threshold: f64,
    #[arg(long, default_value_t = 3)]
    min_side: usize,
    #[arg(long, default_value_t = 2)]
    max_terms: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of generated functions (entry excluded).
    #[arg(long, default_value_t = 20)]
    functions: usize,
    /// Fraction of functions with parameter-independent cost.
    #[arg(long, default_value_t = 0.3)]
    constant_fraction: f64,
    /// Comma-separated program parameters.
    #[arg(long, default_value = "size,p")]
    params: String,
    /// Write the generated program here (stdout if omitted).
    #[arg(long, value_name = "FILE")]
    program_out: Option<PathBuf>,
    /// Write the ground-truth JSON here.
    #[arg(long, value_name = "FILE")]
    truth_out: Option<PathBuf>,
    /// Also synthesize measurements for this ground-truth function.
    #[arg(long, value_name = "NAME")]
    measure: Option<String>,
    /// Value grid for measurement synthesis, repeatable (cross product).
    #[arg(long = "values", value_name = "NAME=V1,V2,...")]
    values: Vec<String>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Relative noise level sigma.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Write synthesized measurements CSV here.
    #[arg(long, value_name = "FILE")]
    measurements_out: Option<PathBuf>,
}

#[derive(Args)]
struct FmtArgs {
    program: PathBuf,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let warned = match cli.command {
        Command::Run(args) => cmd_run(args)?,
        Command::Analyze(args) => cmd_analyze(args)?,
        Command::Design(args) => cmd_design(args)?,
        Command::Model(args) => cmd_model(args)?,
        Command::Classify(args) => cmd_classify(args)?,
        Command::Validate(args) => cmd_validate(args)?,
        Command::Synth(args) => cmd_synth(args)?,
        Command::Fmt(args) => cmd_fmt(args)?,
    };
    Ok(ExitCode::from(if warned { 2 } else { 0 }))
}

fn parse_param_values(pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("--param expects NAME=VALUE, got `{pair}`"))?;
        let v: f64 = value
            .parse()
            .with_context(|| format!("bad value in --param {pair}"))?;
        map.insert(name.to_string(), v);
    }
    Ok(map)
}

fn parse_value_grids(pairs: &[String]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (name, list) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("--values expects NAME=V1,V2,..., got `{pair}`"))?;
        let values: Vec<f64> = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .with_context(|| format!("bad value `{v}` in --values {pair}"))
            })
            .collect::<Result<_>>()?;
        map.insert(name.to_string(), values);
    }
    Ok(map)
}

fn load_db(path: &Option<PathBuf>) -> Result<LibraryDB> {
    match path {
        None => Ok(LibraryDB::mpi_default()),
        Some(p) => LibraryDB::load(p).with_context(|| format!("loading {}", p.display())),
    }
}

fn load_program(path: &Path) -> Result<Program> {
    let src = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    parse(&src).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Parse, validate, and run: the shared front half of program commands.
/// The returned flag is true when validation or tracing warned.
fn checked_run(args: &ProgramArgs) -> Result<(Program, LibraryDB, TraceReport, bool)> {
    let program = load_program(&args.program)?;
    let db = load_db(&args.db)?;
    let report = validate(&program, &db);
    for w in &report.warnings {
        eprintln!("warning: {}: {}", w.span, w.message);
    }
    if !report.is_ok() {
        for e in &report.errors {
            eprintln!("error: {}: {}", e.span, e.message);
        }
        bail!("{} validation error(s)", report.errors.len());
    }
    let params = parse_param_values(&args.params)?;
    let mut opts = RunOptions::default();
    opts.implicit_flows = !args.no_implicit_flows;
    if let Some(guard) = args.loop_guard {
        opts.loop_guard = guard;
    }
    let trace = run(&program, &db, &params, &opts)?;
    let warned = !report.warnings.is_empty() || report_warnings(&trace.warnings);
    Ok((program, db, trace, warned))
}

fn write_json<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display())),
    }
}

fn report_warnings(warnings: &[String]) -> bool {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    !warnings.is_empty()
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let (_, _, trace, warned) = checked_run(&args.program)?;
    write_json(&trace, &args.out)?;
    Ok(warned)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<bool> {
    let (program, db, trace, run_warned) = checked_run(&args.program)?;
    let validation = validate(&program, &db);
    let volume = compose_volume(&program, &trace, &validation.constant_loops);
    let deps = classify_dependencies(&trace, &volume);
    // The dependency report repeats the trace warnings; print only new ones.
    let extra: Vec<String> = deps
        .warnings
        .iter()
        .filter(|w| !trace.warnings.contains(w))
        .cloned()
        .collect();
    let mut warned = report_warnings(&extra) || run_warned;
    if let Some(bounds_path) = &args.bounds_out {
        let bounds = upper_bound_check(&program, &trace);
        if !bounds.all_ok {
            eprintln!("warning: a measured block count exceeds its composed volume bound");
            warned = true;
        }
        write_json(&bounds, &Some(bounds_path.clone()))?;
    }
    write_json(&deps, &args.out)?;
    Ok(warned)
}

fn load_deps(path: &Path) -> Result<DependencyReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_design(args: DesignArgs) -> Result<bool> {
    let deps = load_deps(&args.deps)?;
    let grids = parse_value_grids(&args.values)?;
    let design = ptl_core::experiment::design(&deps.groups, &grids)?;
    eprintln!(
        "{} configs (full factorial would be {})",
        design.n_configs, design.full_factorial_size
    );
    write_json(&design, &args.out)?;
    Ok(false)
}

fn load_measurements(path: &Path) -> Result<(MeasurementSet, bool)> {
    let (set, warnings) =
        MeasurementSet::from_csv_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((set, report_warnings(&warnings)))
}

fn resolve_target(set: &MeasurementSet, function: &str, callpath: &str) -> Result<TargetKey> {
    let call_path = CallPath::parse(callpath)
        .ok_or_else(|| anyhow!("bad --callpath `{callpath}` (expected slash-joined ids)"))?;
    let target = (function.to_string(), call_path);
    if set.configs(&target).is_empty() {
        let known: Vec<String> = set
            .targets()
            .iter()
            .map(|(f, cp)| {
                if cp.is_root() {
                    f.clone()
                } else {
                    format!("{f}@{cp}")
                }
            })
            .collect();
        bail!(
            "no measurements for `{function}` at callpath `{callpath}`; measured targets: {}",
            known.join(", ")
        );
    }
    Ok(target)
}

#[derive(serde::Serialize)]
struct ModelBundle {
    schema_version: u32,
    function: String,
    callpath: String,
    n_configs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cov: Option<CovReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    guided: Option<PerfModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blackbox: Option<PerfModel>,
}

fn varied_params(set: &MeasurementSet, target: &TargetKey) -> Vec<String> {
    let points = set.data_points(target);
    set.params
        .iter()
        .filter(|p| {
            let mut values: Vec<f64> = points
                .iter()
                .filter_map(|pt| pt.config.get(*p).copied())
                .collect();
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| a.total_cmp(b).is_eq());
            values.len() >= 2
        })
        .cloned()
        .collect()
}

fn cmd_model(args: ModelArgs) -> Result<bool> {
    let (mut set, mut warned) = load_measurements(&args.measurements)?;
    let mut cov_report = None;
    if let Some(threshold) = args.cov_threshold {
        let (filtered, report) = cov_filter(&set, threshold);
        if !report.violations.is_empty() {
            eprintln!(
                "warning: dropped {} configuration(s) with repetition CoV above {threshold}",
                report.violations.len()
            );
            warned = true;
        }
        cov_report = Some(report);
        set = filtered;
    }
    let target = resolve_target(&set, &args.function, &args.callpath)?;
    let points = set.data_points(&target);
    let space = SearchSpace {
        max_terms: args.max_terms,
        ..SearchSpace::default()
    };

    let want_guided = matches!(args.mode.as_str(), "guided" | "both");
    let want_blackbox = matches!(args.mode.as_str(), "blackbox" | "both");
    if !want_guided && !want_blackbox {
        bail!("--mode must be guided, blackbox, or both (got `{}`)", args.mode);
    }
    let guided = if want_guided {
        let deps_path = args
            .deps
            .as_ref()
            .ok_or_else(|| anyhow!("--mode {} requires --deps", args.mode))?;
        let deps = load_deps(deps_path)?;
        let groups: Vec<Vec<String>> = deps.groups.iter().map(|g| g.params.clone()).collect();
        Some(select_guided(&deps.runtime_params, &groups, &space, &points))
    } else {
        None
    };
    let blackbox = if want_blackbox {
        let params = varied_params(&set, &target);
        Some(select_blackbox(&params, &space, &points))
    } else {
        None
    };

    for model in [&guided, &blackbox].into_iter().flatten() {
        eprintln!("{}: {}", model_mode_name(model), model.formula);
    }
    let bundle = ModelBundle {
        schema_version: 1,
        function: args.function.clone(),
        callpath: args.callpath.clone(),
        n_configs: points.len(),
        cov: cov_report,
        guided,
        blackbox,
    };
    write_json(&bundle, &args.out)?;
    Ok(warned)
}

fn model_mode_name(model: &PerfModel) -> &'static str {
    match model.mode {
        ptl_core::model::Mode::Guided => "guided",
        ptl_core::model::Mode::Blackbox => "blackbox",
    }
}

fn cmd_classify(args: ClassifyArgs) -> Result<bool> {
    let (program, db, trace, warned) = checked_run(&args.program)?;
    let report = ptl_core::experiment::classify(&program, &db, &trace);
    write_json(&report, &args.out)?;
    Ok(warned)
}

fn cmd_validate(args: ValidateArgs) -> Result<bool> {
    let (set, mut warned) = load_measurements(&args.measurements)?;
    let deps = load_deps(&args.deps)?;
    let target = resolve_target(&set, &args.function, &args.callpath)?;
    let trace: Option<TraceReport> = match &args.trace {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
    };
    let space = SearchSpace {
        max_terms: args.max_terms,
        ..SearchSpace::default()
    };
    let groups: Vec<Vec<String>> = deps.groups.iter().map(|g| g.params.clone()).collect();
    let points = set.data_points(&target);
    let model = select_guided(&deps.runtime_params, &groups, &space, &points);
    let opts = ValidityOptions {
        cov_threshold: args.cov_threshold,
        spearman_threshold: args.spearman_threshold,
        min_values: args.min_values,
        smape_threshold: args.smape_threshold,
        min_side: args.min_side,
    };
    let report = validate_experiment(
        &set,
        &target,
        &model,
        &deps.runtime_params,
        &groups,
        &space,
        trace.as_ref(),
        &opts,
    );
    if !report.ok {
        eprintln!("warning: experiment failed validity checks");
        warned = true;
    }
    if !report.branch_warnings.is_empty() {
        eprintln!(
            "warning: {} tainted branch(es) were only observed from one side",
            report.branch_warnings.len()
        );
        warned = true;
    }
    write_json(&report, &args.out)?;
    Ok(warned)
}

fn cmd_synth(args: SynthArgs) -> Result<bool> {
    let spec = CorpusSpec {
        seed: args.seed,
        n_functions: args.functions,
        constant_fraction: args.constant_fraction,
        params: args
            .params
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    };
    let corpus = generate(&spec)?;
    match &args.program_out {
        None => print!("{}", corpus.source),
        Some(path) => std::fs::write(path, &corpus.source)
            .with_context(|| format!("writing {}", path.display()))?,
    }
    if let Some(path) = &args.truth_out {
        write_json(&corpus.truths, &Some(path.clone()))?;
    }
    if let Some(csv_path) = &args.measurements_out {
        let name = args
            .measure
            .as_ref()
            .ok_or_else(|| anyhow!("--measurements-out requires --measure NAME"))?;
        let truth = corpus
            .truth(name)
            .ok_or_else(|| anyhow!("no generated function named `{name}`"))?;
        let grids = parse_value_grids(&args.values)?;
        if grids.is_empty() {
            bail!("--measurements-out requires at least one --values grid");
        }
        let configs = cross_product(&grids);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(args.seed);
        let mut set = MeasurementSet::new(grids.keys().cloned().collect());
        synth_measurements(
            &mut set,
            name,
            &CallPath::root(),
            &truth.formula,
            &configs,
            args.reps,
            args.sigma,
            None,
            &mut rng,
        )?;
        let file = std::fs::File::create(csv_path)
            .with_context(|| format!("creating {}", csv_path.display()))?;
        set.to_csv(file)?;
        eprintln!(
            "wrote {} samples for `{name}` to {}",
            configs.len() * args.reps,
            csv_path.display()
        );
    }
    Ok(false)
}

fn cross_product(grids: &BTreeMap<String, Vec<f64>>) -> Vec<BTreeMap<String, f64>> {
    let mut configs = vec![BTreeMap::new()];
    for (name, values) in grids {
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for cfg in &configs {
            for v in values {
                let mut c = cfg.clone();
                c.insert(name.clone(), *v);
                next.push(c);
            }
        }
        configs = next;
    }
    configs
}

fn cmd_fmt(args: FmtArgs) -> Result<bool> {
    let program = load_program(&args.program)?;
    print!("{}", print_program(&program));
    Ok(false)
}
