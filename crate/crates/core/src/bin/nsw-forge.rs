use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use nsw_forge::concentration::{run_suite, TailExperiment};
use nsw_forge::fuzz::{case_seed, run_fuzz, FuzzModule};
use nsw_forge::generators::{generate, Family, GenSpec, WeightDist};
use nsw_forge::oracle::exact_nsw;
use nsw_forge::pipeline::{pipeline_by_name, PipelineParams};
use nsw_forge::relaxation::EgParams;
use nsw_forge::{load_instance, serialize_instance, Instance, NswError, Result};

const CSV_SCHEMA: &str = "# schema=1";

#[derive(Parser)]
#[command(name = "nsw-forge", version, about = "Nash social welfare approximation for XOS and subadditive valuations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances.
    Gen(GenArgs),
    /// Run a pipeline on an instance and print the JSON report.
    Solve(SolveArgs),
    /// Brute-force optimal NSW of an instance.
    Exact(ExactArgs),
    /// Pipeline NSW against the exact optimum, one CSV row per instance.
    Ratio(RatioArgs),
    /// Invariant fuzzing of one stage.
    Fuzz(FuzzArgs),
    /// Concentration experiments on random subadditive functions.
    Conc(ConcArgs),
    /// Human-readable summary of a saved solve report.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// JSON file with a full generator spec (overrides the flags below).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "additive", value_parser = parse_family)]
    family: Family,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value = "integer", value_parser = parse_weights)]
    weights: WeightDist,
    #[arg(long, default_value_t = 3)]
    clauses: usize,
    #[arg(long, default_value_t = 0.5)]
    cap_ratio: f64,
}

impl SpecArgs {
    fn spec(&self, seed: u64) -> Result<GenSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = read(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| NswError::schema(path.display().to_string(), e.to_string()))?
            }
            None => GenSpec {
                family: self.family,
                n: self.n,
                m: self.m,
                weights: self.weights,
                clauses: self.clauses,
                cap_ratio: self.cap_ratio,
                seed,
            },
        };
        spec.seed = seed;
        Ok(spec)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of instances; more than one requires `--out` to be a directory.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long, default_value = "xos")]
    pipeline: String,
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long = "proc", default_value = "oracle")]
    procedure: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check the final matching against the constructive rematching.
    #[arg(long)]
    rematch: bool,
    /// Hand leftover items to the agents with the largest marginal gain.
    #[arg(long)]
    residual: bool,
    /// Include stage timings in the report (breaks byte-identical output).
    #[arg(long)]
    timings: bool,
}

impl ParamArgs {
    fn params(&self) -> PipelineParams {
        PipelineParams {
            eg: EgParams {
                alpha: self.alpha,
                epsilon: self.epsilon,
                ..EgParams::default()
            },
            delta: self.delta,
            d: self.d,
            procedure: self.procedure.clone(),
            seed: self.seed,
            rematch: self.rematch,
            append_residual: self.residual,
            timings: self.timings,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    instance: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatioArgs {
    /// Directory of instance JSON files; without it instances are generated.
    #[arg(long)]
    instances: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
    /// Number of generated instances.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(value_parser = parse_module)]
    module: FuzzModule,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConcArgs {
    #[arg(long, default_value = "budgeted_mixture", value_parser = parse_family)]
    family: Family,
    #[arg(long, default_value_t = 2)]
    q: u32,
    #[arg(long, default_value_t = 3)]
    k: u32,
    /// Keep probability `1/k_expect` for the expectation check.
    #[arg(long, default_value_t = 2)]
    k_expect: u32,
    /// Inclusion probability for the tail checks.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Number of random functions.
    #[arg(long, default_value_t = 20)]
    functions: usize,
    #[arg(long, default_value_t = 12)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).map_err(|e| e.to_string())
}

fn parse_weights(s: &str) -> std::result::Result<WeightDist, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown weight distribution {s:?} (uniform, integer, heavy_tailed)"))
}

fn parse_module(s: &str) -> std::result::Result<FuzzModule, String> {
    FuzzModule::parse(s).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        NswError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn load(path: &Path) -> Result<Instance> {
    load_instance(&read(path)?).map_err(|e| match e {
        NswError::Schema { path: p, message } => NswError::schema(format!("{}:{p}", path.display()), message),
        other => other,
    })
}

/// Write to `out` or stdout, with a trailing newline.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    if args.count == 1 {
        let inst = generate(&args.spec.spec(args.seed)?)?;
        return emit(args.out.as_deref(), &serialize_instance(&inst));
    }
    let dir = args
        .out
        .as_ref()
        .ok_or_else(|| NswError::InvalidArgument("--count > 1 needs --out DIR".into()))?;
    fs::create_dir_all(dir)?;
    for k in 0..args.count {
        let inst = generate(&args.spec.spec(case_seed(args.seed, k))?)?;
        fs::write(dir.join(format!("inst_{k:04}.json")), serialize_instance(&inst) + "\n")?;
    }
    eprintln!("wrote {} instances to {}", args.count, dir.display());
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let inst = load(&args.instance)?;
    let pipeline = pipeline_by_name(&args.params.pipeline)?;
    let report = pipeline.run(&inst, &args.params.params())?;
    eprintln!("{}: nsw = {:.6}", pipeline.name(), report.nsw);
    emit(args.out.as_deref(), &pretty(&report))
}

fn cmd_exact(args: &ExactArgs) -> Result<()> {
    let inst = load(&args.instance)?;
    let exact = exact_nsw(&inst)?;
    let doc = json!({
        "nsw": exact.optimum,
        "allocation": exact.witness,
        "bundles": nsw_forge::model::named_bundles(&exact.witness, &inst),
        "nodes": exact.nodes,
    });
    emit(args.out.as_deref(), &pretty(&doc))
}

fn ratio_inputs(args: &RatioArgs) -> Result<Vec<(String, Instance)>> {
    match &args.instances {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(NswError::InvalidArgument(format!(
                    "no instance files in {}",
                    dir.display()
                )));
            }
            paths
                .iter()
                .map(|p| {
                    let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    load(p).map(|inst| (name, inst))
                })
                .collect()
        }
        None => (0..args.trials)
            .map(|k| {
                let spec = args.spec.spec(case_seed(args.params.seed, k))?;
                Ok((format!("gen-{k:04}"), generate(&spec)?))
            })
            .collect(),
    }
}

fn cmd_ratio(args: &RatioArgs) -> Result<()> {
    let inputs = ratio_inputs(args)?;
    if inputs.is_empty() {
        return Err(NswError::InvalidArgument("no instances to compare".into()));
    }
    let pipeline = pipeline_by_name(&args.params.pipeline)?;
    let params = args.params.params();
    let rows: Vec<(String, f64, f64, f64)> = inputs
        .par_iter()
        .map(|(name, inst)| {
            let report = pipeline.run(inst, &params)?;
            let exact = exact_nsw(inst)?.optimum;
            let ratio = if exact > 0.0 { report.nsw / exact } else { 1.0 };
            Ok((name.clone(), report.nsw, exact, ratio))
        })
        .collect::<Result<_>>()?;
    let mut csv = format!("{CSV_SCHEMA}\ninstance,nsw,exact,ratio");
    for (name, nsw, exact, ratio) in &rows {
        csv.push_str(&format!("\n{name},{nsw},{exact},{ratio}"));
    }
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.3).collect();
    ratios.sort_by(f64::total_cmp);
    eprintln!(
        "{} instances: min ratio {:.6}, median ratio {:.6}",
        ratios.len(),
        ratios[0],
        nsw_forge::concentration::lower_median(&ratios)
    );
    emit(args.out.as_deref(), &csv)
}

fn cmd_fuzz(args: &FuzzArgs) -> Result<bool> {
    if args.count == 0 {
        eprintln!("warning: count = 0, nothing to check (vacuous pass)");
    }
    let report = run_fuzz(args.module, args.count, args.seed);
    for f in &report.failures {
        eprintln!("FAIL case {} seed {}: {}", f.case, f.seed, f.message);
    }
    eprintln!(
        "fuzz {}: {} cases, {} checks, {} failures",
        args.module.name(),
        report.count,
        report.checked,
        report.failures.len()
    );
    let doc = json!({
        "module": report.module,
        "count": report.count,
        "seed": report.seed,
        "checked": report.checked,
        "passed": report.passed(),
        "failures": report.failures,
    });
    emit(args.out.as_deref(), &pretty(&doc))?;
    Ok(report.passed())
}

fn cmd_conc(args: &ConcArgs) -> Result<bool> {
    if args.trials < 1000 {
        eprintln!("warning: {} trials is low-power; slack will be wide", args.trials);
    }
    let mut csv = format!("{CSV_SCHEMA}\nexperiment,family,q,k,check,empirical,bound,slack,pass");
    let mut all_pass = true;
    for e in 0..args.functions {
        let spec = GenSpec {
            family: args.family,
            n: 1,
            m: args.m,
            weights: WeightDist::Uniform,
            clauses: 3,
            cap_ratio: 0.4,
            seed: case_seed(args.seed, e),
        };
        let inst = generate(&spec)?;
        let mut exp = TailExperiment::uniform(
            inst.valuation(0).clone(),
            inst.all_items(),
            args.p,
            args.trials,
            case_seed(args.seed ^ 0x5eed, e),
        );
        exp.q = args.q;
        exp.k = args.k;
        for r in run_suite(&exp, args.k_expect) {
            all_pass &= r.pass;
            csv.push_str(&format!(
                "\n{e},{},{},{},{},{},{},{},{}",
                args.family.name(),
                args.q,
                args.k,
                r.name,
                r.empirical,
                r.bound,
                r.slack,
                r.pass
            ));
        }
    }
    eprintln!(
        "conc {}: {} functions, {}",
        args.family.name(),
        args.functions,
        if all_pass { "all checks pass" } else { "FAILURES" }
    );
    emit(args.out.as_deref(), &csv)?;
    Ok(all_pass)
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = read(&args.report)?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| NswError::schema(args.report.display().to_string(), e.to_string()))?;
    let field = |k: &str| doc.get(k).ok_or_else(|| NswError::schema(format!("$.{k}"), "missing"));
    println!("pipeline: {}", field("pipeline")?.as_str().unwrap_or("?"));
    println!("nsw:      {}", field("nsw")?);
    if let Some(rel) = doc.get("relaxation").filter(|r| !r.is_null()) {
        println!(
            "relaxation: objective {} after {} iterations (gap {}, converged {})",
            rel["objective"], rel["iterations"], rel["gap"], rel["converged"]
        );
    }
    if let Some(params) = doc.get("params") {
        println!("params:   {params}");
    }
    if let Some(bundles) = field("bundles")?.as_object() {
        for (agent, items) in bundles {
            let names: Vec<&str> = items
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            println!("  {agent}: {{{}}}", names.join(", "));
        }
    }
    Ok(())
}

fn configure_threads() {
    if let Ok(v) = std::env::var("NSW_FORGE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring NSW_FORGE_THREADS={v:?}"),
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Solve(a) => cmd_solve(a).map(|_| true),
        Command::Exact(a) => cmd_exact(a).map(|_| true),
        Command::Ratio(a) => cmd_ratio(a).map(|_| true),
        Command::Fuzz(a) => cmd_fuzz(a),
        Command::Conc(a) => cmd_conc(a),
        Command::Report(a) => cmd_report(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
