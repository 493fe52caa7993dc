use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmcf::algebra::{independence_check, rbar, rtilde_bracket, RtildeBudget, SearchBudget, SearchStatus, Verdict};
use gmcf::divergence::{ratio_profile, QuadratureSpec};
use gmcf::experiments::{builtin_scenarios, find_scenario, run_rate_experiment, run_witness_experiment, witness_sequence, Scenario, WitnessKind};
use gmcf::mle::{em_fit, FitConfig};
use gmcf::model::{sample, CovariatePrior, Dataset, ExpertPair, Family, MeasureDoc, MixingMeasure};
use gmcf::transport::{wasserstein_kappa, KappaVector};
use gmcf::Error;
use serde::Serialize;

const EXIT_INTERNAL: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_INDETERMINATE: u8 = 3;

#[derive(Parser)]
#[command(name = "gmcf", version, about = "Over-specified Gaussian mixtures of experts: fitting, transport distances and rate experiments")]
struct Cli {
    /// Worker threads (default: all cores). 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "MOE_RATES_THREADS")]
    threads: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (X, Y) pairs from a mixture and write them as CSV.
    Sample(SampleArgs),
    /// Multi-start EM fit of a k-component mixture.
    Fit(FitArgs),
    /// Generalized transportation distance between two measures.
    Dist(DistArgs),
    /// Hellinger-to-transport ratios along a witness sequence, as CSV.
    Ratio(RatioArgs),
    /// Algebraic independence of an expert pair's partial derivatives.
    Indep(IndepArgs),
    /// r_bar(s) by multi-start search.
    Rbar(RbarArgs),
    /// Bracket for r_tilde(theta, s).
    Rtilde(RtildeArgs),
    /// Convergence-rate experiment for a scenario.
    Rates(RatesArgs),
    /// Witness-sequence experiment under a smaller kappa.
    Witness(WitnessArgs),
    /// List the builtin scenarios.
    Scenarios,
}

#[derive(Args)]
struct SampleArgs {
    /// Measure JSON ({"family", "domain", "atoms"}).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariate prior JSON; defaults to uniform on [0, 1].
    #[arg(long)]
    prior: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV with header "x,y".
    #[arg(long)]
    data: PathBuf,
    /// Expert JSON ({"family", "domain"}); atoms, if present, are ignored.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    floor: f64,
    #[arg(long, default_value_t = 20)]
    starts: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    prior: Option<PathBuf>,
}

#[derive(Args)]
struct DistArgs {
    #[arg(long)]
    g: PathBuf,
    #[arg(long)]
    g0: PathBuf,
    /// Per-coordinate orders, e.g. 2,2,1.
    #[arg(long)]
    kappa: KappaVector,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindName {
    SplitSymmetric,
    CoordSplit,
    Polysol,
}

#[derive(Args)]
struct KindArgs {
    #[arg(long, value_enum)]
    kind: KindName,
    /// Perturbed coordinate for coord-split (0-based over (theta1, theta2)).
    #[arg(long, default_value_t = 0)]
    coord: usize,
    /// Mean and variance coordinates for polysol.
    #[arg(long, default_value_t = 0)]
    mean_coord: usize,
    #[arg(long)]
    var_coord: Option<usize>,
    /// Number of atoms in the polysol split; its certificate comes from the r_bar search.
    #[arg(long, default_value_t = 2)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    rbar_seed: u64,
}

#[derive(Args)]
struct RatioArgs {
    /// Builtin scenario name or a scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    kind: KindArgs,
    /// Transport orders for the denominator; defaults to the scenario's kappa.
    #[arg(long)]
    kappa: Option<KappaVector>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    n_grid: Vec<usize>,
}

#[derive(Args)]
struct WitnessArgs {
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    kind: KindArgs,
    /// Must be strictly below the scenario's kappa.
    #[arg(long)]
    kappa_prime: KappaVector,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    n_grid: Vec<usize>,
}

#[derive(Args)]
struct IndepArgs {
    #[arg(long)]
    family: Family,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta1: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta2: Vec<f64>,
    /// Covariate interval probed, as lo,hi.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,1")]
    support: Vec<f64>,
    #[arg(long, default_value_t = 60)]
    probes: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_r: Option<usize>,
}

impl SearchArgs {
    fn budget(&self) -> SearchBudget {
        let d = SearchBudget::default();
        SearchBudget {
            starts: self.starts.unwrap_or(d.starts),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            seed: self.seed,
            max_r: self.max_r.unwrap_or(d.max_r),
        }
    }
}

#[derive(Args)]
struct RbarArgs {
    #[arg(long)]
    s: usize,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct RtildeArgs {
    #[arg(long, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long)]
    s: usize,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    starts_per_combo: Option<usize>,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Per-replicate CSV; defaults to the --out path with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    result: T,
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Internal(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Run = Result<u8, Failure>;

fn emit<T: Serialize>(out: Option<&Path>, command: &str, seed: Option<u64>, result: T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(&Output { command, seed, result })?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => writeln!(io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn read_prior(path: Option<&Path>) -> Result<CovariatePrior, Failure> {
    let prior = match path {
        Some(p) => serde_json::from_str::<CovariatePrior>(&std::fs::read_to_string(p)?)?,
        None => CovariatePrior::uniform(0.0, 1.0)?,
    };
    prior.validate()?;
    Ok(prior)
}

fn load_scenario(arg: &str) -> Result<Scenario, Failure> {
    if arg.ends_with(".json") {
        let sc: Scenario = serde_json::from_str(&std::fs::read_to_string(arg)?)?;
        sc.validate()?;
        Ok(sc)
    } else {
        Ok(find_scenario(arg)?)
    }
}

/// Witness kind plus the r_bar certificate a polysol split needs.
fn resolve_kind(sc: &Scenario, k: &KindArgs) -> Result<(WitnessKind, Option<gmcf::algebra::Certificate>), Failure> {
    Ok(match k.kind {
        KindName::SplitSymmetric => (WitnessKind::SplitSymmetric, None),
        KindName::CoordSplit => (WitnessKind::CoordSplit { coord: k.coord }, None),
        KindName::Polysol => {
            let budget = SearchBudget { seed: k.rbar_seed, ..SearchBudget::default() };
            let rb = rbar(k.s, &budget)?;
            let cert = match (rb.status, rb.value) {
                (SearchStatus::Determined, Some(v)) => rb.certificate(v - 1).cloned(),
                _ => None,
            };
            let Some(cert) = cert else {
                return Err(Failure::Usage(format!("r_bar({}) search was indeterminate; no certificate", k.s)));
            };
            let var_coord = k.var_coord.unwrap_or(sc.pair.q1());
            (WitnessKind::Polysol { mean_coord: k.mean_coord, var_coord }, Some(cert))
        }
    })
}

fn cmd_sample(a: SampleArgs, out: Option<&Path>) -> Run {
    let (pair, g) = MeasureDoc::read(&a.model)?;
    let prior = read_prior(a.prior.as_deref())?;
    let data = sample(&pair, &prior, &g, a.n, a.seed)?;
    match out {
        Some(p) => data.write_csv(File::create(p)?)?,
        None => data.write_csv(io::stdout().lock())?,
    }
    eprintln!("sampled {} points from {} atoms of {} (seed {})", a.n, g.len(), pair.family, a.seed);
    Ok(0)
}

fn cmd_fit(a: FitArgs, out: Option<&Path>) -> Run {
    let pair: ExpertPair = serde_json::from_str(&std::fs::read_to_string(&a.model)?)?;
    let prior = read_prior(a.prior.as_deref())?;
    let data = Dataset::read_csv(File::open(&a.data)?, 0)?;
    let mut cfg = FitConfig::new(a.k);
    cfg.weight_floor = a.floor;
    cfg.n_starts = a.starts;
    cfg.max_iters = a.iters;
    cfg.seed = a.seed;
    let fit = em_fit(&pair, &prior, &data, &cfg)?;
    eprintln!(
        "k = {}: loglik {:.6} after {} iterations (best start {}, converged {})",
        a.k, fit.loglik, fit.iters, fit.best_start, fit.converged
    );
    emit(out, "fit", Some(a.seed), &fit)?;
    Ok(0)
}

#[derive(Serialize)]
struct DistOutput {
    kappa: KappaVector,
    distance: f64,
    objective: f64,
    coupling: Vec<Vec<f64>>,
}

fn cmd_dist(a: DistArgs, out: Option<&Path>) -> Run {
    let (pa, g) = MeasureDoc::read(&a.g)?;
    let (pb, g0) = MeasureDoc::read(&a.g0)?;
    if pa.family != pb.family {
        return Err(Failure::Usage(format!("measures use different families ({} vs {})", pa.family, pb.family)));
    }
    let t = wasserstein_kappa(&a.kappa, &g, &g0)?;
    eprintln!("W_kappa[{}] = {:.10}", a.kappa, t.distance);
    let res = DistOutput { kappa: a.kappa, distance: t.distance, objective: t.objective, coupling: t.coupling.q };
    emit(out, "dist", None, res)?;
    Ok(0)
}

fn cmd_ratio(a: RatioArgs, out: Option<&Path>) -> Run {
    let sc = load_scenario(&a.scenario)?;
    let (kind, cert) = resolve_kind(&sc, &a.kind)?;
    let kappa = a.kappa.unwrap_or_else(|| sc.kappa.clone());
    let seq: Vec<MixingMeasure> = a
        .n_grid
        .iter()
        .map(|&n| witness_sequence(&kind, n, &sc.pair, &sc.g0, cert.as_ref()))
        .collect::<gmcf::Result<_>>()?;
    let profile = ratio_profile(&sc.pair, &sc.prior, &seq, &sc.g0, &kappa, &QuadratureSpec::default())?;
    let mut text = String::from("n,h,w_kappa,ratio\n");
    for (n, p) in a.n_grid.iter().zip(&profile) {
        let ratio = p.ratio.map(|r| r.to_string()).unwrap_or_default();
        text.push_str(&format!("{n},{},{},{ratio}\n", p.h, p.w_kappa));
    }
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    eprintln!("{} ratio profile under kappa = {kappa} over {} points", sc.name, profile.len());
    Ok(0)
}

fn cmd_indep(a: IndepArgs, out: Option<&Path>) -> Run {
    let [lo, hi] = a.support[..] else {
        return Err(Failure::Usage("--support takes exactly two values lo,hi".into()));
    };
    let pair = ExpertPair::with_default_domain(a.family);
    let rep = independence_check(&pair, &a.theta1, &a.theta2, (lo, hi), a.probes, a.tol, a.seed)?;
    let verdict = match rep.verdict {
        Verdict::Independent => "independent",
        Verdict::Dependent => "dependent",
    };
    eprintln!("{}: {verdict} ({} witnesses)", a.family, rep.witnesses.len());
    emit(out, "indep", Some(a.seed), &rep)?;
    Ok(0)
}

fn cmd_rbar(a: RbarArgs, out: Option<&Path>) -> Run {
    let budget = a.search.budget();
    let res = rbar(a.s, &budget)?;
    match res.value {
        Some(v) => eprintln!("r_bar({}) = {v} ({:?})", a.s, res.status),
        None => eprintln!("r_bar({}) undetermined within max_r = {}", a.s, budget.max_r),
    }
    emit(out, "rbar", Some(budget.seed), &res)?;
    Ok(if res.status == SearchStatus::Determined { 0 } else { EXIT_INDETERMINATE })
}

fn cmd_rtilde(a: RtildeArgs, out: Option<&Path>) -> Run {
    let d = RtildeBudget::default();
    let budget = RtildeBudget {
        starts_per_combo: a.starts_per_combo.unwrap_or(d.starts_per_combo),
        max_iters: a.search.max_iters.unwrap_or(d.max_iters),
        seed: a.search.seed,
        rbar: a.search.budget(),
        ..d
    };
    let res = rtilde_bracket(a.theta, a.s, &budget, None)?;
    eprintln!("{} <= r_tilde({}, {}) <= {} ({:?})", res.lower, a.theta, a.s, res.upper, res.upper_status);
    emit(out, "rtilde", Some(budget.seed), &res)?;
    Ok(if res.upper_status == SearchStatus::Determined { 0 } else { EXIT_INDETERMINATE })
}

fn cmd_rates(a: RatesArgs, out: Option<&Path>) -> Run {
    let mut sc = load_scenario(&a.scenario)?;
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if let Some(r) = a.replicates {
        sc.replicates = r;
    }
    if let Some(g) = a.n_grid {
        sc.n_grid = g;
    }
    if let Some(s) = a.starts {
        sc.fit.n_starts = s;
    }
    if let Some(i) = a.iters {
        sc.fit.max_iters = i;
    }
    let report = run_rate_experiment(&sc)?;
    if let Some(path) = a.csv.or_else(|| out.map(|p| p.with_extension("csv"))) {
        report.write_csv(File::create(path)?)?;
    }
    match &report.slope {
        Some(s) => eprintln!("{}: slope of median W_kappa {:.3} (SE {:.3})", sc.name, s.slope, s.std_error),
        None => eprintln!("{}: no slope ({})", sc.name, report.flags.join(", ")),
    }
    emit(out, "rates", Some(sc.seed), &report)?;
    Ok(0)
}

fn cmd_witness(a: WitnessArgs, out: Option<&Path>) -> Run {
    let sc = load_scenario(&a.scenario)?;
    let (kind, cert) = resolve_kind(&sc, &a.kind)?;
    let rep = run_witness_experiment(&sc, &kind, &a.kappa_prime, &a.n_grid, cert.as_ref(), &QuadratureSpec::default())?;
    eprintln!("{}: monotone decreasing = {}", sc.name, rep.monotone_decreasing);
    emit(out, "witness", None, &rep)?;
    Ok(0)
}

fn cmd_scenarios(out: Option<&Path>) -> Run {
    let all = builtin_scenarios();
    for sc in &all {
        eprintln!("{:<18} kappa = ({})  {}", sc.name, sc.kappa, sc.description);
    }
    emit(out, "scenarios", None, &all)?;
    Ok(0)
}

fn run(cli: Cli) -> Run {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let out = cli.out.as_deref();
    match cli.cmd {
        Command::Sample(a) => cmd_sample(a, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Dist(a) => cmd_dist(a, out),
        Command::Ratio(a) => cmd_ratio(a, out),
        Command::Indep(a) => cmd_indep(a, out),
        Command::Rbar(a) => cmd_rbar(a, out),
        Command::Rtilde(a) => cmd_rtilde(a, out),
        Command::Rates(a) => cmd_rates(a, out),
        Command::Witness(a) => cmd_witness(a, out),
        Command::Scenarios => cmd_scenarios(out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(Failure::Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
