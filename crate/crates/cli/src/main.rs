use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mcquad_core::bandwidth::BandwidthRule;
use mcquad_core::chains::{generate, ChainConfig, ChainKind};
use mcquad_core::geo::{self, BandSpec, Normalization, OceanOptions};
use mcquad_core::integrate::{
    estimate_ks_boundary_pair, estimate_ks_pair, estimate_mc, EstimateReport, EstimatorOptions, LabeledSample,
    Method,
};
use mcquad_core::regen;
use mcquad_core::study::{self, ModelId, RateConfig, StudyConfig};
use mcquad_core::{parallel, Design, Domain, Error, KernelFamily, KernelForm, KernelSpec};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Kernel-smoothing integration from Markov-chain designs.
#[derive(Debug, Parser)]
#[command(name = "mcquad", version, about)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially. Defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Base random seed.
    #[arg(long, global = true, env = "MCQUAD_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a design trajectory as CSV.
    Simulate(SimulateArgs),
    /// Estimate an integral from a CSV of design points and values.
    Estimate(EstimateArgs),
    /// Select a bandwidth for a design.
    Bandwidth(BandwidthArgs),
    /// Run the replicated estimator study (or the rate experiment).
    Bench(BenchArgs),
    /// Split-chain regeneration diagnostics.
    Regen(RegenArgs),
    /// Monthly latitude-band averages of ocean observations.
    Ocean(OceanArgs),
}

#[derive(Debug, Args, Serialize)]
struct KernelArgs {
    /// gaussian, epanechnikov, box or gauss4.
    #[arg(long, default_value = "gaussian")]
    kernel: KernelFamily,
    /// product or radial.
    #[arg(long, default_value = "product")]
    kernel_form: KernelForm,
}

impl KernelArgs {
    fn spec(&self) -> KernelSpec {
        KernelSpec::new(self.kernel, self.kernel_form)
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// iid, mh, mixture or smooth.
    #[arg(long, default_value = "mh")]
    design: ChainKind,
    #[arg(long, short = 'd', default_value_t = 1)]
    dim: usize,
    #[arg(long, short = 'n', default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda0: f64,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    /// CSV with columns x1..xd, phi and optionally pi.
    #[arg(long)]
    input: PathBuf,
    /// ks, ksc, mc, ks-boundary or ksc-boundary; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_value = "ks,ksc")]
    method: Vec<Method>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// auto (plug-in), silverman, or explicit values h or h1,h2,...
    #[arg(long, default_value = "auto")]
    bandwidth: BandwidthRule,
    /// Integration domain lo:hi,... for the boundary methods.
    #[arg(long, allow_hyphen_values = true)]
    domain: Option<Domain>,
    #[arg(long, default_value_t = 1e-12)]
    floor: f64,
    #[arg(long)]
    leave_one_out: bool,
}

#[derive(Debug, Args, Serialize)]
struct BandwidthArgs {
    /// CSV with columns x1..xd.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    /// auto (plug-in) or silverman.
    #[arg(long, default_value = "auto")]
    rule: BandwidthRule,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "m1,m2,m3")]
    models: Vec<ModelId>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "mh")]
    designs: Vec<ChainKind>,
    #[arg(long, value_delimiter = ',', default_value = "ks,ksc,mc")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value = "auto")]
    bandwidth: BandwidthRule,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    /// Include the d=3, n=2000 cells.
    #[arg(long)]
    full: bool,
    /// Results CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary CSV; defaults to summary.csv next to --out.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Run the convergence-rate experiment instead (JSON output). Uses
    /// --sizes, --replicates and --rate-c; kernel defaults to gauss4.
    #[arg(long)]
    rate: bool,
    #[arg(long, default_value_t = 0.5)]
    rate_c: f64,
}

#[derive(Debug, Args, Serialize)]
struct RegenArgs {
    #[arg(long, default_value_t = 0.5)]
    lambda0: f64,
    #[arg(long, short = 'n', default_value_t = 100_000)]
    n: usize,
    /// Return-time moment order in [1, 6].
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, short = 'd', default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    /// Small set lo:hi,...; the whole unit box when absent.
    #[arg(long)]
    small_set: Option<Domain>,
}

#[derive(Debug, Args, Serialize)]
struct OceanArgs {
    /// CSV with header date,lat,lon,sst.
    #[arg(long)]
    input: PathBuf,
    /// Preset name, lo:hi in latitude, or `all` for the seven presets.
    #[arg(long, default_value = "all", allow_hyphen_values = true)]
    band: String,
    /// Longitude range lo:hi.
    #[arg(long, allow_hyphen_values = true)]
    lon: Option<String>,
    #[arg(long)]
    year: Option<i32>,
    #[arg(long, conflicts_with = "all_months")]
    month: Option<u32>,
    #[arg(long)]
    all_months: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Degrees around the band also used for the density estimate.
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// weights (estimated band area) or area (exact rectangle area).
    #[arg(long, default_value = "weights")]
    normalize: Normalization,
    #[arg(long, default_value_t = 30)]
    min_records: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value = "auto")]
    bandwidth: BandwidthRule,
    /// Abort on the first malformed row instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            Error::InvalidArgument(_) | Error::InvalidBandwidth(_) | Error::UnsupportedChain(_) => {
                Failure::Usage(e.to_string())
            }
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = configure(&cli).and_then(|()| dispatch(&cli));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Data(m) => (EXIT_DATA, m),
                Failure::Numerical(m) => (EXIT_NUMERICAL, m),
            };
            eprintln!("mcquad: {msg}");
            ExitCode::from(code)
        }
    }
}

fn configure(cli: &Cli) -> CliResult {
    if let Some(t) = cli.threads {
        parallel::configure_threads(t).map_err(Failure::Usage)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Estimate(a) => estimate(a),
        Command::Bandwidth(a) => bandwidth(a),
        Command::Bench(a) => bench(a, cli.seed),
        Command::Regen(a) => regen_cmd(a, cli.seed),
        Command::Ocean(a) => ocean(a),
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    command: &'a str,
    seed: Option<u64>,
    args: &'a T,
}

fn echo<T: Serialize>(command: &str, seed: Option<u64>, args: &T) -> CliResult<String> {
    Ok(serde_json::to_string(&Echo { command, seed, args })?)
}

fn write_json<T: Serialize>(value: &T) -> CliResult {
    let mut w = output(None)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn chain_config(kind: ChainKind, dim: usize, seed: u64, epsilon: f64, lambda0: f64, burn_in: usize) -> ChainConfig {
    ChainConfig::new(kind, dim).seed(seed).epsilon(epsilon).lambda0(lambda0).burn_in(burn_in)
}

fn simulate(a: &SimulateArgs, seed: u64) -> CliResult {
    let cfg = chain_config(a.design, a.dim, seed, a.epsilon, a.lambda0, a.burn_in);
    let run = generate(&cfg, a.n)?;
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "# config: {}", echo("simulate", Some(seed), a)?)?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=a.dim).map(|j| format!("x{j}")).collect();
    let split = !run.split_bits.is_empty();
    if split {
        header.push("y".into());
        header.push("regen".into());
    }
    out.write_record(&header)?;
    for (i, x) in run.design.rows().enumerate() {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        if split {
            rec.push(u8::from(run.split_bits[i]).to_string());
            rec.push(u8::from(i > 0 && run.split_bits[i - 1]).to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

struct Table {
    design: Design,
    phi: Option<Vec<f64>>,
    pi: Option<Vec<f64>>,
}

/// Reads `x1..xd` plus optional `phi` and `pi` columns; `#` lines are
/// comments.
fn read_table(path: &Path) -> CliResult<Table> {
    let file = File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let mut xcols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, i)))
        .collect();
    xcols.sort_unstable();
    if xcols.is_empty() {
        return Err(Failure::Data("input has no design columns x1..xd".into()));
    }
    if xcols.iter().enumerate().any(|(j, &(k, _))| k != j + 1) {
        return Err(Failure::Data("design columns must be x1, x2, ... without gaps".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (phi_col, pi_col) = (find("phi"), find("pi"));
    let d = xcols.len();
    let mut pts = Vec::new();
    let mut phi = Vec::new();
    let mut pi = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        let num = |i: usize, name: &str| -> CliResult<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse::<f64>()
                .map_err(|_| Failure::Data(format!("line {line}: column `{name}` has non-numeric value `{s}`")))
        };
        for &(k, i) in &xcols {
            pts.push(num(i, &format!("x{k}"))?);
        }
        if let Some(i) = phi_col {
            phi.push(num(i, "phi")?);
        }
        if let Some(i) = pi_col {
            pi.push(num(i, "pi")?);
        }
    }
    if pts.is_empty() {
        return Err(Failure::Data("input has no data rows".into()));
    }
    Ok(Table {
        design: Design::new(pts, d)?,
        phi: phi_col.map(|_| phi),
        pi: pi_col.map(|_| pi),
    })
}

#[derive(Serialize)]
struct EstimateOutput {
    config: serde_json::Value,
    reports: Vec<EstimateReport>,
}

fn estimate(a: &EstimateArgs) -> CliResult {
    let table = read_table(&a.input)?;
    let phi = table.phi.ok_or_else(|| Failure::Data("input is missing the `phi` column".into()))?;
    let mut sample = LabeledSample::new(table.design, phi)?;
    let needs_pi = a.method.contains(&Method::Mc);
    if needs_pi {
        let pi = table.pi.ok_or_else(|| Failure::Data("method mc needs the `pi` column".into()))?;
        sample = sample.with_known_density(pi)?;
    }
    let kernel = a.kernel.spec();
    let opts = EstimatorOptions { density_floor: a.floor, leave_one_out: a.leave_one_out };
    let needs_h = a.method.iter().any(|m| *m != Method::Mc);
    let h = if needs_h { Some(a.bandwidth.select(&sample.design, kernel)?) } else { None };
    let boundary = a.method.iter().any(|m| matches!(m, Method::KsBoundary | Method::KscBoundary));
    let pair = match &h {
        Some(h) if a.method.iter().any(|m| matches!(m, Method::Ks | Method::Ksc)) => {
            Some(estimate_ks_pair(&sample, kernel, h, &opts)?)
        }
        _ => None,
    };
    let bpair = match (&h, boundary) {
        (Some(h), true) => {
            let domain = a
                .domain
                .as_ref()
                .ok_or_else(|| Failure::Usage("boundary methods need --domain".into()))?;
            Some(estimate_ks_boundary_pair(&sample, kernel, h, domain, &opts)?)
        }
        _ => None,
    };
    let mut reports = Vec::new();
    for m in &a.method {
        let r = match m {
            Method::Ks => pair.as_ref().map(|p| p.plain.clone()),
            Method::Ksc => pair.as_ref().map(|p| p.corrected.clone()),
            Method::KsBoundary => bpair.as_ref().map(|p| p.plain.clone()),
            Method::KscBoundary => bpair.as_ref().map(|p| p.corrected.clone()),
            Method::Mc => Some(estimate_mc(&sample)?),
        };
        reports.push(r.expect("estimate computed above"));
    }
    let config = serde_json::from_str(&echo("estimate", None, a)?)?;
    write_json(&EstimateOutput { config, reports })
}

#[derive(Serialize)]
struct BandwidthOutput {
    config: serde_json::Value,
    n: usize,
    d: usize,
    bandwidth: Vec<f64>,
    provenance: mcquad_core::Provenance,
}

fn bandwidth(a: &BandwidthArgs) -> CliResult {
    let table = read_table(&a.input)?;
    let h = a.rule.select(&table.design, a.kernel.spec())?;
    write_json(&BandwidthOutput {
        config: serde_json::from_str(&echo("bandwidth", None, a)?)?,
        n: table.design.n(),
        d: table.design.dim(),
        bandwidth: h.scales().to_vec(),
        provenance: h.provenance(),
    })
}

fn bench(a: &BenchArgs, seed: u64) -> CliResult {
    if a.rate {
        return rate(a, seed);
    }
    let cfg = StudyConfig {
        models: a.models.clone(),
        dims: a.dims.clone(),
        sizes: a.sizes.clone(),
        designs: a.designs.clone(),
        methods: a.methods.clone(),
        replicates: a.replicates,
        seed,
        kernel: a.kernel.spec(),
        bandwidth: a.bandwidth.clone(),
        epsilon: a.epsilon,
        burn_in: a.burn_in,
        full: a.full,
    };
    let rows = study::run_study(&cfg)?;
    let failed = rows.iter().filter(|r| r.failure.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} rows failed; they carry NaN estimates", rows.len());
    }
    let header = format!("config: {}", serde_json::to_string(&cfg)?);
    study::write_results(output(a.out.as_deref())?, &[header], &rows)?;

    let summary_path = a.summary.clone().or_else(|| {
        a.out.as_ref().map(|o| o.parent().unwrap_or_else(|| Path::new("")).join("summary.csv"))
    });
    if let Some(path) = summary_path {
        match study::summarize(&rows) {
            Ok(cells) => study::write_summary(File::create(&path)?, &cells)?,
            Err(e) => log::warn!("no summary written: {e}"),
        }
    }
    Ok(())
}

fn rate(a: &BenchArgs, seed: u64) -> CliResult {
    let defaults = RateConfig::default();
    let kernel = if a.kernel.kernel == KernelFamily::Gaussian && a.kernel.kernel_form == KernelForm::Product {
        defaults.kernel
    } else {
        a.kernel.spec()
    };
    let cfg = RateConfig {
        sizes: if a.sizes == [500, 1000, 2000] { defaults.sizes.clone() } else { a.sizes.clone() },
        replicates: a.replicates,
        seed,
        kernel,
        c: a.rate_c,
        epsilon: a.epsilon,
        burn_in: a.burn_in,
        model: a.models.first().copied().unwrap_or(ModelId::M1),
        ..defaults
    };
    let report = study::rate_experiment(&cfg)?;
    #[derive(Serialize)]
    struct RateOutput<'a> {
        config: &'a RateConfig,
        report: &'a study::RateReport,
    }
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &RateOutput { config: &cfg, report: &report })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn regen_cmd(a: &RegenArgs, seed: u64) -> CliResult {
    let mut cfg = chain_config(ChainKind::DoeblinMixture, a.dim, seed, 0.2, a.lambda0, a.burn_in);
    if let Some(s) = &a.small_set {
        cfg = cfg.small_set(s.clone());
    }
    let report = regen::diagnose(&cfg, a.n, a.p)?;
    write_json(&report)
}

fn parse_range(s: &str, what: &str) -> CliResult<(f64, f64)> {
    let bad = || Failure::Usage(format!("{what} must be lo:hi, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn ocean(a: &OceanArgs) -> CliResult {
    if a.month.is_some() == a.all_months {
        return Err(Failure::Usage("give exactly one of --month or --all-months".into()));
    }
    if let Some(m) = a.month {
        if !(1..=12).contains(&m) {
            return Err(Failure::Usage(format!("month must be 1..12, got {m}")));
        }
        if a.year.is_none() {
            return Err(Failure::Usage("--month needs --year".into()));
        }
    }
    let mut bands = if a.band == "all" { BandSpec::presets() } else { vec![a.band.parse::<BandSpec>()?] };
    if let Some(lon) = &a.lon {
        let (lo, hi) = parse_range(lon, "--lon")?;
        bands = bands.into_iter().map(|b| b.with_lon(lo, hi)).collect::<Result<_, _>>()?;
    }
    let report = geo::ingest(&a.input, a.strict)?;
    for w in &report.warnings {
        eprintln!("mcquad: {w}");
    }
    for s in report.skipped.iter().take(10) {
        eprintln!("mcquad: line {}: {}", s.line, s.reason);
    }
    let months: Vec<(i32, u32)> = match (a.month, a.year) {
        (Some(m), Some(y)) => vec![(y, m)],
        (_, year) => geo::months_present(&report.records)
            .into_iter()
            .filter(|(y, _)| year.is_none_or(|want| *y == want))
            .collect(),
    };
    let opts = OceanOptions {
        kernel: a.kernel.spec(),
        bandwidth: a.bandwidth.clone(),
        min_records: a.min_records,
        margin: a.margin,
        normalization: a.normalize,
        ..OceanOptions::default()
    };
    let results = geo::band_series(&report.records, &bands, &months, &opts);

    let mut w = output(a.out.as_deref())?;
    writeln!(w, "# config: {}", echo("ocean", None, a)?)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["year", "month", "band", "n", "average_c", "bandwidth", "clamped"])?;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(avg) => {
                let h: Vec<String> = avg.bandwidth.iter().map(f64::to_string).collect();
                out.write_record([
                    avg.year.to_string(),
                    avg.month.to_string(),
                    avg.band.clone(),
                    avg.n.to_string(),
                    avg.average_c.to_string(),
                    h.join(";"),
                    avg.clamped.to_string(),
                ])?;
            }
            Err(e) if a.all_months || bands.len() > 1 => eprintln!("mcquad: skipped {e}"),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    out.flush()?;
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}
