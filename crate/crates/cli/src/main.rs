mod play;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use duopoly_core::analysis::{analyze, DEFAULT_ANCHOR_EPS};
use duopoly_core::equilibrium::TieQuantityRule;
use duopoly_core::oracle::{verify_all, verify_params, VerifyReport};
use duopoly_core::simulation::{run_session, AgentPolicy, SessionLog};
use duopoly_core::table::prediction_table;
use duopoly_core::{Equilibrium, GameParams, NeSummary, Treatment, TreatmentLabel};
use serde::Serialize;

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_VERIFY: u8 = 4;
const OUT_DIR_ENV: &str = "DUOPOLY_OUT_DIR";

#[derive(Parser)]
#[command(name = "duopoly", version, about = "Price-then-inventory duopoly lab: equilibrium, oracles, simulation, analysis and live sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the equilibrium threshold, value and price quartiles.
    Solve(SolveArgs),
    /// Print the piecewise prediction table for the four treatments.
    Table(TableArgs),
    /// Run the brute-force oracle suite; exits 4 when a check fails.
    Verify(VerifyArgs),
    /// Simulate a session of bots and summarise it.
    Simulate(SimulateArgs),
    /// Ingest a session log and report price, quantity and pull-to-center statistics.
    Analyze(AnalyzeArgs),
    /// Host the live-session HTTP service.
    Serve(ServeArgs),
    /// Take a human seat in a live session from the terminal.
    Play(play::PlayArgs),
}

#[derive(Args, Clone)]
struct TreatmentArgs {
    /// Treatment label: HM_LU, HM_HU, LM_LU or LM_HU.
    #[arg(long, short)]
    treatment: Option<String>,
    /// Parameter file of key=value lines (c, r, d_H, d_L, x, price_step, q_cap).
    #[arg(long)]
    params: Option<PathBuf>,
}

impl TreatmentArgs {
    fn label(&self) -> anyhow::Result<Option<TreatmentLabel>> {
        self.treatment
            .as_deref()
            .map(|t| t.parse::<TreatmentLabel>().map_err(|e| usage(e.to_string())))
            .transpose()
    }

    fn file_params(&self) -> anyhow::Result<Option<GameParams>> {
        let Some(path) = &self.params else { return Ok(None) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(GameParams::parse_config(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?))
    }

    /// A display name and parameters; a file wins over a label.
    fn resolve(&self) -> anyhow::Result<(String, GameParams)> {
        if let Some(params) = self.file_params()? {
            let name = self.params.as_ref().and_then(|p| p.file_stem()).map_or("custom".into(), |s| s.to_string_lossy().into_owned());
            return Ok((name, params));
        }
        let label = self.label()?.ok_or_else(|| usage("give --treatment or --params"))?;
        Ok((label.to_string(), Treatment::preset(label).params))
    }

    /// A labelled treatment; a parameter file may only change the grid step
    /// or order cap.
    fn treatment(&self) -> anyhow::Result<Treatment> {
        let label = self.label()?.ok_or_else(|| usage("--treatment is required"))?;
        match self.file_params()? {
            Some(params) => Treatment::new(label, params).map_err(|e| usage(e.to_string())),
            None => Ok(Treatment::preset(label)),
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Write a machine-readable copy here. Relative paths land under $DUOPOLY_OUT_DIR when it is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    treatment: TreatmentArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Tsv,
}

#[derive(Args)]
struct TableArgs {
    /// Format written by --out; stdout is always the text table.
    #[arg(long, value_enum, default_value = "text")]
    format: TableFormat,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Check all four treatments (the default when nothing else is chosen).
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    treatment: TreatmentArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    treatment: TreatmentArgs,
    #[arg(long, default_value_t = 24)]
    subjects: usize,
    #[arg(long, default_value_t = 50)]
    rounds: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seat policy, repeated to cycle over seats: equilibrium, focal:PHI,
    /// ptc:LAMBDA[:JITTER], directional:UP:DOWN, or a JSON object.
    #[arg(long = "policy", value_name = "POLICY")]
    policies: Vec<String>,
    /// Directory for the CSV and JSON logs.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Session log, CSV or JSON (by extension).
    log: PathBuf,
    /// Parameter file overriding the preset named in the log.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Orders within this many units of the anchor are left out of the pull-to-center ratio.
    #[arg(long, default_value_t = DEFAULT_ANCHOR_EPS)]
    anchor_eps: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory receiving finished session logs.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
}

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

#[derive(Debug)]
struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if cause.is::<VerificationFailed>() {
            return EXIT_VERIFY;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(duopoly_core::Error::Io(_)) = cause.downcast_ref::<duopoly_core::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Solve(args) => solve(args),
        Command::Table(args) => table(args),
        Command::Verify(args) => verify(args),
        Command::Simulate(args) => simulate(args),
        Command::Analyze(args) => analyze_cmd(args),
        Command::Serve(args) => serve(args),
        Command::Play(args) => play::run(args),
    }
}

fn out_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Refuses to clobber an existing file unless forced.
fn write_new(path: &Path, contents: &str, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        return Err(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists; pass --force to overwrite", path.display()),
        )
        .into());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_out(out: &OutArgs, contents: impl FnOnce() -> anyhow::Result<String>) -> anyhow::Result<()> {
    if let Some(path) = &out.out {
        let path = out_path(path);
        write_new(&path, &contents()?, out.force)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    name: String,
    params: GameParams,
    summary: NeSummary,
    tie_boundaries: (f64, f64),
}

fn solve(args: SolveArgs) -> anyhow::Result<()> {
    let (name, params) = args.treatment.resolve()?;
    let eq = Equilibrium::solve(&params)?;
    let s = eq.summary()?;
    let tie = TieQuantityRule::new(&params);
    let mut text = String::new();
    let _ = writeln!(text, "{name}: c={} r={} d_H={} d_L={} x={}", params.cost, params.reserve, params.demand_high, params.demand_low, params.half_width);
    let _ = writeln!(text, "  threshold price     {:.5}", s.p_tilde);
    let _ = writeln!(text, "  first grid price    {}", s.grid_support_start);
    let _ = writeln!(text, "  equilibrium value   {:.4}", s.value);
    let _ = writeln!(text, "  price quartiles     {:.3} / {:.3} / {:.3}", s.q1, s.median, s.q3);
    let _ = writeln!(text, "  price IQR           {:.3}", s.iqr);
    let _ = writeln!(text, "  tie rule breaks     {:.4}, {:.4}", tie.lower_boundary, tie.upper_boundary);
    print!("{text}");
    write_out(&args.out, || {
        let out = SolveOutput {
            name,
            params,
            summary: s,
            tie_boundaries: (tie.lower_boundary, tie.upper_boundary),
        };
        Ok(serde_json::to_string_pretty(&out)? + "\n")
    })
}

fn table(args: TableArgs) -> anyhow::Result<()> {
    let table = prediction_table(&Treatment::all())?;
    print!("{}", table.render());
    write_out(&args.out, || {
        Ok(match args.format {
            TableFormat::Text => table.render(),
            TableFormat::Tsv => table.probe_tsv(),
        })
    })
}

fn verify(args: VerifyArgs) -> anyhow::Result<()> {
    let chosen = args.treatment.treatment.is_some() || args.treatment.params.is_some();
    let report = if args.all || !chosen {
        verify_all(&Treatment::all())?
    } else {
        let (name, params) = args.treatment.resolve()?;
        VerifyReport {
            rows: vec![verify_params(&name, &params)?],
        }
    };
    print!("{}", report.render());
    write_out(&args.out, || Ok(serde_json::to_string_pretty(&report)? + "\n"))?;
    if report.passed() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(VerificationFailed.into())
    }
}

fn parse_policy(spec: &str) -> anyhow::Result<AgentPolicy> {
    let spec = spec.trim();
    if spec.starts_with('{') {
        return serde_json::from_str(spec).map_err(|e| usage(format!("policy {spec:?}: {e}")));
    }
    let mut parts = spec.split(':');
    let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
    let nums: Vec<f64> = parts
        .map(|p| p.trim().parse::<f64>().map_err(|_| usage(format!("policy {spec:?}: {p:?} is not a number"))))
        .collect::<anyhow::Result<_>>()?;
    let policy = match (kind.as_str(), nums.as_slice()) {
        ("equilibrium" | "ne", []) => AgentPolicy::default(),
        ("focal", [phi]) => AgentPolicy::Focal {
            phi: *phi,
            snap_to_grid: true,
        },
        ("ptc" | "pull-to-center", [lambda]) => AgentPolicy::PullToCenter {
            lambda: *lambda,
            jitter: 0,
            snap_to_grid: true,
        },
        ("ptc" | "pull-to-center", [lambda, jitter]) if *jitter >= 0.0 && jitter.fract() == 0.0 => {
            AgentPolicy::PullToCenter {
                lambda: *lambda,
                jitter: *jitter as u32,
                snap_to_grid: true,
            }
        }
        ("directional", [up, down]) => AgentPolicy::Directional {
            up: *up,
            down: *down,
            initial: None,
        },
        _ => return Err(usage(format!("unrecognised policy {spec:?}"))),
    };
    policy.validate().map_err(|e| usage(format!("policy {spec:?}: {e}")))?;
    Ok(policy)
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let treatment = args.treatment.treatment()?;
    let cycle = if args.policies.is_empty() {
        vec![AgentPolicy::default()]
    } else {
        args.policies.iter().map(|p| parse_policy(p)).collect::<anyhow::Result<Vec<_>>>()?
    };
    if args.subjects == 0 || !args.subjects.is_multiple_of(4) {
        return Err(usage(format!("--subjects must be a positive multiple of 4, got {}", args.subjects)));
    }
    let seats: Vec<AgentPolicy> = cycle.iter().cycle().take(args.subjects).cloned().collect();
    let log = run_session(treatment, seats, args.rounds, args.seed)?;

    let eq = Equilibrium::solve(&treatment.params)?;
    let n = log.records.len() as f64;
    let mean_price = log.records.iter().map(|r| r.price).sum::<f64>() / n;
    let mean_profit = log.records.iter().map(|r| r.profit).sum::<f64>() / n;
    println!(
        "{} seed {}: {} subjects x {} rounds, {} groups",
        treatment.label,
        args.seed,
        args.subjects,
        args.rounds,
        log.groups.len()
    );
    println!("  mean price    {mean_price:.3}");
    println!("  mean profit   {mean_profit:.3}  (equilibrium value {:.3})", eq.value);

    if let Some(dir) = &args.out {
        let stem = format!("{}_seed{}", treatment.label, args.seed);
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        write_new(&csv, &log.to_csv_string()?, args.force)?;
        write_new(&json, &(log.to_json()? + "\n"), args.force)?;
        eprintln!("wrote {} and {}", csv.display(), json.display());
    }
    Ok(())
}

fn load_log(path: &Path, params: Option<GameParams>) -> anyhow::Result<SessionLog> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut log = SessionLog::from_json(&text)?;
        if let Some(p) = params {
            log.treatment = Treatment::new(log.treatment.label, p)?;
            log.validate()?;
        }
        Ok(log)
    } else {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(SessionLog::read_csv(file, params).with_context(|| format!("ingesting {}", path.display()))?)
    }
}

fn analyze_cmd(args: AnalyzeArgs) -> anyhow::Result<()> {
    if args.anchor_eps.is_nan() || args.anchor_eps < 0.0 {
        bail!(usage(format!("--anchor-eps must be non-negative, got {}", args.anchor_eps)));
    }
    let params = match &args.params {
        Some(path) => Some(GameParams::load_config(path).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    let log = load_log(&args.log, params)?;
    let report = analyze(&log, args.anchor_eps)?;
    print!("{}", report.render());
    write_out(&args.out, || Ok(serde_json::to_string_pretty(&report)? + "\n"))
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        if let Some(dir) = &args.out {
            println!("finished sessions go to {}", dir.display());
        }
        let state = duopoly_service::AppState::new(args.out.clone());
        duopoly_service::serve(listener, state, duopoly_service::ctrl_c())
            .await
            .map_err(|e| anyhow!(e))
    })
}
