mod config;

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddosgate_core::analyzer::parse_signatures;
use ddosgate_core::blacklist::{parse_feed, FeedLocator};
use ddosgate_core::model::serialize_trace_event;
use ddosgate_core::pipeline::{run_trace, Engine, RunError, RunMode, SandboxSink};
use ddosgate_core::trafficgen::{generate, GenError, Scenario, ScenarioName};
use ddosgate_core::waf::RuleSet;

use config::Config;

/// Layered DDoS mitigation over packet and request traces.
#[derive(Parser)]
#[command(name = "ddosgate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trace through the four defense layers.
    Run(RunArgs),
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Blacklist feed utilities.
    Blacklist {
        #[command(subcommand)]
        command: BlacklistCommand,
    },
    /// Validate a WAF ruleset file.
    Check {
        #[arg(long)]
        ruleset: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Trace file, or `-` for standard input.
    #[arg(long)]
    trace: String,
    /// Verdict log destination, or `-` for standard output.
    #[arg(long)]
    out: String,
    /// Write the stats report here.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Abort on the first malformed or out-of-order line (default).
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,
    /// Skip malformed and out-of-order lines.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Trace length in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Output file, or `-` for standard output.
    #[arg(long, default_value = "-")]
    out: String,
    /// Scenario parameter override; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Blacklist feed used by blacklist_mix.
    #[arg(long)]
    feed: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BlacklistCommand {
    /// Fetch a feed, validate it and store the normalized list.
    Fetch {
        #[arg(long, conflicts_with = "path", required_unless_present = "path")]
        url: Option<String>,
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// HTTP timeout in seconds.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
    },
}

/// Failure with its exit status: 1 for runtime errors, 2 for usage or
/// configuration errors.
#[derive(Debug)]
enum Failure {
    Runtime(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Runtime(m) | Failure::Usage(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_config(args: &RunArgs) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.apply_file(&text).map_err(usage)?;
    }
    for kv in &args.overrides {
        cfg.apply_override(kv).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn build_engine(cfg: &Config, out: &str) -> Result<Engine, Failure> {
    let mut engine_cfg = cfg.engine.clone();
    if let Some(path) = &cfg.signatures_path {
        engine_cfg.analyzer.payload_signatures =
            parse_signatures(&read_file(path)?).map_err(usage)?;
    }
    let waf = match &cfg.ruleset_path {
        Some(path) => RuleSet::parse(&read_file(path)?)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => RuleSet::default_rules(),
    };
    let sandbox_path = match (&cfg.sandbox_log_path, out) {
        (Some(p), _) => p.clone(),
        (None, "-") => return Err(usage("sandbox.log_path is required when --out is -")),
        (None, o) => PathBuf::from(format!("{o}.sandbox.jsonl")),
    };
    let sink = SandboxSink::new(create(&sandbox_path)?);
    let engine = Engine::new(engine_cfg, waf, sink).map_err(usage)?;
    Ok(match cfg.feed_locator() {
        Some(locator) => {
            let text = locator.fetch().map_err(runtime)?;
            let (initial, skipped) = parse_feed(&text);
            if !skipped.is_empty() {
                eprintln!("blacklist: skipped {} invalid line(s)", skipped.len());
            }
            engine.with_blacklist(initial, Some(Box::new(locator)))
        }
        None => engine,
    })
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args)?;
    let mode = if args.lenient {
        RunMode::Lenient
    } else {
        RunMode::Strict
    };
    let input: Box<dyn BufRead> = if args.trace == "-" {
        Box::new(BufReader::new(io::stdin().lock()))
    } else {
        let f = File::open(&args.trace).map_err(|e| runtime(format!("{}: {e}", args.trace)))?;
        Box::new(BufReader::with_capacity(1 << 16, f))
    };
    let mut engine = build_engine(&cfg, &args.out)?;
    let output: Box<dyn Write> = if args.out == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(create(Path::new(&args.out))?)
    };
    let stats = run_trace(&mut engine, input, output, mode).map_err(|e| match e {
        RunError::Io(e) => runtime(e),
        other => runtime(other),
    })?;
    if let Some(path) = &args.stats {
        let mut w = create(path)?;
        writeln!(w, "{}", stats.to_json())
            .and_then(|_| w.flush())
            .map_err(runtime)?;
    }
    let v = &stats.verdicts;
    eprintln!(
        "processed {} events: forward {}, drop_rate_limited {}, reject_blacklisted {}, sandbox {}",
        stats.events, v.forward, v.drop_rate_limited, v.reject_blacklisted, v.sandbox
    );
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let name: ScenarioName = args.scenario.parse().map_err(usage)?;
    let mut scenario = Scenario::new(name, args.seed, args.duration);
    for kv in &args.params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("expected key=value, got {kv:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("parameter {k}: invalid number {v:?}")))?;
        scenario = scenario.param(k.trim(), v);
    }
    if let Some(path) = &args.feed {
        scenario = scenario.with_feed(read_file(path)?);
    }
    let generated = generate(&scenario).map_err(|e: GenError| usage(e))?;

    let write_all = |w: &mut dyn Write| -> io::Result<()> {
        for ev in &generated.events {
            w.write_all(serialize_trace_event(ev).as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    if args.out == "-" {
        let mut w = BufWriter::new(io::stdout().lock());
        write_all(&mut w).map_err(runtime)?;
    } else {
        let mut w = create(Path::new(&args.out))?;
        write_all(&mut w).map_err(runtime)?;
        let manifest_path = format!("{}.manifest.json", args.out);
        fs::write(&manifest_path, generated.manifest.to_json() + "\n")
            .map_err(|e| runtime(format!("{manifest_path}: {e}")))?;
        eprintln!("wrote {} events to {}", generated.events.len(), args.out);
    }
    Ok(())
}

fn cmd_blacklist_fetch(
    url: Option<String>,
    path: Option<PathBuf>,
    out: PathBuf,
    timeout: f64,
) -> Result<(), Failure> {
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(usage("--timeout must be positive"));
    }
    let locator = match (url, path) {
        (Some(url), None) => FeedLocator::Url {
            url,
            timeout: std::time::Duration::from_secs_f64(timeout),
        },
        (None, Some(path)) => FeedLocator::Path(path),
        _ => return Err(usage("give exactly one of --url or --path")),
    };
    let text = locator.fetch().map_err(runtime)?;
    let (snapshot, skipped) = parse_feed(&text);
    fs::write(&out, snapshot.to_feed()).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    println!("{} entries written to {}", snapshot.len(), out.display());
    println!("{} line(s) skipped", skipped.len());
    for s in &skipped {
        println!("  line {}: {}: {}", s.line_no, s.reason.as_str(), s.text);
    }
    Ok(())
}

fn cmd_check(ruleset: PathBuf) -> Result<(), Failure> {
    let text = read_file(&ruleset)?;
    let rules = RuleSet::parse(&text).map_err(|e| usage(format!("{}: {e}", ruleset.display())))?;
    println!("{} rules", rules.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Blacklist {
            command:
                BlacklistCommand::Fetch {
                    url,
                    path,
                    out,
                    timeout,
                },
        } => cmd_blacklist_fetch(url, path, out, timeout),
        Command::Check { ruleset } => cmd_check(ruleset),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
