use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use guide_core::embed::StubEmbedder;
use guide_core::gateway::RemoteConfig;
use guide_core::map::{TopoMap, DEFAULT_GEOMETRY_TOLERANCE};
use guide_core::scenario::{report_metrics, run_scenario, run_suite, Metrics, RunReport, ScenarioSpec, SuiteOptions};
use guide_core::simulator::{build_environment_store, Appearance};
use guide_core::vector_store::{StoreKind, VectorStore};
use guide_service::{AppState, GatewayMode, ServiceConfig};
use serde::Serialize;

/// Exit status for bad input or I/O failures; 1 means "ran, but something
/// did not hold".
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "guide", version, about = "Topological-map navigation agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map file tools.
    Map {
        #[command(subcommand)]
        command: MapCommand,
    },
    /// Environment store tools.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Run one scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the full run report (with transcript) as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override observation noise.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Run every scenario in a directory.
    Suite {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        reps: u32,
        #[arg(long, default_value_t = 1)]
        seed_base: u64,
        #[arg(long)]
        sigma: Option<f64>,
        /// Write metrics and per-run summaries as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Include transcripts in the JSON report.
        #[arg(long)]
        transcripts: bool,
    },
    /// Serve the session API for one map.
    Serve {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value_t = GatewayArg::Mock)]
        gateway: GatewayArg,
        #[arg(long, default_value_t = 30 * 60)]
        idle_timeout_secs: u64,
    },
}

#[derive(Subcommand)]
enum MapCommand {
    /// Parse a map and check its geometry.
    Validate {
        file: PathBuf,
        /// Relative residual tolerance.
        #[arg(long, default_value_t = DEFAULT_GEOMETRY_TOLERANCE)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Embed every node at the four cardinal headings with the stub embedder.
    Build {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GatewayArg {
    Mock,
    Remote,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Map {
            command: MapCommand::Validate { file, tolerance },
        } => validate_map(&file, tolerance),
        Command::Store {
            command: StoreCommand::Build { map, out, sigma, seed },
        } => build_store(&map, &out, sigma, seed),
        Command::Run {
            scenario,
            seed,
            report,
            sigma,
        } => run_one(&scenario, seed, sigma, report.as_deref()),
        Command::Suite {
            dir,
            reps,
            seed_base,
            sigma,
            report,
            transcripts,
        } => suite(
            &dir,
            SuiteOptions {
                repetitions: reps,
                seed_base,
                sigma,
            },
            report.as_deref(),
            transcripts,
        ),
        Command::Serve {
            map,
            store,
            port,
            gateway,
            idle_timeout_secs,
        } => serve(&map, &store, port, gateway, Duration::from_secs(idle_timeout_secs)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn validate_map(file: &Path, tolerance: f64) -> CliResult {
    let map = TopoMap::load(file)?;
    let violations = map.validate_geometry(tolerance);
    for v in &violations {
        println!(
            "{} -> {}: residual {:.3} m (edge puts it at ({}, {}), node is at ({}, {}))",
            v.from, v.to, v.residual, v.expected.x, v.expected.y, v.actual.x, v.actual.y
        );
    }
    for (from, to) in map.missing_reverse_edges() {
        println!("warning: {from} -> {to} has no reverse edge");
    }
    if violations.is_empty() {
        println!("ok: {} nodes, {} edges", map.node_count(), map.edge_count());
    } else {
        println!("{} geometry violation(s)", violations.len());
    }
    Ok(violations.is_empty())
}

fn build_store(map: &Path, out: &Path, sigma: f64, seed: u64) -> CliResult {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(format!("sigma must be finite and non-negative, got {sigma}").into());
    }
    let map = TopoMap::load(map)?;
    let store = build_environment_store(&map, &StubEmbedder::default(), &Appearance::default(), sigma, seed);
    store.persist(out)?;
    println!("wrote {} records to {}", store.len(), out.display());
    Ok(true)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Box<dyn std::error::Error>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn print_failures(r: &RunReport) {
    for f in &r.expectation_failures {
        println!("  {} (seed {}): {f}", r.name, r.seed);
    }
    if !r.expectation_failures.is_empty() {
        println!("    run ended: {}", r.reason);
    }
}

fn run_one(path: &Path, seed: u64, sigma: Option<f64>, report: Option<&Path>) -> CliResult {
    let mut spec = ScenarioSpec::load(path)?;
    if let Some(s) = sigma {
        spec = spec.with_noise(s);
    }
    let r = run_scenario(&spec, seed)?;
    if let Some(why) = &r.skipped {
        println!("{}: skipped ({why})", r.name);
    } else {
        let outcome = if r.success { "success" } else { "failure" };
        println!("{}: {outcome} ({}), route {:.1} m", r.name, r.reason, r.route_length);
        print_failures(&r);
    }
    println!("{}", report_metrics(std::slice::from_ref(&r)).0);
    if let Some(out) = report {
        write_json(out, &r)?;
    }
    Ok(r.expectation_failures.is_empty())
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    dir: &'a Path,
    repetitions: u32,
    seed_base: u64,
    sigma: Option<f64>,
    metrics: &'a Metrics,
    runs: &'a [RunReport],
}

fn suite(dir: &Path, opts: SuiteOptions, report: Option<&Path>, transcripts: bool) -> CliResult {
    let mut runs = run_suite(dir, opts)?;
    let (text, metrics) = report_metrics(&runs);
    print!("{text}");
    let failed: Vec<&RunReport> = runs.iter().filter(|r| !r.expectation_failures.is_empty()).collect();
    if !failed.is_empty() {
        println!("\n{} run(s) did not meet expectations:", failed.len());
        failed.into_iter().for_each(print_failures);
    }
    let ok = runs.iter().all(|r| r.expectation_failures.is_empty());
    if let Some(out) = report {
        if !transcripts {
            runs.iter_mut().for_each(|r| r.transcript.clear());
        }
        let doc = SuiteReport {
            dir,
            repetitions: opts.repetitions,
            seed_base: opts.seed_base,
            sigma: opts.sigma,
            metrics: &metrics,
            runs: &runs,
        };
        write_json(out, &doc)?;
    }
    Ok(ok)
}

fn serve(map_path: &Path, store_path: &Path, port: u16, gateway: GatewayArg, idle: Duration) -> CliResult {
    let map = TopoMap::load(map_path)?;
    let store = VectorStore::load(store_path, StoreKind::Environment)?;
    let id = match &map.name {
        Some(n) => n.clone(),
        None => map_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "map".into()),
    };
    let gateway = match gateway {
        GatewayArg::Mock => GatewayMode::Mock,
        GatewayArg::Remote => GatewayMode::Remote(RemoteConfig::from_env()?),
    };
    let config = ServiceConfig {
        idle_timeout: idle,
        gateway,
        ..ServiceConfig::default()
    };
    let state = Arc::new(AppState::new(config).with_map(id.clone(), map, store));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        println!("serving map `{id}` on http://{}/api/v1", listener.local_addr()?);
        guide_service::serve(listener, state).await
    })?;
    Ok(true)
}
