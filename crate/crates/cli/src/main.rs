mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cbheight_core::exploration::height_trajectory;
use cbheight_core::verify::{MonteCarloReport, Suite, VerifyError};
use cbheight_core::{sample_path, simulate_cb};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use config::{ConfigError, Overrides, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "cbheight", version, about = "Height processes and Ray-Knight checks for CB-processes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `harness.output_dir`, then `.`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo replicas per check.
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mechanism utilities.
    Mechanism {
        #[command(subcommand)]
        action: MechanismAction,
    },
    /// Simulate one path and write it as CSV with a JSON sidecar.
    Simulate { kind: Kind },
    /// Run a verification suite and write its report.
    Verify { suite: String },
}

#[derive(Subcommand)]
enum MechanismAction {
    /// Print ψ on a grid, Grey's verdict and a v_t table as JSON.
    Info,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Levy,
    Cb,
    Height,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Levy => "levy",
            Kind::Cb => "cb",
            Kind::Height => "height",
        }
    }
}

enum Failure {
    Config(String),
    Precondition(String),
    Check(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Precondition { .. } => Failure::Precondition(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (EXIT_CONFIG, m),
                Failure::Precondition(m) => (EXIT_PRECONDITION, m),
                Failure::Check(m) => (EXIT_CHECK, m),
                Failure::Io(m) => (1, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let path = c.config.as_deref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path, &Overrides { seed: c.seed, paths: c.paths, dt: c.dt })?;
    if let Some(n) = c.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.harness.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Mechanism { action: MechanismAction::Info } => mechanism_info(&cfg),
        Command::Simulate { kind } => simulate(&cfg, kind, &out),
        Command::Verify { suite } => verify(&cfg, &suite, &out),
    }
}

fn mechanism_info(cfg: &RunConfig) -> Result<(), Failure> {
    let m = &cfg.mechanism;
    let lambdas = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0];
    let times = [0.25, 0.5, 1.0, 2.0, 4.0];
    let err = |e: cbheight_core::mechanism::MechanismError| Failure::Config(e.to_string());
    let mut psi = Vec::new();
    for &l in &lambdas {
        psi.push(json!({"lambda": l, "psi": m.psi(l).map_err(err)?}));
    }
    let mut v = Vec::new();
    for &t in &times {
        let mut row = Vec::new();
        for &l in &lambdas {
            row.push(m.v(t, l).map_err(err)?);
        }
        v.push(json!({"t": t, "v": row}));
    }
    let info = json!({
        "mechanism": m,
        "grey": m.grey_holds(),
        "grey_case": m.grey_case(),
        "psi": psi,
        "v_lambdas": lambdas,
        "v": v,
    });
    // a closed stdout (e.g. piped into `head`) is not an error
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&info).expect("plain JSON"));
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).expect("plain JSON");
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn simulate(cfg: &RunConfig, kind: Kind, out: &Path) -> Result<(), Failure> {
    let mech = &cfg.mechanism;
    let sim = cfg.sim_config();
    if matches!(kind, Kind::Height) && mech.beta <= 0.0 {
        return Err(Failure::Precondition(format!(
            "unsupported configuration: simulate height needs beta > 0, got {}",
            mech.beta
        )));
    }
    fs::create_dir_all(out)?;
    let name = kind.name();
    let csv = out.join(format!("{name}.csv"));
    let path_err = |e: cbheight_core::levy_path::PathError| Failure::Config(e.to_string());
    let mut files = vec![csv.clone()];
    match kind {
        Kind::Levy => {
            let path = sample_path(mech, &sim).map_err(path_err)?;
            let mut w = create(&csv)?;
            path.write_csv(&mut w)?;
            w.flush()?;
            let jumps = out.join("levy_jumps.csv");
            let mut w = create(&jumps)?;
            path.write_jumps_csv(&mut w)?;
            w.flush()?;
            files.push(jumps);
        }
        Kind::Cb => {
            let tr = simulate_cb(mech, cfg.harness.x, &sim, 0).map_err(path_err)?;
            let mut w = create(&csv)?;
            tr.write_csv(&mut w)?;
            w.flush()?;
        }
        Kind::Height => {
            let path = sample_path(mech, &sim).map_err(path_err)?;
            let h = height_trajectory(&path, mech.beta).map_err(|e| Failure::Precondition(e.to_string()))?;
            let mut w = create(&csv)?;
            h.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    let sidecar = json!({
        "kind": name,
        "seed": sim.seed,
        "sim": sim,
        "config": cfg,
        "files": files.iter().map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    write_json(&out.join(format!("{name}.json")), &sidecar)
}

fn verify(cfg: &RunConfig, suite: &str, out: &Path) -> Result<(), Failure> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::from_name(suite).ok_or_else(|| Failure::Config(format!("unknown suite `{suite}`")))?]
    };
    fs::create_dir_all(out)?;
    let file = out.join(format!("report-{suite}.json"));
    let mech = &cfg.mechanism;
    let sim = cfg.sim_config();

    for s in &suites {
        if let Err(e) = s.precondition(mech, &cfg.harness) {
            write_json(&file, &json!({"suite": suite, "pass": false, "error": e.to_string(), "reports": []}))?;
            return Err(e.into());
        }
    }

    let mut reports: Vec<MonteCarloReport> = Vec::new();
    for s in &suites {
        let t0 = Instant::now();
        let r = s.run(mech, &sim, &cfg.harness)?;
        eprintln!(
            "{:<14} {}  ({} cells, {:.1}s)",
            s.name(),
            if r.pass { "PASS" } else { "FAIL" },
            r.cells.len(),
            t0.elapsed().as_secs_f64()
        );
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    write_json(&file, &json!({"suite": suite, "pass": pass, "reports": reports}))?;
    if pass {
        Ok(())
    } else {
        let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}
