use clap::{Parser, Subcommand};
use endonav_harness::report::compute_report;
use endonav_harness::run::run_scenario;
use endonav_harness::scenario::Scenario;
use endonav_harness::server::{bind, serve, ServeOptions};
use endonav_harness::study::{load_mesh, run, write_outputs, StudyFile};
use endonav_harness::telemetry::parse_jsonl;
use endonav_harness::HarnessError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "endonav", version, about = "Simulated magnetic endoscope navigation")]
struct Cli {
    /// Root for run directories.
    #[arg(long, global = true, env = "ENDONAV_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in simulated time and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory (default: <out-root>/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Host an interactive session over TCP at 25 Hz.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Compare rigid and flexible reach on a mesh (`dome` for the built-in one).
    Workspace {
        mesh: String,
        sweep_config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute a report from a telemetry file and print it.
    Report { telemetry: PathBuf },
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { scenario, out, seed } => {
            let mut s = Scenario::load(&scenario)?;
            if seed.is_some() {
                s.seed = seed;
            }
            let name = if s.name.is_empty() { stem(&scenario) } else { s.name.clone() };
            let dir = out.unwrap_or_else(|| cli.out_root.join(name));
            let r = run_scenario(&s, &dir)?;
            println!("{} ticks written to {}", r.rows.len(), r.dir.display());
            if let Some(m) = r.report.direction.median {
                println!("median direction error {m:.2} deg");
            }
            Ok(())
        }
        Command::Serve { scenario, bind: addr } => {
            let s = Scenario::load(&scenario)?;
            let listener = bind(&addr)?;
            println!("listening on {}", listener.local_addr()?);
            serve(listener, &s, &ServeOptions::default())
        }
        Command::Workspace { mesh, sweep_config, out } => {
            let file = match sweep_config {
                Some(p) => StudyFile::from_toml(
                    &std::fs::read_to_string(&p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
                )?,
                None => StudyFile::default(),
            };
            let m = load_mesh(&mesh, &file.study)?;
            let result = run(&m, &file, mesh == "dome")?;
            let dir = out.unwrap_or_else(|| cli.out_root.join("workspace"));
            write_outputs(&dir, &m, &file.study, &result)?;
            println!(
                "rigid coverage {:?} %, flexible coverage {:?} %, written to {}",
                result.rigid_coverage,
                result.flexible_coverage,
                dir.display()
            );
            Ok(())
        }
        Command::Report { telemetry } => {
            let text = std::fs::read_to_string(&telemetry)?;
            let (header, rows) = parse_jsonl(&text)?;
            println!("{}", serde_json::to_string_pretty(&compute_report(&header, &rows))?);
            Ok(())
        }
    }
}
