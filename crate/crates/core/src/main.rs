use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use maslov::config::{ReportFormat, RunConfig};
use maslov::report::{emit_report, run};

#[derive(Parser)]
#[command(
    name = "maslov",
    version,
    about = "Maslov indices, focal instants and index identities for Morse-Sturm and symplectic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the analyses described by one or more TOML configurations.
    Run {
        /// Configuration file paths.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Override mesh.elements.
        #[arg(long)]
        mesh: Option<usize>,
        /// Override integration.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override tolerances.inertia (zero threshold for inertia counts).
        #[arg(long)]
        tol: Option<f64>,
        /// Override outputs.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override outputs.format.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Write the report(s) here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run independent configurations in parallel.
        #[arg(long)]
        parallel: bool,
    },
}

struct Outcome {
    rendered: String,
    status: u8,
    diagnostic: Option<String>,
}

fn execute_one(
    path: &PathBuf,
    mesh: Option<usize>,
    steps: Option<usize>,
    tol: Option<f64>,
    seed: Option<u64>,
    format: Option<FormatArg>,
) -> Outcome {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return Outcome {
                rendered: String::new(),
                status: 2,
                diagnostic: Some(format!("{}: cannot read config: {e}", path.display())),
            }
        }
    };
    let mut config = match RunConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                rendered: String::new(),
                status: 2,
                diagnostic: Some(format!("{}: {e}", path.display())),
            }
        }
    };
    if let Some(m) = mesh {
        config.mesh.elements = m;
    }
    if let Some(s) = steps {
        config.integration.steps = s;
    }
    if let Some(t) = tol {
        config.tolerances.inertia = Some(t);
    }
    if let Some(s) = seed {
        config.outputs.seed = s;
    }
    if let Some(f) = format {
        config.outputs.format = match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Structured => ReportFormat::Structured,
        };
    }
    if let Err(e) = config.validate() {
        return Outcome {
            rendered: String::new(),
            status: 2,
            diagnostic: Some(format!("{}: {e}", path.display())),
        };
    }

    match run(&config) {
        Ok(report) => {
            let rendered = match emit_report(&report, config.outputs.format) {
                Ok(r) => r,
                Err(e) => {
                    return Outcome {
                        rendered: String::new(),
                        status: 3,
                        diagnostic: Some(format!("{}: {e}", path.display())),
                    }
                }
            };
            if report.all_identities_hold() {
                Outcome { rendered, status: 0, diagnostic: None }
            } else {
                Outcome {
                    rendered,
                    status: 3,
                    diagnostic: Some(format!(
                        "{}: check 'index-identity' failed: a computed identity residual is nonzero",
                        path.display()
                    )),
                }
            }
        }
        Err(e) => Outcome {
            rendered: String::new(),
            status: e.status_class() as u8,
            diagnostic: Some(format!("{}: {e}", path.display())),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { configs, mesh, steps, tol, seed, format, out, parallel } => {
            let outcomes: Vec<Outcome> = if parallel && configs.len() > 1 {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = configs
                        .iter()
                        .map(|path| {
                            scope.spawn(move || {
                                execute_one(path, mesh, steps, tol, seed, format)
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("worker thread")).collect()
                })
            } else {
                configs
                    .iter()
                    .map(|path| execute_one(path, mesh, steps, tol, seed, format))
                    .collect()
            };

            let mut status = 0u8;
            let mut rendered = String::new();
            for o in &outcomes {
                rendered.push_str(&o.rendered);
                if let Some(d) = &o.diagnostic {
                    eprintln!("{d}");
                }
                status = status.max(o.status);
            }
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, rendered) {
                        eprintln!("{}: cannot write report: {e}", path.display());
                        status = status.max(3);
                    }
                }
                None => print!("{rendered}"),
            }
            ExitCode::from(status)
        }
    }
}
