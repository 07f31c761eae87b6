use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bellgen_cli::config::load;
use bellgen_cli::{commands, resolve_out_dir, write_outcome, CliError, Command, OUT_DIR_ENV};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Simulator for a reconfigurable two-photon entangled-state generator.
#[derive(Parser)]
#[command(name = "bellgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Compute the generated state for a target or explicit phases.
    Generate(Common),
    /// Simulate a 36-count tomography run and reconstruct the state.
    Tomography(Common),
    /// Sample and fit a two-photon N00N fringe.
    Noon(Common),
    /// Fit a thermal phase-shifter calibration from a voltage scan.
    Calibrate(Common),
    /// Coincidence-to-accidental ratio versus pair generation rate.
    CarSweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (beats $BELLGEN_OUT_DIR and `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the report printed on stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Describe the planned computation and exit without running it.
    #[arg(long)]
    explain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn run(command: Command, args: &Common) -> Result<(), CliError> {
    let loaded = load(&args.config, args.seed)?;
    if args.explain {
        print!("{}", commands::explain(command, &loaded)?);
        return Ok(());
    }
    let env = std::env::var(OUT_DIR_ENV).ok();
    let dir = resolve_out_dir(args.out.as_deref(), env.as_deref(), loaded.config.output_dir.as_deref());
    let outcome = match commands::run(command, &loaded) {
        Ok(o) => o,
        Err(e) => {
            if let CliError::Core {
                diagnostics: Some((name, contents)),
                ..
            } = &e
            {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join(name), contents);
                }
            }
            return Err(e);
        }
    };
    let written = write_outcome(&dir, command, &outcome)?;
    let stdout = match (args.format, &outcome.csv) {
        (Format::Csv, Some(csv)) => csv.clone(),
        _ => bellgen_cli::report::render_json(&outcome.report),
    };
    let _ = std::io::stdout().write_all(stdout.as_bytes());
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(outcome.summary.as_bytes());
    for w in &outcome.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    for path in written {
        let _ = writeln!(err, "wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::Generate(a) => (Command::Generate, a),
        Sub::Tomography(a) => (Command::Tomography, a),
        Sub::Noon(a) => (Command::Noon, a),
        Sub::Calibrate(a) => (Command::Calibrate, a),
        Sub::CarSweep(a) => (Command::CarSweep, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
