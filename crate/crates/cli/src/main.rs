use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pulsekg_cli::{exit_code, Overrides};
use pulsekg_core::integrator::{Frame, Termination};
use pulsekg_core::validation::BatteryOptions;

#[derive(Parser)]
#[command(name = "pulsekg", version, about = "Short-pulse cubic Klein-Gordon simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    Original,
    Scaled,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a config file.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Divide the grid spacing by this factor.
        #[arg(long, default_value_t = 1.0)]
        resolution_scale: f64,
        /// Double the grid spacing.
        #[arg(long)]
        quick: bool,
        #[arg(long, value_enum)]
        frame: Option<FrameArg>,
        #[arg(long)]
        no_hyperboloid: bool,
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<usize>,
    },
    /// Run the built-in validation battery.
    Validate {
        #[arg(long)]
        quick: bool,
        /// Use second-order stencils so the order checks fail.
        #[arg(long)]
        force_failure: bool,
    },
    /// Run the `[sweep]` plan of a config file.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        quick: bool,
    },
    /// Profile tables.
    Profiles {
        #[command(subcommand)]
        action: ProfilesAction,
    },
}

#[derive(Subcommand)]
enum ProfilesAction {
    /// Write `theta,f,g,gprime,h` to a file or stdout.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> pulsekg_core::Result<u8> {
    if let Some(n) = pulsekg_cli::thread_cap()? {
        // Ignore the error if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate { config, out, resolution_scale, quick, frame, no_hyperboloid, checkpoint_every } => {
            let o = Overrides {
                frame: frame.map(|f| match f {
                    FrameArg::Original => Frame::Original,
                    FrameArg::Scaled => Frame::Scaled,
                }),
                resolution_scale,
                quick,
                no_hyperboloid,
                checkpoint_every,
            };
            let record = pulsekg_cli::simulate(&config, &out, &o)?;
            match &record.termination {
                Termination::Completed { t } => println!("completed at t = {t} after {} steps", record.steps),
                Termination::Blowup { t, cause } => println!("blowup detected at t = {t} ({cause:?})"),
                Termination::NumericalFailure { t, reason } => eprintln!("numerical failure at t = {t}: {reason}"),
            }
            Ok(exit_code(&record.termination))
        }
        Command::Validate { quick, force_failure } => {
            let (ok, _) = pulsekg_cli::validate(BatteryOptions { quick, force_failure }, std::io::stdout().lock())?;
            Ok(if ok { 0 } else { 1 })
        }
        Command::Sweep { config, out, quick } => {
            let report = pulsekg_cli::sweep(&config, &out, quick)?;
            for o in &report.outcomes {
                println!("nu {:>6} delta {:>6} {}", o.nu, o.delta, o.class);
            }
            if let Some(b) = &report.bracket {
                println!("critical nu in [{}, {}]", b.lo, b.hi);
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::Profiles { action: ProfilesAction::Export { out } } => {
            pulsekg_cli::export_profiles(out.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
