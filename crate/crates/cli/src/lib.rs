//! Command implementations behind the `pulsekg` binary.
//!
//! Every run writes under one output root:
//!
//! ```text
//! OUT/run.csv          per-output-step diagnostics
//! OUT/upsilon.csv      Υ series (original frame)
//! OUT/hyperboloid.csv  energies on the hyperboloids (scaled frame)
//! OUT/record.json      config echo, rows and termination
//! OUT/checkpoints/     PKG1 slices when checkpointing is on
//! OUT/meta.json        timestamps; the only non-reproducible file
//! ```

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pulsekg_core::blowup::UpsilonMonitor;
use pulsekg_core::hyperboloid::{self, s_schedule, HyperboloidMonitor, S_ZERO};
use pulsekg_core::integrator::{RunRecord, Runner, Termination};
use pulsekg_core::profile::Profiles;
use pulsekg_core::sweep::{self, SweepReport};
use pulsekg_core::validation::{run_battery, BatteryOptions, Check};
use pulsekg_core::{Error, Result};

pub use config::Overrides;

pub const THREADS_ENV: &str = "PULSEKG_THREADS";

/// Worker cap from `PULSEKG_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_meta(out: &Path, command: &str, started: SystemTime, clock: Instant) -> Result<()> {
    let since = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": since,
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
    });
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Runs one simulation and writes the output layout. Returns the record;
/// the caller maps its termination to an exit code.
pub fn simulate(config_path: &Path, out: &Path, o: &Overrides) -> Result<RunRecord> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let sim = config::load(config_path)?.simulation(o)?;
    let run = &sim.run;
    fs::create_dir_all(out.join("checkpoints"))?;

    let mut ups = sim.upsilon_every.map(|every| UpsilonMonitor::new(run.pulse.delta(), every));
    let mut hyper = match sim.hyperboloid_ds {
        Some(ds) => {
            let m = HyperboloidMonitor::new(s_schedule(S_ZERO, ds, run.t_end), run.mass, run.tensor.clone(), run.dt())?;
            Some(if sim.ladder_order > 0 { m.with_ladder(sim.ladder_order)? } else { m })
        }
        None => None,
    };

    let mut runner = Runner::new(run)?;
    if sim.checkpoint_every > 0 {
        runner.checkpoint_every(sim.checkpoint_every, out.join("checkpoints"));
    }
    if let Some(m) = ups.as_mut() {
        runner.observe(m);
    }
    if let Some(m) = hyper.as_mut() {
        runner.observe(m);
    }
    let record = runner.run()?;

    let mut w = create(&out.join("run.csv"))?;
    record.write_csv(&mut w)?;
    w.flush()?;
    fs::write(out.join("record.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    if let Some(m) = ups {
        let mut w = create(&out.join("upsilon.csv"))?;
        m.series.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(m) = hyper {
        let skipped = m.skipped.clone();
        let rows = m.finish()?;
        let mut w = create(&out.join("hyperboloid.csv"))?;
        hyperboloid::write_rows(&rows, &mut w)?;
        w.flush()?;
        for (s, why) in skipped {
            eprintln!("hyperboloid s = {s}: skipped ({why})");
        }
    }
    write_meta(out, "simulate", started, clock)?;
    Ok(record)
}

/// One line per check; returns whether all passed.
pub fn validate(opts: BatteryOptions, mut sink: impl Write) -> Result<(bool, Vec<Check>)> {
    let checks = run_battery(opts);
    for c in &checks {
        writeln!(sink, "{:<4} {:<28} {:>7.2}s  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.seconds, c.detail)?;
    }
    Ok((checks.iter().all(|c| c.passed), checks))
}

/// Runs the `[sweep]` plan and writes `sweep.json` and `phase.csv`.
pub fn sweep(config_path: &Path, out: &Path, quick: bool) -> Result<SweepReport> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut plan = config::load(config_path)?.sweep_plan(quick)?;
    if let Some(cap) = thread_cap()? {
        plan.parallel = plan.parallel.min(cap);
    }
    let report = sweep::run_sweep(&plan)?;
    fs::create_dir_all(out)?;
    sweep::persist(&plan, &report, &out.join("sweep.json"))?;
    let mut w = create(&out.join("phase.csv"))?;
    sweep::write_phase_csv(&report.outcomes, &mut w)?;
    w.flush()?;
    write_meta(out, "sweep", started, clock)?;
    Ok(report)
}

/// Writes the profile tables as `theta,f,g,gprime,h`.
pub fn export_profiles(out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            Profiles::shared().write_csv(&mut w)?;
            w.flush()?;
        }
        None => Profiles::shared().write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

/// Exit code for a finished run: 0 completed, 2 blowup, 1 numerical failure.
pub fn exit_code(t: &Termination) -> u8 {
    match t {
        Termination::Completed { .. } => 0,
        Termination::Blowup { .. } => 2,
        Termination::NumericalFailure { .. } => 1,
    }
}
