//! Command-line entry points.
//!
//! ```text
//! plaque run --config base.cfg
//! plaque direct --config base.cfg --horizon 480
//! plaque study --config base.cfg --axis dT --values 800,400,200,100 --out study
//! plaque snapshot --config base.cfg --times 0,2000
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use plaque_core::config::{load_config, SimConfig};
use plaque_core::growth::{run_direct, run_multiscale_with};
use plaque_core::study::{convergence_study, Axis, StudyOptions};
use plaque_core::SimError;

#[derive(Parser)]
#[command(
    name = "plaque",
    version,
    about = "Multiscale plaque growth in a pulsatile channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiscale run; writes history.csv.
    Run(Common),
    /// Direct micro-step coupling; writes direct.csv.
    Direct {
        #[command(flatten)]
        common: Common,
        /// Simulated periods (defaults to T from the config).
        #[arg(long)]
        horizon: Option<f64>,
        /// Keep every n-th micro step in direct.csv.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Convergence study along one axis; writes report.csv and report.txt.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        /// Comma-separated, strictly decreasing (dt accepts 1/N).
        #[arg(long, value_delimiter = ',', value_parser = parse_value, required = true)]
        values: Vec<f64>,
        /// Reference micro step (default: a quarter of the finest value on the dt axis).
        #[arg(long = "ref-dt", value_parser = parse_value)]
        ref_dt: Option<f64>,
        /// Reference macro step (default: a quarter of the finest value, or of the
        /// configured dT on the other axes).
        #[arg(long = "ref-dT")]
        ref_macro: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        /// On the eps axis, scale T with 1/eps so eps*T stays at the configured value.
        #[arg(long)]
        hold_growth: bool,
    },
    /// Multiscale run that writes flow snapshots at the requested macro times.
    Snapshot {
        #[command(flatten)]
        common: Common,
        /// Comma-separated macro times (default: snapshot_times from the config).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse()
}

fn parse_value(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| format!("bad number '{s}'"))?;
            let d: f64 = d.trim().parse().map_err(|_| format!("bad number '{s}'"))?;
            n / d
        }
        None => s.parse().map_err(|_| format!("bad number '{s}'"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("bad number '{s}'"))
    }
}

enum Failure {
    Usage(String),
    Simulation(SimError),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Simulation(e)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Simulation(SimError::Io(format!("{}: {e}", path.display())))
}

fn load(common: &Common) -> Result<(SimConfig, PathBuf), Failure> {
    let mut config = match &common.config {
        Some(p) => load_config(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => SimConfig::default(),
    };
    if let Some(out) = &common.out {
        config.output.out = out.clone();
    }
    config
        .validate()
        .map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))?;
    let out = config.output.out.clone();
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    Ok((config, out))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn multiscale(config: &SimConfig, out: &Path, snapshot_times: &[f64]) -> Result<(), Failure> {
    let snap_dir = out.join("snapshots");
    if !snapshot_times.is_empty() {
        fs::create_dir_all(&snap_dir).map_err(|e| io_failure(&snap_dir, e))?;
    }
    let mut pending: Vec<f64> = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let slack = 1e-9 * config.growth.macro_step;
    // The trajectory of each event lives on the domain of the previous macro time.
    let mut domain_time = 0.0;
    let state = run_multiscale_with(config, |event| {
        let traj = event.trajectory;
        while let Some(&t) = pending.first() {
            if t > domain_time + slack {
                break;
            }
            pending.remove(0);
            let field = &traj.fields()[traj.steps() / 2];
            let path = snap_dir.join(format!("T{domain_time:e}.vtk"));
            let mut buf = Vec::new();
            field.write_vtk(&mut buf)?;
            fs::write(&path, buf)?;
            log::info!("snapshot for T={t} written to {}", path.display());
        }
        domain_time = event.record.time;
        Ok(())
    })?;
    if !pending.is_empty() {
        log::warn!("no periodic solve at or after T = {:?}", pending);
    }
    let mut buf = Vec::new();
    state
        .write_history_csv(&mut buf, config.growth.u0)
        .map_err(|e| io_failure(out, e))?;
    write_file(&out.join("history.csv"), &buf)?;
    println!(
        "U({}) = {:.10e} after {} macro steps",
        state.time,
        state.u,
        state.steps()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let (config, out) = load(&common)?;
            let times = config.output.snapshot_times.clone();
            multiscale(&config, &out, &times)
        }
        Command::Snapshot { common, times } => {
            let (config, out) = load(&common)?;
            let times = if times.is_empty() {
                config.output.snapshot_times.clone()
            } else {
                times
            };
            if times.is_empty() {
                return Err(Failure::Usage(
                    "snapshot needs --times or snapshot_times".into(),
                ));
            }
            multiscale(&config, &out, &times)
        }
        Command::Direct {
            common,
            horizon,
            stride,
        } => {
            let (config, out) = load(&common)?;
            let horizon = horizon.unwrap_or(config.growth.horizon);
            let run = run_direct(&config, horizon)?;
            let mut buf = Vec::new();
            run.write_csv(&mut buf, stride)
                .map_err(|e| io_failure(&out, e))?;
            write_file(&out.join("direct.csv"), &buf)?;
            println!("u({horizon}) = {:.10e}", run.final_u());
            Ok(())
        }
        Command::Study {
            common,
            axis,
            values,
            ref_dt,
            ref_macro,
            threads,
            hold_growth,
        } => {
            let (base, out) = load(&common)?;
            let finest = values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut reference = base.clone();
            let ref_dt = ref_dt.or((axis == Axis::MicroStep).then_some(finest / 4.0));
            let ref_macro = ref_macro.unwrap_or(match axis {
                Axis::MacroStep => finest / 4.0,
                _ => base.growth.macro_step / 4.0,
            });
            if let Some(v) = ref_dt {
                reference = Axis::MicroStep
                    .apply(&reference, v)
                    .map_err(|e| Failure::Usage(e.to_string()))?;
            }
            reference = Axis::MacroStep
                .apply(&reference, ref_macro)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let options = StudyOptions {
                threads,
                out: Some(out.clone()),
                hold_growth,
            };
            let report = convergence_study(&base, axis, &values, &reference, &options).map_err(
                |e| match e {
                    SimError::InvalidParameter(m) => Failure::Usage(m),
                    other => Failure::Simulation(other),
                },
            )?;
            report.write_files(&out)?;
            print!("{}", report.to_table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Simulation(e)) => {
            eprintln!("simulation failed: {e}");
            ExitCode::from(1)
        }
    }
}
