use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use thermoflex::sim::{
    qualify, read_trace_p_spin, run_simulation, run_t50, summarize_series, sweep_rr, write_plot_data, DispatchMode,
    Scenario,
};
use thermoflex::Error;

#[derive(Parser)]
#[command(name = "thermoflex", version, about = "Closed-loop regulation simulator for thermostatic load fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and stats.json.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = "thermoflex-out")]
        out: PathBuf,
        /// Override the scenario's dispatch mode.
        #[arg(long)]
        dispatch: Option<Mode>,
        /// Also write long-format CSVs for plotting.
        #[arg(long)]
        emit_plotdata: bool,
    },
    /// Run the T-50 qualification test on every building with capacity X kW.
    T50 {
        scenario: PathBuf,
        #[arg(long)]
        rr: f64,
    },
    /// Report the qualification limit of every building for a k-minute response.
    Qualify {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        k: f64,
    },
    /// Sweep the sold capacity and report T-50 pass/fail per building as CSV.
    SweepRr {
        scenario: PathBuf,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 21)]
        steps: usize,
    },
    /// Spinning-reserve statistics of a trace file.
    Stats { trace: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Optimized,
    Proportional,
}

impl From<Mode> for DispatchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Optimized => DispatchMode::Optimized,
            Mode::Proportional => DispatchMode::Proportional,
        }
    }
}

fn print_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn simulate(path: &Path, out: &Path, dispatch: Option<Mode>, plot: bool) -> Result<(), Error> {
    let mut scenario = Scenario::load(path)?;
    if let Some(mode) = dispatch {
        scenario.dispatch_mode = mode.into();
    }
    let (trace, stats) = run_simulation(&scenario)?;
    std::fs::create_dir_all(out)?;
    let trace_path = out.join("trace.csv");
    trace.write_csv(BufWriter::new(File::create(&trace_path)?))?;
    let stats_path = out.join("stats.json");
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n")?;
    info!("wrote {} and {}", trace_path.display(), stats_path.display());
    if plot {
        for p in write_plot_data(out, &trace)? {
            info!("wrote {}", p.display());
        }
    }
    print_json(&stats)
}

fn sweep(path: &Path, from: f64, to: f64, steps: usize) -> Result<(), Error> {
    let scenario = Scenario::load(path)?;
    println!("r_r,building,passed,rate_of_response_ok,sustained_response_ok,max_error,first_failure_min");
    for point in sweep_rr(&scenario, from, to, steps)? {
        for o in point.outcomes {
            println!(
                "{},{},{},{},{},{},{}",
                point.r_r,
                o.building,
                o.passed,
                o.rate_of_response_ok,
                o.sustained_response_ok,
                o.max_error,
                o.first_failure_min.map_or(String::new(), |t| t.to_string())
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { scenario, out, dispatch, emit_plotdata } => simulate(&scenario, &out, dispatch, emit_plotdata),
        Command::T50 { scenario, rr } => print_json(&run_t50(&Scenario::load(&scenario)?, rr)?),
        Command::Qualify { scenario, k } => print_json(&qualify(&Scenario::load(&scenario)?, k)?),
        Command::SweepRr { scenario, from, to, steps } => sweep(&scenario, from, to, steps),
        Command::Stats { trace } => {
            let (series, dt) = read_trace_p_spin(File::open(&trace)?, &trace)?;
            print_json(&summarize_series(&series, dt))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("THERMOFLEX_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
