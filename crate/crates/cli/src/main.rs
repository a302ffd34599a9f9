mod commands;
mod csvio;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roomsi_core::control::{LoopTopology, OnOffSetpoints};

#[derive(Parser)]
#[command(name = "roomsi", version, about = "Identify reduced building climate models and check them in closed loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Out {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic climate CSV.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 365)]
        days: usize,
        #[arg(long, default_value_t = 3600.0)]
        dt: f64,
        /// Seconds after midnight of January 1st.
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[command(flatten)]
        out: Out,
    },
    /// Run the reference simulator.
    Simulate {
        /// Building config; the four-room reference building if absent.
        #[arg(long)]
        building: Option<PathBuf>,
        /// Climate CSV; a synthetic climate from --seed and --days if absent.
        #[arg(long)]
        climate: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 365)]
        days: usize,
        /// Output step in s; the climate step if absent.
        #[arg(long)]
        dt: Option<f64>,
        /// `Th,Tc[,RHh,RHd]`; free-floating if absent.
        #[arg(long)]
        setpoints: Option<OnOffSetpoints>,
        /// Couple heat and moisture.
        #[arg(long)]
        ham: bool,
        #[command(flatten)]
        out: Out,
    },
    /// Identify one state-space model per zone.
    Identify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8)]
        order: usize,
        #[arg(long, default_value = "separate")]
        topology: LoopTopology,
        /// Also identify humidity ratio.
        #[arg(long)]
        moisture: bool,
        #[command(flatten)]
        out: Out,
    },
    /// Sampling, power and crest-factor diagnostics of every column.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        /// Also write one spectrum CSV per column.
        #[arg(long)]
        spectrum: bool,
        #[command(flatten)]
        out: Out,
    },
    /// Run identified models in closed loop over the drivers of a data set
    /// and compare them with it.
    Loop {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "18,22")]
        setpoints: OnOffSetpoints,
        /// Building config supplying the [hvac] capacities.
        #[arg(long)]
        building: Option<PathBuf>,
        #[command(flatten)]
        hvac: HvacArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Run case studies: I, II, III, IV, V, HAM, EXT or all.
    Case {
        cases: Vec<String>,
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Identification set-point sweep.
    Sweep {
        /// Semicolon-separated set-point pairs.
        #[arg(long, default_value = "16,22;18,22;20,22;21,22")]
        pairs: String,
        #[arg(long, value_delimiter = ',', default_value = "4,8")]
        orders: Vec<usize>,
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Identify from an external simulator export and close the loop on
    /// its second half.
    Import {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "12,20")]
        setpoints: OnOffSetpoints,
        #[arg(long, default_value_t = 8)]
        order: usize,
        #[command(flatten)]
        hvac: HvacArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Text table of verdict files.
    Report {
        verdicts: Vec<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Args, Clone, Copy)]
pub struct HvacArgs {
    /// Heating capacity per zone, W.
    #[arg(long)]
    pub heating_w: Option<f64>,
    /// Cooling capacity per zone, W.
    #[arg(long)]
    pub cooling_w: Option<f64>,
}

#[derive(Args, Clone)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 365)]
    pub days: usize,
    #[arg(long, default_value_t = 3600.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 8)]
    pub order: usize,
    /// Building config replacing the four-room reference building.
    #[arg(long)]
    pub building: Option<PathBuf>,
    #[arg(long)]
    pub setpoints: Option<OnOffSetpoints>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth { seed, days, dt, start, out } => commands::synth(seed, days, dt, start, &out),
        Command::Simulate { building, climate, seed, days, dt, setpoints, ham, out } => {
            commands::simulate(building.as_deref(), climate.as_deref(), seed, days, dt, setpoints, ham, &out)
        }
        Command::Identify { data, order, topology, moisture, out } => commands::identify(&data, order, topology, moisture, &out),
        Command::Diagnose { data, spectrum, out } => commands::diagnose(&data, spectrum, &out),
        Command::Loop { model, data, setpoints, building, hvac, out } => {
            commands::run_loop(&model, &data, setpoints, building.as_deref(), hvac, &out)
        }
        Command::Case { cases, bench, out } => commands::case(&cases, &bench, &out),
        Command::Sweep { pairs, orders, bench, out } => commands::sweep(&pairs, &orders, &bench, &out),
        Command::Import { data, setpoints, order, hvac, out } => commands::import(&data, setpoints, order, hvac, &out),
        Command::Report { verdicts, out } => commands::report(&verdicts, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
