use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use simo_core::harness::{
    analyze_sweep, run_sweep, write_analysis_csv, write_analysis_json, write_csv, write_json, Method, SimConfig,
    DEFAULT_SYMBOLS_PER_TRIAL, DEFAULT_TRIALS,
};
use simo_core::selftest::run_selftest;
use simo_core::{Error, OscMode};

const EXIT_USAGE: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "simo", version, about = "Link-level simulator for SIMO channels with Wiener phase noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo SEP at a single operating point.
    Simulate(RunArgs),
    /// Monte Carlo SEP over the Cartesian product of the grids.
    Sweep(RunArgs),
    /// Union bound and error floor only, no Monte Carlo.
    Analyze(RunArgs),
    /// Numerical self-checks of the special functions and noise models.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Dif,
    Ekf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OscArg {
    Clo,
    Slo,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "dif")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "clo")]
    osc: OscArg,
    /// Antenna count, or a comma-separated list.
    #[arg(long, default_value = "1")]
    antennas: String,
    /// A value, a comma-separated list, or start:step:stop (inclusive).
    #[arg(long = "snr-db", default_value = "20", allow_hyphen_values = true)]
    snr_db: String,
    /// Transmitter innovation variance (rad²), value or list.
    #[arg(long = "var-tx", default_value = "0")]
    var_tx: String,
    /// Receiver innovation variance (rad²), value or list.
    #[arg(long = "var-rx", default_value = "0")]
    var_rx: String,
    #[arg(long, default_value_t = 16, value_parser = parse_qam)]
    qam: usize,
    /// Transmitted symbols per trial (reference and pilots included).
    #[arg(long, default_value_t = DEFAULT_SYMBOLS_PER_TRIAL)]
    symbols: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// EKF pilot spacing in symbols (default 50).
    #[arg(long = "pilot-period")]
    pilot_period: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Divide transmit energy by M so the average receive SNR is fixed.
    #[arg(long = "hold-receive-snr")]
    hold_receive_snr: bool,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_qam(s: &str) -> Result<usize, String> {
    match s {
        "4" | "16" | "64" => Ok(s.parse().expect("digits")),
        _ => Err(format!("expected 4, 16 or 64, got '{s}'")),
    }
}

/// Comma-separated values, or `start:step:stop` with the stop included.
fn parse_grid(s: &str) -> Result<Vec<f64>, Error> {
    let bad = |why: &str| Error::Usage(format!("invalid grid '{s}': {why}"));
    let number = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:step:stop"));
        }
        let (start, step, stop) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if !(step.is_finite() && step != 0.0) || (stop - start) / step < 0.0 {
            return Err(bad("step must be nonzero and point from start to stop"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        s.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("values must be finite"));
    }
    Ok(values)
}

fn parse_counts(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("invalid antenna count '{t}'")))
        })
        .collect()
}

fn build_config(args: &RunArgs) -> Result<SimConfig, Error> {
    let method = match args.method {
        MethodArg::Dif => Method::Dif,
        MethodArg::Ekf => Method::Ekf,
    };
    let osc = match args.osc {
        OscArg::Clo => OscMode::Clo,
        OscArg::Slo => OscMode::Slo,
    };
    let mut config = SimConfig::new(method, osc);
    config.antennas = parse_counts(&args.antennas)?;
    config.snr_db = parse_grid(&args.snr_db)?;
    config.var_tx = parse_grid(&args.var_tx)?;
    config.var_rx = parse_grid(&args.var_rx)?;
    config.qam = args.qam;
    config.symbols_per_trial = args.symbols;
    config.trials = args.trials;
    config.pilot_period = args.pilot_period;
    config.master_seed = args.seed;
    config.hold_receive_snr = args.hold_receive_snr;
    config.validate()?;
    Ok(config)
}

fn open_output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn simulate(args: &RunArgs, single: bool) -> Result<(), Failure> {
    let config = build_config(args)?;
    if single && config.points().len() != 1 {
        return Err(Failure::Usage(
            "simulate takes a single operating point; use sweep for grids".into(),
        ));
    }
    let records = run_sweep(&config, args.threads)?;
    let mut out = open_output(&args.out)?;
    match args.format {
        Format::Csv => write_csv(&records, &mut out)?,
        Format::Json => write_json(&records, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn analyze(args: &RunArgs) -> Result<(), Failure> {
    let config = build_config(args)?;
    let records = analyze_sweep(&config)?;
    let mut out = open_output(&args.out)?;
    match args.format {
        Format::Csv => write_analysis_csv(&records, &mut out)?,
        Format::Json => write_analysis_json(&records, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn selftest(seed: u64) -> ExitCode {
    let report = run_selftest(seed);
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} ({}; {:.1} s)", c.name, c.detail, c.seconds);
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SELFTEST)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args, true),
        Command::Sweep(args) => simulate(args, false),
        Command::Analyze(args) => analyze(args),
        Command::Selftest { seed } => return selftest(*seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("40").unwrap(), vec![40.0]);
        assert_eq!(parse_grid("10,20, 35").unwrap(), vec![10.0, 20.0, 35.0]);
        assert_eq!(parse_grid("10:10:40").unwrap(), vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(parse_grid("0:0.1:0.3").unwrap().len(), 4);
        assert_eq!(parse_grid("40:-10:20").unwrap(), vec![40.0, 30.0, 20.0]);
        assert_eq!(parse_grid("-5").unwrap(), vec![-5.0]);
        for bad in ["", "a", "1:2", "0:0:5", "10:1:0", "1,,2", "inf"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn counts() {
        assert_eq!(parse_counts("1,2,5").unwrap(), vec![1, 2, 5]);
        assert!(parse_counts("2.5").is_err());
    }

    #[test]
    fn qam_values() {
        assert_eq!(parse_qam("64").unwrap(), 64);
        assert!(parse_qam("32").is_err());
    }
}
