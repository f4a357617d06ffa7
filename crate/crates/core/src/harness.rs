//! Monte Carlo engine: grids of operating points, seeded trials run in
//! parallel, SEP with Wilson intervals, CSV/JSON output.
//!
//! Every trial owns a ChaCha8 stream keyed by (master seed, grid index,
//! trial index), and per-trial results are merged in trial order, so the
//! output does not depend on the number of worker threads.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{error_floor, union_bound_sep, PastAmplitude};
use crate::channel::{draw_fading, symbol_energy_for_snr, transmit, ChannelRealization, NoiseMode};
use crate::constellation::Constellation;
use crate::detector::{detect_block, DetectorContext, DetectorOptions};
use crate::diff_codec::encode_block;
use crate::ekf::{pilot_symbol, run_ekf_block, EkfSetup, PilotSchedule};
use crate::error::{Error, Result};
use crate::phase_noise::{sample_trajectory, OscMode, PhaseNoiseConfig};

/// z for a two-sided 95% interval.
pub const WILSON_Z: f64 = 1.96;
pub const MIN_SYMBOLS_PER_TRIAL: usize = 1000;
pub const DEFAULT_SYMBOLS_PER_TRIAL: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_PILOT_PERIOD: usize = 50;

pub const CSV_HEADER: &str =
    "method,osc,antennas,snr_db,var_tx,var_rx,qam,symbols_scored,errors,sep,ci_low,ci_high,analytical_sep,floor,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Differential encoding with the two-stage detector.
    Dif,
    /// Pilot-aided EKF phase tracking.
    Ekf,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dif => "dif",
            Method::Ekf => "ekf",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dif" => Ok(Method::Dif),
            "ekf" => Ok(Method::Ekf),
            other => Err(Error::Usage(format!("unknown method '{other}'"))),
        }
    }
}

/// Channel gains: Rayleigh draws in production, all-ones for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingMode {
    #[default]
    Rayleigh,
    Unit,
}

/// A sweep: the Cartesian product of the grid axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub method: Method,
    pub osc_mode: OscMode,
    pub antennas: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub var_tx: Vec<f64>,
    pub var_rx: Vec<f64>,
    pub qam: usize,
    /// Transmitted symbols per trial, reference and pilots included.
    pub symbols_per_trial: usize,
    pub trials: usize,
    /// EKF only; `None` means the default period.
    pub pilot_period: Option<usize>,
    pub master_seed: u64,
    pub hold_receive_snr: bool,
    pub noise: NoiseMode,
    pub fading: FadingMode,
    pub detector: DetectorOptions,
}

impl SimConfig {
    pub fn new(method: Method, osc_mode: OscMode) -> Self {
        Self {
            method,
            osc_mode,
            antennas: vec![1],
            snr_db: vec![20.0],
            var_tx: vec![0.0],
            var_rx: vec![0.0],
            qam: 16,
            symbols_per_trial: DEFAULT_SYMBOLS_PER_TRIAL,
            trials: DEFAULT_TRIALS,
            pilot_period: None,
            master_seed: 0,
            hold_receive_snr: false,
            noise: NoiseMode::On,
            fading: FadingMode::Rayleigh,
            detector: DetectorOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas.is_empty() || self.snr_db.is_empty() || self.var_tx.is_empty() || self.var_rx.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        if self.antennas.contains(&0) {
            return Err(Error::Config("antenna count must be at least 1".into()));
        }
        if self.symbols_per_trial < MIN_SYMBOLS_PER_TRIAL {
            return Err(Error::Config(format!(
                "symbols per trial must be at least {MIN_SYMBOLS_PER_TRIAL}, got {}",
                self.symbols_per_trial
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        for &vt in &self.var_tx {
            PhaseNoiseConfig::new(vt, 0.0, self.osc_mode)?;
        }
        for &vr in &self.var_rx {
            PhaseNoiseConfig::new(0.0, vr, self.osc_mode)?;
        }
        Constellation::qam(self.qam, 1.0)?;
        match (self.method, self.pilot_period) {
            (Method::Dif, Some(_)) => {
                return Err(Error::Usage("a pilot period only applies to the ekf method".into()));
            }
            (Method::Ekf, Some(0)) => return Err(Error::Config("pilot period must be at least 1".into())),
            _ => {}
        }
        Ok(())
    }

    /// Grid points in output order: var_tx, var_rx, antennas, then SNR
    /// varying fastest.
    pub fn points(&self) -> Vec<PointConfig> {
        let mut out = Vec::new();
        for &var_tx in &self.var_tx {
            for &var_rx in &self.var_rx {
                for &antennas in &self.antennas {
                    for &snr_db in &self.snr_db {
                        out.push(PointConfig {
                            method: self.method,
                            osc: self.osc_mode,
                            antennas,
                            snr_db,
                            var_tx,
                            var_rx,
                            qam: self.qam,
                            symbols_per_trial: self.symbols_per_trial,
                            trials: self.trials,
                            pilot_period: match self.method {
                                Method::Dif => None,
                                Method::Ekf => Some(self.pilot_period.unwrap_or(DEFAULT_PILOT_PERIOD)),
                            },
                            seed: self.master_seed,
                            hold_receive_snr: self.hold_receive_snr,
                            noise: self.noise,
                            fading: self.fading,
                            detector: self.detector,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One operating point, echoed into JSON output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointConfig {
    pub method: Method,
    pub osc: OscMode,
    pub antennas: usize,
    pub snr_db: f64,
    pub var_tx: f64,
    pub var_rx: f64,
    pub qam: usize,
    pub symbols_per_trial: usize,
    pub trials: usize,
    pub pilot_period: Option<usize>,
    pub seed: u64,
    pub hold_receive_snr: bool,
    pub noise: NoiseMode,
    pub fading: FadingMode,
    pub detector: DetectorOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub method: Method,
    pub osc: OscMode,
    pub antennas: usize,
    pub snr_db: f64,
    pub var_tx: f64,
    pub var_rx: f64,
    pub qam: usize,
    pub symbols_per_trial: usize,
    pub trials: usize,
    pub pilot_period: Option<usize>,
    pub seed: u64,
    pub hold_receive_snr: bool,
}

impl PointConfig {
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            method: self.method,
            osc: self.osc,
            antennas: self.antennas,
            snr_db: self.snr_db,
            var_tx: self.var_tx,
            var_rx: self.var_rx,
            qam: self.qam,
            symbols_per_trial: self.symbols_per_trial,
            trials: self.trials,
            pilot_period: self.pilot_period,
            seed: self.seed,
            hold_receive_snr: self.hold_receive_snr,
        }
    }

    pub fn phase_noise(&self) -> Result<PhaseNoiseConfig> {
        PhaseNoiseConfig::new(self.var_tx, self.var_rx, self.osc)
    }

    pub fn symbol_energy(&self) -> f64 {
        symbol_energy_for_snr(self.snr_db, self.antennas, self.hold_receive_snr)
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::qam(self.qam, self.symbol_energy())
    }
}

/// Values that are not part of the CSV contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub wall_time_s: f64,
    /// Union bound with r_{k-1} = √E instead of E.
    pub analytical_sep_root_energy: Option<f64>,
    pub fading_redraws: u64,
    pub skipped_ekf_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub method: Method,
    pub osc: OscMode,
    pub antennas: usize,
    pub snr_db: f64,
    pub var_tx: f64,
    pub var_rx: f64,
    pub qam: usize,
    pub symbols_scored: u64,
    pub errors: u64,
    pub sep: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytical_sep: Option<f64>,
    pub floor: Option<f64>,
    pub seed: u64,
    pub config: ConfigEcho,
    pub diagnostics: Diagnostics,
}

/// Point estimate and 95% Wilson score interval.
pub fn estimate_sep(errors: u64, scored: u64) -> Result<(f64, f64, f64)> {
    if scored == 0 {
        return Err(Error::Usage("cannot estimate SEP from zero scored symbols".into()));
    }
    if errors > scored {
        return Err(Error::Usage(format!("{errors} errors out of {scored} symbols")));
    }
    let n = scored as f64;
    let p = errors as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = (centre - half).max(0.0).min(p);
    let high = (centre + half).min(1.0).max(p);
    Ok((p, low, high))
}

/// The RNG stream of one trial.
pub fn trial_rng(master_seed: u64, grid_index: usize, trial_index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(grid_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(trial_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct TrialOutcome {
    errors: u64,
    scored: u64,
    bound: f64,
    bound_root: f64,
    redraws: u64,
    skipped: u64,
}

fn draw_channel(fading: FadingMode, antennas: usize, rng: &mut ChaCha8Rng) -> (ChannelRealization, u64) {
    match fading {
        FadingMode::Rayleigh => {
            let draw = draw_fading(antennas, rng);
            (draw.channel, u64::from(draw.redraws))
        }
        FadingMode::Unit => (ChannelRealization::unit(antennas), 0),
    }
}

fn run_trial(point: &PointConfig, constellation: &Constellation, grid_index: usize, trial: usize) -> Result<TrialOutcome> {
    let mut rng = trial_rng(point.seed, grid_index, trial);
    let pn = point.phase_noise()?;
    let n = point.symbols_per_trial;
    let order = constellation.len();
    let (channel, redraws) = draw_channel(point.fading, point.antennas, &mut rng);
    let trajectory = sample_trajectory(&pn, point.antennas, n, &mut rng);
    match point.method {
        Method::Dif => {
            let data: Vec<usize> = (0..n - 1).map(|_| rng.random_range(0..order)).collect();
            let encoded = encode_block(constellation, &data);
            let block = transmit(&encoded.x, &trajectory, &channel, point.noise, &mut rng)?;
            let bound = union_bound_sep(constellation, &pn, &channel, PastAmplitude::Energy)?;
            let bound_root = union_bound_sep(constellation, &pn, &channel, PastAmplitude::RootEnergy)?;
            let ctx = DetectorContext::with_options(constellation.clone(), channel, point.osc, point.detector)?;
            let detected = detect_block(&block, &ctx)?;
            let errors = detected
                .iter()
                .zip(&data)
                .filter(|(d, &s)| d.point_index != s)
                .count() as u64;
            Ok(TrialOutcome {
                errors,
                scored: data.len() as u64,
                bound,
                bound_root,
                redraws,
                skipped: 0,
            })
        }
        Method::Ekf => {
            let schedule = PilotSchedule::new(point.pilot_period.unwrap_or(DEFAULT_PILOT_PERIOD), 0)?;
            let pilot = pilot_symbol(constellation);
            let sent: Vec<usize> = (0..n)
                .map(|k| if schedule.is_pilot(k) { pilot } else { rng.random_range(0..order) })
                .collect();
            let x: Vec<Complex64> = sent.iter().map(|&i| constellation.point(i)).collect();
            let block = transmit(&x, &trajectory, &channel, point.noise, &mut rng)?;
            let setup = EkfSetup {
                constellation,
                channel: &channel,
                phase_noise: &pn,
                schedule,
                pilot,
                initial_phase: trajectory.at_time(0),
            };
            let run = run_ekf_block(&block, &setup)?;
            let errors = run.detected.iter().filter(|&&(k, idx)| idx != sent[k]).count() as u64;
            Ok(TrialOutcome {
                errors,
                scored: run.detected.len() as u64,
                bound: 0.0,
                bound_root: 0.0,
                redraws,
                skipped: run.skipped_updates as u64,
            })
        }
    }
}

fn aggregate(point: &PointConfig, outcomes: &[TrialOutcome], wall_time_s: f64) -> Result<ResultRecord> {
    let errors: u64 = outcomes.iter().map(|o| o.errors).sum();
    let scored: u64 = outcomes.iter().map(|o| o.scored).sum();
    let (sep, ci_low, ci_high) = estimate_sep(errors, scored)?;
    let trials = outcomes.len() as f64;
    let (analytical_sep, root, floor) = match point.method {
        Method::Dif => {
            let mean = |f: fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / trials;
            let floor = error_floor(&point.constellation()?, &point.phase_noise()?)?;
            (
                Some(mean(|o| o.bound).clamp(0.0, 1.0)),
                Some(mean(|o| o.bound_root).clamp(0.0, 1.0)),
                Some(floor.clamp(0.0, 1.0)),
            )
        }
        Method::Ekf => (None, None, None),
    };
    Ok(ResultRecord {
        method: point.method,
        osc: point.osc,
        antennas: point.antennas,
        snr_db: point.snr_db,
        var_tx: point.var_tx,
        var_rx: point.var_rx,
        qam: point.qam,
        symbols_scored: scored,
        errors,
        sep,
        ci_low,
        ci_high,
        analytical_sep,
        floor,
        seed: point.seed,
        config: point.echo(),
        diagnostics: Diagnostics {
            wall_time_s,
            analytical_sep_root_energy: root,
            fading_redraws: outcomes.iter().map(|o| o.redraws).sum(),
            skipped_ekf_updates: outcomes.iter().map(|o| o.skipped).sum(),
        },
    })
}

/// Runs one operating point on the current rayon pool. `grid_index` keys
/// the trial seeds.
pub fn run_point(point: &PointConfig, grid_index: usize) -> Result<ResultRecord> {
    let start = Instant::now();
    let constellation = point.constellation()?;
    let outcomes = (0..point.trials)
        .into_par_iter()
        .map(|t| run_trial(point, &constellation, grid_index, t))
        .collect::<Result<Vec<_>>>()?;
    aggregate(point, &outcomes, start.elapsed().as_secs_f64())
}

/// Runs every grid point; results come back in grid order. `threads`
/// selects a dedicated pool size, `None` uses the global pool.
pub fn run_sweep(config: &SimConfig, threads: Option<usize>) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let points = config.points();
    let work = || -> Result<Vec<ResultRecord>> {
        let start = Instant::now();
        let constellations = points
            .iter()
            .map(PointConfig::constellation)
            .collect::<Result<Vec<_>>>()?;
        let units: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|g| (0..config.trials).map(move |t| (g, t)))
            .collect();
        let outcomes = units
            .par_iter()
            .map(|&(g, t)| run_trial(&points[g], &constellations[g], g, t))
            .collect::<Result<Vec<_>>>()?;
        // Per-point wall time is not separable here; report the sweep total.
        let elapsed = start.elapsed().as_secs_f64();
        outcomes
            .chunks(config.trials)
            .zip(&points)
            .map(|(chunk, point)| aggregate(point, chunk, elapsed))
            .collect()
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Closed-form values for one grid point, with no Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRecord {
    pub method: Method,
    pub osc: OscMode,
    pub antennas: usize,
    pub snr_db: f64,
    pub var_tx: f64,
    pub var_rx: f64,
    pub qam: usize,
    pub analytical_sep: f64,
    pub floor: f64,
    pub seed: u64,
    pub config: ConfigEcho,
    pub analytical_sep_root_energy: f64,
}

/// Union bound and floor for every grid point. The bound is averaged over
/// the same channel draws a simulation with this seed would use.
pub fn analyze_sweep(config: &SimConfig) -> Result<Vec<AnalysisRecord>> {
    config.validate()?;
    if config.method != Method::Dif {
        return Err(Error::Usage("closed-form analysis exists only for the dif method".into()));
    }
    config
        .points()
        .iter()
        .enumerate()
        .map(|(g, point)| {
            let constellation = point.constellation()?;
            let pn = point.phase_noise()?;
            let mut sum = 0.0;
            let mut sum_root = 0.0;
            for t in 0..point.trials {
                let (channel, _) = draw_channel(point.fading, point.antennas, &mut trial_rng(point.seed, g, t));
                sum += union_bound_sep(&constellation, &pn, &channel, PastAmplitude::Energy)?;
                sum_root += union_bound_sep(&constellation, &pn, &channel, PastAmplitude::RootEnergy)?;
            }
            let trials = point.trials as f64;
            Ok(AnalysisRecord {
                method: point.method,
                osc: point.osc,
                antennas: point.antennas,
                snr_db: point.snr_db,
                var_tx: point.var_tx,
                var_rx: point.var_rx,
                qam: point.qam,
                analytical_sep: (sum / trials).clamp(0.0, 1.0),
                floor: error_floor(&constellation, &pn)?.clamp(0.0, 1.0),
                seed: point.seed,
                config: point.echo(),
                analytical_sep_root_energy: (sum_root / trials).clamp(0.0, 1.0),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    osc: &'a str,
    antennas: usize,
    snr_db: f64,
    var_tx: f64,
    var_rx: f64,
    qam: usize,
    symbols_scored: u64,
    errors: u64,
    sep: f64,
    ci_low: f64,
    ci_high: f64,
    analytical_sep: Option<f64>,
    floor: Option<f64>,
    seed: u64,
}

pub fn write_csv<W: Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer
            .serialize(CsvRow {
                method: r.method.as_str(),
                osc: r.osc.as_str(),
                antennas: r.antennas,
                snr_db: r.snr_db,
                var_tx: r.var_tx,
                var_rx: r.var_rx,
                qam: r.qam,
                symbols_scored: r.symbols_scored,
                errors: r.errors,
                sep: r.sep,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                analytical_sep: r.analytical_sep,
                floor: r.floor,
                seed: r.seed,
            })
            .map_err(io_error)?;
    }
    if records.is_empty() {
        writer.write_record(CSV_HEADER.split(',')).map_err(io_error)?;
    }
    writer.flush().map_err(|e| Error::Usage(format!("write failed: {e}")))
}

/// Same columns as [`write_csv`]; the Monte Carlo cells stay empty.
pub fn write_analysis_csv<W: Write>(records: &[AnalysisRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER.split(',')).map_err(io_error)?;
    for r in records {
        writer
            .write_record([
                r.method.as_str().to_string(),
                r.osc.as_str().to_string(),
                r.antennas.to_string(),
                format!("{:?}", r.snr_db),
                format!("{:?}", r.var_tx),
                format!("{:?}", r.var_rx),
                r.qam.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("{:?}", r.analytical_sep),
                format!("{:?}", r.floor),
                r.seed.to_string(),
            ])
            .map_err(io_error)?;
    }
    writer.flush().map_err(|e| Error::Usage(format!("write failed: {e}")))
}

pub fn write_analysis_json<W: Write>(records: &[AnalysisRecord], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, records).map_err(|e| Error::Usage(format!("write failed: {e}")))?;
    writeln!(out).map_err(|e| Error::Usage(format!("write failed: {e}")))
}

pub fn write_json<W: Write>(records: &[ResultRecord], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, records).map_err(|e| Error::Usage(format!("write failed: {e}")))?;
    writeln!(out).map_err(|e| Error::Usage(format!("write failed: {e}")))
}

fn io_error(e: csv::Error) -> Error {
    Error::Usage(format!("write failed: {e}"))
}
