//! Run configuration: flat key = value files and their resolution into the
//! typed settings of each stage.
//!
//! Derived quantities (dispersion, wavelength origin, time jitter, bin
//! widths, grid steps) default to `auto` and are computed from the physics
//! settings during resolution, so a config file only pins what it wants to
//! deviate from the built-in run.

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use crate::coincidence::MatchingMode;
use crate::defaults;
use crate::detector::{calibrate_dispersion, DetectorConfig, StripeCalib};
use crate::error::{Error, Result};
use crate::histfit::edges_centered_on;
use crate::spdc::SimConfig;

/// One run configuration as written in a config file. `None` in an
/// `Option` field means `auto` (or `none` for the seed and the pinned
/// mean) and is filled in by [`RunConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    // source
    pub pair_rate: f64,
    pub herald_background_rate: f64,
    pub signal_background_rate: f64,
    pub dark_fraction: f64,
    pub duration: f64,
    pub pump_center: f64,
    pub pump_fwhm: f64,
    pub signal_center: f64,
    pub herald_sigma: f64,
    pub pair_time_offset: f64,
    pub pair_dt_sigma: f64,
    pub quantum_efficiency: f64,
    pub herald_background_slope: f64,
    pub signal_background_slope: f64,
    // detector
    pub time_jitter_sigma: Option<f64>,
    pub toa_quantum: f64,
    pub sensor_size: u16,
    pub dispersion: Option<f64>,
    pub wavelength_at_pixel0: Option<f64>,
    pub sum_energy_width: f64,
    pub herald_spectral_sigma_px: f64,
    pub signal_spectral_sigma_px: f64,
    pub herald_rows: (u16, u16),
    pub signal_rows: (u16, u16),
    // analysis
    pub pairing_window: f64,
    pub matching: MatchingMode,
    pub dt_bin_width: Option<f64>,
    pub lambda_bin_width: Option<f64>,
    pub dt_span: f64,
    pub lambda_span: f64,
    pub pin_time_mean: Option<f64>,
    // sweep
    pub sweep_points: usize,
    pub sweep_efficiency_min: f64,
    pub sweep_efficiency_max: f64,
    pub box_time_halfwidth: f64,
    // discriminant surface
    pub ygrid_lambda_half_span: f64,
    pub ygrid_lambda_step: Option<f64>,
    pub ygrid_dt_half_span: f64,
    pub ygrid_dt_step: Option<f64>,
    // output
    pub emit_events: bool,
    pub emit_pairs: bool,
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pair_rate: defaults::PAIR_RATE_HZ,
            herald_background_rate: defaults::BACKGROUND_RATE_HZ,
            signal_background_rate: defaults::BACKGROUND_RATE_HZ,
            dark_fraction: defaults::DARK_FRACTION,
            duration: defaults::DURATION_S,
            pump_center: defaults::PUMP_CENTER_NM,
            pump_fwhm: defaults::PUMP_FWHM_NM,
            signal_center: defaults::SIGNAL_CENTER_NM,
            herald_sigma: defaults::HERALD_SIGMA_NM,
            pair_time_offset: 0.0,
            pair_dt_sigma: defaults::PAIR_DT_SIGMA_NS,
            quantum_efficiency: defaults::QUANTUM_EFFICIENCY,
            herald_background_slope: 0.0,
            signal_background_slope: 0.0,
            time_jitter_sigma: None,
            toa_quantum: defaults::TOA_QUANTUM_NS,
            sensor_size: defaults::SENSOR_SIZE,
            dispersion: None,
            wavelength_at_pixel0: None,
            sum_energy_width: defaults::SUM_ENERGY_WIDTH_NM,
            herald_spectral_sigma_px: defaults::HERALD_SPECTRAL_SIGMA_PX,
            signal_spectral_sigma_px: defaults::SIGNAL_SPECTRAL_SIGMA_PX,
            herald_rows: defaults::HERALD_ROWS,
            signal_rows: defaults::SIGNAL_ROWS,
            pairing_window: defaults::PAIRING_WINDOW_NS,
            matching: MatchingMode::OneToOne,
            dt_bin_width: None,
            lambda_bin_width: None,
            dt_span: defaults::DT_SPAN_NS,
            lambda_span: defaults::LAMBDA_SPAN_NM,
            pin_time_mean: None,
            sweep_points: 25,
            sweep_efficiency_min: 0.05,
            sweep_efficiency_max: 0.95,
            box_time_halfwidth: defaults::BOX_TIME_HALFWIDTH_NS,
            ygrid_lambda_half_span: 1.5,
            ygrid_lambda_step: None,
            ygrid_dt_half_span: 50.0,
            ygrid_dt_step: None,
            emit_events: true,
            emit_pairs: true,
            seed: None,
        }
    }
}

/// Histogramming and pairing settings shared by every analysis pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub pairing_window: f64,
    pub matching: MatchingMode,
    pub dt_bin_width: f64,
    pub lambda_bin_width: f64,
    pub dt_span: f64,
    pub lambda_span: f64,
    pub pin_time_mean: Option<f64>,
}

impl AnalysisConfig {
    /// Time difference bin edges, anchored so that a bin center sits on
    /// zero. Time tags live on the quantizer grid, so this keeps whole
    /// grid steps from straddling bin boundaries.
    pub fn dt_edges(&self) -> Result<Vec<f64>> {
        edges_centered_on(0.0, self.dt_bin_width, self.dt_span)
    }

    /// Reconstructed pump wavelength bin edges, anchored on the pump line.
    pub fn lambda_edges(&self, pump_center: f64) -> Result<Vec<f64>> {
        edges_centered_on(pump_center, self.lambda_bin_width, self.lambda_span)
    }
}

/// Efficiency sweep settings for the method comparison curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub points: usize,
    pub efficiency_min: f64,
    pub efficiency_max: f64,
    pub box_time_halfwidth: f64,
}

impl SweepConfig {
    /// The target efficiencies, evenly spaced and inclusive of both ends.
    pub fn targets(&self) -> Vec<f64> {
        let n = self.points;
        let step = (self.efficiency_max - self.efficiency_min) / (n - 1) as f64;
        (0..n).map(|i| self.efficiency_min + step * i as f64).collect()
    }
}

/// Sampling grid for the exported discriminant surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct YgridConfig {
    pub lambda_half_span: f64,
    pub lambda_step: f64,
    pub dt_half_span: f64,
    pub dt_step: f64,
}

/// Which of the large per-event artifacts to write.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OutputConfig {
    pub emit_events: bool,
    pub emit_pairs: bool,
}

/// A fully resolved run: every `auto` filled in and every setting checked.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub sim: SimConfig,
    pub detector: DetectorConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
    pub ygrid: YgridConfig,
    pub output: OutputConfig,
    /// The seed actually in effect, if any was given.
    pub seed: Option<u64>,
}

/// Key reference printed in the command line help.
pub const KEY_HELP: &str = "\
Config file keys (key = value, one per line, # starts a comment). Defaults
in brackets; `auto` values are derived from the physics settings.

source:
  pair_rate [6e5]                  emitted pair rate, pairs/s
  herald_background_rate [3e6]     herald-stripe background rate, photons/s
  signal_background_rate [3e6]     signal-stripe background rate, photons/s
  dark_fraction [0.1]              fraction of background that is dark counts
  duration [10]                    run length, s
  pump_center [405]                pump line center, nm
  pump_fwhm [0.6]                  pump line full width at half maximum, nm
  signal_center [810]              degenerate pair wavelength, nm
  herald_sigma [2.0]               herald arm spectral spread, nm
  pair_time_offset [0]             herald minus signal emission offset, ns
  pair_dt_sigma [7.55]             pair time difference spread target, ns
  quantum_efficiency [0.2]         detection probability per photon
  herald_background_slope [0]      herald background spectral tilt, -1 to 1
  signal_background_slope [0]      signal background spectral tilt, -1 to 1

detector:
  time_jitter_sigma [auto]         per-photon jitter, ns; pair_dt_sigma/sqrt(2)
  toa_quantum [1.5625]             time tag step, ns
  sensor_size [256]                sensor edge, pixels
  dispersion [auto]                nm per pixel, solved from sum_energy_width
  wavelength_at_pixel0 [auto]      nm at pixel 0, centers signal_center
  sum_energy_width [0.36]          reconstructed pump width target, nm
  herald_spectral_sigma_px [1.6]   herald centroiding spread, pixels
  signal_spectral_sigma_px [3.2]   signal centroiding spread, pixels
  herald_rows [64..96]             sensor rows of the herald stripe
  signal_rows [160..192]           sensor rows of the signal stripe

analysis:
  pairing_window [200]             herald/signal matching window, ns
  matching [one_to_one]            one_to_one or nearest_neighbor
  dt_bin_width [auto]              time histogram bin, ns; toa_quantum
  lambda_bin_width [auto]          wavelength histogram bin, nm; dispersion/4
  dt_span [200]                    time histogram half span, ns
  lambda_span [3.0]                wavelength histogram half span, nm
  pin_time_mean [none]             freeze the fitted peak position, ns

sweep:
  sweep_points [25]                efficiency targets per method curve
  sweep_efficiency_min [0.05]      lowest target selection efficiency
  sweep_efficiency_max [0.95]      highest target selection efficiency
  box_time_halfwidth [10]          time half width of the reference box, ns

discriminant surface:
  ygrid_lambda_half_span [1.5]     surface half span in wavelength, nm
  ygrid_lambda_step [auto]         surface step, nm; lambda_bin_width
  ygrid_dt_half_span [50]          surface half span in time, ns
  ygrid_dt_step [auto]             surface step, ns; dt_bin_width

output:
  emit_events [true]               write events.csv from simulate/pipeline
  emit_pairs [true]                write pairs.csv from analysis
  seed [none]                      run seed; COINCLAB_SEED and --seed override
";

fn schema(path: &str, line: usize, message: String) -> Error {
    Error::Schema { path: path.to_string(), line, message }
}

/// Parses config text. `path` only labels error messages.
pub fn parse_str(text: &str, path: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| schema(path, line, format!("expected 'key = value', got '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(schema(path, line, format!("key '{key}' has an empty value")));
        }
        if !seen.insert(key.to_string()) {
            return Err(schema(path, line, format!("duplicate key '{key}'")));
        }
        apply(&mut cfg, key, value).map_err(|msg| schema(path, line, msg))?;
    }
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text, &path.display().to_string())
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn finite(value: &str) -> std::result::Result<f64, String> {
        match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got '{value}'")),
        }
    }
    fn auto(value: &str) -> std::result::Result<Option<f64>, String> {
        if value == "auto" { Ok(None) } else { finite(value).map(Some) }
    }
    fn int<T: std::str::FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
        value.parse::<T>().map_err(|_| format!("expected {what}, got '{value}'"))
    }
    fn boolean(value: &str) -> std::result::Result<bool, String> {
        match value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got '{value}'")),
        }
    }
    fn rows(value: &str) -> std::result::Result<(u16, u16), String> {
        let (lo, hi) = value
            .split_once("..")
            .ok_or_else(|| format!("expected a row range like 64..96, got '{value}'"))?;
        Ok((int(lo.trim(), "a row number")?, int(hi.trim(), "a row number")?))
    }

    match key {
        "pair_rate" => cfg.pair_rate = finite(value)?,
        "herald_background_rate" => cfg.herald_background_rate = finite(value)?,
        "signal_background_rate" => cfg.signal_background_rate = finite(value)?,
        "dark_fraction" => cfg.dark_fraction = finite(value)?,
        "duration" => cfg.duration = finite(value)?,
        "pump_center" => cfg.pump_center = finite(value)?,
        "pump_fwhm" => cfg.pump_fwhm = finite(value)?,
        "signal_center" => cfg.signal_center = finite(value)?,
        "herald_sigma" => cfg.herald_sigma = finite(value)?,
        "pair_time_offset" => cfg.pair_time_offset = finite(value)?,
        "pair_dt_sigma" => cfg.pair_dt_sigma = finite(value)?,
        "quantum_efficiency" => cfg.quantum_efficiency = finite(value)?,
        "herald_background_slope" => cfg.herald_background_slope = finite(value)?,
        "signal_background_slope" => cfg.signal_background_slope = finite(value)?,
        "time_jitter_sigma" => cfg.time_jitter_sigma = auto(value)?,
        "toa_quantum" => cfg.toa_quantum = finite(value)?,
        "sensor_size" => cfg.sensor_size = int(value, "a pixel count")?,
        "dispersion" => cfg.dispersion = auto(value)?,
        "wavelength_at_pixel0" => cfg.wavelength_at_pixel0 = auto(value)?,
        "sum_energy_width" => cfg.sum_energy_width = finite(value)?,
        "herald_spectral_sigma_px" => cfg.herald_spectral_sigma_px = finite(value)?,
        "signal_spectral_sigma_px" => cfg.signal_spectral_sigma_px = finite(value)?,
        "herald_rows" => cfg.herald_rows = rows(value)?,
        "signal_rows" => cfg.signal_rows = rows(value)?,
        "pairing_window" => cfg.pairing_window = finite(value)?,
        "matching" => {
            cfg.matching = match value {
                "one_to_one" => MatchingMode::OneToOne,
                "nearest_neighbor" => MatchingMode::NearestNeighbor,
                _ => return Err(format!("expected one_to_one or nearest_neighbor, got '{value}'")),
            }
        }
        "dt_bin_width" => cfg.dt_bin_width = auto(value)?,
        "lambda_bin_width" => cfg.lambda_bin_width = auto(value)?,
        "dt_span" => cfg.dt_span = finite(value)?,
        "lambda_span" => cfg.lambda_span = finite(value)?,
        "pin_time_mean" => {
            cfg.pin_time_mean = if value == "none" { None } else { Some(finite(value)?) }
        }
        "sweep_points" => cfg.sweep_points = int(value, "a point count")?,
        "sweep_efficiency_min" => cfg.sweep_efficiency_min = finite(value)?,
        "sweep_efficiency_max" => cfg.sweep_efficiency_max = finite(value)?,
        "box_time_halfwidth" => cfg.box_time_halfwidth = finite(value)?,
        "ygrid_lambda_half_span" => cfg.ygrid_lambda_half_span = finite(value)?,
        "ygrid_lambda_step" => cfg.ygrid_lambda_step = auto(value)?,
        "ygrid_dt_half_span" => cfg.ygrid_dt_half_span = finite(value)?,
        "ygrid_dt_step" => cfg.ygrid_dt_step = auto(value)?,
        "emit_events" => cfg.emit_events = boolean(value)?,
        "emit_pairs" => cfg.emit_pairs = boolean(value)?,
        "seed" => cfg.seed = if value == "none" { None } else { Some(int(value, "an unsigned integer seed")?) },
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

impl RunConfig {
    /// Fills in every `auto`, applies the seed override on top of the
    /// config seed, and validates the result.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Resolved> {
        let dispersion = match self.dispersion {
            Some(d) => d,
            None => calibrate_dispersion(
                self.sum_energy_width,
                self.pump_fwhm,
                self.herald_spectral_sigma_px,
                self.signal_spectral_sigma_px,
            )?,
        };
        let wavelength_at_pixel0 = self
            .wavelength_at_pixel0
            .unwrap_or_else(|| self.signal_center - dispersion * f64::from(self.sensor_size / 2));
        let time_jitter_sigma = match self.time_jitter_sigma {
            Some(j) => j,
            None => {
                if !(self.pair_dt_sigma > 0.0 && self.pair_dt_sigma.is_finite()) {
                    return Err(Error::Config(format!(
                        "configuration: pair_dt_sigma must be positive to derive the jitter, got {}",
                        self.pair_dt_sigma
                    )));
                }
                self.pair_dt_sigma / std::f64::consts::SQRT_2
            }
        };

        let detector = DetectorConfig {
            time_jitter_sigma,
            toa_quantum: self.toa_quantum,
            sensor_size: self.sensor_size,
            herald: StripeCalib {
                wavelength_at_pixel0,
                dispersion,
                spectral_sigma_px: self.herald_spectral_sigma_px,
                rows: self.herald_rows,
            },
            signal: StripeCalib {
                wavelength_at_pixel0,
                dispersion,
                spectral_sigma_px: self.signal_spectral_sigma_px,
                rows: self.signal_rows,
            },
        };
        detector.validate()?;

        let seed = seed_override.or(self.seed);
        let sim = SimConfig {
            pair_rate: self.pair_rate,
            herald_background_rate: self.herald_background_rate,
            signal_background_rate: self.signal_background_rate,
            dark_fraction: self.dark_fraction,
            duration: self.duration,
            pump_center: self.pump_center,
            pump_fwhm: self.pump_fwhm,
            signal_center: self.signal_center,
            herald_sigma: self.herald_sigma,
            pair_time_offset: self.pair_time_offset,
            quantum_efficiency: self.quantum_efficiency,
            herald_span: detector.herald.span(detector.sensor_size),
            signal_span: detector.signal.span(detector.sensor_size),
            herald_background_slope: self.herald_background_slope,
            signal_background_slope: self.signal_background_slope,
            rng_seed: seed.unwrap_or(0),
        };
        sim.validate()?;

        let analysis = AnalysisConfig {
            pairing_window: self.pairing_window,
            matching: self.matching,
            dt_bin_width: self.dt_bin_width.unwrap_or(self.toa_quantum),
            lambda_bin_width: self.lambda_bin_width.unwrap_or(dispersion / 4.0),
            dt_span: self.dt_span,
            lambda_span: self.lambda_span,
            pin_time_mean: self.pin_time_mean,
        };
        check_positive("pairing_window", analysis.pairing_window)?;
        check_positive("dt_bin_width", analysis.dt_bin_width)?;
        check_positive("lambda_bin_width", analysis.lambda_bin_width)?;
        if analysis.dt_span < analysis.dt_bin_width {
            return Err(Error::Config("dt_span must cover at least one bin".into()));
        }
        if analysis.lambda_span < analysis.lambda_bin_width {
            return Err(Error::Config("lambda_span must cover at least one bin".into()));
        }
        if let Some(pin) = analysis.pin_time_mean {
            if !pin.is_finite() || pin.abs() > analysis.dt_span {
                return Err(Error::Config(format!(
                    "pin_time_mean {pin} lies outside the +-{} ns histogram span",
                    analysis.dt_span
                )));
            }
        }

        let sweep = SweepConfig {
            points: self.sweep_points,
            efficiency_min: self.sweep_efficiency_min,
            efficiency_max: self.sweep_efficiency_max,
            box_time_halfwidth: self.box_time_halfwidth,
        };
        if sweep.points < 2 {
            return Err(Error::Config("sweep_points must be at least 2".into()));
        }
        if !(sweep.efficiency_min > 0.0
            && sweep.efficiency_min < sweep.efficiency_max
            && sweep.efficiency_max <= 1.0)
        {
            return Err(Error::Config(
                "sweep efficiencies need 0 < sweep_efficiency_min < sweep_efficiency_max <= 1"
                    .into(),
            ));
        }
        check_positive("box_time_halfwidth", sweep.box_time_halfwidth)?;

        let ygrid = YgridConfig {
            lambda_half_span: self.ygrid_lambda_half_span,
            lambda_step: self.ygrid_lambda_step.unwrap_or(analysis.lambda_bin_width),
            dt_half_span: self.ygrid_dt_half_span,
            dt_step: self.ygrid_dt_step.unwrap_or(analysis.dt_bin_width),
        };
        check_positive("ygrid_lambda_step", ygrid.lambda_step)?;
        check_positive("ygrid_dt_step", ygrid.dt_step)?;
        if ygrid.lambda_half_span < ygrid.lambda_step || ygrid.dt_half_span < ygrid.dt_step {
            return Err(Error::Config(
                "ygrid half spans must cover at least one step".into(),
            ));
        }

        Ok(Resolved {
            sim,
            detector,
            analysis,
            sweep,
            ygrid,
            output: OutputConfig { emit_events: self.emit_events, emit_pairs: self.emit_pairs },
            seed,
        })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &[(&str, &str)] = &[
        ("pair_rate", "50000"),
        ("herald_background_rate", "60000"),
        ("signal_background_rate", "70000"),
        ("dark_fraction", "0.2"),
        ("duration", "0.25"),
        ("pump_center", "404.5"),
        ("pump_fwhm", "0.5"),
        ("signal_center", "809.0"),
        ("herald_sigma", "1.5"),
        ("pair_time_offset", "12.5"),
        ("pair_dt_sigma", "8.0"),
        ("quantum_efficiency", "0.3"),
        ("herald_background_slope", "0.2"),
        ("signal_background_slope", "-0.2"),
        ("time_jitter_sigma", "5.0"),
        ("toa_quantum", "0.78125"),
        ("sensor_size", "128"),
        ("dispersion", "0.3"),
        ("wavelength_at_pixel0", "790.0"),
        ("sum_energy_width", "0.4"),
        ("herald_spectral_sigma_px", "1.2"),
        ("signal_spectral_sigma_px", "2.4"),
        ("herald_rows", "10..20"),
        ("signal_rows", "60..80"),
        ("pairing_window", "150"),
        ("matching", "nearest_neighbor"),
        ("dt_bin_width", "0.78125"),
        ("lambda_bin_width", "0.05"),
        ("dt_span", "150"),
        ("lambda_span", "2.5"),
        ("pin_time_mean", "12.5"),
        ("sweep_points", "11"),
        ("sweep_efficiency_min", "0.1"),
        ("sweep_efficiency_max", "0.9"),
        ("box_time_halfwidth", "8"),
        ("ygrid_lambda_half_span", "1.0"),
        ("ygrid_lambda_step", "0.1"),
        ("ygrid_dt_half_span", "40"),
        ("ygrid_dt_step", "2.0"),
        ("emit_events", "false"),
        ("emit_pairs", "false"),
        ("seed", "123"),
    ];

    fn sample_text() -> String {
        SAMPLE.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    #[test]
    fn empty_text_is_the_default_config() {
        let cfg = parse_str("", "empty").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let commented = parse_str("# nothing here\n\n   # still nothing\n", "c").unwrap();
        assert_eq!(commented, RunConfig::default());
    }

    #[test]
    fn every_key_parses_resolves_and_is_documented() {
        let cfg = parse_str(&sample_text(), "sample").unwrap();
        let res = cfg.resolve(None).unwrap();
        assert_eq!(res.seed, Some(123));
        assert_eq!(res.sim.pair_rate, 50_000.0);
        assert_eq!(res.sim.pair_time_offset, 12.5);
        assert_eq!(res.detector.time_jitter_sigma, 5.0);
        assert_eq!(res.detector.herald.dispersion, 0.3);
        assert_eq!(res.detector.herald.wavelength_at_pixel0, 790.0);
        assert_eq!(res.detector.herald.rows, (10, 20));
        assert_eq!(res.detector.signal.rows, (60, 80));
        assert_eq!(res.sim.herald_span, (790.0, 790.0 + 0.3 * 127.0));
        assert_eq!(res.analysis.matching, MatchingMode::NearestNeighbor);
        assert_eq!(res.analysis.pin_time_mean, Some(12.5));
        assert_eq!(res.sweep.points, 11);
        assert_eq!(res.ygrid.lambda_step, 0.1);
        assert!(!res.output.emit_events);
        for (key, _) in SAMPLE {
            assert!(KEY_HELP.contains(key), "KEY_HELP is missing '{key}'");
        }
    }

    #[test]
    fn auto_values_are_derived_from_the_physics() {
        let res = RunConfig::default().resolve(Some(1)).unwrap();
        let d = res.detector.herald.dispersion;
        assert!((d - 0.2825).abs() < 5e-4, "dispersion {d}");
        assert_eq!(res.detector.herald.wavelength_at_pixel0, 810.0 - d * 128.0);
        assert_eq!(res.detector.time_jitter_sigma, 7.55 / std::f64::consts::SQRT_2);
        assert_eq!(res.analysis.dt_bin_width, 1.5625);
        assert_eq!(res.analysis.lambda_bin_width, d / 4.0);
        assert_eq!(res.ygrid.dt_step, 1.5625);
        assert_eq!(res.ygrid.lambda_step, d / 4.0);
    }

    #[test]
    fn default_resolution_matches_the_standalone_defaults() {
        let res = RunConfig::default().resolve(Some(0)).unwrap();
        let sim = SimConfig::default();
        let det = DetectorConfig::default();
        assert_eq!(res.detector.herald.dispersion, det.herald.dispersion);
        assert_eq!(res.detector.herald.wavelength_at_pixel0, det.herald.wavelength_at_pixel0);
        assert_eq!(res.detector.time_jitter_sigma, det.time_jitter_sigma);
        assert_eq!(res.sim.herald_span, sim.herald_span);
        assert_eq!(res.sim.signal_span, sim.signal_span);
        assert_eq!(res.sim.pair_rate, sim.pair_rate);
    }

    #[test]
    fn parse_errors_carry_the_file_and_line() {
        let err = parse_str("pair_rate = 1e5\npair_rat = 2\n", "sample.cfg").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sample.cfg:2:"), "{msg}");
        assert!(msg.contains("unknown key 'pair_rat'"), "{msg}");

        let err = parse_str("duration = 1\nduration = 2\n", "d.cfg").unwrap_err();
        assert!(err.to_string().contains("d.cfg:2: duplicate key"), "{err}");

        let err = parse_str("duration = ten\n", "d.cfg").unwrap_err();
        assert!(err.to_string().contains("finite number"), "{err}");

        let err = parse_str("duration\n", "d.cfg").unwrap_err();
        assert!(err.to_string().contains("expected 'key = value'"), "{err}");

        let err = parse_str("duration =   # oops\n", "d.cfg").unwrap_err();
        assert!(err.to_string().contains("empty value"), "{err}");

        let err = parse_str("herald_rows = 64\n", "d.cfg").unwrap_err();
        assert!(err.to_string().contains("row range"), "{err}");

        let err = parse_str("matching = greedy\n", "d.cfg").unwrap_err();
        assert!(err.to_string().contains("one_to_one or nearest_neighbor"), "{err}");

        assert_eq!(parse_str("seed = -1\n", "d.cfg").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sentinels_apply_only_where_supported() {
        assert!(parse_str("dispersion = auto\n", "s").is_ok());
        assert!(parse_str("seed = none\n", "s").is_ok());
        assert!(parse_str("pin_time_mean = none\n", "s").is_ok());
        let err = parse_str("pair_rate = auto\n", "s").unwrap_err();
        assert!(err.to_string().contains("finite number"), "{err}");
        let err = parse_str("seed = auto\n", "s").unwrap_err();
        assert!(err.to_string().contains("unsigned integer"), "{err}");
    }

    #[test]
    fn the_override_seed_wins_over_the_config_seed() {
        let cfg = parse_str("seed = 5\n", "s").unwrap();
        assert_eq!(cfg.resolve(None).unwrap().seed, Some(5));
        assert_eq!(cfg.resolve(Some(9)).unwrap().seed, Some(9));
        assert_eq!(cfg.resolve(Some(9)).unwrap().sim.rng_seed, 9);
        let unseeded = RunConfig::default().resolve(None).unwrap();
        assert_eq!(unseeded.seed, None);
    }

    #[test]
    fn resolve_rejects_inconsistent_settings() {
        let bad = [
            RunConfig { sweep_points: 1, ..RunConfig::default() },
            RunConfig { sweep_efficiency_min: 0.9, sweep_efficiency_max: 0.5, ..RunConfig::default() },
            RunConfig { sweep_efficiency_max: 1.5, ..RunConfig::default() },
            RunConfig { box_time_halfwidth: -1.0, ..RunConfig::default() },
            RunConfig { pin_time_mean: Some(500.0), ..RunConfig::default() },
            RunConfig { dt_span: 0.5, ..RunConfig::default() },
            RunConfig { ygrid_dt_step: Some(-2.0), ..RunConfig::default() },
            RunConfig { ygrid_dt_half_span: 0.1, ..RunConfig::default() },
            RunConfig { pair_dt_sigma: 0.0, ..RunConfig::default() },
            RunConfig { herald_rows: (60, 90), signal_rows: (80, 120), ..RunConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.resolve(Some(1)).is_err());
        }
    }

    #[test]
    fn sweep_targets_are_evenly_spaced_and_inclusive() {
        let sweep = SweepConfig {
            points: 5,
            efficiency_min: 0.1,
            efficiency_max: 0.9,
            box_time_halfwidth: 10.0,
        };
        let t = sweep.targets();
        assert_eq!(t.len(), 5);
        assert_eq!(t[0], 0.1);
        assert_eq!(*t.last().unwrap(), 0.9);
        assert!((t[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_edges_sit_on_their_anchors() {
        let res = RunConfig::default().resolve(Some(1)).unwrap();
        let dt = res.analysis.dt_edges().unwrap();
        let mid = dt.len() / 2;
        assert!((dt[mid - 1] + dt[mid]).abs() < 1e-9, "no bin centered on zero");
        let lam = res.analysis.lambda_edges(res.sim.pump_center).unwrap();
        let mid = lam.len() / 2;
        assert!(((lam[mid - 1] + lam[mid]) / 2.0 - 405.0).abs() < 1e-9);
    }
}
