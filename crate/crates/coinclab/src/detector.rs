//! Detector model: efficiency thinning, per-photon time jitter with a
//! quantized time tag, and spectral pixelation on the sensor stripes.

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::{DetectedEvent, PhotonEvent, Stripe};
use crate::rng::{event_uniform, substream, DOMAIN_DETECT, DOMAIN_THIN};
use crate::{defaults, fwhm_to_sigma};

/// Wavelength calibration and geometry of one spectrometer stripe.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StripeCalib {
    /// Wavelength at the center of pixel 0, nm.
    pub wavelength_at_pixel0: f64,
    /// Linear dispersion, nm per pixel.
    pub dispersion: f64,
    /// Centroiding resolution along the dispersion axis, pixels.
    pub spectral_sigma_px: f64,
    /// Sensor rows the stripe illuminates, half-open.
    pub rows: (u16, u16),
}

impl StripeCalib {
    /// Wavelength at a pixel column center, nm.
    pub fn pixel_to_wavelength(&self, x: u16) -> f64 {
        self.wavelength_at_pixel0 + self.dispersion * x as f64
    }

    /// Wavelengths at the centers of the first and last pixel column.
    pub fn span(&self, sensor_size: u16) -> (f64, f64) {
        (
            self.wavelength_at_pixel0,
            self.pixel_to_wavelength(sensor_size - 1),
        )
    }
}

/// Full detector settings.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DetectorConfig {
    /// Per-photon arrival time jitter, ns, one standard deviation.
    pub time_jitter_sigma: f64,
    /// Time tag quantization step, ns.
    pub toa_quantum: f64,
    /// Sensor edge length, pixels.
    pub sensor_size: u16,
    pub herald: StripeCalib,
    pub signal: StripeCalib,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let dispersion = calibrate_dispersion(
            defaults::SUM_ENERGY_WIDTH_NM,
            defaults::PUMP_FWHM_NM,
            defaults::HERALD_SPECTRAL_SIGMA_PX,
            defaults::SIGNAL_SPECTRAL_SIGMA_PX,
        )
        .expect("default calibration is solvable");
        let at_pixel0 =
            defaults::SIGNAL_CENTER_NM - dispersion * f64::from(defaults::SENSOR_SIZE / 2);
        DetectorConfig {
            // Each arm carries the pair time spread over sqrt(2).
            time_jitter_sigma: defaults::PAIR_DT_SIGMA_NS / std::f64::consts::SQRT_2,
            toa_quantum: defaults::TOA_QUANTUM_NS,
            sensor_size: defaults::SENSOR_SIZE,
            herald: StripeCalib {
                wavelength_at_pixel0: at_pixel0,
                dispersion,
                spectral_sigma_px: defaults::HERALD_SPECTRAL_SIGMA_PX,
                rows: defaults::HERALD_ROWS,
            },
            signal: StripeCalib {
                wavelength_at_pixel0: at_pixel0,
                dispersion,
                spectral_sigma_px: defaults::SIGNAL_SPECTRAL_SIGMA_PX,
                rows: defaults::SIGNAL_ROWS,
            },
        }
    }
}

impl DetectorConfig {
    pub fn stripe(&self, s: Stripe) -> &StripeCalib {
        match s {
            Stripe::Herald => &self.herald,
            Stripe::Signal => &self.signal,
        }
    }

    /// Measured wavelength of a detected event, nm, read back from its pixel
    /// column.
    pub fn measured_wavelength(&self, event: &DetectedEvent) -> f64 {
        self.stripe(event.stripe).pixel_to_wavelength(event.x_pix)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_jitter_sigma.is_finite() && self.time_jitter_sigma > 0.0) {
            return Err(Error::Config(format!(
                "time_jitter_sigma must be positive, got {}",
                self.time_jitter_sigma
            )));
        }
        if !(self.toa_quantum.is_finite() && self.toa_quantum > 0.0) {
            return Err(Error::Config(format!(
                "toa_quantum must be positive, got {}",
                self.toa_quantum
            )));
        }
        if self.sensor_size < 2 {
            return Err(Error::Config(format!(
                "sensor_size must be at least 2 pixels, got {}",
                self.sensor_size
            )));
        }
        for (name, calib) in [("herald", &self.herald), ("signal", &self.signal)] {
            if !(calib.dispersion.is_finite() && calib.dispersion > 0.0) {
                return Err(Error::Config(format!(
                    "{name} dispersion must be positive, got {}",
                    calib.dispersion
                )));
            }
            if !(calib.spectral_sigma_px.is_finite() && calib.spectral_sigma_px > 0.0) {
                return Err(Error::Config(format!(
                    "{name} spectral_sigma_px must be positive, got {}",
                    calib.spectral_sigma_px
                )));
            }
            if !calib.wavelength_at_pixel0.is_finite() || calib.wavelength_at_pixel0 <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} wavelength_at_pixel0 must be positive, got {}",
                    calib.wavelength_at_pixel0
                )));
            }
            if calib.rows.0 >= calib.rows.1 || calib.rows.1 > self.sensor_size {
                return Err(Error::Config(format!(
                    "{name} rows {:?} must be a non-empty range inside the sensor",
                    calib.rows
                )));
            }
        }
        let (h, s) = (self.herald.rows, self.signal.rows);
        if h.0 < s.1 && s.0 < h.1 {
            return Err(Error::Config(format!(
                "herald rows {h:?} and signal rows {s:?} overlap"
            )));
        }
        Ok(())
    }
}

/// Solves for the dispersion that makes the reconstructed sum-energy line
/// come out at `target_width` (one standard deviation, nm). The pump line
/// enters directly; each camera arm adds its centroiding spread and one
/// quantization term, all scaled by the 1/4 sensitivity of the reconstructed
/// pump wavelength to either arm at degeneracy.
pub fn calibrate_dispersion(
    target_width: f64,
    pump_fwhm: f64,
    herald_sigma_px: f64,
    signal_sigma_px: f64,
) -> Result<f64> {
    if !(target_width.is_finite() && target_width > 0.0) {
        return Err(Error::Config(format!(
            "sum-energy width target must be positive, got {target_width}"
        )));
    }
    let pump_sigma = fwhm_to_sigma(pump_fwhm);
    let excess = target_width * target_width - pump_sigma * pump_sigma;
    if excess <= 0.0 {
        return Err(Error::Config(format!(
            "sum-energy width target {target_width} nm is not above the pump line \
             contribution {pump_sigma:.4} nm; no dispersion can reach it"
        )));
    }
    // Pixel-space variance added per arm: centroiding plus 1/12 from rounding
    // to the pixel grid.
    let pixel_var =
        herald_sigma_px * herald_sigma_px + signal_sigma_px * signal_sigma_px + 2.0 / 12.0;
    Ok((excess * 16.0 / pixel_var).sqrt())
}

/// Thins a photon stream by detection probability, preserving order. Used
/// for stream-level studies; the full detector path in [`detect`] keys the
/// same decision off each event id instead so outcomes are stable under
/// batching.
pub fn apply_efficiency(
    events: &[PhotonEvent],
    quantum_efficiency: f64,
    rng: &mut impl rand::Rng,
) -> Vec<PhotonEvent> {
    assert!(
        (0.0..=1.0).contains(&quantum_efficiency),
        "quantum efficiency must lie in [0, 1]"
    );
    events
        .iter()
        .filter(|_| rng.random_bool(quantum_efficiency))
        .copied()
        .collect()
}

/// Rounds a jittered arrival time onto the quantizer grid. The stored value
/// is additionally normalized to the 1e-4 ns grid used by the event CSV, so
/// in-memory times and times read back from a file are bit-identical.
pub fn quantize_toa(t: f64, toa_quantum: f64) -> f64 {
    let q = (t / toa_quantum).round() * toa_quantum;
    let canon = (q * 1e4).round() / 1e4;
    // Normalize -0.0 so formatting cannot distinguish the two zeros.
    canon + 0.0
}

/// Applies Gaussian time jitter and quantizes the result.
pub fn apply_time_jitter(
    true_time: f64,
    jitter_sigma: f64,
    toa_quantum: f64,
    rng: &mut impl rand::Rng,
) -> f64 {
    let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * jitter_sigma;
    quantize_toa(true_time + jitter, toa_quantum)
}

/// Where a photon's wavelength ends up on the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelOutcome {
    Hit {
        x: u16,
        /// True when the smeared position fell off the sensor edge and was
        /// clamped to the border column.
        clamped: bool,
    },
    /// More than five centroiding widths outside the stripe span; the photon
    /// is not recorded.
    OutOfSpan,
}

/// Maps a wavelength to a pixel column: centroiding smear, rounding to the
/// grid, clamping at the sensor border. Photons far outside the span are
/// dropped instead of piling up on the border columns.
pub fn wavelength_to_pixel(
    calib: &StripeCalib,
    sensor_size: u16,
    wavelength: f64,
    rng: &mut impl rand::Rng,
) -> PixelOutcome {
    let (lo, hi) = calib.span(sensor_size);
    let margin = 5.0 * calib.spectral_sigma_px * calib.dispersion;
    if wavelength < lo - margin || wavelength > hi + margin {
        return PixelOutcome::OutOfSpan;
    }
    let smear: f64 = rng.sample::<f64, _>(StandardNormal) * calib.spectral_sigma_px;
    let raw = (wavelength - calib.wavelength_at_pixel0) / calib.dispersion + smear;
    let rounded = raw.round();
    let max = f64::from(sensor_size - 1);
    let clamped = rounded < 0.0 || rounded > max;
    PixelOutcome::Hit {
        x: rounded.clamp(0.0, max) as u16,
        clamped,
    }
}

/// Where generated photons went during detection. Input always equals
/// detected + efficiency losses + out-of-span drops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DetectTallies {
    pub input: u64,
    pub detected: u64,
    pub efficiency_losses: u64,
    pub out_of_span: u64,
    /// Detected events whose smeared position was clamped to a border
    /// column. Subset of `detected`.
    pub clamped: u64,
}

impl DetectTallies {
    pub fn absorb(&mut self, other: &DetectTallies) {
        self.input += other.input;
        self.detected += other.detected;
        self.efficiency_losses += other.efficiency_losses;
        self.out_of_span += other.out_of_span;
        self.clamped += other.clamped;
    }
}

/// Runs the full detector over a photon stream: per-event efficiency
/// decision, time jitter and quantization, spectral pixelation, and a row
/// draw inside the stripe. All randomness is keyed by (seed, event id), so
/// an event's outcome does not depend on batching or on other events.
/// Output is sorted by (time tag, event id).
pub fn detect(
    events: &[PhotonEvent],
    cfg: &DetectorConfig,
    quantum_efficiency: f64,
    seed: u64,
) -> (Vec<DetectedEvent>, DetectTallies) {
    let mut tallies = DetectTallies {
        input: events.len() as u64,
        ..DetectTallies::default()
    };
    let mut out = Vec::with_capacity((events.len() as f64 * quantum_efficiency) as usize + 16);
    for ev in events {
        if event_uniform(seed, DOMAIN_THIN, ev.event_id) >= quantum_efficiency {
            tallies.efficiency_losses += 1;
            continue;
        }
        let mut rng = substream(seed, DOMAIN_DETECT, ev.event_id as u64);
        let toa = apply_time_jitter(ev.true_time, cfg.time_jitter_sigma, cfg.toa_quantum, &mut rng);
        let calib = cfg.stripe(ev.stripe);
        match wavelength_to_pixel(calib, cfg.sensor_size, ev.true_wavelength, &mut rng) {
            PixelOutcome::OutOfSpan => tallies.out_of_span += 1,
            PixelOutcome::Hit { x, clamped } => {
                if clamped {
                    tallies.clamped += 1;
                }
                tallies.detected += 1;
                out.push(DetectedEvent {
                    event_id: ev.event_id,
                    pair_id: ev.pair_id,
                    stripe: ev.stripe,
                    origin: ev.origin,
                    x_pix: x,
                    y_pix: rng.random_range(calib.rows.0..calib.rows.1),
                    toa,
                });
            }
        }
    }
    out.sort_unstable_by(|a, b| a.toa.total_cmp(&b.toa).then_with(|| a.event_id.cmp(&b.event_id)));
    (out, tallies)
}
