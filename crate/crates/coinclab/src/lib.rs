//! Truth-tagged Monte-Carlo simulation and likelihood-ratio analysis of
//! correlated photon-pair detection under heavy uncorrelated background.
//!
//! The simulator emits photon pairs whose wavelengths are anticorrelated by
//! energy conservation, mixes them with jamming background on two spectrometer
//! stripes of a time-tagging camera, and pushes everything through a detector
//! model (efficiency thinning, time jitter, spectral pixelation). Every photon
//! keeps a truth tag through detection, so downstream selections can be scored
//! exactly. The analysis side pairs herald and signal detections by arrival
//! time, fits the joint time-difference and sum-energy distributions, and
//! discriminates pairs with a background/signal likelihood ratio that is then
//! compared against plain box cuts.

pub mod config;
pub mod coincidence;
pub mod detector;
pub mod discriminant;
pub mod error;
pub mod events;
pub mod histfit;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod spdc;

pub use error::{Error, Result};

/// Converts a full width at half maximum to the standard deviation of a
/// Gaussian with that width.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}

/// Default values shared by [`config::RunConfig`] and the standalone
/// `Default` impls of the simulation and detector settings, so the two ways
/// of building a run cannot drift apart.
pub mod defaults {
    /// Pump laser center wavelength, nm.
    pub const PUMP_CENTER_NM: f64 = 405.0;
    /// Pump laser full width at half maximum, nm.
    pub const PUMP_FWHM_NM: f64 = 0.6;
    /// Degenerate pair wavelength, nm. Herald and signal marginals center here.
    pub const SIGNAL_CENTER_NM: f64 = 810.0;
    /// Marginal spread of the herald arm wavelength, nm.
    pub const HERALD_SIGMA_NM: f64 = 2.0;
    /// Width target for the reconstructed sum-energy line, nm. Dispersion
    /// auto-calibration solves for the nm/pixel scale that lands here.
    pub const SUM_ENERGY_WIDTH_NM: f64 = 0.36;
    /// Spread of the herald-minus-signal arrival time difference of a true
    /// pair, ns. Each arm contributes this over sqrt(2).
    pub const PAIR_DT_SIGMA_NS: f64 = 7.55;
    /// Time tag quantization step, ns.
    pub const TOA_QUANTUM_NS: f64 = 1.5625;
    /// Centroiding resolution of the herald stripe, pixels.
    pub const HERALD_SPECTRAL_SIGMA_PX: f64 = 1.6;
    /// Centroiding resolution of the signal stripe, pixels.
    pub const SIGNAL_SPECTRAL_SIGMA_PX: f64 = 3.2;
    /// Detection probability applied to every photon, dark counts included.
    pub const QUANTUM_EFFICIENCY: f64 = 0.2;
    /// Sensor edge length, pixels. The sensor is square.
    pub const SENSOR_SIZE: u16 = 256;
    /// Sensor rows illuminated by the herald stripe, half-open range.
    pub const HERALD_ROWS: (u16, u16) = (64, 96);
    /// Sensor rows illuminated by the signal stripe, half-open range.
    pub const SIGNAL_ROWS: (u16, u16) = (160, 192);
    /// Emitted pair rate, pairs per second.
    pub const PAIR_RATE_HZ: f64 = 6.0e5;
    /// Background photon rate per stripe, photons per second.
    pub const BACKGROUND_RATE_HZ: f64 = 3.0e6;
    /// Fraction of background events that are dark counts rather than
    /// stray light. Dark counts land uniformly across the stripe.
    pub const DARK_FRACTION: f64 = 0.1;
    /// Run length, seconds.
    pub const DURATION_S: f64 = 10.0;
    /// Herald/signal pairing window, ns.
    pub const PAIRING_WINDOW_NS: f64 = 200.0;
    /// Half span of the time-difference histogram, ns.
    pub const DT_SPAN_NS: f64 = 200.0;
    /// Half span of the reconstructed pump wavelength histogram, nm.
    pub const LAMBDA_SPAN_NM: f64 = 3.0;
    /// Half width of the reference box cut in time, ns.
    pub const BOX_TIME_HALFWIDTH_NS: f64 = 10.0;
}
