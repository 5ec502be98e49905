//! Source model: correlated photon-pair emission plus uncorrelated
//! background on both spectrometer stripes.
//!
//! Pair wavelengths obey energy conservation: the pump photon energy is the
//! sum of the two emitted photon energies, so 1/lambda_p = 1/lambda_h +
//! 1/lambda_s. The pump line is Gaussian and narrow, which anticorrelates the
//! two arms; the herald arm marginal is much wider than the pump line.
//! Background photons arrive as a Poisson process with a linear spectral
//! profile per stripe; a configurable fraction of them are spectrally flat
//! dark counts.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::{ids, OriginTag, PhotonEvent, Stripe};
use crate::rng::{substream, DOMAIN_BG_HERALD, DOMAIN_BG_SIGNAL, DOMAIN_PAIRS};
use crate::{defaults, fwhm_to_sigma};

/// Nanoseconds per internal generation window (0.25 s). Each window draws
/// from its own RNG substream, so stream contents do not depend on how a
/// caller batches the generation, and a driver can process long runs without
/// materializing the whole photon list.
pub const WINDOW_NS: f64 = 0.25e9;

/// Source and run settings.
#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    /// Emitted pair rate, pairs per second.
    pub pair_rate: f64,
    /// Background photon rate on the herald stripe, photons per second.
    pub herald_background_rate: f64,
    /// Background photon rate on the signal stripe, photons per second.
    pub signal_background_rate: f64,
    /// Fraction of background events that are dark counts.
    pub dark_fraction: f64,
    /// Run length, seconds.
    pub duration: f64,
    /// Pump center wavelength, nm.
    pub pump_center: f64,
    /// Pump full width at half maximum, nm.
    pub pump_fwhm: f64,
    /// Degenerate pair wavelength, nm; the herald marginal centers here.
    pub signal_center: f64,
    /// Herald arm marginal spread, nm.
    pub herald_sigma: f64,
    /// Mean herald-minus-signal emission time difference of a pair, ns. The
    /// signal photon is emitted at the herald time minus this offset. Photons
    /// the offset pushes outside the run are truncated at the boundary.
    pub pair_time_offset: f64,
    /// Detection probability, applied later by the detector stage.
    pub quantum_efficiency: f64,
    /// Wavelength span background photons cover on the herald stripe, nm.
    pub herald_span: (f64, f64),
    /// Wavelength span background photons cover on the signal stripe, nm.
    pub signal_span: (f64, f64),
    /// Linear tilt of the herald background spectrum, -1..=1. Zero is flat;
    /// +1 ramps from zero density at the short edge to maximum at the long
    /// edge.
    pub herald_background_slope: f64,
    /// Linear tilt of the signal background spectrum, -1..=1.
    pub signal_background_slope: f64,
    /// Run seed all substreams derive from.
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let detector = crate::detector::DetectorConfig::default();
        SimConfig {
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
            quantum_efficiency: defaults::QUANTUM_EFFICIENCY,
            herald_span: detector.herald.span(detector.sensor_size),
            signal_span: detector.signal.span(detector.sensor_size),
            herald_background_slope: 0.0,
            signal_background_slope: 0.0,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    /// Pump line standard deviation, nm.
    pub fn pump_sigma(&self) -> f64 {
        fwhm_to_sigma(self.pump_fwhm)
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        }
        fn non_negative(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be non-negative, got {v}")))
            }
        }
        non_negative("pair_rate", self.pair_rate)?;
        non_negative("herald_background_rate", self.herald_background_rate)?;
        non_negative("signal_background_rate", self.signal_background_rate)?;
        non_negative("duration", self.duration)?;
        positive("pump_center", self.pump_center)?;
        positive("pump_fwhm", self.pump_fwhm)?;
        positive("signal_center", self.signal_center)?;
        non_negative("herald_sigma", self.herald_sigma)?;
        if !self.pair_time_offset.is_finite() {
            return Err(Error::Config("pair_time_offset must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.dark_fraction) {
            return Err(Error::Config(format!(
                "dark_fraction must lie in [0, 1], got {}",
                self.dark_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(Error::Config(format!(
                "quantum_efficiency must lie in [0, 1], got {}",
                self.quantum_efficiency
            )));
        }
        for (name, span) in [("herald_span", self.herald_span), ("signal_span", self.signal_span)] {
            if !(span.0.is_finite() && span.1.is_finite() && span.0 < span.1) {
                return Err(Error::Config(format!(
                    "{name} must be an increasing wavelength range, got {span:?}"
                )));
            }
        }
        for (name, slope) in [
            ("herald_background_slope", self.herald_background_slope),
            ("signal_background_slope", self.signal_background_slope),
        ] {
            if !(-1.0..=1.0).contains(&slope) {
                return Err(Error::Config(format!("{name} must lie in [-1, 1], got {slope}")));
            }
        }
        if self.signal_center <= self.pump_center {
            return Err(Error::Config(
                "signal_center must exceed pump_center; pairs carry half the pump photon energy"
                    .into(),
            ));
        }
        // Event ids pack a stream tag into two bits of a u32, which caps each
        // stream at about 10^9 events.
        let max_stream = (u32::MAX / 4) as f64;
        let expected = self
            .pair_rate
            .max(self.herald_background_rate)
            .max(self.signal_background_rate)
            * self.duration;
        if expected > max_stream * 0.5 {
            return Err(Error::Config(format!(
                "rate * duration of {expected:.3e} events exceeds the supported id space"
            )));
        }
        Ok(())
    }
}

/// Wavelength of the signal photon completing a pair, from energy
/// conservation. Errors when the herald does not carry less energy than the
/// pump photon, since no physical partner exists then.
pub fn signal_wavelength(pump: f64, herald: f64) -> Result<f64> {
    if !(pump.is_finite() && pump > 0.0 && herald.is_finite() && herald > 0.0) {
        return Err(Error::Domain(format!(
            "wavelengths must be positive and finite, got pump {pump} nm, herald {herald} nm"
        )));
    }
    if herald <= pump {
        return Err(Error::Domain(format!(
            "herald wavelength {herald} nm must exceed pump wavelength {pump} nm"
        )));
    }
    Ok(herald * pump / (herald - pump))
}

/// Pump wavelength reconstructed from a detected herald/signal pair.
pub fn reconstruct_pump_wavelength(herald: f64, signal: f64) -> Result<f64> {
    if !(herald.is_finite() && herald > 0.0 && signal.is_finite() && signal > 0.0) {
        return Err(Error::Domain(format!(
            "wavelengths must be positive and finite, got herald {herald} nm, signal {signal} nm"
        )));
    }
    Ok(herald * signal / (herald + signal))
}

/// One internal generation window.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub index: u64,
    /// Window start, ns from run start.
    pub start: f64,
    /// Window length, ns.
    pub len: f64,
}

/// Splits a run into fixed generation windows. The last window is shortened
/// to the run boundary.
pub fn windows(duration_s: f64) -> Vec<Window> {
    let total = duration_s * 1e9;
    let mut out = Vec::new();
    let mut index = 0u64;
    let mut start = 0.0;
    while start < total {
        let len = (total - start).min(WINDOW_NS);
        out.push(Window { index, start, len });
        start += WINDOW_NS;
        index += 1;
    }
    out
}

fn poisson_count(rate_hz: f64, len_ns: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let lambda = rate_hz * len_ns * 1e-9;
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda)
        .map_err(|e| Error::Config(format!("invalid event rate {rate_hz}/s: {e}")))?;
    Ok(dist.sample(rng) as usize)
}

fn sorted_uniform_times(w: &Window, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut times: Vec<f64> = (0..n).map(|_| w.start + rng.random_range(0.0..w.len)).collect();
    times.sort_unstable_by(f64::total_cmp);
    times
}

fn next_id(seq: &mut u32) -> Result<u32> {
    let id = *seq;
    *seq = seq
        .checked_add(1)
        .ok_or_else(|| Error::Domain("event id space exhausted".into()))?;
    Ok(id)
}

/// Generates the pair photons of one window, appending to `out`. `seq` is
/// the running pair sequence number and must start at 0 for window 0.
pub fn generate_pairs_window(
    cfg: &SimConfig,
    w: &Window,
    seq: &mut u32,
    out: &mut Vec<PhotonEvent>,
) -> Result<()> {
    let mut rng = substream(cfg.rng_seed, DOMAIN_PAIRS, w.index);
    let n = poisson_count(cfg.pair_rate, w.len, &mut rng)?;
    let times = sorted_uniform_times(w, n, &mut rng);
    let pump_sigma = cfg.pump_sigma();
    let run_end = cfg.duration * 1e9;
    out.reserve(2 * n);
    for t in times {
        let pump: f64 = cfg.pump_center + pump_sigma * rng.sample::<f64, _>(StandardNormal);
        let herald: f64 = cfg.signal_center + cfg.herald_sigma * rng.sample::<f64, _>(StandardNormal);
        let signal = signal_wavelength(pump, herald)?;
        let pair = next_id(seq)?;
        out.push(PhotonEvent {
            event_id: ids::pair_herald(pair),
            pair_id: Some(pair),
            stripe: Stripe::Herald,
            origin: OriginTag::SourcePair,
            true_wavelength: herald,
            true_time: t,
        });
        let t_signal = t - cfg.pair_time_offset;
        if (0.0..=run_end).contains(&t_signal) {
            out.push(PhotonEvent {
                event_id: ids::pair_signal(pair),
                pair_id: Some(pair),
                stripe: Stripe::Signal,
                origin: OriginTag::SourcePair,
                true_wavelength: signal,
                true_time: t_signal,
            });
        }
    }
    Ok(())
}

/// Inverse CDF of the tilted background spectrum. The density on the span is
/// proportional to 1 + slope * u with u the position mapped linearly onto
/// [-1, 1].
fn tilted_wavelength(span: (f64, f64), slope: f64, quantile: f64) -> f64 {
    let c = 1.0 - slope / 2.0 - 2.0 * quantile;
    let disc = (1.0 - 2.0 * slope * c).max(0.0);
    let u = (disc.sqrt() - 1.0) / slope;
    span.0 + (u + 1.0) * (span.1 - span.0) / 2.0
}

/// Generates the background photons of one stripe for one window, appending
/// to `out`. `seq` is the running background sequence number of that stripe.
pub fn generate_background_window(
    cfg: &SimConfig,
    stripe: Stripe,
    w: &Window,
    seq: &mut u32,
    out: &mut Vec<PhotonEvent>,
) -> Result<()> {
    let (domain, rate, span, slope) = match stripe {
        Stripe::Herald => (
            DOMAIN_BG_HERALD,
            cfg.herald_background_rate,
            cfg.herald_span,
            cfg.herald_background_slope,
        ),
        Stripe::Signal => (
            DOMAIN_BG_SIGNAL,
            cfg.signal_background_rate,
            cfg.signal_span,
            cfg.signal_background_slope,
        ),
    };
    let mut rng = substream(cfg.rng_seed, domain, w.index);
    let n = poisson_count(rate, w.len, &mut rng)?;
    let times = sorted_uniform_times(w, n, &mut rng);
    out.reserve(n);
    for t in times {
        let dark = cfg.dark_fraction > 0.0 && rng.random_bool(cfg.dark_fraction);
        let wavelength = if dark || slope == 0.0 {
            rng.random_range(span.0..span.1)
        } else {
            tilted_wavelength(span, slope, rng.random::<f64>())
        };
        out.push(PhotonEvent {
            event_id: ids::background(stripe, next_id(seq)?),
            pair_id: None,
            stripe,
            origin: if dark { OriginTag::DarkCount } else { OriginTag::Thermal },
            true_wavelength: wavelength,
            true_time: t,
        });
    }
    Ok(())
}

/// Generates all pair photons of a run.
pub fn generate_pairs(cfg: &SimConfig) -> Result<Vec<PhotonEvent>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity((2.05 * cfg.pair_rate * cfg.duration) as usize + 16);
    let mut seq = 0u32;
    for w in windows(cfg.duration) {
        generate_pairs_window(cfg, &w, &mut seq, &mut out)?;
    }
    Ok(out)
}

/// Generates all background photons of one stripe for a run.
pub fn generate_background(cfg: &SimConfig, stripe: Stripe) -> Result<Vec<PhotonEvent>> {
    cfg.validate()?;
    let rate = match stripe {
        Stripe::Herald => cfg.herald_background_rate,
        Stripe::Signal => cfg.signal_background_rate,
    };
    let mut out = Vec::with_capacity((1.05 * rate * cfg.duration) as usize + 16);
    let mut seq = 0u32;
    for w in windows(cfg.duration) {
        generate_background_window(cfg, stripe, &w, &mut seq, &mut out)?;
    }
    Ok(out)
}

/// Merges photon streams into one time-ordered stream. Ties on time are
/// broken by event id so the order is total. Errors if two streams share an
/// event id.
pub fn merge_streams(streams: Vec<Vec<PhotonEvent>>) -> Result<Vec<PhotonEvent>> {
    let mut all: Vec<PhotonEvent> = streams.into_iter().flatten().collect();
    all.sort_unstable_by(|a, b| {
        a.true_time
            .total_cmp(&b.true_time)
            .then_with(|| a.event_id.cmp(&b.event_id))
    });
    let mut ids: Vec<u32> = all.iter().map(|e| e.event_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain("duplicate event id across merged streams".into()));
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> SimConfig {
        SimConfig {
            pair_rate: 40_000.0,
            herald_background_rate: 50_000.0,
            signal_background_rate: 30_000.0,
            duration: 0.5,
            rng_seed: seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn pair_wavelengths_conserve_energy() {
        // 405 nm pump with an 820 nm herald leaves a 800.24.. nm partner.
        let s = signal_wavelength(405.0, 820.0).unwrap();
        assert!((s - 800.240_963_855_421_7).abs() < 1e-9);
        // Degenerate case: both photons at twice the pump wavelength.
        let d = signal_wavelength(405.0, 810.0).unwrap();
        assert!((d - 810.0).abs() < 1e-9);
        // Round trip back to the pump.
        let p = reconstruct_pump_wavelength(820.0, s).unwrap();
        assert!((p - 405.0).abs() < 1e-9);
    }

    #[test]
    fn unphysical_herald_wavelengths_are_rejected() {
        assert!(signal_wavelength(405.0, 405.0).is_err());
        assert!(signal_wavelength(405.0, 300.0).is_err());
        assert!(signal_wavelength(405.0, -810.0).is_err());
        assert!(signal_wavelength(0.0, 810.0).is_err());
        assert!(reconstruct_pump_wavelength(0.0, 810.0).is_err());
        assert!(reconstruct_pump_wavelength(810.0, f64::NAN).is_err());
    }

    #[test]
    fn generated_pairs_conserve_energy_exactly() {
        let cfg = small_config(3);
        let pairs = generate_pairs(&cfg).unwrap();
        let mut heralds = std::collections::HashMap::new();
        for e in &pairs {
            if e.stripe == Stripe::Herald {
                heralds.insert(e.pair_id.unwrap(), e);
            }
        }
        let mut checked = 0;
        for e in &pairs {
            if e.stripe == Stripe::Signal {
                let h = heralds[&e.pair_id.unwrap()];
                let pump = reconstruct_pump_wavelength(h.true_wavelength, e.true_wavelength)
                    .unwrap();
                let inv = 1.0 / h.true_wavelength + 1.0 / e.true_wavelength;
                assert!((1.0 / pump - inv).abs() / inv < 1e-12);
                assert!(
                    (pump - cfg.pump_center).abs() < 6.0 * cfg.pump_sigma(),
                    "pump draw far outside the line: {pump}"
                );
                // Pair photons share the emission time when the offset is 0.
                assert_eq!(h.true_time, e.true_time);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn pair_count_matches_poisson_rate() {
        let cfg = small_config(11);
        let pairs = generate_pairs(&cfg).unwrap();
        let n_pairs = pairs.iter().filter(|e| e.stripe == Stripe::Herald).count() as f64;
        let expect = cfg.pair_rate * cfg.duration;
        assert!(
            (n_pairs - expect).abs() < 5.0 * expect.sqrt(),
            "{n_pairs} pairs vs expectation {expect}"
        );
        // Offset 0: every herald has its signal partner.
        assert_eq!(pairs.len() as f64, 2.0 * n_pairs);
    }

    #[test]
    fn reconstructed_pump_spread_matches_the_line_width() {
        let cfg = SimConfig {
            pair_rate: 200_000.0,
            duration: 0.5,
            rng_seed: 17,
            ..SimConfig::default()
        };
        let pairs = generate_pairs(&cfg).unwrap();
        let mut heralds = std::collections::HashMap::new();
        for e in &pairs {
            if e.stripe == Stripe::Herald {
                heralds.insert(e.pair_id.unwrap(), e.true_wavelength);
            }
        }
        let pumps: Vec<f64> = pairs
            .iter()
            .filter(|e| e.stripe == Stripe::Signal)
            .map(|e| {
                reconstruct_pump_wavelength(heralds[&e.pair_id.unwrap()], e.true_wavelength)
                    .unwrap()
            })
            .collect();
        let n = pumps.len() as f64;
        let mean = pumps.iter().sum::<f64>() / n;
        let var = pumps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sigma = var.sqrt();
        let want = cfg.pump_sigma();
        // Relative standard error of a sample sigma is 1/sqrt(2n) ~ 0.2 %.
        assert!((mean - cfg.pump_center).abs() < 5.0 * want / n.sqrt());
        assert!((sigma - want).abs() / want < 0.01, "sigma {sigma} vs {want}");
    }

    #[test]
    fn pair_time_offset_shifts_signal_arm() {
        let cfg = SimConfig {
            pair_time_offset: 25.0,
            ..small_config(5)
        };
        let pairs = generate_pairs(&cfg).unwrap();
        let heralds: std::collections::HashMap<u32, f64> = pairs
            .iter()
            .filter(|e| e.stripe == Stripe::Herald)
            .map(|e| (e.pair_id.unwrap(), e.true_time))
            .collect();
        let run_end = cfg.duration * 1e9;
        let mut seen = 0;
        for e in pairs.iter().filter(|e| e.stripe == Stripe::Signal) {
            let dt = heralds[&e.pair_id.unwrap()] - e.true_time;
            assert!((dt - 25.0).abs() < 1e-6);
            assert!((0.0..=run_end).contains(&e.true_time));
            seen += 1;
        }
        assert!(seen > 1000);
    }

    #[test]
    fn background_spectrum_is_uniform_when_flat() {
        let cfg = SimConfig {
            herald_background_rate: 200_000.0,
            dark_fraction: 0.0,
            duration: 0.5,
            rng_seed: 23,
            ..SimConfig::default()
        };
        let bg = generate_background(&cfg, Stripe::Herald).unwrap();
        let (lo, hi) = cfg.herald_span;
        let bins = 50usize;
        let mut counts = vec![0u64; bins];
        for e in &bg {
            assert!(e.true_wavelength >= lo && e.true_wavelength < hi);
            assert_eq!(e.origin, OriginTag::Thermal);
            assert_eq!(e.pair_id, None);
            let k = ((e.true_wavelength - lo) / (hi - lo) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        let n = bg.len() as f64;
        let expect = n / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 99.9 % point of chi-square with 49 degrees of freedom.
        assert!(chi2 < 85.35, "uniformity chi2 {chi2}");
        let want = cfg.herald_background_rate * cfg.duration;
        assert!((n - want).abs() < 5.0 * want.sqrt());
    }

    #[test]
    fn background_tilt_shifts_the_mean_wavelength() {
        let slope = 0.5;
        let cfg = SimConfig {
            signal_background_rate: 200_000.0,
            signal_background_slope: slope,
            dark_fraction: 0.0,
            duration: 0.5,
            rng_seed: 29,
            ..SimConfig::default()
        };
        let bg = generate_background(&cfg, Stripe::Signal).unwrap();
        let (lo, hi) = cfg.signal_span;
        let n = bg.len() as f64;
        let mean = bg.iter().map(|e| e.true_wavelength).sum::<f64>() / n;
        // Tilted density: mean sits at mid + slope*(hi-lo)/6, with variance
        // ((hi-lo)/2)^2 * (1/3 - slope^2/9).
        let want = (lo + hi) / 2.0 + slope * (hi - lo) / 6.0;
        let sigma = (hi - lo) / 2.0 * (1.0 / 3.0 - slope * slope / 9.0).sqrt();
        assert!(
            (mean - want).abs() < 5.0 * sigma / n.sqrt(),
            "mean {mean} vs {want}"
        );
    }

    #[test]
    fn dark_fraction_controls_dark_count_share() {
        let cfg = SimConfig {
            herald_background_rate: 100_000.0,
            dark_fraction: 0.25,
            duration: 0.5,
            rng_seed: 31,
            ..SimConfig::default()
        };
        let bg = generate_background(&cfg, Stripe::Herald).unwrap();
        let darks = bg.iter().filter(|e| e.origin == OriginTag::DarkCount).count() as f64;
        let n = bg.len() as f64;
        let sigma = (n * 0.25 * 0.75).sqrt();
        assert!((darks - 0.25 * n).abs() < 5.0 * sigma);
    }

    #[test]
    fn generation_is_deterministic_and_batch_invariant() {
        let cfg = small_config(41);
        let once = generate_pairs(&cfg).unwrap();
        let again = generate_pairs(&cfg).unwrap();
        assert_eq!(once, again);
        // Rebuilding window by window with a fresh sequence counter draws the
        // identical stream.
        let mut windowed = Vec::new();
        let mut seq = 0u32;
        for w in windows(cfg.duration) {
            generate_pairs_window(&cfg, &w, &mut seq, &mut windowed).unwrap();
        }
        assert_eq!(once, windowed);
        let other = generate_pairs(&SimConfig { rng_seed: 42, ..cfg }).unwrap();
        assert_ne!(once, other);
    }

    #[test]
    fn merge_orders_by_time_and_rejects_duplicate_ids() {
        let cfg = small_config(43);
        let pairs = generate_pairs(&cfg).unwrap();
        let bg_h = generate_background(&cfg, Stripe::Herald).unwrap();
        let bg_s = generate_background(&cfg, Stripe::Signal).unwrap();
        let merged = merge_streams(vec![pairs.clone(), bg_h, bg_s]).unwrap();
        assert!(merged
            .windows(2)
            .all(|w| w[0].true_time <= w[1].true_time));
        assert!(merge_streams(vec![pairs.clone(), pairs]).is_err());
    }

    #[test]
    fn zero_rates_produce_empty_streams() {
        let cfg = SimConfig {
            pair_rate: 0.0,
            herald_background_rate: 0.0,
            duration: 0.5,
            ..SimConfig::default()
        };
        assert!(generate_pairs(&cfg).unwrap().is_empty());
        assert!(generate_background(&cfg, Stripe::Herald).unwrap().is_empty());
        let empty = SimConfig { duration: 0.0, ..SimConfig::default() };
        assert!(generate_pairs(&empty).unwrap().is_empty());
    }

    #[test]
    fn config_validation_rejects_out_of_range_values() {
        let ok = SimConfig::default();
        assert!(ok.validate().is_ok());
        assert!(SimConfig { dark_fraction: 1.5, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { quantum_efficiency: -0.1, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { pair_rate: f64::NAN, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { herald_background_slope: 2.0, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { pump_fwhm: 0.0, ..ok.clone() }.validate().is_err());
        assert!(
            SimConfig { signal_center: 400.0, ..ok.clone() }.validate().is_err(),
            "signal line below the pump line is unphysical"
        );
        assert!(
            SimConfig { pair_rate: 1e9, duration: 1e4, ..ok }.validate().is_err(),
            "id space overflow must be caught up front"
        );
    }
}
