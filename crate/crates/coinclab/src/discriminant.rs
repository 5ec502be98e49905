//! Background/signal likelihood ratio built from the two fitted
//! distributions, and the selections derived from it.
//!
//! For each observable the ratio divides the fitted background density by
//! the fitted signal density; the combined statistic is the product of the
//! two. Small values are signal-like. Everything far outside the fitted
//! peaks, or outside the fit windows entirely, saturates at a large finite
//! value so selections degrade gracefully instead of overflowing.

use serde::{Deserialize, Serialize};

use crate::coincidence::PairRecord;
use crate::error::{Error, Result};
use crate::histfit::{SpectralFitParams, TimeFitParams};

/// Value the likelihood ratio saturates at for hopelessly background-like
/// observables.
pub const SATURATION: f64 = 1e300;

/// Beyond this many signal sigmas the Gaussian denominator is treated as
/// zero and the ratio saturates.
const SATURATION_Z: f64 = 37.0;

const SQRT_TAU: f64 = 2.506_628_274_631_000_5;

/// Fitted likelihood-ratio discriminant with its validity windows.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiscriminantModel {
    pub spectral: SpectralFitParams,
    pub time: TimeFitParams,
    /// Wavelength range the spectral fit covers, nm.
    pub lambda_window: (f64, f64),
    /// Time difference range the time fit covers, ns.
    pub dt_window: (f64, f64),
}

impl DiscriminantModel {
    /// Validates the fitted parameters before they are used as densities:
    /// positive signal amplitudes and widths, a background that stays
    /// non-negative across the window, and means inside the windows.
    pub fn new(
        spectral: SpectralFitParams,
        time: TimeFitParams,
        lambda_window: (f64, f64),
        dt_window: (f64, f64),
    ) -> Result<DiscriminantModel> {
        for (name, (lo, hi)) in [("lambda", lambda_window), ("time difference", dt_window)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!(
                    "{name} window ({lo}, {hi}) must be a finite increasing range"
                )));
            }
        }
        if !(spectral.amplitude > 0.0 && spectral.sigma > 0.0) {
            return Err(Error::Domain(format!(
                "spectral fit has no usable signal line: amplitude {}, sigma {}",
                spectral.amplitude, spectral.sigma
            )));
        }
        if !(time.amplitude > 0.0 && time.sigma > 0.0 && time.bg_scale > 0.0) {
            return Err(Error::Domain(format!(
                "time fit has no usable peak: amplitude {}, sigma {}, decay {}",
                time.amplitude, time.sigma, time.bg_scale
            )));
        }
        if time.bg_amplitude < 0.0 {
            return Err(Error::Domain(format!(
                "time background amplitude {} is negative",
                time.bg_amplitude
            )));
        }
        let bg_at = |x: f64| spectral.bg_slope * (x - spectral.bg_apex).abs() + spectral.bg_level;
        let worst = bg_at(lambda_window.0)
            .min(bg_at(lambda_window.1))
            .min(spectral.bg_level);
        if worst < 0.0 {
            return Err(Error::Domain(format!(
                "spectral background dips to {worst} inside the fit window"
            )));
        }
        if !(lambda_window.0..=lambda_window.1).contains(&spectral.mean) {
            return Err(Error::Domain(format!(
                "spectral mean {} lies outside the fit window {lambda_window:?}",
                spectral.mean
            )));
        }
        if !(dt_window.0..=dt_window.1).contains(&time.mean) {
            return Err(Error::Domain(format!(
                "time mean {} lies outside the fit window {dt_window:?}",
                time.mean
            )));
        }
        Ok(DiscriminantModel { spectral, time, lambda_window, dt_window })
    }

    /// Spectral ratio: linear background over Gaussian line at this
    /// reconstructed pump wavelength.
    pub fn y_lambda(&self, lambda: f64) -> f64 {
        if !lambda.is_finite() || lambda < self.lambda_window.0 || lambda > self.lambda_window.1 {
            return SATURATION;
        }
        let s = &self.spectral;
        let z = (lambda - s.mean) / s.sigma;
        if z.abs() > SATURATION_Z {
            return SATURATION;
        }
        let signal = s.amplitude / (SQRT_TAU * s.sigma) * (-0.5 * z * z).exp();
        let background = s.bg_slope * (lambda - s.bg_apex).abs() + s.bg_level;
        (background.max(0.0) / signal).min(SATURATION)
    }

    /// Temporal ratio: exponential accidental floor over Gaussian peak at
    /// this pair time difference.
    pub fn y_delta_t(&self, delta_t: f64) -> f64 {
        if !delta_t.is_finite() || delta_t < self.dt_window.0 || delta_t > self.dt_window.1 {
            return SATURATION;
        }
        let t = &self.time;
        let z = (delta_t - t.mean) / t.sigma;
        if z.abs() > SATURATION_Z {
            return SATURATION;
        }
        let signal = t.amplitude / (SQRT_TAU * t.sigma) * (-0.5 * z * z).exp();
        let background = t.bg_amplitude * (-delta_t.abs() / t.bg_scale).exp();
        (background / signal).min(SATURATION)
    }

    /// Product of the two single-observable ratios.
    pub fn y_combined(&self, lambda: f64, delta_t: f64) -> f64 {
        let yl = self.y_lambda(lambda);
        let yt = self.y_delta_t(delta_t);
        if yl >= SATURATION || yt >= SATURATION {
            return SATURATION;
        }
        (yl * yt).min(SATURATION)
    }

    /// The combined ratio of a matched pair.
    pub fn y_of(&self, pair: &PairRecord) -> f64 {
        self.y_combined(pair.lambda_p, pair.delta_t)
    }
}

/// A pair selection rule. Likelihood selections keep pairs strictly below
/// the threshold; the box keeps pairs inside both half-width cuts around the
/// fitted means (inclusive).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    CombinedBelow(f64),
    TimeOnlyBelow(f64),
    SpectralOnlyBelow(f64),
    BoxCut { time_halfwidth: f64, spectral_halfwidth: f64 },
}

/// Applies a selection rule to a pair list.
pub fn apply_selection(
    pairs: &[PairRecord],
    model: &DiscriminantModel,
    selection: Selection,
) -> Vec<PairRecord> {
    let keep = |p: &PairRecord| match selection {
        Selection::CombinedBelow(t) => model.y_of(p) < t,
        Selection::TimeOnlyBelow(t) => model.y_delta_t(p.delta_t) < t,
        Selection::SpectralOnlyBelow(t) => model.y_lambda(p.lambda_p) < t,
        Selection::BoxCut { time_halfwidth, spectral_halfwidth } => {
            (p.delta_t - model.time.mean).abs() <= time_halfwidth
                && (p.lambda_p - model.spectral.mean).abs() <= spectral_halfwidth
        }
    };
    pairs.iter().filter(|p| keep(p)).copied().collect()
}

/// Threshold whose strictly-below selection keeps a `target` fraction of the
/// given statistic values. Returns the k-th smallest value with k =
/// ceil(target * n); for distinct values the achieved fraction is then
/// within 1/n of the target. Ties resolve to the lowest such value.
pub fn threshold_for_efficiency(values: &[f64], target: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain(
            "cannot place a threshold on an empty statistic sample".into(),
        ));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Domain(format!(
            "target efficiency must lie in (0, 1], got {target}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("statistic sample contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let k = ((target * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[k - 1])
}

/// Samples the combined ratio on a regular grid around the fitted means,
/// for plotting the selection surface. Rows are (wavelength, time
/// difference, ratio), wavelength-major.
pub fn y_grid(
    model: &DiscriminantModel,
    lambda_half_span: f64,
    lambda_step: f64,
    dt_half_span: f64,
    dt_step: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    for (name, step, span) in [
        ("wavelength", lambda_step, lambda_half_span),
        ("time", dt_step, dt_half_span),
    ] {
        if !(step.is_finite() && step > 0.0 && span.is_finite() && span >= step) {
            return Err(Error::Config(format!(
                "{name} grid needs a positive step no larger than its half span, \
                 got step {step} and half span {span}"
            )));
        }
    }
    let nl = (lambda_half_span / lambda_step).round() as i64;
    let nt = (dt_half_span / dt_step).round() as i64;
    let mut rows = Vec::with_capacity(((2 * nl + 1) * (2 * nt + 1)) as usize);
    for i in -nl..=nl {
        let lambda = model.spectral.mean + i as f64 * lambda_step;
        for j in -nt..=nt {
            let dt = model.time.mean + j as f64 * dt_step;
            rows.push((lambda, dt, model.y_combined(lambda, dt)));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_bg_model() -> DiscriminantModel {
        DiscriminantModel::new(
            SpectralFitParams {
                amplitude: 50_000.0,
                mean: 405.0,
                sigma: 0.36,
                bg_slope: 0.0,
                bg_apex: 405.0,
                bg_level: 300.0,
            },
            TimeFitParams {
                amplitude: 50_000.0,
                mean: 0.0,
                sigma: 7.55,
                bg_amplitude: 600.0,
                bg_scale: 700.0,
            },
            (402.0, 408.0),
            (-200.0, 200.0),
        )
        .unwrap()
    }

    fn pair(lambda_p: f64, delta_t: f64) -> PairRecord {
        PairRecord { herald_id: 0, signal_id: 1, delta_t, lambda_p, class: None }
    }

    #[test]
    fn ratio_at_the_peak_matches_the_closed_form() {
        let m = flat_bg_model();
        // Flat background over the Gaussian maximum: B sqrt(2 pi) sigma / N.
        let want_l = 300.0 * SQRT_TAU * 0.36 / 50_000.0;
        assert!((m.y_lambda(405.0) - want_l).abs() / want_l < 1e-12);
        let want_t = 600.0 * SQRT_TAU * 7.55 / 50_000.0;
        assert!((m.y_delta_t(0.0) - want_t).abs() / want_t < 1e-12);
        let c = m.y_combined(405.0, 0.0);
        assert!((c - want_l * want_t).abs() / (want_l * want_t) < 1e-12);
    }

    #[test]
    fn ratio_grows_away_from_the_peak() {
        let m = flat_bg_model();
        let mut last = 0.0;
        for i in 0..200 {
            let y = m.y_lambda(405.0 + i as f64 * 0.01);
            assert!(y >= last, "ratio fell at offset {i}");
            last = y;
        }
        let mut last = 0.0;
        for i in 0..200 {
            let y = m.y_delta_t(i as f64 * 0.5);
            assert!(y >= last, "time ratio fell at offset {i}");
            last = y;
        }
        // The grid sampler's minimum sits at the fitted means.
        let rows = y_grid(&m, 2.0, 0.1, 100.0, 2.0).unwrap();
        let min = rows
            .iter()
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .copied()
            .unwrap();
        assert_eq!((min.0, min.1), (405.0, 0.0));
    }

    #[test]
    fn far_tails_and_out_of_window_points_saturate() {
        let m = flat_bg_model();
        assert_eq!(m.y_lambda(401.9), SATURATION, "outside the window");
        assert_eq!(m.y_lambda(f64::NAN), SATURATION);
        assert_eq!(m.y_delta_t(200.1), SATURATION);
        assert_eq!(m.y_delta_t(f64::NEG_INFINITY), SATURATION);
        // 405 +- 6 nm would be z ~ 16, still finite; shrink sigma to push z
        // past the saturation band inside the window.
        let narrow = DiscriminantModel::new(
            SpectralFitParams { sigma: 0.05, ..m.spectral },
            m.time,
            m.lambda_window,
            m.dt_window,
        )
        .unwrap();
        assert_eq!(narrow.y_lambda(407.9), SATURATION, "z far beyond the band");
        assert!(narrow.y_lambda(405.0 + 0.05 * 36.0) < SATURATION);
        assert_eq!(m.y_combined(401.0, 0.0), SATURATION);
        assert!(m.y_combined(405.0, 0.0) < SATURATION);
    }

    #[test]
    fn selections_are_strict_below_the_threshold() {
        let m = flat_bg_model();
        let p0 = pair(405.0, 0.0);
        let y = m.y_of(&p0);
        assert!(apply_selection(&[p0], &m, Selection::CombinedBelow(y)).is_empty());
        assert_eq!(
            apply_selection(&[p0], &m, Selection::CombinedBelow(y * 1.0001)).len(),
            1
        );
        let boxed = Selection::BoxCut { time_halfwidth: 10.0, spectral_halfwidth: 0.5 };
        let inside = pair(405.5, -10.0);
        let outside_t = pair(405.0, 10.2);
        let outside_l = pair(405.51, 0.0);
        let kept = apply_selection(&[inside, outside_t, outside_l], &m, boxed);
        assert_eq!(kept.len(), 1, "box bounds are inclusive on the edge");
        assert_eq!(kept[0].delta_t, -10.0);
    }

    #[test]
    fn threshold_tracks_the_requested_efficiency() {
        // Distinct values 1..=200 in shuffled order.
        let values: Vec<f64> = (0..200).map(|i| ((i * 83) % 200 + 1) as f64).collect();
        for target in [0.005, 0.1, 0.25, 0.5, 0.9, 1.0] {
            let t = threshold_for_efficiency(&values, target).unwrap();
            let kept = values.iter().filter(|v| **v < t).count() as f64;
            let achieved = kept / values.len() as f64;
            assert!(
                (achieved - target).abs() <= 1.0 / values.len() as f64 + 1e-12,
                "target {target}, achieved {achieved}"
            );
        }
        // The median of an odd count is the exact middle value.
        let odd: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(threshold_for_efficiency(&odd, 0.5).unwrap(), 5.0);
        // Ties resolve to the value itself, deterministically.
        let tied = vec![2.0, 2.0, 2.0, 2.0];
        assert_eq!(threshold_for_efficiency(&tied, 0.5).unwrap(), 2.0);
        assert!(threshold_for_efficiency(&[], 0.5).is_err());
        assert!(threshold_for_efficiency(&odd, 0.0).is_err());
        assert!(threshold_for_efficiency(&odd, 1.1).is_err());
    }

    #[test]
    fn model_validation_rejects_unusable_fits() {
        let m = flat_bg_model();
        let bad_amp = SpectralFitParams { amplitude: -5.0, ..m.spectral };
        assert!(DiscriminantModel::new(bad_amp, m.time, m.lambda_window, m.dt_window).is_err());
        let negative_bg = SpectralFitParams { bg_slope: -200.0, ..m.spectral };
        assert!(
            DiscriminantModel::new(negative_bg, m.time, m.lambda_window, m.dt_window).is_err(),
            "background goes negative at the window edge"
        );
        let bad_window = DiscriminantModel::new(m.spectral, m.time, (408.0, 402.0), m.dt_window);
        assert!(bad_window.is_err());
        let off_mean = TimeFitParams { mean: 300.0, ..m.time };
        assert!(DiscriminantModel::new(m.spectral, off_mean, m.lambda_window, m.dt_window)
            .is_err());
        let bad_decay = TimeFitParams { bg_scale: 0.0, ..m.time };
        assert!(DiscriminantModel::new(m.spectral, bad_decay, m.lambda_window, m.dt_window)
            .is_err());
    }

    #[test]
    fn grid_rejects_degenerate_steps() {
        let m = flat_bg_model();
        assert!(y_grid(&m, 2.0, 0.0, 100.0, 2.0).is_err());
        assert!(y_grid(&m, 0.05, 0.1, 100.0, 2.0).is_err());
        let rows = y_grid(&m, 1.0, 0.5, 10.0, 5.0).unwrap();
        assert_eq!(rows.len(), 5 * 5);
    }
}
