//! Selection scoring: efficiency, purity, signal-to-background, and the
//! signal-to-noise bookkeeping used to compare selection methods.

use serde::Serialize;

use crate::coincidence::{PairClass, PairRecord};
use crate::discriminant::DiscriminantModel;
use crate::error::{Error, Result};

/// Denominators a selection is scored against.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Totals {
    /// True coincidences present in the pair list being selected from.
    pub true_pairs: u64,
    /// Pairs emitted by the source over the run, when known. Adds the
    /// end-to-end efficiency (detection and pairing losses included) next to
    /// the selection-stage efficiency.
    pub emitted_pairs: Option<u64>,
}

/// Score of one selection.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SelectionOutcome {
    /// Selected true coincidences.
    pub signal: u64,
    /// Selected pairs of any other class.
    pub background: u64,
    /// signal / true pairs in the pair list; 0 when that denominator is 0.
    pub efficiency: f64,
    /// signal / emitted pairs, when the emitted total is known.
    pub efficiency_total: Option<f64>,
    /// signal / (signal + background); `None` for an empty selection.
    pub purity: Option<f64>,
    /// signal / background; `None` when background is 0 (infinite) or the
    /// selection is empty.
    pub sbr: Option<f64>,
    /// signal / sqrt(signal + background); `None` for an empty selection.
    pub snr: Option<f64>,
}

/// Scores a selection from its class counts.
pub fn outcome(signal: u64, background: u64, totals: &Totals) -> SelectionOutcome {
    let kept = signal + background;
    let efficiency = if totals.true_pairs == 0 {
        0.0
    } else {
        signal as f64 / totals.true_pairs as f64
    };
    SelectionOutcome {
        signal,
        background,
        efficiency,
        efficiency_total: totals
            .emitted_pairs
            .filter(|&t| t > 0)
            .map(|t| signal as f64 / t as f64),
        purity: (kept > 0).then(|| signal as f64 / kept as f64),
        sbr: (background > 0).then(|| signal as f64 / background as f64),
        snr: (kept > 0).then(|| signal as f64 / (kept as f64).sqrt()),
    }
}

/// Scores a selected pair list by its truth classes.
pub fn outcome_of(selected: &[PairRecord], totals: &Totals) -> Result<SelectionOutcome> {
    let mut signal = 0;
    let mut background = 0;
    for p in selected {
        match p.class {
            Some(PairClass::TrueCoincidence) => signal += 1,
            Some(_) => background += 1,
            None => {
                return Err(Error::Domain(
                    "selection scoring needs truth-tagged pairs".into(),
                ))
            }
        }
    }
    Ok(outcome(signal, background, totals))
}

/// A selection method swept over a parameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Method {
    /// Combined likelihood ratio, swept over thresholds.
    CombinedY,
    /// Time-only ratio, swept over thresholds.
    TimeOnly,
    /// Spectral-only ratio, swept over thresholds.
    SpectralOnly,
    /// Rectangular cut with a fixed time half-width, swept over spectral
    /// half-widths.
    BoxCut { time_halfwidth: f64 },
}

impl Method {
    /// Label used in the curve CSV.
    pub fn label(&self) -> &'static str {
        match self {
            Method::CombinedY => "combined",
            Method::TimeOnly => "time_only",
            Method::SpectralOnly => "spectral_only",
            Method::BoxCut { .. } => "box",
        }
    }
}

/// One point of a method curve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    /// The swept parameter: a ratio threshold, or the spectral half-width of
    /// the box.
    pub parameter: f64,
    pub outcome: SelectionOutcome,
}

/// A full efficiency sweep of one method.
#[derive(Clone, Debug, Serialize)]
pub struct MethodCurve {
    pub method: Method,
    pub points: Vec<CurvePoint>,
}

/// Sweeps one method over a parameter grid. Pairs must carry truth tags.
/// Counting is exact: pairs are ranked once by the method's statistic and
/// each grid point is resolved by binary search, so wide sweeps over
/// millions of pairs stay cheap.
pub fn sweep(
    pairs: &[PairRecord],
    model: &DiscriminantModel,
    method: Method,
    grid: &[f64],
    totals: &Totals,
) -> Result<MethodCurve> {
    if pairs.iter().any(|p| p.class.is_none()) {
        return Err(Error::Domain("method sweeps need truth-tagged pairs".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain("sweep grid values must be finite".into()));
    }
    let scored: Vec<(f64, bool)> = match method {
        Method::CombinedY => pairs
            .iter()
            .map(|p| (model.y_of(p), p.class == Some(PairClass::TrueCoincidence)))
            .collect(),
        Method::TimeOnly => pairs
            .iter()
            .map(|p| (model.y_delta_t(p.delta_t), p.class == Some(PairClass::TrueCoincidence)))
            .collect(),
        Method::SpectralOnly => pairs
            .iter()
            .map(|p| (model.y_lambda(p.lambda_p), p.class == Some(PairClass::TrueCoincidence)))
            .collect(),
        Method::BoxCut { time_halfwidth } => pairs
            .iter()
            .filter(|p| (p.delta_t - model.time.mean).abs() <= time_halfwidth)
            .map(|p| {
                (
                    (p.lambda_p - model.spectral.mean).abs(),
                    p.class == Some(PairClass::TrueCoincidence),
                )
            })
            .collect(),
    };
    let mut ranked = scored;
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut signal_prefix = Vec::with_capacity(ranked.len() + 1);
    signal_prefix.push(0u64);
    for (_, is_signal) in &ranked {
        signal_prefix.push(signal_prefix.last().unwrap() + u64::from(*is_signal));
    }
    let points = grid
        .iter()
        .map(|&parameter| {
            // Thresholds select strictly below; the box includes its edge.
            let kept = match method {
                Method::BoxCut { .. } => ranked.partition_point(|(v, _)| *v <= parameter),
                _ => ranked.partition_point(|(v, _)| *v < parameter),
            };
            let signal = signal_prefix[kept];
            let background = kept as u64 - signal;
            CurvePoint { parameter, outcome: outcome(signal, background, totals) }
        })
        .collect();
    Ok(MethodCurve { method, points })
}

/// Signal-to-background ratio of a curve at a given selection efficiency,
/// linearly interpolated between neighbouring points. Errors outside the
/// measured efficiency range or where the ratio is undefined.
pub fn sbr_at(curve: &MethodCurve, efficiency: f64) -> Result<f64> {
    let pts = &curve.points;
    if pts.is_empty() {
        return Err(Error::Domain("curve has no points".into()));
    }
    let eff = |p: &CurvePoint| p.outcome.efficiency;
    let sbr = |p: &CurvePoint| {
        p.outcome.sbr.ok_or_else(|| {
            Error::Domain(format!(
                "signal-to-background undefined at efficiency {:.4}",
                eff(p)
            ))
        })
    };
    for pair in pts.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (eff(a)..=eff(b)).contains(&efficiency) {
            let (sa, sb) = (sbr(a)?, sbr(b)?);
            let d = eff(b) - eff(a);
            if d == 0.0 {
                return Ok((sa + sb) / 2.0);
            }
            return Ok(sa + (sb - sa) * (efficiency - eff(a)) / d);
        }
    }
    Err(Error::Domain(format!(
        "efficiency {efficiency} is outside the measured range [{:.4}, {:.4}] of the {} curve",
        eff(&pts[0]),
        eff(&pts[pts.len() - 1]),
        curve.method.label()
    )))
}

/// Fractional signal-to-background improvement of one curve over another at
/// a matched efficiency: ratio of the two interpolated values minus one.
pub fn sbr_improvement_at(
    curve: &MethodCurve,
    baseline: &MethodCurve,
    efficiency: f64,
) -> Result<f64> {
    let a = sbr_at(curve, efficiency)?;
    let b = sbr_at(baseline, efficiency)?;
    if b <= 0.0 {
        return Err(Error::Domain(format!(
            "baseline signal-to-background {b} leaves the improvement undefined"
        )));
    }
    Ok(a / b - 1.0)
}

/// How the signal-to-noise ratio changes when the same signal is kept but
/// the background shifts to a new signal-to-background ratio. Returns
/// new SNR over old SNR.
pub fn snr_from_sbr_change(signal: f64, background: f64, new_sbr: f64) -> Result<f64> {
    if !(signal > 0.0 && signal.is_finite()) || !(background >= 0.0 && background.is_finite()) {
        return Err(Error::Domain(format!(
            "need positive signal and non-negative background, got {signal} and {background}"
        )));
    }
    if !(new_sbr > 0.0 && new_sbr.is_finite()) {
        return Err(Error::Domain(format!(
            "new signal-to-background must be positive, got {new_sbr}"
        )));
    }
    let new_background = signal / new_sbr;
    Ok(((signal + background) / (signal + new_background)).sqrt())
}

/// Factor by which the required photon budget changes when the
/// signal-to-noise ratio changes by `snr_ratio` at fixed shot-noise scaling:
/// SNR grows with the square root of the collected photons, so the budget
/// scales with the inverse square.
pub fn photons_required_ratio(snr_ratio: f64) -> Result<f64> {
    if !(snr_ratio > 0.0 && snr_ratio.is_finite()) {
        return Err(Error::Domain(format!(
            "signal-to-noise ratio change must be positive, got {snr_ratio}"
        )));
    }
    Ok(1.0 / (snr_ratio * snr_ratio))
}

/// Detection claim at a fixed signal-to-noise threshold. Empty selections
/// never claim a detection.
pub fn detection_decision(outcome: &SelectionOutcome, snr_threshold: f64) -> bool {
    outcome.snr.is_some_and(|snr| snr >= snr_threshold)
}
