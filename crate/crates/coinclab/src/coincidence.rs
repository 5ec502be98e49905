//! Pairing of herald and signal detections by arrival time, and truth
//! classification of the resulting pairs.

use serde::Serialize;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::events::{DetectedEvent, OriginTag, Stripe};
use crate::spdc::reconstruct_pump_wavelength;

/// Truth class of a matched pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum PairClass {
    /// Both photons of the same emitted pair.
    TrueCoincidence,
    /// Two source photons from different pairs.
    SourceMistag,
    /// One source photon matched with a background photon.
    SourceBackground,
    /// Two background photons.
    Background,
}

impl PairClass {
    pub const ALL: [PairClass; 4] = [
        PairClass::TrueCoincidence,
        PairClass::SourceMistag,
        PairClass::SourceBackground,
        PairClass::Background,
    ];

    /// Two-letter label used in the pair CSV.
    pub fn label(self) -> &'static str {
        match self {
            PairClass::TrueCoincidence => "TC",
            PairClass::SourceMistag => "SM",
            PairClass::SourceBackground => "SB",
            PairClass::Background => "TH",
        }
    }

    /// Dense index for per-class count arrays.
    pub fn index(self) -> usize {
        match self {
            PairClass::TrueCoincidence => 0,
            PairClass::SourceMistag => 1,
            PairClass::SourceBackground => 2,
            PairClass::Background => 3,
        }
    }
}

/// How heralds and signals are matched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MatchingMode {
    /// Global greedy one-to-one matching: candidates within the window are
    /// claimed in order of ascending |time difference|, each event at most
    /// once. Ties break on the smaller herald event id, then the smaller
    /// signal event id.
    OneToOne,
    /// Each herald takes its nearest signal in the window; signals may be
    /// shared by several heralds. Ties break on the smaller signal event id.
    NearestNeighbor,
}

/// One matched pair with its analysis observables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRecord {
    pub herald_id: u32,
    pub signal_id: u32,
    /// Herald minus signal time of arrival, ns.
    pub delta_t: f64,
    /// Pump wavelength reconstructed from the measured pair wavelengths, nm.
    pub lambda_p: f64,
    /// Truth class; `None` when the event stream carries no truth tags.
    pub class: Option<PairClass>,
}

fn check_sorted(name: &str, events: &[DetectedEvent]) -> Result<()> {
    let ordered = events
        .windows(2)
        .all(|w| (w[0].toa, w[0].event_id) <= (w[1].toa, w[1].event_id));
    if ordered {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} events must be sorted by (time of arrival, event id) before pairing"
        )))
    }
}

struct Candidate {
    abs_dt: f64,
    herald_id: u32,
    signal_id: u32,
    herald_idx: u32,
    signal_idx: u32,
}

/// Matches heralds to signals within ±`window` ns (inclusive). Both inputs
/// must be sorted by (time of arrival, event id). Returns (herald index,
/// signal index) pairs ordered by herald index.
pub fn find_pairs(
    heralds: &[DetectedEvent],
    signals: &[DetectedEvent],
    window: f64,
    mode: MatchingMode,
) -> Result<Vec<(u32, u32)>> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::Domain(format!(
            "pairing window must be positive, got {window} ns"
        )));
    }
    check_sorted("herald", heralds)?;
    check_sorted("signal", signals)?;
    if heralds.len() >= u32::MAX as usize || signals.len() >= u32::MAX as usize {
        return Err(Error::Domain("event list too long for pairing".into()));
    }
    let mut out = match mode {
        MatchingMode::OneToOne => one_to_one(heralds, signals, window),
        MatchingMode::NearestNeighbor => nearest_neighbor(heralds, signals, window),
    };
    out.sort_unstable();
    Ok(out)
}

fn one_to_one(heralds: &[DetectedEvent], signals: &[DetectedEvent], window: f64) -> Vec<(u32, u32)> {
    let mut candidates = Vec::new();
    let mut first = 0usize;
    for (hi, h) in heralds.iter().enumerate() {
        while first < signals.len() && signals[first].toa < h.toa - window {
            first += 1;
        }
        let mut j = first;
        while j < signals.len() && signals[j].toa <= h.toa + window {
            candidates.push(Candidate {
                abs_dt: (h.toa - signals[j].toa).abs(),
                herald_id: h.event_id,
                signal_id: signals[j].event_id,
                herald_idx: hi as u32,
                signal_idx: j as u32,
            });
            j += 1;
        }
    }
    candidates.sort_unstable_by(|a, b| {
        a.abs_dt
            .total_cmp(&b.abs_dt)
            .then_with(|| a.herald_id.cmp(&b.herald_id))
            .then_with(|| a.signal_id.cmp(&b.signal_id))
    });
    let mut herald_used = vec![false; heralds.len()];
    let mut signal_used = vec![false; signals.len()];
    let mut out = Vec::new();
    for c in &candidates {
        if !herald_used[c.herald_idx as usize] && !signal_used[c.signal_idx as usize] {
            herald_used[c.herald_idx as usize] = true;
            signal_used[c.signal_idx as usize] = true;
            out.push((c.herald_idx, c.signal_idx));
        }
    }
    out
}

fn nearest_neighbor(
    heralds: &[DetectedEvent],
    signals: &[DetectedEvent],
    window: f64,
) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut first = 0usize;
    for (hi, h) in heralds.iter().enumerate() {
        while first < signals.len() && signals[first].toa < h.toa - window {
            first += 1;
        }
        let mut best: Option<(f64, u32, u32)> = None;
        let mut j = first;
        while j < signals.len() && signals[j].toa <= h.toa + window {
            let key = ((h.toa - signals[j].toa).abs(), signals[j].event_id, j as u32);
            if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
            j += 1;
        }
        if let Some((_, _, idx)) = best {
            out.push((hi as u32, idx));
        }
    }
    out
}

/// Truth class of a matched (herald, signal) pair.
pub fn classify_pair(herald: &DetectedEvent, signal: &DetectedEvent) -> PairClass {
    let h_source = herald.origin == OriginTag::SourcePair;
    let s_source = signal.origin == OriginTag::SourcePair;
    match (h_source, s_source) {
        (true, true) => {
            if herald.pair_id.is_some() && herald.pair_id == signal.pair_id {
                PairClass::TrueCoincidence
            } else {
                PairClass::SourceMistag
            }
        }
        (false, false) => PairClass::Background,
        _ => PairClass::SourceBackground,
    }
}

/// Analysis observables of a matched pair: herald-minus-signal time
/// difference (ns) and the reconstructed pump wavelength (nm).
pub fn pair_observables(
    herald: &DetectedEvent,
    signal: &DetectedEvent,
    cfg: &DetectorConfig,
) -> Result<(f64, f64)> {
    if herald.stripe != Stripe::Herald || signal.stripe != Stripe::Signal {
        return Err(Error::Domain(
            "pair observables need a herald-stripe and a signal-stripe event".into(),
        ));
    }
    let lambda_h = cfg.measured_wavelength(herald);
    let lambda_s = cfg.measured_wavelength(signal);
    let lambda_p = reconstruct_pump_wavelength(lambda_h, lambda_s)?;
    Ok((herald.toa - signal.toa, lambda_p))
}

/// Matches, classifies, and assembles pair records in one pass. With
/// `keep_truth` unset the class column is left empty, as for event streams
/// read from files without truth tags.
pub fn build_pairs(
    heralds: &[DetectedEvent],
    signals: &[DetectedEvent],
    window: f64,
    mode: MatchingMode,
    cfg: &DetectorConfig,
    keep_truth: bool,
) -> Result<Vec<PairRecord>> {
    let matched = find_pairs(heralds, signals, window, mode)?;
    let mut out = Vec::with_capacity(matched.len());
    for (hi, si) in matched {
        let h = &heralds[hi as usize];
        let s = &signals[si as usize];
        let (delta_t, lambda_p) = pair_observables(h, s, cfg)?;
        out.push(PairRecord {
            herald_id: h.event_id,
            signal_id: s.event_id,
            delta_t,
            lambda_p,
            class: keep_truth.then(|| classify_pair(h, s)),
        });
    }
    Ok(out)
}
