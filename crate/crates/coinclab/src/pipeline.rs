//! End-to-end drivers: windowed simulation into detected events, the
//! analysis chain from pairing through fits to method curves, and the
//! artifact tree each command writes.
//!
//! Simulation walks fixed generation windows so memory stays bounded at any
//! run length, then the detected events are merged into one stream ordered
//! by (time tag, event id). Analysis is a pure function of that stream, so
//! analyzing a written events file reproduces the in-memory results bit for
//! bit.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::coincidence::{build_pairs, PairClass, PairRecord};
use crate::config::{Resolved, SweepConfig};
use crate::detector::detect;
use crate::discriminant::{threshold_for_efficiency, y_grid, DiscriminantModel};
use crate::error::{Error, Result};
use crate::events::{DetectedEvent, PhotonEvent, Stripe};
use crate::histfit::{
    bin_index, default_spectral_initialization, default_time_initialization, fit_spectral_model,
    fit_time_model, fit_time_model_with_pinned_mean, histogram, Histogram1D,
};
use crate::io::{
    read_events_csv, read_fits_json, write_curves_csv, write_events_csv, write_fits_json,
    write_hist_csv, write_pairs_csv, write_ygrid_csv, FitsFile,
};
use crate::metrics::{sweep, Method, MethodCurve, Totals};
use crate::spdc::{generate_background_window, generate_pairs_window, windows};

/// Counters from one simulated run.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SimStats {
    /// Pairs emitted by the source.
    pub emitted_pairs: u64,
    /// Pair photons whose offset pushed them past a run boundary.
    pub truncated_pair_photons: u64,
    /// Background photons generated on the herald stripe.
    pub herald_background: u64,
    /// Background photons generated on the signal stripe.
    pub signal_background: u64,
    /// Detector bookkeeping over all generated photons.
    pub tallies: crate::detector::DetectTallies,
    /// Detected events on the herald stripe.
    pub detected_herald: u64,
    /// Detected events on the signal stripe.
    pub detected_signal: u64,
}

fn time_order(a: &DetectedEvent, b: &DetectedEvent) -> std::cmp::Ordering {
    a.toa.total_cmp(&b.toa).then_with(|| a.event_id.cmp(&b.event_id))
}

/// Runs the source and the detector over the whole duration, one
/// generation window at a time, and returns the detected events ordered by
/// (time tag, event id).
pub fn simulate_detected(res: &Resolved) -> Result<(Vec<DetectedEvent>, SimStats)> {
    res.sim.validate()?;
    res.detector.validate()?;
    if res.seed.is_none() {
        return Err(Error::Config(
            "simulation needs an rng seed; set seed= in the config, COINCLAB_SEED, or --seed"
                .into(),
        ));
    }
    let sim = &res.sim;
    let expected = (2.0 * sim.pair_rate + sim.herald_background_rate + sim.signal_background_rate)
        * sim.duration
        * sim.quantum_efficiency;
    let mut detected: Vec<DetectedEvent> = Vec::with_capacity(expected as usize + expected as usize / 50 + 64);
    let mut photons: Vec<PhotonEvent> = Vec::new();
    let mut stats = SimStats::default();
    let (mut pair_seq, mut bg_herald_seq, mut bg_signal_seq) = (0u32, 0u32, 0u32);

    for w in windows(sim.duration) {
        photons.clear();
        let pairs_before = pair_seq;
        generate_pairs_window(sim, &w, &mut pair_seq, &mut photons)?;
        let new_pairs = u64::from(pair_seq - pairs_before);
        stats.emitted_pairs += new_pairs;
        stats.truncated_pair_photons += 2 * new_pairs - photons.len() as u64;

        let before = photons.len();
        generate_background_window(sim, Stripe::Herald, &w, &mut bg_herald_seq, &mut photons)?;
        stats.herald_background += (photons.len() - before) as u64;
        let before = photons.len();
        generate_background_window(sim, Stripe::Signal, &w, &mut bg_signal_seq, &mut photons)?;
        stats.signal_background += (photons.len() - before) as u64;

        let (mut chunk, tallies) = detect(&photons, &res.detector, sim.quantum_efficiency, sim.rng_seed);
        stats.tallies.absorb(&tallies);
        detected.append(&mut chunk);
    }

    detected.sort_unstable_by(time_order);
    for e in &detected {
        match e.stripe {
            Stripe::Herald => stats.detected_herald += 1,
            Stripe::Signal => stats.detected_signal += 1,
        }
    }
    Ok((detected, stats))
}

/// Everything one analysis pass produces from an event stream.
#[derive(Clone, Debug)]
pub struct Analysis {
    /// All matched pairs, truth-tagged when truth was available.
    pub pairs: Vec<PairRecord>,
    pub truth_available: bool,
    /// Pair counts by truth class, indexed like [`PairClass::ALL`].
    pub class_counts: Option<[u64; 4]>,
    pub dt_hist: Histogram1D,
    pub lambda_hist: Histogram1D,
    /// Per-bin counts by truth class for the time histogram.
    pub dt_class: Option<Vec<[u64; 4]>>,
    /// Per-bin counts by truth class for the wavelength histogram.
    pub lambda_class: Option<Vec<[u64; 4]>>,
    pub fits: Option<FitsFile>,
    /// True when the fits came from a frozen file instead of this run.
    pub fits_frozen: bool,
    pub model: Option<DiscriminantModel>,
    pub curves: Vec<MethodCurve>,
    pub totals: Totals,
    /// Why later stages were skipped, when they were.
    pub notes: Vec<String>,
}

/// Runs the full analysis chain: split by stripe, match pairs, histogram
/// the observables, fit the shapes, build the discriminant, and sweep the
/// selection methods.
///
/// An event stream with nothing to fit degrades instead of failing: the
/// skipped stages are recorded in `notes` and the artifacts that do not
/// apply stay empty. A fit that was attempted and failed is an error, as is
/// a frozen fits file whose parameters cannot form a discriminant.
pub fn analyze_events(
    events: &[DetectedEvent],
    truth_available: bool,
    res: &Resolved,
    frozen: Option<&FitsFile>,
) -> Result<Analysis> {
    res.detector.validate()?;
    let mut heralds = Vec::new();
    let mut signals = Vec::new();
    for e in events {
        match e.stripe {
            Stripe::Herald => heralds.push(*e),
            Stripe::Signal => signals.push(*e),
        }
    }
    heralds.sort_unstable_by(time_order);
    signals.sort_unstable_by(time_order);
    let pairs = build_pairs(
        &heralds,
        &signals,
        res.analysis.pairing_window,
        res.analysis.matching,
        &res.detector,
        truth_available,
    )?;
    drop(heralds);
    drop(signals);

    let dt_edges = res.analysis.dt_edges()?;
    let lambda_edges = res.analysis.lambda_edges(res.sim.pump_center)?;
    let dt_hist = histogram(pairs.iter().map(|p| p.delta_t), &dt_edges)?;
    let lambda_hist = histogram(pairs.iter().map(|p| p.lambda_p), &lambda_edges)?;

    let (class_counts, dt_class, lambda_class) = if truth_available {
        let mut totals = [0u64; 4];
        let mut by_dt = vec![[0u64; 4]; dt_hist.len()];
        let mut by_lambda = vec![[0u64; 4]; lambda_hist.len()];
        for p in &pairs {
            let k = p.class.expect("truth-tagged pairs carry a class").index();
            totals[k] += 1;
            if let Some(i) = bin_index(&dt_edges, p.delta_t) {
                by_dt[i][k] += 1;
            }
            if let Some(i) = bin_index(&lambda_edges, p.lambda_p) {
                by_lambda[i][k] += 1;
            }
        }
        (Some(totals), Some(by_dt), Some(by_lambda))
    } else {
        (None, None, None)
    };

    let mut notes = Vec::new();
    let (fits, fits_frozen) = match frozen {
        Some(f) => (Some(*f), true),
        None if dt_hist.total() == 0 => {
            notes.push("no matched pairs in the histogram windows; fits skipped".to_string());
            (None, false)
        }
        None => {
            let time_init = default_time_initialization(&dt_hist)?;
            let time = match res.analysis.pin_time_mean {
                Some(mean) => fit_time_model_with_pinned_mean(&dt_hist, &time_init, mean)?,
                None => fit_time_model(&dt_hist, &time_init)?,
            };
            let spectral_init = default_spectral_initialization(&lambda_hist)?;
            let spectral = fit_spectral_model(&lambda_hist, &spectral_init)?;
            let fits = FitsFile {
                time,
                spectral,
                lambda_window: (lambda_edges[0], lambda_edges[lambda_edges.len() - 1]),
                dt_window: (dt_edges[0], dt_edges[dt_edges.len() - 1]),
            };
            (Some(fits), false)
        }
    };

    let model = match &fits {
        None => None,
        Some(f) => match f.model() {
            Ok(m) => Some(m),
            Err(e) if frozen.is_some() => return Err(e),
            Err(e) => {
                notes.push(format!("discriminant skipped: {e}"));
                None
            }
        },
    };

    let tc_count = class_counts.map_or(0, |c| c[PairClass::TrueCoincidence.index()]);
    let totals = Totals { true_pairs: tc_count, emitted_pairs: None };
    let mut curves = Vec::new();
    if let Some(model) = &model {
        if !truth_available {
            notes.push("method curves need truth tags; skipped".to_string());
        } else if tc_count == 0 {
            notes.push("no true coincidences to sweep against; method curves skipped".to_string());
        } else {
            curves = build_curves(&pairs, model, &res.sweep, &totals, &mut notes)?;
        }
    }

    Ok(Analysis {
        pairs,
        truth_available,
        class_counts,
        dt_hist,
        lambda_hist,
        dt_class,
        lambda_class,
        fits,
        fits_frozen,
        model,
        curves,
        totals,
        notes,
    })
}

/// Builds one curve per selection method. Every method gets its parameter
/// grid from the quantiles of the true-coincidence statistic, so all curves
/// span the same target efficiencies and can be compared pointwise.
fn build_curves(
    pairs: &[PairRecord],
    model: &DiscriminantModel,
    sweep_cfg: &SweepConfig,
    totals: &Totals,
    notes: &mut Vec<String>,
) -> Result<Vec<MethodCurve>> {
    let targets = sweep_cfg.targets();
    let is_tc = |p: &&PairRecord| p.class == Some(PairClass::TrueCoincidence);
    let mut curves = Vec::new();

    for method in [Method::CombinedY, Method::TimeOnly, Method::SpectralOnly] {
        let stat: Box<dyn Fn(&PairRecord) -> f64> = match method {
            Method::CombinedY => Box::new(|p| model.y_of(p)),
            Method::TimeOnly => Box::new(|p| model.y_delta_t(p.delta_t)),
            Method::SpectralOnly => Box::new(|p| model.y_lambda(p.lambda_p)),
            Method::BoxCut { .. } => unreachable!(),
        };
        let tc_stats: Vec<f64> = pairs.iter().filter(is_tc).map(|p| stat(p)).collect();
        let grid = targets
            .iter()
            .map(|&t| threshold_for_efficiency(&tc_stats, t))
            .collect::<Result<Vec<_>>>()?;
        curves.push(sweep(pairs, model, method, &grid, totals)?);
    }

    // The box keeps its time cut fixed and sweeps the spectral half width,
    // so the quantiles come from the pairs that already pass in time.
    let halfwidth = sweep_cfg.box_time_halfwidth;
    let in_time: Vec<f64> = pairs
        .iter()
        .filter(is_tc)
        .filter(|p| (p.delta_t - model.time.mean).abs() <= halfwidth)
        .map(|p| (p.lambda_p - model.spectral.mean).abs())
        .collect();
    if in_time.is_empty() {
        notes.push(format!(
            "no true coincidences within {halfwidth} ns of the fitted peak; box curve skipped"
        ));
    } else {
        let reachable = in_time.len() as f64 / totals.true_pairs as f64;
        let grid = targets
            .iter()
            .map(|&t| threshold_for_efficiency(&in_time, (t / reachable).min(1.0)))
            .collect::<Result<Vec<_>>>()?;
        curves.push(sweep(pairs, model, Method::BoxCut { time_halfwidth: halfwidth }, &grid, totals)?);
    }
    Ok(curves)
}

#[derive(Serialize)]
struct ClassCountsOut {
    true_coincidence: u64,
    source_mistag: u64,
    source_background: u64,
    background: u64,
}

#[derive(Serialize)]
struct CurveInfo {
    method: &'static str,
    points: usize,
}

#[derive(Serialize)]
struct AnalysisSummary {
    pairs: u64,
    class_counts: Option<ClassCountsOut>,
    fits_frozen: bool,
    fits: Option<FitsFile>,
    curves: Vec<CurveInfo>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    truth_available: bool,
    config: Resolved,
    simulation: Option<SimStats>,
    analysis: Option<AnalysisSummary>,
}

const TOOL: &str = "coinclab";
const VERSION: &str = env!("CARGO_PKG_VERSION");

fn summarize(a: &Analysis) -> AnalysisSummary {
    AnalysisSummary {
        pairs: a.pairs.len() as u64,
        class_counts: a.class_counts.map(|c| ClassCountsOut {
            true_coincidence: c[0],
            source_mistag: c[1],
            source_background: c[2],
            background: c[3],
        }),
        fits_frozen: a.fits_frozen,
        fits: a.fits,
        curves: a
            .curves
            .iter()
            .map(|c| CurveInfo { method: c.method.label(), points: c.points.len() })
            .collect(),
        notes: a.notes.clone(),
    }
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_timings(path: &Path, stages: &[(&str, f64)]) -> Result<()> {
    let mut text = String::from("stage,seconds\n");
    let mut total = 0.0;
    for (name, seconds) in stages {
        text.push_str(&format!("{name},{seconds:.6}\n"));
        total += seconds;
    }
    text.push_str(&format!("total,{total:.6}\n"));
    std::fs::write(path, text)?;
    Ok(())
}

fn write_analysis_artifacts(dir: &Path, res: &Resolved, analysis: &Analysis) -> Result<()> {
    if res.output.emit_pairs {
        write_pairs_csv(&dir.join("pairs.csv"), &analysis.pairs)?;
    }
    write_hist_csv(&dir.join("dt_hist.csv"), &analysis.dt_hist, analysis.dt_class.as_deref())?;
    write_hist_csv(
        &dir.join("lambda_hist.csv"),
        &analysis.lambda_hist,
        analysis.lambda_class.as_deref(),
    )?;
    if let Some(fits) = &analysis.fits {
        write_fits_json(&dir.join("fits.json"), fits)?;
    }
    if !analysis.curves.is_empty() {
        write_curves_csv(&dir.join("curves.csv"), &analysis.curves)?;
    }
    if let Some(model) = &analysis.model {
        let rows = y_grid(
            model,
            res.ygrid.lambda_half_span,
            res.ygrid.lambda_step,
            res.ygrid.dt_half_span,
            res.ygrid.dt_step,
        )?;
        write_ygrid_csv(&dir.join("ygrid.csv"), &rows)?;
    }
    Ok(())
}

/// Simulates a run and writes `events.csv`, `manifest.json`, and
/// `timings.csv` into the output directory.
pub fn run_simulate(res: &Resolved, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let t = Instant::now();
    let (events, stats) = simulate_detected(res)?;
    let simulate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    write_events_csv(&out_dir.join("events.csv"), &events, true)?;
    let manifest = RunManifest {
        tool: TOOL,
        version: VERSION,
        command: "simulate",
        seed: res.seed,
        truth_available: true,
        config: res.clone(),
        simulation: Some(stats),
        analysis: None,
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    let write_s = t.elapsed().as_secs_f64();
    write_timings(&out_dir.join("timings.csv"), &[("simulate", simulate_s), ("write", write_s)])
}

/// Analyzes an events file and writes the analysis artifact tree.
pub fn run_analyze(
    events_path: &Path,
    res: &Resolved,
    frozen: Option<&FitsFile>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let t = Instant::now();
    let (events, truth) = read_events_csv(events_path)?;
    let read_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let analysis = analyze_events(&events, truth, res, frozen)?;
    let analyze_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    write_analysis_artifacts(out_dir, res, &analysis)?;
    let manifest = RunManifest {
        tool: TOOL,
        version: VERSION,
        command: "analyze",
        seed: res.seed,
        truth_available: truth,
        config: res.clone(),
        simulation: None,
        analysis: Some(summarize(&analysis)),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    let write_s = t.elapsed().as_secs_f64();
    write_timings(
        &out_dir.join("timings.csv"),
        &[("read", read_s), ("analyze", analyze_s), ("write", write_s)],
    )
}

/// Simulates and analyzes in one pass, writing the full artifact tree.
pub fn run_pipeline(res: &Resolved, frozen: Option<&FitsFile>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let t = Instant::now();
    let (events, stats) = simulate_detected(res)?;
    let simulate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let analysis = analyze_events(&events, true, res, frozen)?;
    let analyze_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    if res.output.emit_events {
        write_events_csv(&out_dir.join("events.csv"), &events, true)?;
    }
    drop(events);
    write_analysis_artifacts(out_dir, res, &analysis)?;
    let manifest = RunManifest {
        tool: TOOL,
        version: VERSION,
        command: "pipeline",
        seed: res.seed,
        truth_available: true,
        config: res.clone(),
        simulation: Some(stats),
        analysis: Some(summarize(&analysis)),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    let write_s = t.elapsed().as_secs_f64();
    write_timings(
        &out_dir.join("timings.csv"),
        &[("simulate", simulate_s), ("analyze", analyze_s), ("write", write_s)],
    )
}

/// Recomputes the method curves from an events file. The events must carry
/// truth tags; without them there is no efficiency axis to sweep.
pub fn run_sweep(
    events_path: &Path,
    res: &Resolved,
    frozen: Option<&FitsFile>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let t = Instant::now();
    let (events, truth) = read_events_csv(events_path)?;
    if !truth {
        return Err(Error::Domain(
            "the sweep needs truth-tagged events to rank methods by efficiency".into(),
        ));
    }
    let read_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let analysis = analyze_events(&events, true, res, frozen)?;
    if analysis.curves.is_empty() {
        return Err(Error::Domain(format!(
            "no method curves could be built: {}",
            analysis.notes.join("; ")
        )));
    }
    let analyze_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    write_curves_csv(&out_dir.join("curves.csv"), &analysis.curves)?;
    let manifest = RunManifest {
        tool: TOOL,
        version: VERSION,
        command: "sweep",
        seed: res.seed,
        truth_available: true,
        config: res.clone(),
        simulation: None,
        analysis: Some(summarize(&analysis)),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    let write_s = t.elapsed().as_secs_f64();
    write_timings(
        &out_dir.join("timings.csv"),
        &[("read", read_s), ("sweep", analyze_s), ("write", write_s)],
    )
}

/// Samples the discriminant surface of a saved fits file onto the
/// configured grid.
pub fn run_ygrid(fits_path: &Path, res: &Resolved, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let t = Instant::now();
    let fits = read_fits_json(fits_path)?;
    let model = fits.model()?;
    let rows = y_grid(
        &model,
        res.ygrid.lambda_half_span,
        res.ygrid.lambda_step,
        res.ygrid.dt_half_span,
        res.ygrid.dt_step,
    )?;
    write_ygrid_csv(&out_dir.join("ygrid.csv"), &rows)?;
    let manifest = RunManifest {
        tool: TOOL,
        version: VERSION,
        command: "ygrid",
        seed: res.seed,
        truth_available: false,
        config: res.clone(),
        simulation: None,
        analysis: None,
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    let total_s = t.elapsed().as_secs_f64();
    write_timings(&out_dir.join("timings.csv"), &[("ygrid", total_s)])
}
