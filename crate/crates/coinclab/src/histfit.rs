//! Histograms and weighted least-squares fits of the two analysis
//! distributions: the pair time difference (Gaussian peak over an
//! exponential accidental floor) and the reconstructed pump wavelength
//! (Gaussian line over a linear background with a kink at its apex).
//!
//! The fitter is a damped Gauss-Newton loop with analytic derivatives.
//! Weights are Poisson-like, sigma = max(1, sqrt(count)), so empty bins
//! still constrain the background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Errors specific to histogramming and fitting.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("need at least {needed} populated bins, found {found}")]
    TooFewBins { needed: usize, found: usize },
    #[error("histogram bins must share one width for fitting, found {0} and {1}")]
    NonUniformBins(f64, f64),
    #[error("invalid fit input: {0}")]
    BadInput(String),
    #[error("normal equations are singular")]
    Singular,
    #[error(
        "no convergence after {iterations} iterations; best chi2 {chi_square:.6e} at {params:?}"
    )]
    NonConvergence {
        iterations: usize,
        chi_square: f64,
        /// Best parameter vector reached before giving up.
        params: Vec<f64>,
    },
}

/// Counts over a strictly increasing edge grid. Bin `i` covers
/// `[edges[i], edges[i+1])`; the last bin also includes its upper edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram1D {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Values below the first edge.
    pub underflow: u64,
    /// Values above the last edge.
    pub overflow: u64,
}

impl Histogram1D {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonempty_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn center(&self, i: usize) -> f64 {
        (self.edges[i] + self.edges[i + 1]) / 2.0
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// The common bin width. Errors when bins are not uniform, since the
    /// fit models convert amplitudes through it.
    pub fn bin_width(&self) -> std::result::Result<f64, FitError> {
        let w0 = self.edges[1] - self.edges[0];
        for pair in self.edges.windows(2) {
            let w = pair[1] - pair[0];
            if (w - w0).abs() > 1e-9 * w0.abs() {
                return Err(FitError::NonUniformBins(w0, w));
            }
        }
        Ok(w0)
    }
}

/// Builds an edge grid of the given bin width whose bin centers include
/// `anchor`, covering at least ±`half_span` around it. Aligning centers to a
/// known comb (the time quantizer grid, or the grid of reconstructed
/// wavelengths) keeps discrete observables from aliasing across bins.
pub fn edges_centered_on(anchor: f64, width: f64, half_span: f64) -> Result<Vec<f64>> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {width}")));
    }
    if !(half_span.is_finite() && half_span >= width) {
        return Err(Error::Config(format!(
            "histogram half span {half_span} must cover at least one bin width {width}"
        )));
    }
    let k = (half_span / width).round() as i64;
    Ok((-k..=k + 1).map(|j| anchor + (j as f64 - 0.5) * width).collect())
}

/// Bin index of a value on an edge grid, `None` outside it. The last bin
/// includes its upper edge, matching [`histogram`].
pub fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    if v.is_nan() || v < edges[0] || v > edges[edges.len() - 1] {
        return None;
    }
    let idx = edges.partition_point(|e| *e <= v) - 1;
    Some(idx.min(edges.len() - 2))
}

/// Histograms values onto the given edges.
pub fn histogram(values: impl IntoIterator<Item = f64>, edges: &[f64]) -> Result<Histogram1D> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("histogram edges must be strictly increasing".into()));
    }
    let mut h = Histogram1D {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for v in values {
        if v.is_nan() {
            return Err(Error::Domain("cannot histogram a NaN value".into()));
        }
        match bin_index(edges, v) {
            Some(idx) => h.counts[idx] += 1,
            None if v < edges[0] => h.underflow += 1,
            None => h.overflow += 1,
        }
    }
    Ok(h)
}

/// Result of a generic least-squares fit with `P` parameters.
#[derive(Clone, Debug)]
pub struct LmFit<const P: usize> {
    pub params: [f64; P],
    /// One-sigma parameter uncertainties from the curvature at the optimum.
    pub errors: [f64; P],
    pub quality: FitQuality,
}

/// Goodness-of-fit summary.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitQuality {
    pub chi_square: f64,
    pub reduced_chi_square: f64,
    pub points: usize,
    pub parameters: usize,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 500;
const PARAM_TOLERANCE: f64 = 1e-8;
const COST_TOLERANCE: f64 = 1e-10;
const DAMPING_START: f64 = 1e-3;
const DAMPING_LIMIT: f64 = 1e14;

fn solve<const P: usize>(mut a: [[f64; P]; P], mut b: [f64; P]) -> Option<[f64; P]> {
    for col in 0..P {
        let pivot = (col..P).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[pivot][col].abs() > 1e-300) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..P {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..P {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; P];
    for col in (0..P).rev() {
        let mut acc = b[col];
        for k in col + 1..P {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

fn chi_square<const P: usize>(
    model: &impl Fn(&[f64; P], f64) -> (f64, [f64; P]),
    p: &[f64; P],
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
) -> f64 {
    let mut cost = 0.0;
    for i in 0..x.len() {
        let (m, _) = model(p, x[i]);
        let r = (y[i] - m) / sigma[i];
        cost += r * r;
    }
    cost
}

/// Damped Gauss-Newton least squares over an arbitrary model with analytic
/// gradient. `guard` marks the valid parameter region; steps leaving it are
/// rejected and retried with stronger damping. Converges on a relative
/// parameter change below 1e-8 or a relative cost change below 1e-10;
/// otherwise errors with the best parameters reached.
pub fn fit_least_squares<const P: usize>(
    x: &[f64],
    y: &[f64],
    sigma: &[f64],
    init: [f64; P],
    model: impl Fn(&[f64; P], f64) -> (f64, [f64; P]),
    guard: impl Fn(&[f64; P]) -> bool,
) -> std::result::Result<LmFit<P>, FitError> {
    if x.len() != y.len() || x.len() != sigma.len() {
        return Err(FitError::BadInput(format!(
            "mismatched input lengths: {} x, {} y, {} sigma",
            x.len(),
            y.len(),
            sigma.len()
        )));
    }
    if x.len() <= P {
        return Err(FitError::BadInput(format!(
            "{} points cannot constrain {P} parameters",
            x.len()
        )));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(FitError::BadInput("weights must be positive and finite".into()));
    }
    if !guard(&init) || init.iter().any(|v| !v.is_finite()) {
        return Err(FitError::BadInput(format!("initial parameters invalid: {init:?}")));
    }
    let mut p = init;
    let mut cost = chi_square(&model, &p, x, y, sigma);
    if !cost.is_finite() {
        return Err(FitError::BadInput("model is not finite at the initial parameters".into()));
    }
    let mut damping = DAMPING_START;
    let mut iterations = 0;
    let mut converged = false;
    'outer: while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = [[0.0f64; P]; P];
        let mut grad = [0.0f64; P];
        for i in 0..x.len() {
            let (m, g) = model(&p, x[i]);
            let r = (y[i] - m) / sigma[i];
            for j in 0..P {
                let gj = g[j] / sigma[i];
                grad[j] += gj * r;
                for k in j..P {
                    jtj[j][k] += gj * g[k] / sigma[i];
                }
            }
        }
        for j in 0..P {
            for k in 0..j {
                jtj[j][k] = jtj[k][j];
            }
        }
        let max_diag = (0..P).map(|j| jtj[j][j]).fold(0.0f64, f64::max);
        if !max_diag.is_finite() {
            break;
        }
        if grad.iter().all(|g| g.abs() < 1e-300) {
            converged = true;
            break;
        }
        loop {
            let mut damped = jtj;
            for j in 0..P {
                damped[j][j] += damping * jtj[j][j].max(1e-12 * max_diag).max(1e-300);
            }
            if let Some(step) = solve(damped, grad) {
                let mut candidate = p;
                for j in 0..P {
                    candidate[j] += step[j];
                }
                if guard(&candidate) {
                    let c = chi_square(&model, &candidate, x, y, sigma);
                    if c.is_finite() && c <= cost {
                        let small_step = (0..P)
                            .all(|j| step[j].abs() <= PARAM_TOLERANCE * p[j].abs().max(1e-12));
                        let small_gain = cost - c <= COST_TOLERANCE * cost.max(1e-300);
                        p = candidate;
                        cost = c;
                        damping = (damping / 3.0).max(1e-12);
                        if small_step || small_gain {
                            converged = true;
                            break 'outer;
                        }
                        break;
                    }
                }
            }
            damping *= 10.0;
            if damping > DAMPING_LIMIT {
                break 'outer;
            }
        }
    }
    if !converged {
        return Err(FitError::NonConvergence {
            iterations,
            chi_square: cost,
            params: p.to_vec(),
        });
    }
    // Curvature-based uncertainties: invert JtJ at the optimum, with a tiny
    // progressive ridge if a direction is degenerate.
    let mut jtj = [[0.0f64; P]; P];
    for i in 0..x.len() {
        let (_, g) = model(&p, x[i]);
        for j in 0..P {
            for k in j..P {
                jtj[j][k] += g[j] * g[k] / (sigma[i] * sigma[i]);
            }
        }
    }
    for j in 0..P {
        for k in 0..j {
            jtj[j][k] = jtj[k][j];
        }
    }
    let max_diag = (0..P).map(|j| jtj[j][j]).fold(f64::MIN_POSITIVE, f64::max);
    let mut errors = None;
    let mut ridge = 0.0;
    for _ in 0..6 {
        let mut a = jtj;
        for j in 0..P {
            a[j][j] += ridge;
        }
        let mut cols = [[0.0f64; P]; P];
        let mut ok = true;
        for j in 0..P {
            let mut unit = [0.0f64; P];
            unit[j] = 1.0;
            match solve(a, unit) {
                Some(col) => cols[j] = col,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let mut e = [0.0f64; P];
            for j in 0..P {
                e[j] = cols[j][j].max(0.0).sqrt().min(1e300);
            }
            errors = Some(e);
            break;
        }
        ridge = if ridge == 0.0 { 1e-12 * max_diag } else { ridge * 100.0 };
    }
    let errors = errors.ok_or(FitError::Singular)?;
    let dof = (x.len() - P).max(1);
    Ok(LmFit {
        params: p,
        errors,
        quality: FitQuality {
            chi_square: cost,
            reduced_chi_square: cost / dof as f64,
            points: x.len(),
            parameters: P,
            iterations,
        },
    })
}

/// Parameters of the pair time difference model: a Gaussian peak of
/// `amplitude` counts (integral, not height) over an exponential accidental
/// floor `bg_amplitude * exp(-|t| / bg_scale)` in counts per bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFitParams {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub bg_amplitude: f64,
    pub bg_scale: f64,
}

/// Parameters of the reconstructed pump wavelength model: a Gaussian line of
/// `amplitude` counts over a linear background `bg_slope * |x - bg_apex| +
/// bg_level` in counts per bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralFitParams {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub bg_slope: f64,
    pub bg_apex: f64,
    pub bg_level: f64,
}

/// A completed time-difference fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimeFit {
    pub params: TimeFitParams,
    /// One-sigma uncertainties, same layout as the parameters.
    pub errors: TimeFitParams,
    pub quality: FitQuality,
}

/// A completed spectral fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralFit {
    pub params: SpectralFitParams,
    pub errors: SpectralFitParams,
    pub quality: FitQuality,
}

fn gauss_terms(amplitude: f64, mean: f64, sigma: f64, width: f64, x: f64) -> (f64, f64, f64, f64) {
    let z = (x - mean) / sigma;
    let e = (-0.5 * z * z).exp();
    if e == 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let unit = width / ((2.0 * std::f64::consts::PI).sqrt() * sigma) * e;
    (
        amplitude * unit,
        unit,
        amplitude * unit * z / sigma,
        amplitude * unit * (z * z - 1.0) / sigma,
    )
}

fn time_model(width: f64) -> impl Fn(&[f64; 5], f64) -> (f64, [f64; 5]) {
    move |p, x| {
        let [n, mu, sigma, c, b] = *p;
        let (peak, d_n, d_mu, d_sigma) = gauss_terms(n, mu, sigma, width, x);
        let decay = (-x.abs() / b).exp();
        let d_b = if decay == 0.0 { 0.0 } else { c * decay * x.abs() / (b * b) };
        (peak + c * decay, [d_n, d_mu, d_sigma, decay, d_b])
    }
}

fn spectral_model(width: f64) -> impl Fn(&[f64; 6], f64) -> (f64, [f64; 6]) {
    move |p, x| {
        let [n, mu, sigma, a, apex, level] = *p;
        let (peak, d_n, d_mu, d_sigma) = gauss_terms(n, mu, sigma, width, x);
        let r = (x - apex).abs();
        // Subgradient 0 exactly at the kink.
        let d_apex = if x == apex { 0.0 } else { -a * (x - apex).signum() };
        (peak + a * r + level, [d_n, d_mu, d_sigma, r, d_apex, 1.0])
    }
}

fn fit_inputs(
    hist: &Histogram1D,
    parameters: usize,
) -> std::result::Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64), FitError> {
    let width = hist.bin_width()?;
    if hist.total() == 0 {
        return Err(FitError::EmptyHistogram);
    }
    let needed = parameters + 2;
    if hist.nonempty_bins() < needed {
        return Err(FitError::TooFewBins { needed, found: hist.nonempty_bins() });
    }
    let x = hist.centers();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = y.iter().map(|&c| c.sqrt().max(1.0)).collect();
    Ok((x, y, sigma, width))
}

/// Fits the pair time difference histogram. The peak position is kept
/// inside the histogram span and the accidental floor positive, so a
/// converged fit is usable as a density. The positivity bounds are strict:
/// an iterate landing exactly on zero would pin the fit where every
/// further step is rejected.
pub fn fit_time_model(
    hist: &Histogram1D,
    init: &TimeFitParams,
) -> std::result::Result<TimeFit, FitError> {
    let (x, y, sigma, width) = fit_inputs(hist, 5)?;
    let (lo, hi) = (hist.edges[0], hist.edges[hist.edges.len() - 1]);
    let start = [init.amplitude, init.mean, init.sigma, init.bg_amplitude, init.bg_scale];
    let fit = fit_least_squares(&x, &y, &sigma, start, time_model(width), |p| {
        p[2] > 0.0 && p[4] > 0.0 && p[3] > 0.0 && (lo..=hi).contains(&p[1])
    })?;
    let [amplitude, mean, sigma_p, bg_amplitude, bg_scale] = fit.params;
    let [e_n, e_mu, e_sigma, e_c, e_b] = fit.errors;
    Ok(TimeFit {
        params: TimeFitParams { amplitude, mean, sigma: sigma_p, bg_amplitude, bg_scale },
        errors: TimeFitParams {
            amplitude: e_n,
            mean: e_mu,
            sigma: e_sigma,
            bg_amplitude: e_c,
            bg_scale: e_b,
        },
        quality: fit.quality,
    })
}

/// Fits the time model with the peak position frozen, for runs where the
/// pair emission offset is known a priori.
pub fn fit_time_model_with_pinned_mean(
    hist: &Histogram1D,
    init: &TimeFitParams,
    mean: f64,
) -> std::result::Result<TimeFit, FitError> {
    let (x, y, sigma, width) = fit_inputs(hist, 4)?;
    let start = [init.amplitude, init.sigma, init.bg_amplitude, init.bg_scale];
    let model = time_model(width);
    let pinned = move |p: &[f64; 4], x: f64| {
        let (m, g) = model(&[p[0], mean, p[1], p[2], p[3]], x);
        (m, [g[0], g[2], g[3], g[4]])
    };
    let fit = fit_least_squares(&x, &y, &sigma, start, pinned, |p| {
        p[1] > 0.0 && p[3] > 0.0 && p[2] > 0.0
    })?;
    let [amplitude, sigma_p, bg_amplitude, bg_scale] = fit.params;
    let [e_n, e_sigma, e_c, e_b] = fit.errors;
    Ok(TimeFit {
        params: TimeFitParams { amplitude, mean, sigma: sigma_p, bg_amplitude, bg_scale },
        errors: TimeFitParams {
            amplitude: e_n,
            mean: 0.0,
            sigma: e_sigma,
            bg_amplitude: e_c,
            bg_scale: e_b,
        },
        quality: fit.quality,
    })
}

/// Fits the reconstructed pump wavelength histogram. The line position is
/// kept inside the histogram span and the background positive across it,
/// so a converged fit is usable as a density. The positivity bound is
/// strict: an iterate landing exactly on zero would pin the fit where
/// every further step is rejected.
pub fn fit_spectral_model(
    hist: &Histogram1D,
    init: &SpectralFitParams,
) -> std::result::Result<SpectralFit, FitError> {
    let (x, y, sigma, width) = fit_inputs(hist, 6)?;
    let (lo, hi) = (hist.edges[0], hist.edges[hist.edges.len() - 1]);
    let start = [init.amplitude, init.mean, init.sigma, init.bg_slope, init.bg_apex, init.bg_level];
    let fit = fit_least_squares(&x, &y, &sigma, start, spectral_model(width), |p| {
        let bg = |x: f64| p[3] * (x - p[4]).abs() + p[5];
        p[2] > 0.0 && (lo..=hi).contains(&p[1]) && bg(lo).min(bg(hi)).min(p[5]) > 0.0
    })?;
    let [amplitude, mean, sigma_p, bg_slope, bg_apex, bg_level] = fit.params;
    let [e_n, e_mu, e_sigma, e_a, e_apex, e_level] = fit.errors;
    Ok(SpectralFit {
        params: SpectralFitParams { amplitude, mean, sigma: sigma_p, bg_slope, bg_apex, bg_level },
        errors: SpectralFitParams {
            amplitude: e_n,
            mean: e_mu,
            sigma: e_sigma,
            bg_slope: e_a,
            bg_apex: e_apex,
            bg_level: e_level,
        },
        quality: fit.quality,
    })
}

struct PeakSeed {
    mode_center: f64,
    peak_count: f64,
    sigma: f64,
    amplitude: f64,
    /// Outer-quartile bins by distance from the mode: (|center - mode|,
    /// center, count), sorted by distance.
    outer: Vec<(f64, f64, f64)>,
}

fn peak_seed(hist: &Histogram1D) -> std::result::Result<PeakSeed, FitError> {
    let width = hist.bin_width()?;
    if hist.total() == 0 {
        return Err(FitError::EmptyHistogram);
    }
    let counts = &hist.counts;
    let mode = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let mode_center = hist.center(mode);
    let peak_count = counts[mode] as f64;
    let mut by_distance: Vec<(f64, f64, f64)> = (0..counts.len())
        .map(|i| ((hist.center(i) - mode_center).abs(), hist.center(i), counts[i] as f64))
        .collect();
    by_distance.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let quart = (counts.len() + 3) / 4;
    let mut outer: Vec<(f64, f64, f64)> = by_distance[counts.len() - quart..].to_vec();
    outer.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut outer_counts: Vec<f64> = outer.iter().map(|o| o.2).collect();
    outer_counts.sort_unstable_by(f64::total_cmp);
    let bg_level = if outer_counts.len() % 2 == 1 {
        outer_counts[outer_counts.len() / 2]
    } else {
        (outer_counts[outer_counts.len() / 2 - 1] + outer_counts[outer_counts.len() / 2]) / 2.0
    };
    // Full width at half maximum above the background estimate, walked out
    // from the mode bin; a lone spike bottoms out at one bin width.
    let half = bg_level + (peak_count - bg_level) / 2.0;
    let mut left = mode;
    while left > 0 && counts[left - 1] as f64 >= half {
        left -= 1;
    }
    let mut right = mode;
    while right + 1 < counts.len() && counts[right + 1] as f64 >= half {
        right += 1;
    }
    let fwhm = (right - left + 1) as f64 * width;
    let sigma = (fwhm / 2.354_820_045).max(width);
    let amplitude =
        ((peak_count - bg_level).max(0.0)) * (2.0 * std::f64::consts::PI).sqrt() * sigma / width;
    Ok(PeakSeed { mode_center, peak_count, sigma, amplitude, outer })
}

/// Splits the outer-region bins into a near and a far half by distance and
/// returns ((mean distance, mean count), (mean distance, mean count)).
fn outer_halves(outer: &[(f64, f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let mid = outer.len() / 2;
    let avg = |part: &[(f64, f64, f64)]| {
        let n = part.len().max(1) as f64;
        (
            part.iter().map(|o| o.0).sum::<f64>() / n,
            part.iter().map(|o| o.2).sum::<f64>() / n,
        )
    };
    (avg(&outer[..mid]), avg(&outer[mid..]))
}

/// Data-driven starting point for [`fit_time_model`]: peak position and
/// width from the mode region, background level from the outer quartile of
/// bins, decay constant from the count ratio between the near and far outer
/// region.
pub fn default_time_initialization(
    hist: &Histogram1D,
) -> std::result::Result<TimeFitParams, FitError> {
    let seed = peak_seed(hist)?;
    let span = hist.edges[hist.edges.len() - 1] - hist.edges[0];
    // The accidental floor decays in |t| from zero, not from the peak, so
    // measure the outer halves in |t|.
    let mut outer_abs: Vec<(f64, f64, f64)> =
        seed.outer.iter().map(|&(_, c, n)| (c.abs(), c, n)).collect();
    outer_abs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let ((r_near, c_near), (r_far, c_far)) = outer_halves(&outer_abs);
    let flat_cap = 100.0 * span;
    let bg_scale = if c_near > 0.0 && c_far > 0.0 && c_far < c_near && r_far > r_near {
        ((r_far - r_near) / (c_near / c_far).ln()).clamp(hist.bin_width()?, flat_cap)
    } else {
        flat_cap
    };
    // Half a count keeps the start strictly inside the fit's allowed
    // region even when the outer bins are all empty.
    let bg_amplitude =
        (c_near * (r_near / bg_scale).exp()).min(seed.peak_count.max(1.0)).max(0.5);
    Ok(TimeFitParams {
        amplitude: seed.amplitude,
        mean: seed.mode_center,
        sigma: seed.sigma,
        bg_amplitude,
        bg_scale,
    })
}

/// Data-driven starting point for [`fit_spectral_model`]: peak position and
/// width from the mode region, linear background slope and level from the
/// near and far outer region, apex at the mode.
pub fn default_spectral_initialization(
    hist: &Histogram1D,
) -> std::result::Result<SpectralFitParams, FitError> {
    let seed = peak_seed(hist)?;
    let ((r_near, c_near), (r_far, c_far)) = outer_halves(&seed.outer);
    let bg_slope = if r_far > r_near { (c_far - c_near) / (r_far - r_near) } else { 0.0 };
    // Start strictly inside the fit's allowed region: at least half a count
    // of background level, and a falling line that keeps half of it at the
    // farthest edge.
    let bg_level = (c_near - bg_slope * r_near).max(0.5);
    let reach = (seed.mode_center - hist.edges[0])
        .max(hist.edges[hist.edges.len() - 1] - seed.mode_center);
    let bg_slope = bg_slope.max(-bg_level / (2.0 * reach));
    Ok(SpectralFitParams {
        amplitude: seed.amplitude,
        mean: seed.mode_center,
        sigma: seed.sigma,
        bg_slope,
        bg_apex: seed.mode_center,
        bg_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn time_truth() -> TimeFitParams {
        TimeFitParams {
            amplitude: 20_000.0,
            mean: 0.0,
            sigma: 7.5,
            bg_amplitude: 600.0,
            bg_scale: 700.0,
        }
    }

    fn spectral_truth() -> SpectralFitParams {
        SpectralFitParams {
            amplitude: 20_000.0,
            mean: 405.0,
            sigma: 0.36,
            bg_slope: -40.0,
            bg_apex: 405.0,
            bg_level: 300.0,
        }
    }

    fn time_counts(p: &TimeFitParams, edges: &[f64], noise: Option<u64>) -> Histogram1D {
        let width = edges[1] - edges[0];
        let model = time_model(width);
        let arr = [p.amplitude, p.mean, p.sigma, p.bg_amplitude, p.bg_scale];
        synth(edges, noise, |x| model(&arr, x).0)
    }

    fn spectral_counts(p: &SpectralFitParams, edges: &[f64], noise: Option<u64>) -> Histogram1D {
        let width = edges[1] - edges[0];
        let model = spectral_model(width);
        let arr = [p.amplitude, p.mean, p.sigma, p.bg_slope, p.bg_apex, p.bg_level];
        synth(edges, noise, |x| model(&arr, x).0)
    }

    fn synth(edges: &[f64], noise: Option<u64>, mean: impl Fn(f64) -> f64) -> Histogram1D {
        let mut rng = noise.map(ChaCha8Rng::seed_from_u64);
        let counts = (0..edges.len() - 1)
            .map(|i| {
                let m = mean((edges[i] + edges[i + 1]) / 2.0);
                match &mut rng {
                    Some(r) if m > 0.0 => Poisson::new(m).unwrap().sample(r) as u64,
                    _ => m.round().max(0.0) as u64,
                }
            })
            .collect();
        Histogram1D { edges: edges.to_vec(), counts, underflow: 0, overflow: 0 }
    }

    fn time_edges() -> Vec<f64> {
        edges_centered_on(0.0, 1.5625, 200.0).unwrap()
    }

    fn spectral_edges() -> Vec<f64> {
        edges_centered_on(405.0, 0.070625, 3.0).unwrap()
    }

    #[test]
    fn histogram_places_values_and_tallies_spill() {
        let edges = [0.0, 1.0, 2.0, 3.0];
        let h = histogram([0.0, 0.5, 1.0, 2.999, 3.0, -0.1, 3.5], &edges).unwrap();
        assert_eq!(h.counts, vec![2, 1, 2], "last edge belongs to the last bin");
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.total(), 5);
        assert_eq!(h.centers(), vec![0.5, 1.5, 2.5]);
        assert!(histogram([f64::NAN], &edges).is_err());
        assert!(histogram([0.0], &[1.0, 1.0]).is_err());
        assert!(histogram([0.0], &[1.0]).is_err());
    }

    #[test]
    fn centered_edges_put_the_anchor_on_a_bin_center() {
        let edges = edges_centered_on(405.0, 0.07, 3.0).unwrap();
        let h = Histogram1D { counts: vec![0; edges.len() - 1], edges, underflow: 0, overflow: 0 };
        let width = h.bin_width().unwrap();
        assert!((width - 0.07).abs() < 1e-12);
        let nearest = (0..h.len())
            .map(|i| (h.center(i) - 405.0).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-9, "anchor off center by {nearest}");
        assert!(h.edges[0] <= 402.0 && h.edges[h.len()] >= 408.0);
        assert!(edges_centered_on(0.0, -1.0, 3.0).is_err());
        assert!(edges_centered_on(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn nonuniform_bins_are_rejected_for_fitting() {
        let h = histogram([0.5, 1.5], &[0.0, 1.0, 3.0]).unwrap();
        assert!(matches!(h.bin_width(), Err(FitError::NonUniformBins(..))));
        assert!(matches!(
            fit_time_model(&h, &time_truth()),
            Err(FitError::NonUniformBins(..))
        ));
    }

    #[test]
    fn time_fit_recovers_noiseless_parameters() {
        let truth = time_truth();
        let hist = time_counts(&truth, &time_edges(), None);
        let init = default_time_initialization(&hist).unwrap();
        let fit = fit_time_model(&hist, &init).unwrap();
        let p = fit.params;
        assert!((p.amplitude - truth.amplitude).abs() / truth.amplitude < 0.01);
        assert!(p.mean.abs() < 0.05);
        assert!((p.sigma - truth.sigma).abs() / truth.sigma < 0.01);
        assert!((p.bg_amplitude - truth.bg_amplitude).abs() / truth.bg_amplitude < 0.01);
        assert!((p.bg_scale - truth.bg_scale).abs() / truth.bg_scale < 0.02);
        // Only integer rounding separates the data from the model here.
        assert!(fit.quality.reduced_chi_square < 0.05);
    }

    #[test]
    fn time_fit_is_statistically_consistent_on_poisson_data() {
        let truth = time_truth();
        let hist = time_counts(&truth, &time_edges(), Some(271));
        let init = default_time_initialization(&hist).unwrap();
        let fit = fit_time_model(&hist, &init).unwrap();
        let q = fit.quality;
        assert!(
            q.reduced_chi_square > 0.7 && q.reduced_chi_square < 1.3,
            "reduced chi2 {}",
            q.reduced_chi_square
        );
        let p = fit.params;
        let e = fit.errors;
        assert!((p.amplitude - truth.amplitude).abs() < 5.0 * e.amplitude);
        assert!((p.mean - truth.mean).abs() < 5.0 * e.mean);
        assert!((p.sigma - truth.sigma).abs() < 5.0 * e.sigma);
        assert!((p.bg_amplitude - truth.bg_amplitude).abs() < 5.0 * e.bg_amplitude);
        assert!((p.bg_scale - truth.bg_scale).abs() < 5.0 * e.bg_scale);
        assert!(e.amplitude > 0.0 && e.sigma > 0.0);
        // The peak integral is ~20k counts, so its error sits near sqrt(N).
        assert!(e.amplitude > 50.0 && e.amplitude < 500.0, "error {}", e.amplitude);
    }

    #[test]
    fn spectral_fit_recovers_noiseless_parameters() {
        let truth = spectral_truth();
        let hist = spectral_counts(&truth, &spectral_edges(), None);
        let init = default_spectral_initialization(&hist).unwrap();
        let fit = fit_spectral_model(&hist, &init).unwrap();
        let p = fit.params;
        assert!((p.amplitude - truth.amplitude).abs() / truth.amplitude < 0.01);
        assert!((p.mean - truth.mean).abs() < 0.002);
        assert!((p.sigma - truth.sigma).abs() / truth.sigma < 0.01);
        assert!((p.bg_slope - truth.bg_slope).abs() / truth.bg_slope.abs() < 0.05);
        assert!((p.bg_apex - truth.bg_apex).abs() < 0.05);
        assert!((p.bg_level - truth.bg_level).abs() / truth.bg_level < 0.02);
        assert!(fit.quality.reduced_chi_square < 0.05);
    }

    #[test]
    fn spectral_fit_is_statistically_consistent_on_poisson_data() {
        let truth = spectral_truth();
        let hist = spectral_counts(&truth, &spectral_edges(), Some(277));
        let init = default_spectral_initialization(&hist).unwrap();
        let fit = fit_spectral_model(&hist, &init).unwrap();
        let q = fit.quality;
        assert!(
            q.reduced_chi_square > 0.7 && q.reduced_chi_square < 1.3,
            "reduced chi2 {}",
            q.reduced_chi_square
        );
        let p = fit.params;
        let e = fit.errors;
        assert!((p.mean - truth.mean).abs() < 5.0 * e.mean);
        assert!((p.sigma - truth.sigma).abs() < 5.0 * e.sigma);
        assert!((p.bg_slope - truth.bg_slope).abs() < 5.0 * e.bg_slope);
        assert!((p.bg_level - truth.bg_level).abs() < 5.0 * e.bg_level);
    }

    #[test]
    fn default_initialization_lands_near_the_final_fit() {
        let t_hist = time_counts(&time_truth(), &time_edges(), Some(273));
        let t_init = default_time_initialization(&t_hist).unwrap();
        let t_fit = fit_time_model(&t_hist, &t_init).unwrap().params;
        for (i, f) in [
            (t_init.amplitude, t_fit.amplitude),
            (t_init.sigma, t_fit.sigma),
            (t_init.bg_amplitude, t_fit.bg_amplitude),
            (t_init.bg_scale, t_fit.bg_scale),
        ] {
            assert!(i / f > 0.5 && i / f < 1.5, "init {i} vs fit {f}");
        }
        assert!((t_init.mean - t_fit.mean).abs() < 2.0 * t_hist.bin_width().unwrap());

        let s_hist = spectral_counts(&spectral_truth(), &spectral_edges(), Some(274));
        let s_init = default_spectral_initialization(&s_hist).unwrap();
        let s_fit = fit_spectral_model(&s_hist, &s_init).unwrap().params;
        for (i, f) in [
            (s_init.amplitude, s_fit.amplitude),
            (s_init.sigma, s_fit.sigma),
            (s_init.bg_slope, s_fit.bg_slope),
            (s_init.bg_level, s_fit.bg_level),
        ] {
            assert!(i / f > 0.5 && i / f < 1.5, "init {i} vs fit {f}");
        }
        assert!((s_init.bg_apex - s_fit.bg_apex).abs() < 0.2);
    }

    #[test]
    fn missing_background_fits_to_zero_floor() {
        let truth = TimeFitParams { bg_amplitude: 0.0, bg_scale: 100.0, ..time_truth() };
        let hist = time_counts(&truth, &time_edges(), Some(275));
        let init = default_time_initialization(&hist).unwrap();
        let fit = fit_time_model(&hist, &init).unwrap();
        assert!(fit.params.bg_amplitude.abs() < 1.0, "floor {}", fit.params.bg_amplitude);
        assert!((fit.params.sigma - truth.sigma).abs() / truth.sigma < 0.05);
    }

    #[test]
    fn pure_background_fits_a_vanishing_peak() {
        let truth = TimeFitParams { amplitude: 0.0, ..time_truth() };
        let hist = time_counts(&truth, &time_edges(), Some(276));
        let init = default_time_initialization(&hist).unwrap();
        let fit = fit_time_model(&hist, &init).unwrap();
        assert!(
            fit.params.amplitude.abs() < 4.0 * fit.errors.amplitude.max(1.0),
            "amplitude {} +- {}",
            fit.params.amplitude,
            fit.errors.amplitude
        );
        assert!((fit.params.bg_amplitude - 600.0).abs() < 30.0);
        let q = fit.quality;
        assert!(q.reduced_chi_square > 0.7 && q.reduced_chi_square < 1.3);
    }

    #[test]
    fn pinned_mean_is_honored_exactly() {
        let truth = TimeFitParams { mean: 3.125, ..time_truth() };
        let hist = time_counts(&truth, &time_edges(), Some(277));
        let init = default_time_initialization(&hist).unwrap();
        let fit = fit_time_model_with_pinned_mean(&hist, &init, 3.125).unwrap();
        assert_eq!(fit.params.mean, 3.125);
        assert_eq!(fit.errors.mean, 0.0);
        assert_eq!(fit.quality.parameters, 4);
        assert!((fit.params.sigma - truth.sigma).abs() / truth.sigma < 0.05);
    }

    #[test]
    fn fits_are_translation_equivariant() {
        let truth = spectral_truth();
        let base = spectral_counts(&truth, &spectral_edges(), Some(278));
        let shifted = Histogram1D {
            edges: base.edges.iter().map(|e| e + 5.0).collect(),
            ..base.clone()
        };
        let f0 = fit_spectral_model(&base, &default_spectral_initialization(&base).unwrap())
            .unwrap()
            .params;
        let f1 = fit_spectral_model(&shifted, &default_spectral_initialization(&shifted).unwrap())
            .unwrap()
            .params;
        assert!((f1.mean - f0.mean - 5.0).abs() < 1e-6);
        assert!((f1.bg_apex - f0.bg_apex - 5.0).abs() < 1e-5);
        assert!((f1.sigma - f0.sigma).abs() < 1e-7);
        assert!((f1.amplitude - f0.amplitude).abs() / f0.amplitude < 1e-7);
        assert!((f1.bg_slope - f0.bg_slope).abs() < 1e-6);
    }

    #[test]
    fn mirrored_data_reflects_the_fitted_mean() {
        // An off-apex peak, mirrored bin by bin about the apex.
        let truth = SpectralFitParams { mean: 405.8, ..spectral_truth() };
        let base = spectral_counts(&truth, &spectral_edges(), Some(279));
        let mut mirrored = base.clone();
        mirrored.counts.reverse();
        let f0 = fit_spectral_model(&base, &default_spectral_initialization(&base).unwrap())
            .unwrap()
            .params;
        let f1 =
            fit_spectral_model(&mirrored, &default_spectral_initialization(&mirrored).unwrap())
                .unwrap()
                .params;
        assert!((f1.mean - (2.0 * 405.0 - f0.mean)).abs() < 1e-6);
        assert!((f1.bg_apex - (2.0 * 405.0 - f0.bg_apex)).abs() < 1e-5);
        assert!((f1.sigma - f0.sigma).abs() < 1e-7);
        assert!((f1.bg_slope - f0.bg_slope).abs() < 1e-6);
    }

    #[test]
    fn parameter_scatter_shrinks_when_statistics_double() {
        let spread = |scale: f64| {
            let mut sq = 0.0;
            let seeds = 24;
            for seed in 0..seeds {
                let truth = TimeFitParams {
                    amplitude: 4_000.0 * scale,
                    bg_amplitude: 80.0 * scale,
                    ..time_truth()
                };
                let hist = time_counts(&truth, &time_edges(), Some(1000 + seed));
                let init = default_time_initialization(&hist).unwrap();
                let fit = fit_time_model(&hist, &init).unwrap();
                let rel = (fit.params.sigma - truth.sigma) / truth.sigma;
                sq += rel * rel;
            }
            (sq / seeds as f64).sqrt()
        };
        let base = spread(1.0);
        let doubled = spread(2.0);
        assert!(
            doubled < base,
            "rms scatter should shrink with statistics: {base} -> {doubled}"
        );
    }

    #[test]
    fn degenerate_histograms_are_rejected() {
        let edges = time_edges();
        let empty = Histogram1D {
            counts: vec![0; edges.len() - 1],
            edges: edges.clone(),
            underflow: 0,
            overflow: 0,
        };
        assert!(matches!(
            default_time_initialization(&empty),
            Err(FitError::EmptyHistogram)
        ));
        assert!(matches!(
            fit_time_model(&empty, &time_truth()),
            Err(FitError::EmptyHistogram)
        ));
        let mut sparse = empty.clone();
        sparse.counts[0] = 5;
        sparse.counts[40] = 3;
        sparse.counts[80] = 9;
        assert!(matches!(
            fit_time_model(&sparse, &time_truth()),
            Err(FitError::TooFewBins { .. })
        ));
    }

    #[test]
    fn single_spike_initializes_at_one_bin_width() {
        let edges = time_edges();
        let mut h = Histogram1D {
            counts: vec![0; edges.len() - 1],
            edges,
            underflow: 0,
            overflow: 0,
        };
        let mid = h.len() / 2;
        h.counts[mid] = 1000;
        let init = default_time_initialization(&h).unwrap();
        let w = h.bin_width().unwrap();
        assert_eq!(init.sigma, w);
        assert!((init.mean - h.center(mid)).abs() < 1e-12);
        assert_eq!(init.bg_amplitude, 0.5, "empty outer bins fall back to the half-count floor");
    }

    #[test]
    fn nonconvergence_reports_the_best_parameters() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let sg = vec![1.0; xs.len()];
        let init = [0.0, 0.0];
        // A guard that rejects every move pins the fit at its start.
        let res = fit_least_squares(
            &xs,
            &ys,
            &sg,
            init,
            |p, x| (p[0] * x + p[1], [x, 1.0]),
            move |p| *p == init,
        );
        match res {
            Err(FitError::NonConvergence { params, iterations, .. }) => {
                assert_eq!(params, vec![0.0, 0.0]);
                assert!(iterations >= 1);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn generic_fit_handles_a_plain_exponential() {
        let edges = edges_centered_on(100.0, 1.5625, 100.0).unwrap();
        let truth = (500.0, 70.0);
        let hist = synth(&edges, Some(280), |x| truth.0 * (-x / truth.1).exp());
        let x = hist.centers();
        let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
        let s: Vec<f64> = y.iter().map(|&c| c.sqrt().max(1.0)).collect();
        let fit = fit_least_squares(
            &x,
            &y,
            &s,
            [y[0].max(1.0), 50.0],
            |p, x| {
                let e = (-x / p[1]).exp();
                let d_b = if e == 0.0 { 0.0 } else { p[0] * e * x / (p[1] * p[1]) };
                (p[0] * e, [e, d_b])
            },
            |p| p[1] > 0.0,
        )
        .unwrap();
        assert!((fit.params[0] - truth.0).abs() < 5.0 * fit.errors[0].max(5.0));
        assert!((fit.params[1] - truth.1).abs() < 5.0 * fit.errors[1].max(1.0));
        let q = fit.quality;
        assert!(q.reduced_chi_square > 0.6 && q.reduced_chi_square < 1.4);
    }
}
