//! Run artifacts on disk: the event and pair tables, histogram and curve
//! CSVs, and the fitted-model JSON that can seed later runs.
//!
//! Time tags are canonicalized to the 1e-4 ns grid when they are produced,
//! so the fixed four-decimal column format round-trips them bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coincidence::{PairClass, PairRecord};
use crate::discriminant::DiscriminantModel;
use crate::error::{Error, Result};
use crate::events::{DetectedEvent, OriginTag, Stripe};
use crate::histfit::{Histogram1D, SpectralFit, TimeFit};
use crate::metrics::MethodCurve;

/// Event table header when truth columns are present.
pub const EVENTS_HEADER_TRUTH: &str = "event_id,stripe,x_pix,y_pix,toa_ns,tot,origin,pair_id";
/// Event table header as a real camera would emit it.
pub const EVENTS_HEADER_BARE: &str = "event_id,stripe,x_pix,y_pix,toa_ns,tot";

fn schema(path: &str, line: usize, message: String) -> Error {
    Error::Schema { path: path.to_string(), line, message }
}

/// Writes the detected event table. With `with_truth` the origin tag and
/// pair id columns are included; without, the file looks like raw camera
/// output.
pub fn write_events_csv(path: &Path, events: &[DetectedEvent], with_truth: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if with_truth {
        writeln!(w, "{EVENTS_HEADER_TRUTH}")?;
        for e in events {
            match e.pair_id {
                Some(p) => writeln!(
                    w,
                    "{},{},{},{},{:.4},1,{},{}",
                    e.event_id, e.stripe.label(), e.x_pix, e.y_pix, e.toa, e.origin.label(), p
                )?,
                None => writeln!(
                    w,
                    "{},{},{},{},{:.4},1,{},",
                    e.event_id, e.stripe.label(), e.x_pix, e.y_pix, e.toa, e.origin.label()
                )?,
            }
        }
    } else {
        writeln!(w, "{EVENTS_HEADER_BARE}")?;
        for e in events {
            writeln!(w, "{},{},{},{},{:.4},1", e.event_id, e.stripe.label(), e.x_pix, e.y_pix, e.toa)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an event table, truth-tagged or bare. The flag in the result says
/// whether truth columns were present; bare files get every origin set to
/// the thermal placeholder and no pair ids, and downstream stages must not
/// interpret those fields.
pub fn read_events_csv(path: &Path) -> Result<(Vec<DetectedEvent>, bool)> {
    let display = path.display().to_string();
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| schema(&display, 1, "missing header".into()))?;
    let with_truth = match header.trim_end() {
        EVENTS_HEADER_TRUTH => true,
        EVENTS_HEADER_BARE => false,
        other => return Err(schema(&display, 1, format!("unrecognized header '{other}'"))),
    };
    let want = if with_truth { 8 } else { 6 };

    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want {
            return Err(schema(
                &display,
                lineno,
                format!("expected {want} fields, found {}", fields.len()),
            ));
        }
        let field = |i: usize, what: &str| -> Result<&str> {
            let s = fields[i].trim();
            if s.is_empty() {
                Err(schema(&display, lineno, format!("{what} is empty")))
            } else {
                Ok(s)
            }
        };
        fn parse<T: std::str::FromStr>(s: &str, what: &str, path: &str, line: usize) -> Result<T> {
            s.parse().map_err(|_| schema(path, line, format!("expected {what}, got '{s}'")))
        }

        let event_id: u32 = parse(field(0, "event id")?, "an event id", &display, lineno)?;
        let stripe = Stripe::from_label(field(1, "stripe")?)
            .ok_or_else(|| schema(&display, lineno, format!("unknown stripe '{}'", fields[1])))?;
        let x_pix: u16 = parse(field(2, "x pixel")?, "a pixel", &display, lineno)?;
        let y_pix: u16 = parse(field(3, "y pixel")?, "a pixel", &display, lineno)?;
        let toa: f64 = parse(field(4, "time tag")?, "a time tag", &display, lineno)?;
        if !toa.is_finite() {
            return Err(schema(&display, lineno, format!("time tag '{}' is not finite", fields[4])));
        }
        let _tot: u32 = parse(field(5, "tot")?, "a time over threshold", &display, lineno)?;

        let (origin, pair_id) = if with_truth {
            let origin = OriginTag::from_label(field(6, "origin")?)
                .ok_or_else(|| schema(&display, lineno, format!("unknown origin '{}'", fields[6])))?;
            let pair_id = match fields[7].trim() {
                "" => None,
                s => Some(parse::<u32>(s, "a pair id", &display, lineno)?),
            };
            match (origin, pair_id.is_some()) {
                (OriginTag::SourcePair, false) => {
                    return Err(schema(&display, lineno, "source photon without a pair id".into()))
                }
                (OriginTag::Thermal | OriginTag::DarkCount, true) => {
                    return Err(schema(&display, lineno, "background photon with a pair id".into()))
                }
                _ => {}
            }
            (origin, pair_id)
        } else {
            (OriginTag::Thermal, None)
        };

        out.push(DetectedEvent { event_id, pair_id, stripe, origin, x_pix, y_pix, toa });
    }
    Ok((out, with_truth))
}

/// Writes the matched pair table. The class column is empty for untagged
/// pairs.
pub fn write_pairs_csv(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "herald_id,signal_id,delta_t_ns,lambda_p_nm,class")?;
    for p in pairs {
        writeln!(
            w,
            "{},{},{:.4},{:.6},{}",
            p.herald_id,
            p.signal_id,
            p.delta_t,
            p.lambda_p,
            p.class.map(PairClass::label).unwrap_or("")
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a histogram table, with one count column per truth class when
/// per-class counts are given.
pub fn write_hist_csv(path: &Path, hist: &Histogram1D, classes: Option<&[[u64; 4]]>) -> Result<()> {
    if let Some(c) = classes {
        if c.len() != hist.len() {
            return Err(Error::Domain(format!(
                "per-class counts cover {} bins, histogram has {}",
                c.len(),
                hist.len()
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    match classes {
        Some(per_bin) => {
            writeln!(w, "bin_lo,bin_hi,count,tc,sm,sb,th")?;
            for (i, c) in per_bin.iter().enumerate() {
                writeln!(
                    w,
                    "{:.6},{:.6},{},{},{},{},{}",
                    hist.edges[i], hist.edges[i + 1], hist.counts[i], c[0], c[1], c[2], c[3]
                )?;
            }
        }
        None => {
            writeln!(w, "bin_lo,bin_hi,count")?;
            for i in 0..hist.len() {
                writeln!(w, "{:.6},{:.6},{}", hist.edges[i], hist.edges[i + 1], hist.counts[i])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn opt6(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Writes the efficiency sweep curves for every method.
pub fn write_curves_csv(path: &Path, curves: &[MethodCurve]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "method,parameter,efficiency,purity,sbr,snr,s,b")?;
    for curve in curves {
        let label = curve.method.label();
        for pt in &curve.points {
            let o = &pt.outcome;
            writeln!(
                w,
                "{},{:.9e},{:.6},{},{},{},{},{}",
                label,
                pt.parameter,
                o.efficiency,
                opt6(o.purity),
                opt6(o.sbr),
                opt6(o.snr),
                o.signal,
                o.background
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the sampled discriminant surface as (wavelength, time, value)
/// rows.
pub fn write_ygrid_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "lambda_p_nm,delta_t_ns,y")?;
    for (lambda, dt, y) in rows {
        writeln!(w, "{lambda:.6},{dt:.4},{y:.9e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Fitted signal and background shapes from one run, with the windows they
/// were fitted on. Saved as JSON and reusable as frozen fits for another
/// run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitsFile {
    pub time: TimeFit,
    pub spectral: SpectralFit,
    pub lambda_window: (f64, f64),
    pub dt_window: (f64, f64),
}

impl FitsFile {
    /// Builds the discriminant these fits describe.
    pub fn model(&self) -> Result<DiscriminantModel> {
        DiscriminantModel::new(self.spectral.params, self.time.params, self.lambda_window, self.dt_window)
    }
}

/// Writes fitted parameters as pretty JSON.
pub fn write_fits_json(path: &Path, fits: &FitsFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(fits)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads fitted parameters back.
pub fn read_fits_json(path: &Path) -> Result<FitsFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
