//! Shared full-scale reference run and verdict printing for the acceptance
//! tests.

use std::sync::OnceLock;
use std::time::Instant;

use coinclab::config::RunConfig;
use coinclab::pipeline::{analyze_events, simulate_detected, Analysis, SimStats};

pub struct Reference {
    pub stats: SimStats,
    pub analysis: Analysis,
    pub simulate_seconds: f64,
    pub analyze_seconds: f64,
}

/// Simulates and analyzes one run at the default calibration, once per test
/// binary. The raw event stream is dropped to keep the suite lean; the
/// analysis keeps everything the criteria need.
pub fn reference() -> &'static Reference {
    static REFERENCE: OnceLock<Reference> = OnceLock::new();
    REFERENCE.get_or_init(|| {
        let res = RunConfig::default().resolve(Some(11)).unwrap();
        let t = Instant::now();
        let (events, stats) = simulate_detected(&res).unwrap();
        let simulate_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let analysis = analyze_events(&events, true, &res, None).unwrap();
        let analyze_seconds = t.elapsed().as_secs_f64();
        Reference { stats, analysis, simulate_seconds, analyze_seconds }
    })
}

/// Prints the one-line verdict for a criterion (visible with --nocapture)
/// and fails the test when the criterion does not hold.
pub fn conclude(number: u8, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number} ({name}): {verdict} - {detail}");
    assert!(pass, "criterion {number} ({name}): {detail}");
}
