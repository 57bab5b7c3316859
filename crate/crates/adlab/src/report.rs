//! Detection reports, recomputed from the files of a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use adlab_core::detection::{evaluate, Confusion, DetectionReport, FilterId, Thresholds};
use serde::{Deserialize, Serialize};

use crate::error::AppError;
use crate::formats::{self, WindowRow};
use crate::scenario::Scenario;

/// Share of registered clicks the reported fraction is compared against.
pub const REFERENCE_INVALID_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl From<&Confusion> for ConfusionCounts {
    fn from(c: &Confusion) -> Self {
        ConfusionCounts {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub flags: usize,
    pub confusion: ConfusionCounts,
    /// Share of fraud clicks this filter flagged.
    pub fraud_recall: f64,
    pub legit_false_positive_rate: f64,
}

/// Rate windows, all of them and those holding any fraud event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub windows: usize,
    pub scored_windows: usize,
    pub max_z: Option<f64>,
    pub windows_at_or_above_z_max: usize,
    pub fraud_windows: usize,
    pub fraud_windows_scored: usize,
    pub fraud_max_z: Option<f64>,
    pub fraud_windows_at_or_above_z_max: usize,
}

impl RateSummary {
    pub fn from_rows(rows: &[WindowRow], z_max: f64) -> RateSummary {
        let scored: Vec<(f64, bool)> = rows
            .iter()
            .filter_map(|r| r.stat.z().map(|z| (z, r.fraud_events > 0)))
            .collect();
        let max =
            |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.max(z))));
        RateSummary {
            windows: rows.len(),
            scored_windows: scored.len(),
            max_z: max(&mut scored.iter().map(|s| s.0)),
            windows_at_or_above_z_max: scored.iter().filter(|s| s.0 >= z_max).count(),
            fraud_windows: rows.iter().filter(|r| r.fraud_events > 0).count(),
            fraud_windows_scored: scored.iter().filter(|s| s.1).count(),
            fraud_max_z: max(&mut scored.iter().filter(|s| s.1).map(|s| s.0)),
            fraud_windows_at_or_above_z_max: scored.iter().filter(|s| s.1 && s.0 >= z_max).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unavailable {
    pub filter: FilterId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub total_clicks: usize,
    pub fraud_clicks: usize,
    pub valid: usize,
    pub invalid_auto: usize,
    pub needs_investigation: usize,
    pub invalid_fraction: f64,
    pub investigation_fraction: f64,
    pub reference_invalid_fraction: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: ConfusionCounts,
    pub filters: BTreeMap<FilterId, FilterSummary>,
    pub unavailable: Vec<Unavailable>,
    pub gray_band: f64,
    pub z_max: f64,
    pub rate: Option<RateSummary>,
}

impl RunReport {
    pub fn new(
        r: &DetectionReport,
        thresholds: &Thresholds,
        scenario: Option<(&str, u64)>,
        unavailable: Vec<Unavailable>,
        windows: Option<&[WindowRow]>,
    ) -> RunReport {
        let filters = r
            .filter_confusion
            .iter()
            .map(|(f, c)| {
                (
                    *f,
                    FilterSummary {
                        flags: r.filter_flags.get(f).copied().unwrap_or(0),
                        confusion: c.into(),
                        fraud_recall: c.recall(),
                        legit_false_positive_rate: c.false_positive_rate(),
                    },
                )
            })
            .collect();
        RunReport {
            scenario: scenario.map(|s| s.0.to_string()),
            seed: scenario.map(|s| s.1),
            total_clicks: r.total_clicks,
            fraud_clicks: r.fraud_clicks,
            valid: r.valid,
            invalid_auto: r.invalid_auto,
            needs_investigation: r.needs_investigation,
            invalid_fraction: r.invalid_fraction,
            investigation_fraction: r.investigation_fraction,
            reference_invalid_fraction: REFERENCE_INVALID_FRACTION,
            precision: r.precision,
            recall: r.recall,
            confusion: (&r.confusion).into(),
            filters,
            unavailable,
            gray_band: thresholds.gray_band,
            z_max: thresholds.z_max,
            rate: windows.map(|w| RateSummary::from_rows(w, thresholds.z_max)),
        }
    }

    /// Rebuilds the report from a run directory. Only the verdict and truth
    /// files are required.
    pub fn load(dir: &Path) -> Result<RunReport, AppError> {
        let verdicts = formats::read_verdicts(&formats::read_required(dir, formats::VERDICTS_FILE)?)?;
        let truth = formats::read_click_truth(&formats::read_required(dir, formats::TRUTH_FILE)?)?;
        let fvs = match formats::read_optional(dir, formats::FILTERS_FILE)? {
            Some(t) => formats::read_filter_verdicts(&t)?,
            None => Vec::new(),
        };
        let scenario = match formats::read_optional(dir, formats::SCENARIO_FILE)? {
            Some(t) => Some(
                serde_json::from_str::<Scenario>(&t)
                    .map_err(|e| AppError::Format(format!("{}: {e}", formats::SCENARIO_FILE)))?,
            ),
            None => None,
        };
        let unavailable = match formats::read_optional(dir, formats::MANIFEST_FILE)? {
            Some(t) => {
                serde_json::from_str::<crate::commands::RunManifest>(&t)
                    .map_err(|e| AppError::Format(format!("{}: {e}", formats::MANIFEST_FILE)))?
                    .unavailable
            }
            None => Vec::new(),
        };
        let windows = match formats::read_optional(dir, formats::WINDOWS_FILE)? {
            Some(t) => Some(formats::read_windows(&t)?),
            None => None,
        };
        let report = evaluate(&verdicts, &fvs, &truth)?;
        let thresholds = scenario.as_ref().map(|s| s.detection.clone()).unwrap_or_default();
        Ok(RunReport::new(
            &report,
            &thresholds,
            scenario.as_ref().map(|s| (s.name.as_str(), s.seed)),
            unavailable,
            windows.as_deref(),
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    fn title(&self) -> String {
        match (&self.scenario, self.seed) {
            (Some(n), Some(s)) => format!("{n} (seed {s})"),
            _ => "unnamed run".to_string(),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn z(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |z| format!("{z:.2}"))
}

/// The human-readable report; with `compare`, adds a side-by-side section.
pub fn render_text(r: &RunReport, compare: Option<&RunReport>) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "detection report: {}", r.title());
    let _ = writeln!(o);
    let _ = writeln!(o, "{:<22}{:>10}{:>12}", "class", "clicks", "fraction");
    let frac = |n: usize| {
        if r.total_clicks == 0 {
            0.0
        } else {
            n as f64 / r.total_clicks as f64
        }
    };
    for (name, n) in [
        ("valid", r.valid),
        ("invalid_auto", r.invalid_auto),
        ("needs_investigation", r.needs_investigation),
    ] {
        let _ = writeln!(o, "{:<22}{:>10}{:>12}", name, n, pct(frac(n)));
    }
    let _ = writeln!(o, "{:<22}{:>10}", "total", r.total_clicks);
    let _ = writeln!(
        o,
        "{:<22}{:>10}{:>12}",
        "fraud (ground truth)",
        r.fraud_clicks,
        pct(frac(r.fraud_clicks))
    );
    let _ = writeln!(o);
    let _ = writeln!(o, "invalid fraction: {}", r.invalid_fraction);
    let _ = writeln!(
        o,
        "  {} against the {} reference line ({:+.2} pp)",
        pct(r.invalid_fraction),
        pct(r.reference_invalid_fraction),
        100.0 * (r.invalid_fraction - r.reference_invalid_fraction)
    );
    let _ = writeln!(o, "investigation fraction: {}", r.investigation_fraction);
    let _ = writeln!(
        o,
        "  needs_investigation is a stand-in band: no flag, but a filter score within {} of its flag boundary",
        pct(r.gray_band)
    );
    let c = &r.confusion;
    let _ = writeln!(
        o,
        "aggregate (invalid_auto vs fraud): tp {} fp {} tn {} fn {}, precision {:.4}, recall {:.4}",
        c.tp, c.fp, c.tn, c.fn_, r.precision, r.recall
    );
    let _ = writeln!(o);
    let _ = writeln!(
        o,
        "{:<18}{:>8}{:>8}{:>8}{:>8}{:>14}{:>12}",
        "filter", "flags", "tp", "fp", "fn", "fraud recall", "legit FPR"
    );
    for (f, s) in &r.filters {
        let _ = writeln!(
            o,
            "{:<18}{:>8}{:>8}{:>8}{:>8}{:>14}{:>12}",
            f.as_str(),
            s.flags,
            s.confusion.tp,
            s.confusion.fp,
            s.confusion.fn_,
            pct(s.fraud_recall),
            pct(s.legit_false_positive_rate)
        );
    }
    for u in &r.unavailable {
        let _ = writeln!(o, "{:<18}unavailable: {}", u.filter.as_str(), u.reason);
    }
    if let Some(w) = &r.rate {
        let _ = writeln!(o);
        let _ = writeln!(
            o,
            "rate windows: {} ({} scored), max z {}, {} at or above z_max {}",
            w.windows,
            w.scored_windows,
            z(w.max_z),
            w.windows_at_or_above_z_max,
            r.z_max
        );
        let _ = writeln!(
            o,
            "windows holding fraud traffic: {} ({} scored), max z {}, {} at or above z_max",
            w.fraud_windows,
            w.fraud_windows_scored,
            z(w.fraud_max_z),
            w.fraud_windows_at_or_above_z_max
        );
    }
    if let Some(other) = compare {
        render_comparison(&mut o, r, other);
    }
    o
}

fn render_comparison(o: &mut String, r: &RunReport, other: &RunReport) {
    let _ = writeln!(o);
    let _ = writeln!(o, "compared with {}:", other.title());
    let _ = writeln!(o, "{:<40}{:>14}{:>14}", "", "this run", "other run");
    let row = |o: &mut String, label: &str, a: String, b: String| {
        let _ = writeln!(o, "{label:<40}{a:>14}{b:>14}");
    };
    row(
        o,
        "fraud clicks",
        r.fraud_clicks.to_string(),
        other.fraud_clicks.to_string(),
    );
    let filters: std::collections::BTreeSet<FilterId> = r.filters.keys().chain(other.filters.keys()).copied().collect();
    for f in filters {
        let get = |x: &RunReport| {
            x.filters
                .get(&f)
                .map_or_else(|| "-".to_string(), |s| format!("{}/{}", s.confusion.tp, x.fraud_clicks))
        };
        row(o, &format!("{} fraud clicks flagged", f.as_str()), get(r), get(other));
    }
    let wz = |x: &RunReport| z(x.rate.as_ref().and_then(|w| w.fraud_max_z));
    row(o, "max z of windows with fraud", wz(r), wz(other));
    row(
        o,
        "invalid fraction",
        pct(r.invalid_fraction),
        pct(other.invalid_fraction),
    );
    row(o, "aggregate fraud recall", pct(r.recall), pct(other.recall));
}
