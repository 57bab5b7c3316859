//! Invalid-click filters, verdict aggregation and evaluation.
//!
//! Every filter is a pure function of an event slice and [`Thresholds`]. The
//! slice carries no ground truth; only [`evaluate`] sees labels. Filter scores
//! are normalised so that `1.0` sits on the filter's flag boundary.

mod behavior;
mod dwell_ip;
mod panel;
mod rate;
mod stats;

pub use behavior::{behavior_classifier, session_features, SessionFeatures};
pub use dwell_ip::dwell_ip_filter;
pub use panel::{advertiser_panel_filter, PanelItem};
pub use rate::{rate_ratio_filter, rate_windows, WindowStat};
pub use stats::{negbin_upper_tail, normal_quantile, predictive_deviate, upper_normal_deviate};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::event::{Event, Truth};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum FilterId {
    DwellIp,
    RateRatio,
    AdvertiserPanel,
    BehaviorClass,
}

impl FilterId {
    pub const ALL: [FilterId; 4] = [
        FilterId::DwellIp,
        FilterId::RateRatio,
        FilterId::AdvertiserPanel,
        FilterId::BehaviorClass,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterId::DwellIp => "dwell_ip",
            FilterId::RateRatio => "rate_ratio",
            FilterId::AdvertiserPanel => "advertiser_panel",
            FilterId::BehaviorClass => "behavior_class",
        }
    }
}

impl fmt::Display for FilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        FilterId::ALL.into_iter().find(|f| f.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Pass,
    Flag,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Flag => "flag",
        }
    }
}

impl FromStr for Outcome {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "pass" => Ok(Outcome::Pass),
            "flag" => Ok(Outcome::Flag),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterVerdict {
    /// `seq` of the Click event.
    pub click_ref: u64,
    pub filter: FilterId,
    pub outcome: Outcome,
    /// Normalised score; the flag boundary is 1.0.
    pub score: f64,
    pub reason: String,
}

impl FilterVerdict {
    pub(crate) fn pass(click_ref: u64, filter: FilterId, score: f64) -> Self {
        FilterVerdict {
            click_ref,
            filter,
            outcome: Outcome::Pass,
            score: finite(score),
            reason: String::new(),
        }
    }

    pub(crate) fn flag(click_ref: u64, filter: FilterId, score: f64, reason: String) -> Self {
        FilterVerdict {
            click_ref,
            filter,
            outcome: Outcome::Flag,
            score: finite(score),
            reason,
        }
    }

    pub fn is_flag(&self) -> bool {
        self.outcome == Outcome::Flag
    }
}

/// Scores are capped so a single extreme click cannot dominate any average.
pub const MAX_SCORE: f64 = 100.0;

fn finite(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, MAX_SCORE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Klass {
    Valid,
    InvalidAuto,
    NeedsInvestigation,
}

impl Klass {
    pub fn as_str(self) -> &'static str {
        match self {
            Klass::Valid => "valid",
            Klass::InvalidAuto => "invalid_auto",
            Klass::NeedsInvestigation => "needs_investigation",
        }
    }
}

impl FromStr for Klass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "valid" => Ok(Klass::Valid),
            "invalid_auto" => Ok(Klass::InvalidAuto),
            "needs_investigation" => Ok(Klass::NeedsInvestigation),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub click_ref: u64,
    pub klass: Klass,
    /// Flagging filters for InvalidAuto, near-boundary filters for NeedsInvestigation.
    pub contributing: Vec<FilterId>,
    /// Highest normalised score over the enabled filters.
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("no window has {0} trailing baseline windows")]
    BaselineUnavailable(u32),
    #[error("training window has {have} {class} sessions, need {need}")]
    InsufficientTraining {
        class: &'static str,
        have: usize,
        need: usize,
    },
    #[error("truth sidecar does not match the click set: {0}")]
    TruthMismatch(String),
    #[error("threshold {name} {reason}")]
    BadThreshold { name: &'static str, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct Thresholds {
    /// Clicks faster than this after arrival are flagged.
    #[cfg_attr(feature = "serde", serde(rename = "dwell_min_ms"))]
    pub dwell_min: SimDuration,
    /// Repeat clicks from one IP on one site inside this window are flagged.
    #[cfg_attr(feature = "serde", serde(rename = "same_ip_window_ms"))]
    pub same_ip_window: SimDuration,
    pub z_max: f64,
    #[cfg_attr(feature = "serde", serde(rename = "rate_window_ms"))]
    pub rate_window: SimDuration,
    /// Trailing windows forming a rate baseline.
    pub baseline_windows: u32,
    /// Fewest trailing windows a baseline may have.
    pub min_baseline_windows: u32,
    /// Clicks per IP per day before the IP lands on the panel.
    pub ip_clicks_per_day: u32,
    /// Day-over-day click growth before a site lands on the panel.
    pub growth_ratio: f64,
    /// Behaviour distance, in robust standard deviations.
    pub d_max: f64,
    pub min_training_sessions: u32,
    /// Width of the investigation band below the flag boundary, as a fraction of it.
    pub gray_band: f64,
    pub enabled: Vec<FilterId>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            dwell_min: SimDuration::from_secs(2),
            same_ip_window: SimDuration::from_hours(1),
            z_max: 3.0,
            rate_window: SimDuration::from_hours(1),
            baseline_windows: 24,
            min_baseline_windows: 6,
            ip_clicks_per_day: 20,
            growth_ratio: 3.0,
            d_max: 3.0,
            min_training_sessions: 10,
            gray_band: 0.05,
            enabled: FilterId::ALL.to_vec(),
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |name, reason| Err(DetectionError::BadThreshold { name, reason });
        if self.dwell_min == SimDuration::ZERO {
            return bad("dwell_min", "must be > 0");
        }
        if self.same_ip_window == SimDuration::ZERO {
            return bad("same_ip_window", "must be > 0");
        }
        if self.rate_window == SimDuration::ZERO {
            return bad("rate_window", "must be > 0");
        }
        if !(self.z_max > 0.0 && self.z_max.is_finite()) {
            return bad("z_max", "must be > 0");
        }
        if self.min_baseline_windows < 2 || self.min_baseline_windows > self.baseline_windows {
            return bad("min_baseline_windows", "must be in 2..=baseline_windows");
        }
        if self.ip_clicks_per_day == 0 {
            return bad("ip_clicks_per_day", "must be >= 1");
        }
        if !(self.growth_ratio > 0.0 && self.growth_ratio.is_finite()) {
            return bad("growth_ratio", "must be > 0");
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad("d_max", "must be > 0");
        }
        if self.min_training_sessions < 2 {
            return bad("min_training_sessions", "must be >= 2");
        }
        if !(0.0..1.0).contains(&self.gray_band) {
            return bad("gray_band", "must be in [0, 1)");
        }
        Ok(())
    }

    pub fn is_enabled(&self, f: FilterId) -> bool {
        self.enabled.contains(&f)
    }
}

/// Combines per-filter verdicts into one verdict per click.
///
/// Any flag makes the click InvalidAuto. Otherwise the click needs
/// investigation when its highest normalised score is within `gray_band` of
/// the boundary, and is Valid below that.
pub fn aggregate_verdicts(clicks: &[u64], filter_verdicts: &[FilterVerdict], gray_band: f64) -> Vec<Verdict> {
    let mut by_click: BTreeMap<u64, Vec<&FilterVerdict>> = clicks.iter().map(|&c| (c, Vec::new())).collect();
    for v in filter_verdicts {
        if let Some(list) = by_click.get_mut(&v.click_ref) {
            list.push(v);
        }
    }
    by_click
        .into_iter()
        .map(|(click_ref, vs)| {
            let combined = vs.iter().map(|v| v.score).fold(0.0, f64::max);
            let mut flagged: Vec<FilterId> = vs.iter().filter(|v| v.is_flag()).map(|v| v.filter).collect();
            flagged.sort();
            flagged.dedup();
            let (klass, contributing) = if !flagged.is_empty() {
                (Klass::InvalidAuto, flagged)
            } else if combined >= 1.0 - gray_band {
                let mut near: Vec<FilterId> = vs
                    .iter()
                    .filter(|v| v.score >= 1.0 - gray_band)
                    .map(|v| v.filter)
                    .collect();
                near.sort();
                near.dedup();
                (Klass::NeedsInvestigation, near)
            } else {
                (Klass::Valid, Vec::new())
            };
            Verdict {
                click_ref,
                klass,
                contributing,
                combined,
            }
        })
        .collect()
}

/// Output of every enabled filter over one log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionRun {
    /// Per-filter verdicts for the filters that ran.
    pub filter_verdicts: BTreeMap<FilterId, Vec<FilterVerdict>>,
    /// Enabled filters that could not run, and why.
    pub unavailable: Vec<(FilterId, DetectionError)>,
    pub panel: Vec<PanelItem>,
    pub verdicts: Vec<Verdict>,
}

impl DetectionRun {
    pub fn all_filter_verdicts(&self) -> impl Iterator<Item = &FilterVerdict> {
        self.filter_verdicts.values().flatten()
    }
}

/// Runs the enabled filters and aggregates their verdicts. `training_end`
/// closes the behaviour classifier's warm-up window.
pub fn run_detection(events: &[Event], thresholds: &Thresholds, training_end: SimTime) -> DetectionRun {
    let mut run = DetectionRun::default();
    for f in FilterId::ALL {
        if !thresholds.is_enabled(f) {
            continue;
        }
        let out = match f {
            FilterId::DwellIp => Ok(dwell_ip_filter(events, thresholds)),
            FilterId::RateRatio => rate_ratio_filter(events, thresholds),
            FilterId::AdvertiserPanel => {
                let (v, panel) = advertiser_panel_filter(events, thresholds);
                run.panel = panel;
                Ok(v)
            }
            FilterId::BehaviorClass => behavior_classifier(events, training_end, thresholds),
        };
        match out {
            Ok(v) => {
                run.filter_verdicts.insert(f, v);
            }
            Err(e) => run.unavailable.push((f, e)),
        }
    }
    let clicks: Vec<u64> = events.iter().filter(|e| e.is_click()).map(|e| e.seq).collect();
    let all: Vec<FilterVerdict> = run.all_filter_verdicts().cloned().collect();
    run.verdicts = aggregate_verdicts(&clicks, &all, thresholds.gray_band);
    run
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Precision, 1.0 when nothing was flagged.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Recall, 1.0 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// Share of legitimate clicks flagged.
    pub fn false_positive_rate(&self) -> f64 {
        if self.fp + self.tn == 0 {
            0.0
        } else {
            self.fp as f64 / (self.fp + self.tn) as f64
        }
    }

    fn add(&mut self, flagged: bool, truth: Truth) {
        match (flagged, truth) {
            (true, Truth::Fraud) => self.tp += 1,
            (true, Truth::Legit) => self.fp += 1,
            (false, Truth::Legit) => self.tn += 1,
            (false, Truth::Fraud) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub total_clicks: usize,
    pub fraud_clicks: usize,
    pub valid: usize,
    pub invalid_auto: usize,
    pub needs_investigation: usize,
    /// Flags raised per filter.
    pub filter_flags: BTreeMap<FilterId, usize>,
    /// Confusion of each filter taken alone.
    pub filter_confusion: BTreeMap<FilterId, Confusion>,
    /// Confusion of the aggregate, positive = InvalidAuto.
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub invalid_fraction: f64,
    pub investigation_fraction: f64,
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Scores aggregated verdicts (and optionally the per-filter verdicts) against
/// ground truth. `truth` holds `(click_ref, truth)` for exactly the clicks in
/// `verdicts`.
pub fn evaluate(
    verdicts: &[Verdict],
    filter_verdicts: &[FilterVerdict],
    truth: &[(u64, Truth)],
) -> Result<DetectionReport, DetectionError> {
    let labels: BTreeMap<u64, Truth> = truth.iter().copied().collect();
    if labels.len() != truth.len() {
        return Err(DetectionError::TruthMismatch("duplicate click reference".into()));
    }
    if labels.len() != verdicts.len() {
        return Err(DetectionError::TruthMismatch(alloc::format!(
            "{} labels for {} verdicts",
            labels.len(),
            verdicts.len()
        )));
    }
    let mut r = DetectionReport {
        total_clicks: verdicts.len(),
        fraud_clicks: labels.values().filter(|t| **t == Truth::Fraud).count(),
        valid: 0,
        invalid_auto: 0,
        needs_investigation: 0,
        filter_flags: BTreeMap::new(),
        filter_confusion: BTreeMap::new(),
        confusion: Confusion::default(),
        precision: 1.0,
        recall: 1.0,
        invalid_fraction: 0.0,
        investigation_fraction: 0.0,
    };
    for v in verdicts {
        let t = *labels
            .get(&v.click_ref)
            .ok_or_else(|| DetectionError::TruthMismatch(alloc::format!("click {} has no label", v.click_ref)))?;
        match v.klass {
            Klass::Valid => r.valid += 1,
            Klass::InvalidAuto => r.invalid_auto += 1,
            Klass::NeedsInvestigation => r.needs_investigation += 1,
        }
        r.confusion.add(v.klass == Klass::InvalidAuto, t);
    }
    for fv in filter_verdicts {
        let Some(&t) = labels.get(&fv.click_ref) else {
            return Err(DetectionError::TruthMismatch(alloc::format!(
                "filter verdict for unknown click {}",
                fv.click_ref
            )));
        };
        if fv.is_flag() {
            *r.filter_flags.entry(fv.filter).or_default() += 1;
        }
        r.filter_confusion.entry(fv.filter).or_default().add(fv.is_flag(), t);
    }
    r.precision = r.confusion.precision();
    r.recall = r.confusion.recall();
    r.invalid_fraction = fraction(r.invalid_auto, r.total_clicks);
    r.investigation_fraction = fraction(r.needs_investigation, r.total_clicks);
    Ok(r)
}

/// Events sorted by `(ts, seq)`.
pub(crate) fn time_ordered(events: &[Event]) -> Vec<&Event> {
    let mut v: Vec<&Event> = events.iter().collect();
    v.sort_by_key(|e| (e.ts, e.seq));
    v
}

#[cfg(test)]
pub(crate) mod testlog;
