use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use super::{time_ordered, DetectionError, FilterId, FilterVerdict, Thresholds};
use crate::event::{Event, EventDetail, SessionId, SiteId};
use crate::time::SimTime;

/// Navigation features of one session on one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFeatures {
    pub session: SessionId,
    pub site: SiteId,
    pub start: SimTime,
    pub end: SimTime,
    pub pages: u32,
    pub distinct_pages: u32,
    pub clicks: u32,
    /// Mean seconds between page views, click dwell included.
    pub mean_gap_secs: Option<f64>,
    /// `seq` of every click in the session.
    pub click_refs: Vec<u64>,
}

const N_FEATURES: usize = 4;

/// Lower bounds on the per-feature spread, in feature units.
const SCALE_FLOOR: [f64; N_FEATURES] = [0.75, 0.75, 0.5, 0.25];

const FEATURE_NAMES: [&str; N_FEATURES] = ["pages", "gap", "clicks", "revisit"];

impl SessionFeatures {
    pub fn clicked(&self) -> bool {
        self.clicks > 0
    }

    fn vector(&self) -> [Option<f64>; N_FEATURES] {
        let revisit = if self.pages == 0 {
            0.0
        } else {
            (self.pages - self.distinct_pages) as f64 / self.pages as f64
        };
        [
            Some(libm::log1p(self.pages as f64)),
            self.mean_gap_secs.map(libm::log1p),
            Some(self.clicks as f64),
            Some(revisit),
        ]
    }

    fn signature(&self) -> (u32, u32, u32, Option<u64>) {
        (
            self.pages,
            self.clicks,
            self.distinct_pages,
            self.mean_gap_secs.map(|g| libm::round(g) as u64),
        )
    }
}

/// Groups events into per-(session, site) feature records, ordered by end time.
pub fn session_features(events: &[Event]) -> Vec<SessionFeatures> {
    struct Acc<'a> {
        start: SimTime,
        end: SimTime,
        pages: u32,
        distinct: BTreeSet<&'a str>,
        last_visit: Option<SimTime>,
        gap_sum: f64,
        gaps: u32,
        click_refs: Vec<u64>,
    }
    let mut acc: BTreeMap<(SessionId, &SiteId), Acc> = BTreeMap::new();
    for e in time_ordered(events) {
        let a = acc.entry((e.session, &e.site)).or_insert_with(|| Acc {
            start: e.ts,
            end: e.ts,
            pages: 0,
            distinct: BTreeSet::new(),
            last_visit: None,
            gap_sum: 0.0,
            gaps: 0,
            click_refs: Vec::new(),
        });
        a.end = e.ts;
        match &e.detail {
            EventDetail::Visit => {
                if let Some(prev) = a.last_visit {
                    a.gap_sum += (e.ts - prev).as_secs_f64();
                    a.gaps += 1;
                }
                a.last_visit = Some(e.ts);
                a.pages += 1;
                a.distinct.insert(&e.page);
            }
            EventDetail::Impression { .. } => {}
            EventDetail::Click { dwell_before_click, .. } => {
                a.gap_sum += dwell_before_click.as_secs_f64();
                a.gaps += 1;
                a.click_refs.push(e.seq);
            }
        }
    }
    let mut out: Vec<SessionFeatures> = acc
        .into_iter()
        .map(|((session, site), a)| SessionFeatures {
            session,
            site: site.clone(),
            start: a.start,
            end: a.end,
            pages: a.pages,
            distinct_pages: a.distinct.len() as u32,
            clicks: a.click_refs.len() as u32,
            mean_gap_secs: (a.gaps > 0).then(|| a.gap_sum / a.gaps as f64),
            click_refs: a.click_refs,
        })
        .collect();
    out.sort_by_key(|s| (s.end, s.session));
    out
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Robust centre and spread of each feature within one class.
struct ClassModel {
    centre: [Option<f64>; N_FEATURES],
    scale: [f64; N_FEATURES],
}

impl ClassModel {
    fn fit(sessions: &[&SessionFeatures]) -> Self {
        let mut centre = [None; N_FEATURES];
        let mut scale = SCALE_FLOOR;
        for i in 0..N_FEATURES {
            let mut xs: Vec<f64> = sessions.iter().filter_map(|s| s.vector()[i]).collect();
            if xs.is_empty() {
                continue;
            }
            let m = median(&mut xs);
            let mut dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
            let mad = median(&mut dev);
            centre[i] = Some(m);
            scale[i] = (1.4826 * mad).max(SCALE_FLOOR[i]);
        }
        ClassModel { centre, scale }
    }

    /// Largest standardised deviation and the feature it came from.
    fn distance(&self, s: &SessionFeatures) -> (f64, usize) {
        let v = s.vector();
        let mut best = (0.0, 0);
        for (i, x) in v.iter().enumerate() {
            if let (Some(x), Some(c)) = (*x, self.centre[i]) {
                let d = (x - c).abs() / self.scale[i];
                if d > best.0 {
                    best = (d, i);
                }
            }
        }
        best
    }
}

/// Compares each clicking session with the navigation of sessions seen during
/// training. Sessions more than `d_max` robust deviations away on any feature
/// are flagged, and an exact repeat of a flagged session's shape is flagged
/// on sight.
///
/// Score is `distance / d_max`. Sessions that start before `training_end`
/// form the training set; both the clicking and the non-clicking class need
/// `min_training_sessions` of them.
pub fn behavior_classifier(
    events: &[Event],
    training_end: SimTime,
    t: &Thresholds,
) -> Result<Vec<FilterVerdict>, DetectionError> {
    let sessions = session_features(events);
    let training: Vec<&SessionFeatures> = sessions.iter().filter(|s| s.start < training_end).collect();
    let clicked: Vec<&SessionFeatures> = training.iter().copied().filter(|s| s.clicked()).collect();
    let browsing: Vec<&SessionFeatures> = training.iter().copied().filter(|s| !s.clicked()).collect();
    let need = t.min_training_sessions as usize;
    for (class, have) in [("clicking", clicked.len()), ("browsing", browsing.len())] {
        if have < need {
            return Err(DetectionError::InsufficientTraining { class, have, need });
        }
    }
    let model = ClassModel::fit(&clicked);
    let mut flagged_shapes = BTreeSet::new();
    let mut out = Vec::new();
    for s in sessions.iter().filter(|s| s.clicked()) {
        let (d, feature) = model.distance(s);
        let score = d / t.d_max;
        let shape = s.signature();
        let verdict = |seq| {
            if d > t.d_max {
                FilterVerdict::flag(
                    seq,
                    FilterId::BehaviorClass,
                    score,
                    format!("{} is {d:.1} deviations from clicking sessions", FEATURE_NAMES[feature]),
                )
            } else if flagged_shapes.contains(&shape) {
                FilterVerdict::flag(
                    seq,
                    FilterId::BehaviorClass,
                    score.max(1.0),
                    "same shape as a flagged session".into(),
                )
            } else {
                FilterVerdict::pass(seq, FilterId::BehaviorClass, score)
            }
        };
        let vs: Vec<FilterVerdict> = s.click_refs.iter().map(|&seq| verdict(seq)).collect();
        if vs.iter().any(FilterVerdict::is_flag) {
            flagged_shapes.insert(shape);
        }
        out.extend(vs);
    }
    out.sort_by_key(|v| v.click_ref);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testlog::LogBuilder;
    use super::super::Outcome;
    use super::*;

    /// Sessions of `pages` visits 20 s apart; every other one clicks 20 s after its last page.
    fn training(b: &mut LogBuilder, n: u64) {
        for s in 0..n {
            let t0 = s * 600_000;
            let pages = 2 + s % 3;
            for p in 0..pages {
                let path = ["/", "/a", "/b", "/c"][p as usize];
                b.visit(s, s as u32, "x", path, t0 + p * (18_000 + s * 100));
            }
            if s % 2 == 0 {
                b.click(s, s as u32, "x", t0 + pages * 20_000, 20_000);
            }
        }
    }

    #[test]
    fn features_of_a_session() {
        let mut b = LogBuilder::default();
        b.visit(1, 1, "x", "/", 0);
        b.visit(1, 1, "x", "/a", 10_000);
        b.visit(1, 1, "x", "/", 30_000);
        b.click(1, 1, "x", 36_000, 6_000);
        b.visit(1, 1, "y", "/", 40_000);
        let f = session_features(&b.events);
        assert_eq!(f.len(), 2);
        let x = &f[0];
        assert_eq!((x.pages, x.distinct_pages, x.clicks), (3, 2, 1));
        assert_eq!(x.mean_gap_secs, Some(12.0));
        assert_eq!(f[1].mean_gap_secs, None);
    }

    #[test]
    fn instant_clicks_are_flagged() {
        let mut b = LogBuilder::default();
        training(&mut b, 40);
        let t0 = 40 * 600_000;
        b.visit(100, 100, "x", "/", t0);
        let bot = b.click(100, 100, "x", t0 + 5, 5);
        b.visit(101, 101, "x", "/", t0 + 60_000);
        b.visit(101, 101, "x", "/a", t0 + 80_000);
        let human = b.click(101, 101, "x", t0 + 100_000, 20_000);
        let v = behavior_classifier(&b.events, SimTime::from_millis(t0), &Thresholds::default()).unwrap();
        let get = |s| v.iter().find(|x| x.click_ref == s).unwrap();
        assert_eq!(get(bot).outcome, Outcome::Flag);
        assert!(get(bot).reason.starts_with("gap"));
        assert_eq!(get(human).outcome, Outcome::Pass);
        assert_eq!(v.len(), 22);
    }

    #[test]
    fn repeated_shape_is_remembered() {
        let mut b = LogBuilder::default();
        training(&mut b, 40);
        let t0 = 40 * 600_000;
        let mut t = Thresholds::default();
        b.visit(100, 100, "x", "/", t0);
        let first = b.click(100, 100, "x", t0 + 100, 100);
        b.visit(101, 101, "x", "/", t0 + 50_000);
        let second = b.click(101, 101, "x", t0 + 50_450, 450);
        t.d_max = 1.0;
        let probe = behavior_classifier(&b.events, SimTime::from_millis(t0), &t).unwrap();
        let d = |s| probe.iter().find(|x| x.click_ref == s).unwrap().score;
        assert!(d(first) > d(second));
        t.d_max = (d(first) + d(second)) / 2.0;
        let v = behavior_classifier(&b.events, SimTime::from_millis(t0), &t).unwrap();
        let get = |s| v.iter().find(|x| x.click_ref == s).unwrap().clone();
        assert_eq!(get(first).outcome, Outcome::Flag);
        assert_eq!(get(second).outcome, Outcome::Flag);
        assert!(get(second).reason.starts_with("same shape"));
    }

    #[test]
    fn training_size_is_checked() {
        let mut b = LogBuilder::default();
        training(&mut b, 10);
        assert!(matches!(
            behavior_classifier(&b.events, SimTime::from_millis(u64::MAX), &Thresholds::default()),
            Err(DetectionError::InsufficientTraining { have: 5, need: 10, .. })
        ));
    }
}
