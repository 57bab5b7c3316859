//! Tab-separated run files. Every file starts with one `#`-prefixed header
//! line; absent values are written as `-`.

use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use adlab_core::detection::{FilterId, FilterVerdict, Klass, Outcome, Verdict, WindowStat};
use adlab_core::event::EventDetail;
use adlab_core::{AdLink, Event, EventKind, SessionId, SimDuration, SimTime, SiteId, Truth};

use crate::error::AppError;

pub const EVENTS_FILE: &str = "events.log";
pub const TRUTH_FILE: &str = "truth.tsv";
pub const VERDICTS_FILE: &str = "verdicts.tsv";
pub const FILTERS_FILE: &str = "filters.tsv";
pub const WINDOWS_FILE: &str = "windows.tsv";
pub const PANEL_FILE: &str = "panel.txt";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENARIO_FILE: &str = "scenario.json";

const EVENTS_HEADER: &str = "#seq\tts_ms\tsession\tip\tsite\tpage\tkind\tads\tdwell_ms\tlink";
const TRUTH_HEADER: &str = "#seq\tkind\ttruth";
const VERDICTS_HEADER: &str = "#click\tclass\tcombined\tcontributing";
const FILTERS_HEADER: &str = "#click\tfilter\toutcome\tscore\treason";
const WINDOWS_HEADER: &str =
    "#site\twindow_start_ms\tclicks\tvisits\tbaseline_windows\tbaseline_clicks\tbaseline_visits\tz_rate\tz_ctr\tfraud_events";

const NONE: &str = "-";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NONE.to_string(), |v| v.to_string())
}

/// Data lines of a file with their 1-based line numbers, split on tabs and
/// checked for `width` fields.
fn rows<'a>(
    text: &'a str,
    file: &'a str,
    width: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>), AppError>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.is_empty())
        .map(move |(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() == width {
                Ok((i + 1, f))
            } else {
                Err(AppError::Format(format!(
                    "{file}:{}: expected {width} fields, got {}",
                    i + 1,
                    f.len()
                )))
            }
        })
}

fn field<T: FromStr>(file: &str, line: usize, name: &str, raw: &str) -> Result<T, AppError> {
    raw.parse()
        .map_err(|_| AppError::Format(format!("{file}:{line}: bad {name} {raw:?}")))
}

fn opt_field<T: FromStr>(file: &str, line: usize, name: &str, raw: &str) -> Result<Option<T>, AppError> {
    if raw == NONE {
        Ok(None)
    } else {
        field(file, line, name, raw).map(Some)
    }
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn write_events(events: &[Event]) -> String {
    let mut out = String::with_capacity(events.len() * 96);
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        let (ads, dwell, link) = match &e.detail {
            EventDetail::Visit => (None, None, None),
            EventDetail::Impression { ads } => (Some(*ads), None, None),
            EventDetail::Click {
                link,
                dwell_before_click,
            } => (None, Some(dwell_before_click.as_millis()), Some(link.path_and_query())),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.seq,
            e.ts.as_millis(),
            e.session,
            e.ip,
            e.site,
            clean(&e.page),
            e.kind().as_str(),
            opt(ads),
            opt(dwell),
            opt(link),
        );
    }
    out
}

pub fn read_events(text: &str) -> Result<Vec<Event>, AppError> {
    const F: &str = EVENTS_FILE;
    rows(text, F, 10)
        .map(|r| {
            let (n, f) = r?;
            let kind: EventKind = field(F, n, "kind", f[6])?;
            let detail = match kind {
                EventKind::Visit => EventDetail::Visit,
                EventKind::Impression => EventDetail::Impression {
                    ads: field(F, n, "ads", f[7])?,
                },
                EventKind::Click => EventDetail::Click {
                    link: AdLink::parse(f[9]).map_err(|e| AppError::Format(format!("{F}:{n}: bad link: {e}")))?,
                    dwell_before_click: SimDuration::from_millis(field(F, n, "dwell_ms", f[8])?),
                },
            };
            Ok(Event {
                seq: field(F, n, "seq", f[0])?,
                ts: SimTime::from_millis(field(F, n, "ts_ms", f[1])?),
                session: field::<SessionId>(F, n, "session", f[2])?,
                ip: field::<Ipv4Addr>(F, n, "ip", f[3])?,
                site: SiteId::new(f[4]),
                page: f[5].to_string(),
                detail,
            })
        })
        .collect()
}

/// One row per event: `seq`, kind and ground truth.
pub fn write_truth(events: &[Event], truth: &[Truth]) -> String {
    let mut out = String::with_capacity(events.len() * 24);
    out.push_str(TRUTH_HEADER);
    out.push('\n');
    for (e, t) in events.iter().zip(truth) {
        let _ = writeln!(out, "{}\t{}\t{}", e.seq, e.kind().as_str(), t.as_str());
    }
    out
}

/// `(click ref, truth)` for the click rows of a truth file.
pub fn read_click_truth(text: &str) -> Result<Vec<(u64, Truth)>, AppError> {
    const F: &str = TRUTH_FILE;
    let mut out = Vec::new();
    for r in rows(text, F, 3) {
        let (n, f) = r?;
        let kind: EventKind = field(F, n, "kind", f[1])?;
        if kind == EventKind::Click {
            out.push((field(F, n, "seq", f[0])?, field(F, n, "truth", f[2])?));
        }
    }
    Ok(out)
}

pub fn write_verdicts(verdicts: &[Verdict]) -> String {
    let mut out = String::with_capacity(verdicts.len() * 40);
    out.push_str(VERDICTS_HEADER);
    out.push('\n');
    for v in verdicts {
        let contributing = if v.contributing.is_empty() {
            NONE.to_string()
        } else {
            v.contributing.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            v.click_ref,
            v.klass.as_str(),
            v.combined,
            contributing
        );
    }
    out
}

pub fn read_verdicts(text: &str) -> Result<Vec<Verdict>, AppError> {
    const F: &str = VERDICTS_FILE;
    rows(text, F, 4)
        .map(|r| {
            let (n, f) = r?;
            let contributing = if f[3] == NONE {
                Vec::new()
            } else {
                f[3].split(',')
                    .map(|x| field::<FilterId>(F, n, "filter", x))
                    .collect::<Result<_, _>>()?
            };
            Ok(Verdict {
                click_ref: field(F, n, "click", f[0])?,
                klass: field::<Klass>(F, n, "class", f[1])?,
                contributing,
                combined: field(F, n, "combined", f[2])?,
            })
        })
        .collect()
}

pub fn write_filter_verdicts<'a>(fvs: impl IntoIterator<Item = &'a FilterVerdict>) -> String {
    let mut out = String::new();
    out.push_str(FILTERS_HEADER);
    out.push('\n');
    for v in fvs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            v.click_ref,
            v.filter.as_str(),
            v.outcome.as_str(),
            v.score,
            clean(&v.reason)
        );
    }
    out
}

pub fn read_filter_verdicts(text: &str) -> Result<Vec<FilterVerdict>, AppError> {
    const F: &str = FILTERS_FILE;
    rows(text, F, 5)
        .map(|r| {
            let (n, f) = r?;
            Ok(FilterVerdict {
                click_ref: field(F, n, "click", f[0])?,
                filter: field(F, n, "filter", f[1])?,
                outcome: field::<Outcome>(F, n, "outcome", f[2])?,
                score: field(F, n, "score", f[3])?,
                reason: f[4].to_string(),
            })
        })
        .collect()
}

/// A rate window plus how many ground-truth fraud events fell into it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub stat: WindowStat,
    pub fraud_events: u64,
}

pub fn write_windows(rows: &[WindowRow]) -> String {
    let mut out = String::new();
    out.push_str(WINDOWS_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.stat;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.site,
            s.window_start.as_millis(),
            s.clicks,
            s.visits,
            s.baseline_windows,
            s.baseline_clicks,
            s.baseline_visits,
            opt(s.z_rate),
            opt(s.z_ctr),
            r.fraud_events
        );
    }
    out
}

pub fn read_windows(text: &str) -> Result<Vec<WindowRow>, AppError> {
    const F: &str = WINDOWS_FILE;
    rows(text, F, 10)
        .map(|r| {
            let (n, f) = r?;
            Ok(WindowRow {
                stat: WindowStat {
                    site: SiteId::new(f[0]),
                    window_start: SimTime::from_millis(field(F, n, "window_start_ms", f[1])?),
                    clicks: field(F, n, "clicks", f[2])?,
                    visits: field(F, n, "visits", f[3])?,
                    baseline_windows: field(F, n, "baseline_windows", f[4])?,
                    baseline_clicks: field(F, n, "baseline_clicks", f[5])?,
                    baseline_visits: field(F, n, "baseline_visits", f[6])?,
                    z_rate: opt_field(F, n, "z_rate", f[7])?,
                    z_ctr: opt_field(F, n, "z_ctr", f[8])?,
                },
                fraud_events: field(F, n, "fraud_events", f[9])?,
            })
        })
        .collect()
}

/// Reads `dir/name`, or `None` when the file does not exist.
pub fn read_optional(dir: &Path, name: &str) -> Result<Option<String>, AppError> {
    let path = dir.join(name);
    match std::fs::read_to_string(&path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(AppError::io(&path, e)),
    }
}

pub fn read_required(dir: &Path, name: &str) -> Result<String, AppError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), AppError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| AppError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use adlab_core::detection::WindowStat;

    fn link() -> AdLink {
        AdLink::parse(
            "/aclk?sa=l&ai=AbC-_1&num=2&sig=s1g&client=ca-pub-1&adurl=http://shop1.example/offer%3Fsrc%3Dx%26slot%3D0",
        )
        .unwrap()
    }

    fn events() -> Vec<Event> {
        let base = |seq, ts, detail| Event {
            seq,
            ts: SimTime::from_millis(ts),
            session: SessionId(7),
            ip: Ipv4Addr::new(10, 0, 0, 9),
            site: SiteId::new("site000"),
            page: "/index.html".into(),
            detail,
        };
        vec![
            base(0, 5, EventDetail::Visit),
            base(1, 5, EventDetail::Impression { ads: 3 }),
            base(
                2,
                25_005,
                EventDetail::Click {
                    link: link(),
                    dwell_before_click: SimDuration::from_millis(25_000),
                },
            ),
        ]
    }

    #[test]
    fn events_round_trip() {
        let ev = events();
        let text = write_events(&ev);
        assert!(text.starts_with("#seq\t"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_events(&text).unwrap(), ev);
        assert!(text.lines().nth(1).unwrap().ends_with("\tvisit\t-\t-\t-"));
    }

    #[test]
    fn truth_keeps_clicks_only_on_read() {
        let ev = events();
        let text = write_truth(&ev, &[Truth::Legit, Truth::Legit, Truth::Fraud]);
        assert_eq!(read_click_truth(&text).unwrap(), vec![(2, Truth::Fraud)]);
    }

    #[test]
    fn verdicts_round_trip_exactly() {
        let v = vec![
            Verdict {
                click_ref: 2,
                klass: Klass::InvalidAuto,
                contributing: vec![FilterId::DwellIp, FilterId::RateRatio],
                combined: 1.0 / 3.0 + 1.0,
            },
            Verdict {
                click_ref: 9,
                klass: Klass::Valid,
                contributing: vec![],
                combined: 0.1,
            },
        ];
        assert_eq!(read_verdicts(&write_verdicts(&v)).unwrap(), v);
    }

    #[test]
    fn filter_verdicts_round_trip() {
        let v = vec![FilterVerdict {
            click_ref: 4,
            filter: FilterId::BehaviorClass,
            outcome: Outcome::Flag,
            score: 2.345678901,
            reason: "pages is 4.2 deviations\tfrom x".into(),
        }];
        let back = read_filter_verdicts(&write_filter_verdicts(&v)).unwrap();
        assert_eq!(back[0].reason, "pages is 4.2 deviations from x");
        assert_eq!(back[0].score, v[0].score);
    }

    #[test]
    fn windows_round_trip() {
        let w = vec![WindowRow {
            stat: WindowStat {
                site: SiteId::new("site001"),
                window_start: SimTime::from_millis(3_600_000),
                clicks: 4,
                visits: 90,
                baseline_windows: 1,
                baseline_clicks: 3,
                baseline_visits: 80,
                z_rate: None,
                z_ctr: Some(-0.25),
            },
            fraud_events: 2,
        }];
        assert_eq!(read_windows(&write_windows(&w)).unwrap(), w);
    }

    #[test]
    fn malformed_lines_name_file_and_line() {
        let e = read_verdicts("#h\n1\tvalid\n").unwrap_err().to_string();
        assert_eq!(e, "verdicts.tsv:2: expected 4 fields, got 2");
        let e = read_verdicts("#h\n1\tnope\t0\t-\n").unwrap_err().to_string();
        assert!(e.contains("bad class"), "{e}");
    }
}
