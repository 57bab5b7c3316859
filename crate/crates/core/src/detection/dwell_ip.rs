use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use super::{time_ordered, FilterId, FilterVerdict, Thresholds};
use crate::event::{Event, SiteId};
use crate::time::SimTime;

/// Flags clicks that follow arrival too quickly, or that repeat a click from
/// the same IP on the same site inside `same_ip_window`.
///
/// Score is the larger of `dwell_min / dwell` and `window / gap`.
pub fn dwell_ip_filter(events: &[Event], t: &Thresholds) -> Vec<FilterVerdict> {
    let mut last: BTreeMap<(Ipv4Addr, &SiteId), SimTime> = BTreeMap::new();
    let min_ms = t.dwell_min.as_millis() as f64;
    let win_ms = t.same_ip_window.as_millis() as f64;
    let mut out = Vec::new();
    for e in time_ordered(events) {
        let Some(dwell) = e.dwell_before_click() else {
            continue;
        };
        let dwell_ms = dwell.as_millis();
        let s_dwell = min_ms / dwell_ms.max(1) as f64;
        let gap = last.insert((e.ip, &e.site), e.ts).map(|prev| e.ts - prev);
        let s_gap = gap.map_or(0.0, |g| win_ms / g.as_millis().max(1) as f64);
        let score = s_dwell.max(s_gap);
        let fast = dwell < t.dwell_min;
        let repeat = gap.is_some_and(|g| g < t.same_ip_window);
        let v = match (fast, repeat) {
            (false, false) => FilterVerdict::pass(e.seq, FilterId::DwellIp, score),
            (true, false) => FilterVerdict::flag(e.seq, FilterId::DwellIp, score, format!("dwell {dwell_ms}ms")),
            (_, true) => {
                let g = gap.unwrap_or_default().as_millis();
                let reason = if fast {
                    format!("dwell {dwell_ms}ms; repeat after {g}ms")
                } else {
                    format!("repeat after {g}ms")
                };
                FilterVerdict::flag(e.seq, FilterId::DwellIp, score, reason)
            }
        };
        out.push(v);
    }
    out
}
