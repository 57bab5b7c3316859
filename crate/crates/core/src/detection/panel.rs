use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use super::{FilterId, FilterVerdict, Thresholds};
use crate::event::{Event, SiteId};

/// One line of the advertiser-facing panel.
#[derive(Debug, Clone, PartialEq)]
pub enum PanelItem {
    /// An IP exceeded the per-day click limit.
    BusyIp { ip: Ipv4Addr, day: u64, clicks: u64 },
    /// A site's clicks grew faster than the allowed day-over-day ratio.
    SiteGrowth {
        site: SiteId,
        day: u64,
        clicks: u64,
        prev_clicks: u64,
    },
}

impl PanelItem {
    pub fn describe(&self) -> String {
        match self {
            PanelItem::BusyIp { ip, day, clicks } => format!("ip {ip} made {clicks} clicks on day {day}"),
            PanelItem::SiteGrowth {
                site,
                day,
                clicks,
                prev_clicks,
            } => format!("site {site} went from {prev_clicks} to {clicks} clicks on day {day}"),
        }
    }
}

/// Per-IP daily click counts and per-site day-over-day growth, as an
/// advertiser's own reporting would show them.
///
/// Score is the larger of `clicks / ip_clicks_per_day` and
/// `growth / growth_ratio`. Growth needs a log spanning two days and at least
/// one click the day before.
pub fn advertiser_panel_filter(events: &[Event], t: &Thresholds) -> (Vec<FilterVerdict>, Vec<PanelItem>) {
    let clicks: Vec<&Event> = events.iter().filter(|e| e.is_click()).collect();
    let mut per_ip: BTreeMap<(Ipv4Addr, u64), u64> = BTreeMap::new();
    let mut per_site: BTreeMap<(&SiteId, u64), u64> = BTreeMap::new();
    for e in &clicks {
        *per_ip.entry((e.ip, e.ts.day())).or_default() += 1;
        *per_site.entry((&e.site, e.ts.day())).or_default() += 1;
    }
    let first_day = events.iter().map(|e| e.ts.day()).min().unwrap_or(0);
    let last_day = events.iter().map(|e| e.ts.day()).max().unwrap_or(0);
    let multi_day = last_day > first_day;
    let k = t.ip_clicks_per_day as f64;

    let growth = |site: &SiteId, day: u64| -> Option<(u64, u64)> {
        if !multi_day || day == first_day {
            return None;
        }
        let prev = *per_site.get(&(site, day - 1)).unwrap_or(&0);
        (prev >= 1).then(|| (per_site[&(site, day)], prev))
    };

    let mut panel = Vec::new();
    for (&(ip, day), &n) in &per_ip {
        if n > t.ip_clicks_per_day as u64 {
            panel.push(PanelItem::BusyIp { ip, day, clicks: n });
        }
    }
    for &(site, day) in per_site.keys() {
        if let Some((cur, prev)) = growth(site, day) {
            if cur as f64 / prev as f64 > t.growth_ratio {
                panel.push(PanelItem::SiteGrowth {
                    site: site.clone(),
                    day,
                    clicks: cur,
                    prev_clicks: prev,
                });
            }
        }
    }

    let verdicts = clicks
        .iter()
        .map(|e| {
            let day = e.ts.day();
            let n = per_ip[&(e.ip, day)];
            let s_ip = n as f64 / k;
            let g = growth(&e.site, day);
            let s_growth = g.map_or(0.0, |(cur, prev)| cur as f64 / prev as f64 / t.growth_ratio);
            let busy = n > t.ip_clicks_per_day as u64;
            let grown = s_growth > 1.0;
            let score = s_ip.max(s_growth);
            if busy || grown {
                let mut reason = String::new();
                if busy {
                    reason = format!("ip {} made {n} clicks on day {day}", e.ip);
                }
                if let Some((cur, prev)) = g.filter(|_| grown) {
                    if !reason.is_empty() {
                        reason.push_str("; ");
                    }
                    reason.push_str(&format!("site grew {prev} -> {cur}"));
                }
                FilterVerdict::flag(e.seq, FilterId::AdvertiserPanel, score, reason)
            } else {
                FilterVerdict::pass(e.seq, FilterId::AdvertiserPanel, score)
            }
        })
        .collect();
    (verdicts, panel)
}

#[cfg(test)]
mod tests {
    use super::super::testlog::{ip, LogBuilder};
    use super::super::Outcome;
    use super::*;
    use alloc::vec;

    const DAY: u64 = 86_400_000;

    #[test]
    fn busy_ip_boundary() {
        let mut b = LogBuilder::default();
        for i in 0..20 {
            b.click(i, 1, "a", i * 60_000, 30_000);
        }
        let t = Thresholds::default();
        let (v, panel) = advertiser_panel_filter(&b.events, &t);
        assert!(v.iter().all(|x| x.outcome == Outcome::Pass && x.score == 1.0));
        assert!(panel.is_empty());
        b.click(99, 1, "a", 30 * 60_000, 30_000);
        let (v, panel) = advertiser_panel_filter(&b.events, &t);
        assert!(v.iter().all(|x| x.outcome == Outcome::Flag));
        assert_eq!(
            panel,
            vec![PanelItem::BusyIp {
                ip: ip(1),
                day: 0,
                clicks: 21
            }]
        );
    }

    #[test]
    fn site_growth() {
        let mut b = LogBuilder::default();
        let mut s = 0;
        let mut add = |b: &mut LogBuilder, site: &str, day: u64, n: u64| {
            for i in 0..n {
                s += 1;
                b.click(s, s as u32, site, day * DAY + i * 1000, 30_000);
            }
        };
        add(&mut b, "a", 0, 10);
        add(&mut b, "a", 1, 31);
        add(&mut b, "b", 0, 10);
        add(&mut b, "b", 1, 30);
        let (v, panel) = advertiser_panel_filter(&b.events, &Thresholds::default());
        let flagged: Vec<&str> = v
            .iter()
            .filter(|x| x.is_flag())
            .map(|x| b.events[x.click_ref as usize].site.as_str())
            .collect();
        assert_eq!(flagged.len(), 31);
        assert!(flagged.iter().all(|s| *s == "a"));
        assert_eq!(panel.len(), 1);
        assert!(panel[0].describe().contains("10 to 31"));
    }

    #[test]
    fn single_day_has_no_growth() {
        let mut b = LogBuilder::default();
        b.click(1, 1, "a", 1000, 30_000);
        let (v, _) = advertiser_panel_filter(&b.events, &Thresholds::default());
        assert_eq!(v[0].score, 1.0 / 20.0);
    }
}
