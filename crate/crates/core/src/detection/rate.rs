use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::stats::predictive_deviate;
use super::{time_ordered, DetectionError, FilterId, FilterVerdict, Thresholds};
use crate::event::{Event, EventKind, SiteId};
use crate::time::SimTime;

/// Per-site traffic in one rate window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStat {
    pub site: SiteId,
    pub window_start: SimTime,
    pub clicks: u64,
    pub visits: u64,
    /// Trailing windows forming the baseline; 0 when there is none.
    pub baseline_windows: u32,
    pub baseline_clicks: u64,
    pub baseline_visits: u64,
    /// Normal-equivalent deviation of the click count from the trailing
    /// baseline's click rate; `None` without a baseline.
    pub z_rate: Option<f64>,
    /// Same, against the baseline clicks per visit at this window's visits.
    pub z_ctr: Option<f64>,
}

impl WindowStat {
    pub fn visits_per_click(&self) -> Option<f64> {
        (self.clicks > 0).then(|| self.visits as f64 / self.clicks as f64)
    }

    /// Larger of the two deviations, when the window was scored.
    pub fn z(&self) -> Option<f64> {
        match (self.z_rate, self.z_ctr) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    /// Deviation of `clicks` clicks against this window's baseline and visits.
    pub fn z_at(&self, clicks: u64) -> Option<f64> {
        if self.baseline_windows == 0 {
            return None;
        }
        let z_rate = predictive_deviate(clicks, 1.0, self.baseline_clicks, self.baseline_windows as f64);
        if self.baseline_visits == 0 {
            return Some(z_rate);
        }
        let z_ctr = predictive_deviate(
            clicks,
            self.visits as f64,
            self.baseline_clicks,
            self.baseline_visits as f64,
        );
        Some(z_rate.max(z_ctr))
    }
}

/// Click and visit counts per site per window, with each window scored
/// against its trailing baseline. Sites are in name order, windows in time
/// order, and every site spans the whole log.
///
/// A deviation is the normal quantile of the window's upper-tail probability
/// under the baseline's predictive distribution, so `z > 3` has the usual
/// false-alarm rate of about 0.13% even at low counts.
pub fn rate_windows(events: &[Event], t: &Thresholds) -> Vec<WindowStat> {
    let w_ms = t.rate_window.as_millis();
    let Some(last) = events.iter().map(|e| e.ts).max() else {
        return Vec::new();
    };
    let n = (last.as_millis() / w_ms + 1) as usize;
    let mut counts: BTreeMap<&SiteId, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for e in events {
        let w = (e.ts.as_millis() / w_ms) as usize;
        let (c, v) = counts.entry(&e.site).or_insert_with(|| (vec![0; n], vec![0; n]));
        match e.kind() {
            EventKind::Click => c[w] += 1,
            EventKind::Visit => v[w] += 1,
            EventKind::Impression => {}
        }
    }
    let b = t.baseline_windows as usize;
    let min = t.min_baseline_windows as usize;
    let mut out = Vec::with_capacity(counts.len() * n);
    for (site, (c, v)) in counts {
        for w in 0..n {
            let lo = w.saturating_sub(b);
            let scored = w - lo >= min;
            let base_c: u64 = c[lo..w].iter().sum();
            let base_v: u64 = v[lo..w].iter().sum();
            let (z_rate, z_ctr) = if scored {
                let z_rate = predictive_deviate(c[w], 1.0, base_c, (w - lo) as f64);
                let z_ctr = (base_v > 0).then(|| predictive_deviate(c[w], v[w] as f64, base_c, base_v as f64));
                (Some(z_rate), z_ctr)
            } else {
                (None, None)
            };
            out.push(WindowStat {
                site: site.clone(),
                window_start: SimTime::from_millis(w as u64 * w_ms),
                clicks: c[w],
                visits: v[w],
                baseline_windows: if scored { (w - lo) as u32 } else { 0 },
                baseline_clicks: if scored { base_c } else { 0 },
                baseline_visits: if scored { base_v } else { 0 },
                z_rate,
                z_ctr,
            });
        }
    }
    out
}

/// Flags every click in a site window whose click count or CTR sits more than
/// `z_max` deviations above its trailing baseline.
///
/// A flagged click scores `z / z_max` for its window. A click in an unflagged
/// window scores the deviation of the window's running count when it landed,
/// so only the clicks that carried a window towards the boundary score near it.
pub fn rate_ratio_filter(events: &[Event], t: &Thresholds) -> Result<Vec<FilterVerdict>, DetectionError> {
    let w_ms = t.rate_window.as_millis();
    let stats = rate_windows(events, t);
    let index: BTreeMap<(&SiteId, u64), &WindowStat> = stats
        .iter()
        .map(|s| ((&s.site, s.window_start.as_millis() / w_ms), s))
        .collect();
    let mut rank: BTreeMap<(&SiteId, u64), u64> = BTreeMap::new();
    let mut out = Vec::new();
    let mut scored = false;
    for e in time_ordered(events).into_iter().filter(|e| e.is_click()) {
        let key = (&e.site, e.ts.as_millis() / w_ms);
        let ws = index[&key];
        let k = rank.entry(key).or_default();
        *k += 1;
        let Some(z) = ws.z() else {
            out.push(FilterVerdict::pass(e.seq, FilterId::RateRatio, 0.0));
            continue;
        };
        scored = true;
        if z > t.z_max {
            let reason = format!(
                "window {} has {} clicks on {} visits, z {:.2}",
                key.1, ws.clicks, ws.visits, z
            );
            out.push(FilterVerdict::flag(e.seq, FilterId::RateRatio, z / t.z_max, reason));
        } else {
            let z_k = ws.z_at(*k).unwrap_or(0.0).min(z);
            out.push(FilterVerdict::pass(e.seq, FilterId::RateRatio, z_k.max(0.0) / t.z_max));
        }
    }
    if !out.is_empty() && !scored {
        return Err(DetectionError::BaselineUnavailable(t.min_baseline_windows));
    }
    out.sort_by_key(|v| v.click_ref);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::stats::upper_normal_deviate;
    use super::super::testlog::LogBuilder;
    use super::super::Outcome;
    use super::*;
    use crate::time::SimDuration;

    const H: u64 = 3_600_000;

    /// `per_hour[h]` visits and `clicks[h]` clicks in hour h on site "a".
    fn hourly(visits: &[u64], clicks: &[u64]) -> LogBuilder {
        let mut b = LogBuilder::default();
        let mut s = 0;
        for (h, (&v, &c)) in visits.iter().zip(clicks).enumerate() {
            let t0 = h as u64 * H;
            for i in 0..v {
                s += 1;
                b.visit(s, s as u32, "a", "/", t0 + i * 1000);
                if i < c {
                    b.click(s, s as u32, "a", t0 + i * 1000 + 500, 30_000);
                }
            }
        }
        b
    }

    #[test]
    fn spike_is_flagged() {
        let mut visits = vec![100u64; 30];
        let mut clicks = vec![
            5u64, 4, 6, 5, 5, 6, 4, 5, 5, 5, 6, 4, 5, 5, 5, 4, 6, 5, 5, 5, 5, 4, 6, 5, 5, 5, 4, 6, 5, 5,
        ];
        visits[28] = 100;
        clicks[28] = 40;
        let b = hourly(&visits, &clicks);
        let v = rate_ratio_filter(&b.events, &Thresholds::default()).unwrap();
        let hour = |seq: u64| b.events[seq as usize].ts.as_millis() / H;
        for x in &v {
            let expect = if hour(x.click_ref) == 28 {
                Outcome::Flag
            } else {
                Outcome::Pass
            };
            assert_eq!(x.outcome, expect, "hour {}", hour(x.click_ref));
        }
        let w = rate_windows(&b.events, &Thresholds::default());
        assert!(w[28].z().unwrap() > 3.0);
        assert_eq!(w[28].visits_per_click(), Some(2.5));
        assert!(w[..6].iter().all(|s| s.z().is_none()));
    }

    /// Upper tail of the negative binomial by its pmf recurrence.
    fn oracle_tail(c: u64, r: f64, p: f64) -> f64 {
        let mut pmf = libm::pow(p, r);
        let mut below = 0.0;
        for k in 0..c {
            below += pmf;
            pmf *= (k as f64 + r) / (k as f64 + 1.0) * (1.0 - p);
        }
        1.0 - below
    }

    #[test]
    fn hand_computed_scores() {
        // six baseline windows of 4,6,4,6,4,6 clicks on 100 visits, then 12 clicks on 100 visits
        let visits = vec![100u64; 7];
        let clicks = vec![4u64, 6, 4, 6, 4, 6, 12];
        let b = hourly(&visits, &clicks);
        let w = rate_windows(&b.events, &Thresholds::default());
        // 30 baseline clicks: r = 30.5; p = 6/7 per window, 600/700 per visit
        let z_rate = upper_normal_deviate(oracle_tail(12, 30.5, 6.0 / 7.0));
        let z_ctr = upper_normal_deviate(oracle_tail(12, 30.5, 600.0 / 700.0));
        assert!((w[6].z_rate.unwrap() - z_rate).abs() < 1e-9);
        assert!((w[6].z_ctr.unwrap() - z_ctr).abs() < 1e-9);
        assert!(z_rate > 2.0 && z_rate < 3.0, "{z_rate}");
        let v = rate_ratio_filter(&b.events, &Thresholds::default()).unwrap();
        let last = v.last().unwrap();
        assert!((last.score - z_rate.max(z_ctr) / 3.0).abs() < 1e-9);
        assert_eq!(last.outcome, Outcome::Pass);
        // the first click of the last window scores its running count of 1
        let first = &v[v.len() - 12];
        let z1 = upper_normal_deviate(oracle_tail(1, 30.5, 6.0 / 7.0)).max(upper_normal_deviate(oracle_tail(
            1,
            30.5,
            600.0 / 700.0,
        )));
        assert!((first.score - z1.max(0.0) / 3.0).abs() < 1e-9);
        let scores: Vec<f64> = v[v.len() - 12..].iter().map(|x| x.score).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn minute_burst_is_flagged() {
        // one click every 5 minutes for 2 hours, then 50 clicks inside one minute
        let mut b = LogBuilder::default();
        let mut s = 0;
        for m in (0..120u64).step_by(5) {
            s += 1;
            b.visit(s, s as u32, "a", "/", m * 60_000);
            b.click(s, s as u32, "a", m * 60_000 + 30_000, 30_000);
        }
        let burst_at = 121 * 60_000;
        let burst: Vec<u64> = (0..50)
            .map(|i| {
                s += 1;
                b.click(s, s as u32, "a", burst_at + i * 1000, 30_000)
            })
            .collect();
        let t = Thresholds {
            rate_window: SimDuration::from_mins(1),
            ..Thresholds::default()
        };
        let v = rate_ratio_filter(&b.events, &t).unwrap();
        for x in &v {
            let expect = if burst.contains(&x.click_ref) {
                Outcome::Flag
            } else {
                Outcome::Pass
            };
            assert_eq!(x.outcome, expect);
        }
        let w = rate_windows(&b.events, &t);
        let base_clicks: u64 = w[97..121].iter().map(|s| s.clicks).sum();
        // the tail is below what 1 - cdf can resolve; compare its size instead
        assert!(oracle_tail(50, base_clicks as f64 + 0.5, 24.0 / 25.0) < 1e-12);
        assert!(w[121].z_rate.unwrap() > 7.0);
    }

    #[test]
    fn baseline_needed() {
        let b = hourly(&[100; 3], &[5; 3]);
        assert_eq!(
            rate_ratio_filter(&b.events, &Thresholds::default()),
            Err(DetectionError::BaselineUnavailable(6))
        );
        assert_eq!(rate_ratio_filter(&[], &Thresholds::default()), Ok(Vec::new()));
    }

    #[test]
    fn empty_hours_have_windows() {
        let mut b = LogBuilder::default();
        b.visit(1, 1, "a", "/", 0);
        b.visit(2, 2, "b", "/", 5 * H);
        let w = rate_windows(&b.events, &Thresholds::default());
        assert_eq!(w.len(), 12);
        assert_eq!(
            w.iter()
                .filter(|s| s.site.as_str() == "a")
                .map(|s| s.visits)
                .sum::<u64>(),
            1
        );
    }
}
