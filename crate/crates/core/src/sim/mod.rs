//! Discrete-event traffic generator.
//!
//! Legitimate visitors browse publisher sites, look at the ads and sometimes
//! click. Captured visitors land on capture sites whose hidden frame loads a
//! target publisher page, runs the link extractor and then follows
//! [`decide_action`]. Boost visits add click-free background traffic to the
//! targets. Everything goes through one in-process [`AdNetwork`], one
//! simulated clock and one seeded [`ChaCha8Rng`], so the log is a pure
//! function of the [`ScenarioConfig`].

mod policy;

pub use policy::{click_allowed, decide_action, Action, CtrReference, FraudPolicy, IpMode, SiteStats};

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adnet::{AdLink, Campaign};
use crate::detection::Thresholds;
use crate::dist::{exp_interarrival, DistError, GeometricSpec, LogNormalSpec};
use crate::event::{Event, LabeledLog, SessionId, SiteId, Truth};
use crate::extractor::{self, emulate_client_render, run_extraction, ExtractorOptions, RewriteMode};
use crate::service::{AdNetwork, CaptureSite, PublisherSite, RequestCtx, Response, SetupError, Transport};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Field { field: String, reason: String },
    #[error(transparent)]
    Setup(#[from] SetupError),
}

impl ConfigError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dist(field: &str, e: DistError) -> Self {
        ConfigError::field(field, format!("{e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Legit,
    Captured,
}

/// Browsing habits shared by the legitimate population.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct LegitProfile {
    pub pages_per_visit: GeometricSpec,
    pub dwell: LogNormalSpec,
    /// Probability that a session clicks one ad.
    pub click_propensity: f64,
}

impl Default for LegitProfile {
    fn default() -> Self {
        LegitProfile {
            pages_per_visit: GeometricSpec { mean: 3.0 },
            dwell: LogNormalSpec::new(20.0, 0.6),
            click_propensity: 0.1,
        }
    }
}

impl LegitProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pages_per_visit
            .validate()
            .map_err(|e| ConfigError::dist("legit.pages_per_visit", e))?;
        self.dwell.validate().map_err(|e| ConfigError::dist("legit.dwell", e))?;
        if !(0.0..=1.0).contains(&self.click_propensity) {
            return Err(ConfigError::field("legit.click_propensity", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Expected clicks per page visit.
    pub fn expected_ctr(&self) -> f64 {
        self.click_propensity / self.pages_per_visit.mean
    }
}

/// One session's identity and habits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionProfile {
    pub session_id: SessionId,
    pub ip: Ipv4Addr,
    pub behavior: Behavior,
    pub pages_per_visit: GeometricSpec,
    pub dwell: LogNormalSpec,
    pub click_propensity: f64,
}

impl SessionProfile {
    pub fn new(session_id: SessionId, ip: Ipv4Addr, behavior: Behavior, habits: &LegitProfile) -> Self {
        SessionProfile {
            session_id,
            ip,
            behavior,
            pages_per_visit: habits.pages_per_visit,
            dwell: habits.dwell,
            click_propensity: habits.click_propensity,
        }
    }
}

/// How many visitors the capture sites hijack.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum CaptureRate {
    /// Captured sessions per simulated hour, over all capture sites.
    PerHour(f64),
    /// Rate chosen so fraud clicks make up this share of all clicks, assuming
    /// one click per captured session.
    ClickShare(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Total simulated time, warm-up included.
    pub duration: SimDuration,
    /// Fraud-free lead-in; also the behaviour classifier's training window.
    pub warmup: SimDuration,
    pub ad_host: String,
    pub sites: Vec<PublisherSite>,
    pub campaigns: Vec<Campaign>,
    pub n_legit_users: u32,
    pub legit: LegitProfile,
    pub n_capture_sites: u32,
    pub capture_visit_rate: CaptureRate,
    /// Sites the apparatus attacks; empty means every site.
    pub target_sites: Vec<SiteId>,
    /// Distinct addresses captured visitors come from.
    pub captured_ip_pool: u32,
    pub fraud_policy: FraudPolicy,
    pub thresholds: Thresholds,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration == SimDuration::ZERO {
            return Err(ConfigError::field("duration", "must be > 0"));
        }
        if self.warmup > self.duration {
            return Err(ConfigError::field("warmup", "must not exceed duration"));
        }
        if self.sites.is_empty() {
            return Err(ConfigError::field("sites", "need at least one publisher site"));
        }
        if self.n_legit_users == 0 {
            return Err(ConfigError::field("n_legit_users", "must be >= 1"));
        }
        self.legit.validate()?;
        self.fraud_policy.validate()?;
        self.thresholds
            .validate()
            .map_err(|e| ConfigError::field("detection", format!("{e}")))?;
        match self.capture_visit_rate {
            CaptureRate::PerHour(r) if !(r >= 0.0 && r.is_finite()) => {
                return Err(ConfigError::field("capture_visit_rate", "must be >= 0"))
            }
            CaptureRate::ClickShare(s) if !(0.0..1.0).contains(&s) => {
                return Err(ConfigError::field("click_share", "must be in [0, 1)"))
            }
            _ => {}
        }
        if self.n_capture_sites > 0
            && self.hijack_rate_per_hour() > 0.0
            && self.fraud_policy.ip_mode == IpMode::PerSession
            && self.captured_ip_pool == 0
        {
            return Err(ConfigError::field("captured_ip_pool", "must be >= 1"));
        }
        for t in &self.target_sites {
            if !self.sites.iter().any(|s| &s.site_id == t) {
                return Err(ConfigError::field("target_sites", format!("unknown site {t}")));
            }
        }
        Ok(())
    }

    pub fn fraud_period(&self) -> SimDuration {
        self.duration - self.warmup
    }

    /// Legitimate sessions per hour that produce `popularity` page visits per hour.
    pub fn session_rate(&self, popularity: f64) -> f64 {
        popularity / self.legit.pages_per_visit.mean
    }

    /// Expected legitimate clicks per simulated hour over all sites.
    pub fn expected_legit_clicks_per_hour(&self) -> f64 {
        self.sites.iter().map(|s| s.baseline_popularity).sum::<f64>() * self.legit.expected_ctr()
    }

    /// Captured sessions per hour during the fraud period.
    pub fn hijack_rate_per_hour(&self) -> f64 {
        match self.capture_visit_rate {
            CaptureRate::PerHour(r) => r,
            CaptureRate::ClickShare(share) => {
                let fraud_hours = self.fraud_period().as_hours_f64();
                if fraud_hours <= 0.0 || share <= 0.0 {
                    return 0.0;
                }
                let legit = self.expected_legit_clicks_per_hour() * self.duration.as_hours_f64();
                legit * share / (1.0 - share) / fraud_hours
            }
        }
    }

    fn target_indices(&self) -> Vec<usize> {
        if self.target_sites.is_empty() {
            (0..self.sites.len()).collect()
        } else {
            self.target_sites
                .iter()
                .filter_map(|t| self.sites.iter().position(|s| &s.site_id == t))
                .collect()
        }
    }
}

/// Address of legitimate user `n` (10.0.0.0/8).
pub fn legit_ip(n: u32) -> Ipv4Addr {
    Ipv4Addr::from(0x0A00_0001u32.wrapping_add(n))
}

/// Address `n` of the captured-visitor pool (100.64.0.0/10).
pub fn captured_ip(n: u32) -> Ipv4Addr {
    Ipv4Addr::from(0x6440_0001u32.wrapping_add(n))
}

/// The `n`-th capture site.
pub fn capture_site(n: u32) -> CaptureSite {
    CaptureSite {
        site_id: SiteId::new(format!("capture{n:02}")),
        base_url: format!("http://www.capture{n:02}.test"),
        pages: vec![
            "/index.html".into(),
            "/news.html".into(),
            "/games.html".into(),
            "/videos.html".into(),
        ],
    }
}

/// Counters kept alongside the log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub legit_sessions: u64,
    pub hijack_sessions: u64,
    pub boost_visits: u64,
    /// Hijacked sessions that ended because extraction failed.
    pub extraction_failures: u64,
    /// Legitimate page views whose ad frame could not be loaded.
    pub ad_load_failures: u64,
    /// Decisions taken by hijacked sessions, indexed by [`Action`].
    pub actions: [u64; 4],
    pub fraud_clicks: u64,
    pub legit_clicks: u64,
}

/// Result of a scenario run. The network holds the log and the impression records.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub network: AdNetwork,
    pub stats: SimStats,
}

impl SimOutput {
    pub fn log(&self) -> &LabeledLog {
        self.network.log()
    }
}

/// Apparatus-side bookkeeping per target.
#[derive(Debug, Clone, Default)]
struct FraudState {
    visits: Vec<u64>,
    clicks: Vec<u64>,
    baseline_ctr: Vec<f64>,
    day: u64,
    clicks_today: u32,
}

struct World<'a, R: RngCore> {
    net: &'a mut AdNetwork,
    rng: &'a mut R,
    sites: &'a [PublisherSite],
    /// Indices into `sites` of the attacked sites.
    targets: &'a [usize],
    capture: &'a [CaptureSite],
    legit: LegitProfile,
    policy: FraudPolicy,
    n_legit_users: u32,
    captured_ip_pool: u32,
    fraud: FraudState,
    stats: SimStats,
    next_session: u64,
}

impl<R: RngCore> World<'_, R> {
    fn new_session(&mut self) -> SessionId {
        self.next_session += 1;
        SessionId(self.next_session)
    }

    fn correlator(&mut self) -> u64 {
        self.rng.random_range(1_000_000_000_000..10_000_000_000_000)
    }

    fn captured_addr(&mut self) -> Ipv4Addr {
        match self.policy.ip_mode {
            IpMode::Single(ip) => ip,
            IpMode::PerSession => captured_ip(self.rng.random_range(0..self.captured_ip_pool.max(1))),
        }
    }

    fn budget_left(&mut self, now: SimTime) -> u32 {
        if now.day() != self.fraud.day {
            self.fraud.day = now.day();
            self.fraud.clicks_today = 0;
        }
        self.policy.click_budget.saturating_sub(self.fraud.clicks_today)
    }

    /// Loads the ad frame the way a browser on `page_url` would.
    fn load_ads(&mut self, site: usize, page_url: &str, ctx: &RequestCtx) -> Vec<AdLink> {
        let correlator = self.correlator();
        let ad_host = String::from(self.net.ad_host());
        let config = &self.sites[site].ad_config;
        let links = emulate_client_render(&mut *self.net, config, &ad_host, page_url, ctx, correlator)
            .and_then(|url| extractor::fetch_source(&mut *self.net, &url, ctx))
            .and_then(|html| {
                extractor::extract_ad_links(&html)
                    .iter()
                    .map(|h| AdLink::parse(h).map_err(extractor::ExtractError::from))
                    .collect::<Result<Vec<_>, _>>()
            });
        links.unwrap_or_else(|_| {
            self.stats.ad_load_failures += 1;
            Vec::new()
        })
    }

    fn click(&mut self, links: &[AdLink], ctx: &RequestCtx) -> bool {
        if links.is_empty() {
            return false;
        }
        let link = &links[self.rng.random_range(0..links.len())];
        let url = link.to_url(self.net.ad_host());
        matches!(self.net.get(&url, ctx), Ok(Response::Redirect(_)))
    }

    /// Background load of a target page plus extraction, from `exec_page_url`.
    fn extract(&mut self, site: usize, page: &str, exec_page_url: &str, ctx: &RequestCtx) -> Option<Vec<AdLink>> {
        let correlator = self.correlator();
        let target = self.sites[site].page_url(page);
        let opts = ExtractorOptions {
            exec_page_url: exec_page_url.into(),
            rewrite: RewriteMode::ToTarget,
            ad_host: None,
        };
        match run_extraction(&mut *self.net, &target, ctx, correlator, &opts) {
            Ok(res) => Some(res.links),
            Err(_) => {
                self.stats.extraction_failures += 1;
                None
            }
        }
    }
}

#[derive(Debug, Clone)]
struct LegitSession {
    profile: SessionProfile,
    site: usize,
    plan: Vec<usize>,
    next: usize,
    click_on: Option<usize>,
    links: Vec<AdLink>,
    clicking: bool,
}

impl LegitSession {
    fn start<R: RngCore>(w: &mut World<'_, R>, profile: SessionProfile, site: usize) -> Self {
        let n_pages = w.sites[site].pages.len();
        let n = profile.pages_per_visit.sample(w.rng) as usize;
        let mut order: Vec<usize> = (0..n_pages).collect();
        order.shuffle(w.rng);
        let mut plan: Vec<usize> = order.into_iter().take(n).collect();
        while plan.len() < n {
            plan.push(w.rng.random_range(0..n_pages));
        }
        let click_on = (w.rng.random::<f64>() < profile.click_propensity).then(|| w.rng.random_range(0..n));
        LegitSession {
            profile,
            site,
            plan,
            next: 0,
            click_on,
            links: Vec::new(),
            clicking: false,
        }
    }

    fn step<R: RngCore>(&mut self, w: &mut World<'_, R>, now: SimTime) -> Option<SimTime> {
        let ctx = RequestCtx {
            now,
            session: self.profile.session_id,
            ip: self.profile.ip,
            truth: Truth::Legit,
        };
        if self.clicking {
            if w.click(&self.links, &ctx) {
                w.stats.legit_clicks += 1;
            }
            return None;
        }
        let idx = self.next;
        let page_url = w.sites[self.site].page_url(&w.sites[self.site].pages[self.plan[idx]]);
        if w.net.get(&page_url, &ctx).is_err() {
            return None;
        }
        self.links = w.load_ads(self.site, &page_url, &ctx);
        let dwell = self.profile.dwell.sample(w.rng);
        self.next += 1;
        if self.click_on == Some(idx) {
            self.clicking = true;
            return Some(now + dwell);
        }
        (self.next < self.plan.len()).then(|| now + dwell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HijackPhase {
    Start,
    Decide,
    ExtraVisit,
    Click,
}

#[derive(Debug, Clone)]
struct HijackSession {
    session: SessionId,
    ip: Ipv4Addr,
    capture_url: String,
    /// Index into the world's target list.
    target: usize,
    page: usize,
    links: Vec<AdLink>,
    steps: u32,
    phase: HijackPhase,
    actions: Vec<(SimTime, Action)>,
}

impl HijackSession {
    fn new(session: SessionId, ip: Ipv4Addr, capture_url: String, target: usize, page: usize) -> Self {
        HijackSession {
            session,
            ip,
            capture_url,
            target,
            page,
            links: Vec::new(),
            steps: 0,
            phase: HijackPhase::Start,
            actions: Vec::new(),
        }
    }

    fn leave_page<R: RngCore>(&self, w: &mut World<'_, R>) {
        w.fraud.visits[self.target] += 1;
    }

    fn step<R: RngCore>(&mut self, w: &mut World<'_, R>, now: SimTime) -> Option<SimTime> {
        let ctx = RequestCtx {
            now,
            session: self.session,
            ip: self.ip,
            truth: Truth::Fraud,
        };
        let site = w.targets[self.target];
        match self.phase {
            HijackPhase::Start | HijackPhase::ExtraVisit => {
                if self.phase == HijackPhase::Start {
                    let capture_url = self.capture_url.clone();
                    if w.net.get(&capture_url, &ctx).is_err() {
                        return None;
                    }
                }
                let page = w.sites[site].pages[self.page].clone();
                let capture_url = self.capture_url.clone();
                self.links = w.extract(site, &page, &capture_url, &ctx)?;
                self.decide(w, now)
            }
            HijackPhase::Decide => self.decide(w, now),
            HijackPhase::Click => {
                if w.click(&self.links, &ctx) {
                    w.stats.fraud_clicks += 1;
                }
                None
            }
        }
    }

    fn decide<R: RngCore>(&mut self, w: &mut World<'_, R>, now: SimTime) -> Option<SimTime> {
        if self.steps >= w.policy.max_steps {
            self.leave_page(w);
            return None;
        }
        self.steps += 1;
        let stats = SiteStats {
            visits: w.fraud.visits[self.target],
            clicks: w.fraud.clicks[self.target],
            baseline_ctr: w.fraud.baseline_ctr[self.target],
            budget_left: w.budget_left(now),
        };
        let action = if self.links.is_empty() && click_allowed(&w.policy, &stats) {
            // nothing to click on this page
            if w.rng.random::<f64>() < w.policy.p_extra_visit {
                Action::ExtraVisit
            } else {
                Action::Skip
            }
        } else {
            decide_action(&w.policy, &stats, w.rng)
        };
        w.stats.actions[action as usize] += 1;
        self.actions.push((now, action));
        match action {
            Action::Click => {
                w.fraud.clicks[self.target] += 1;
                w.fraud.clicks_today += 1;
                self.leave_page(w);
                self.phase = HijackPhase::Click;
                let delay = w.policy.click_delay.map_or(SimDuration::ZERO, |d| d.sample(w.rng));
                Some(now + delay)
            }
            Action::Wait => {
                self.phase = HijackPhase::Decide;
                Some(now + w.policy.wait.sample(w.rng))
            }
            Action::ExtraVisit => {
                self.leave_page(w);
                let n = w.sites[w.targets[self.target]].pages.len();
                if n > 1 {
                    let step = w.rng.random_range(1..n);
                    self.page = (self.page + step) % n;
                }
                self.phase = HijackPhase::ExtraVisit;
                Some(now + w.policy.wait.sample(w.rng))
            }
            Action::Skip => {
                self.leave_page(w);
                None
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Agent {
    LegitArrivals {
        site: usize,
    },
    Legit(LegitSession),
    HijackArrivals {
        start: SimTime,
        end: SimTime,
        rate_per_hour: f64,
    },
    Hijack(HijackSession),
    Boost {
        target: usize,
        times: Vec<SimTime>,
        next: usize,
    },
}

/// Start of the linear ramp, relative to its end.
const RAMP_FLOOR: f64 = 0.1;

fn ramp_weight(x: f64) -> f64 {
    (RAMP_FLOOR + x) / (RAMP_FLOOR + 0.5)
}

impl Agent {
    fn step<R: RngCore>(
        &mut self,
        w: &mut World<'_, R>,
        now: SimTime,
        spawn: &mut Vec<(SimTime, Agent)>,
    ) -> Option<SimTime> {
        match self {
            Agent::LegitArrivals { site } => {
                let rate = w.sites[*site].baseline_popularity / w.legit.pages_per_visit.mean;
                let user = w.rng.random_range(0..w.n_legit_users);
                let id = w.new_session();
                let profile = SessionProfile::new(id, legit_ip(user), Behavior::Legit, &w.legit);
                w.stats.legit_sessions += 1;
                spawn.push((now, Agent::Legit(LegitSession::start(w, profile, *site))));
                Some(now + exp_interarrival(rate, w.rng))
            }
            Agent::Legit(s) => s.step(w, now),
            Agent::HijackArrivals {
                start,
                end,
                rate_per_hour,
            } => {
                let peak = if w.policy.progressive { ramp_weight(1.0) } else { 1.0 };
                let x = (now - *start).as_millis() as f64 / (*end - *start).as_millis().max(1) as f64;
                let accept = if w.policy.progressive {
                    ramp_weight(x) / peak
                } else {
                    1.0
                };
                if w.rng.random::<f64>() < accept {
                    let id = w.new_session();
                    let ip = w.captured_addr();
                    let cap = &w.capture[w.rng.random_range(0..w.capture.len())];
                    let capture_url = cap.page_url(&cap.pages[w.rng.random_range(0..cap.pages.len())]);
                    let target = w.rng.random_range(0..w.targets.len());
                    let page = w.rng.random_range(0..w.sites[w.targets[target]].pages.len());
                    w.stats.hijack_sessions += 1;
                    spawn.push((
                        now,
                        Agent::Hijack(HijackSession::new(id, ip, capture_url, target, page)),
                    ));
                }
                Some(now + exp_interarrival(*rate_per_hour * peak, w.rng))
            }
            Agent::Hijack(h) => h.step(w, now),
            Agent::Boost { target, times, next } => {
                let site = w.targets[*target];
                let ctx = RequestCtx {
                    now,
                    session: w.new_session(),
                    ip: w.captured_addr(),
                    truth: Truth::Fraud,
                };
                let cap = &w.capture[w.rng.random_range(0..w.capture.len())];
                let exec = cap.page_url(&cap.pages[0]);
                let page = w.sites[site].pages[w.rng.random_range(0..w.sites[site].pages.len())].clone();
                if w.extract(site, &page, &exec, &ctx).is_some() {
                    w.fraud.visits[*target] += 1;
                    w.stats.boost_visits += 1;
                }
                *next += 1;
                times.get(*next).copied()
            }
        }
    }
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    agent: Agent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
}

impl Queue {
    fn new() -> Self {
        Queue {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, at: SimTime, agent: Agent) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            at,
            seq: self.seq,
            agent,
        }));
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop().map(|Reverse(s)| s)
    }

    fn run<R: RngCore>(&mut self, w: &mut World<'_, R>, end: SimTime) {
        let mut spawn = Vec::new();
        while let Some(Scheduled { at, mut agent, .. }) = self.pop() {
            if at >= end {
                break;
            }
            if let Some(next) = agent.step(w, at, &mut spawn) {
                self.push(next, agent);
            }
            for (t, a) in spawn.drain(..) {
                self.push(t, a);
            }
        }
    }
}

/// `n` instants in `[start, end)`, sorted, uniform or with density rising
/// linearly over the span.
pub fn boost_schedule<R: Rng + ?Sized>(
    n: u32,
    start: SimTime,
    end: SimTime,
    progressive: bool,
    rng: &mut R,
) -> Vec<SimTime> {
    let span = (end - start).as_millis() as f64;
    let mut xs: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if progressive {
                // inverse CDF of density (r0 + x) / (r0 + 1/2) on [0, 1)
                let r0 = RAMP_FLOOR;
                -r0 + libm::sqrt(r0 * r0 + 2.0 * u * (r0 + 0.5))
            } else {
                u
            }
        })
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.into_iter()
        .map(|x| start + SimDuration::from_millis(libm::floor(x * span) as u64))
        .collect()
}

fn build_network(cfg: &ScenarioConfig, key: Vec<u8>) -> Result<AdNetwork, ConfigError> {
    let mut net = AdNetwork::new(cfg.ad_host.clone(), key)?;
    for s in &cfg.sites {
        net.add_site(s.clone())?;
    }
    for c in &cfg.campaigns {
        net.add_campaign(c.clone())?;
    }
    for n in 0..cfg.n_capture_sites {
        net.add_capture_site(capture_site(n))?;
    }
    Ok(net)
}

/// MAC key of the network a scenario with `seed` runs against.
pub fn network_key(seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = vec![0u8; 32];
    rng.fill_bytes(&mut key);
    key
}

/// Runs a whole scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimOutput, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut key = vec![0u8; 32];
    rng.fill_bytes(&mut key);
    let mut net = build_network(cfg, key)?;
    let capture: Vec<CaptureSite> = (0..cfg.n_capture_sites).map(capture_site).collect();
    let targets = cfg.target_indices();
    let end = SimTime::ZERO + cfg.duration;
    let fraud_start = SimTime::ZERO + cfg.warmup;
    let baseline = cfg.legit.expected_ctr();

    let mut w = World {
        net: &mut net,
        rng: &mut rng,
        sites: &cfg.sites,
        targets: &targets,
        capture: &capture,
        legit: cfg.legit,
        policy: cfg.fraud_policy,
        n_legit_users: cfg.n_legit_users,
        captured_ip_pool: cfg.captured_ip_pool,
        fraud: FraudState {
            visits: vec![0; targets.len()],
            clicks: vec![0; targets.len()],
            baseline_ctr: vec![baseline; targets.len()],
            day: 0,
            clicks_today: 0,
        },
        stats: SimStats::default(),
        next_session: 0,
    };

    let mut q = Queue::new();
    for (i, s) in cfg.sites.iter().enumerate() {
        let first = SimTime::ZERO + exp_interarrival(cfg.session_rate(s.baseline_popularity), w.rng);
        q.push(first, Agent::LegitArrivals { site: i });
    }
    let hijack_rate = cfg.hijack_rate_per_hour();
    if hijack_rate > 0.0 && fraud_start < end && !targets.is_empty() && !capture.is_empty() {
        let peak = if cfg.fraud_policy.progressive {
            ramp_weight(1.0)
        } else {
            1.0
        };
        let first = fraud_start + exp_interarrival(hijack_rate * peak, w.rng);
        q.push(
            first,
            Agent::HijackArrivals {
                start: fraud_start,
                end,
                rate_per_hour: hijack_rate,
            },
        );
        let click_rate = (cfg.fraud_policy.click_budget as f64 / 24.0).min(hijack_rate);
        let per_target = cfg.fraud_policy.boost_ratio * click_rate / targets.len() as f64;
        let hours = cfg.fraud_period().as_hours_f64();
        for t in 0..targets.len() {
            let n = libm::round(per_target * hours) as u32;
            let times = boost_schedule(n, fraud_start, end, cfg.fraud_policy.progressive, w.rng);
            if let Some(&first) = times.first() {
                q.push(
                    first,
                    Agent::Boost {
                        target: t,
                        times,
                        next: 0,
                    },
                );
            }
        }
    }
    q.run(&mut w, end);
    let stats = w.stats;
    Ok(SimOutput { network: net, stats })
}

fn standalone_world<'a, R: RngCore>(
    net: &'a mut AdNetwork,
    rng: &'a mut R,
    sites: &'a [PublisherSite],
    targets: &'a [usize],
    capture: &'a [CaptureSite],
    policy: FraudPolicy,
) -> World<'a, R> {
    let next_session = net.events().iter().map(|e| e.session.0).max().unwrap_or(0) + 1_000_000;
    World {
        net,
        rng,
        sites,
        targets,
        capture,
        legit: LegitProfile::default(),
        policy,
        n_legit_users: 1,
        captured_ip_pool: 1,
        fraud: FraudState {
            visits: vec![0; targets.len()],
            clicks: vec![0; targets.len()],
            baseline_ctr: vec![1.0; targets.len()],
            day: 0,
            clicks_today: 0,
        },
        stats: SimStats::default(),
        next_session,
    }
}

/// Runs one legitimate session on `site` from `start` to completion and
/// returns the events it produced.
pub fn spawn_legit_session<R: RngCore>(
    net: &mut AdNetwork,
    profile: &SessionProfile,
    site: &PublisherSite,
    rng: &mut R,
    start: SimTime,
) -> Vec<Event> {
    let before = net.events().len();
    let sites = [site.clone()];
    let mut w = standalone_world(net, rng, &sites, &[], &[], FraudPolicy::default());
    w.legit = LegitProfile {
        pages_per_visit: profile.pages_per_visit,
        dwell: profile.dwell,
        click_propensity: profile.click_propensity,
    };
    let mut s = LegitSession::start(&mut w, *profile, 0);
    let mut at = Some(start);
    while let Some(now) = at {
        at = s.step(&mut w, now);
    }
    net.events()[before..].to_vec()
}

/// Events and decisions of one hijacked session.
#[derive(Debug, Clone, PartialEq)]
pub struct HijackRun {
    pub events: Vec<Event>,
    pub actions: Vec<(SimTime, Action)>,
}

/// Runs one hijacked session: the visit to `capture_page_url`, background
/// extraction on `target`, then decisions until it clicks, skips or runs out
/// of steps. `stats` carries the apparatus' view of the target and is updated.
#[allow(clippy::too_many_arguments)]
pub fn hijack_session<R: RngCore>(
    net: &mut AdNetwork,
    captured: &SessionProfile,
    capture_page_url: &str,
    target: &PublisherSite,
    policy: &FraudPolicy,
    stats: &mut SiteStats,
    rng: &mut R,
    start: SimTime,
) -> HijackRun {
    let before = net.events().len();
    let sites = [target.clone()];
    let mut w = standalone_world(net, rng, &sites, &[0], &[], *policy);
    w.fraud.visits[0] = stats.visits;
    w.fraud.clicks[0] = stats.clicks;
    w.fraud.baseline_ctr[0] = stats.baseline_ctr;
    w.fraud.day = start.day();
    w.fraud.clicks_today = policy.click_budget.saturating_sub(stats.budget_left);
    let page = w.rng.random_range(0..target.pages.len());
    let mut h = HijackSession::new(captured.session_id, captured.ip, capture_page_url.into(), 0, page);
    let mut at = Some(start);
    while let Some(now) = at {
        at = h.step(&mut w, now);
    }
    stats.visits = w.fraud.visits[0];
    stats.clicks = w.fraud.clicks[0];
    stats.budget_left = policy.click_budget.saturating_sub(w.fraud.clicks_today);
    HijackRun {
        events: net.events()[before..].to_vec(),
        actions: h.actions,
    }
}

/// `n_visits` click-free background visits to `target` spread over
/// `[start, end)`, ramping up when `progressive`.
#[allow(clippy::too_many_arguments)]
pub fn boost_traffic<R: RngCore>(
    net: &mut AdNetwork,
    target: &PublisherSite,
    exec_page_url: &str,
    n_visits: u32,
    start: SimTime,
    end: SimTime,
    progressive: bool,
    rng: &mut R,
) -> Vec<Event> {
    let before = net.events().len();
    let times = boost_schedule(n_visits, start, end, progressive, rng);
    let sites = [target.clone()];
    let capture = [CaptureSite {
        site_id: SiteId::new("exec"),
        base_url: query_origin(exec_page_url),
        pages: vec![page_path(exec_page_url)],
    }];
    let mut w = standalone_world(net, rng, &sites, &[0], &capture, FraudPolicy::default());
    let mut agent = Agent::Boost {
        target: 0,
        times: times.clone(),
        next: 0,
    };
    let mut spawn = Vec::new();
    let mut at = times.first().copied();
    while let Some(now) = at {
        at = agent.step(&mut w, now, &mut spawn);
    }
    net.events()[before..].to_vec()
}

fn query_origin(url: &str) -> String {
    crate::query::origin(url).unwrap_or_else(|| url.into())
}

fn page_path(url: &str) -> String {
    crate::query::split_url(url).map_or_else(|| "/".into(), |p| p.path.into())
}
