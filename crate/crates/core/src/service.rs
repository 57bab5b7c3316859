//! Mock publisher sites and mock ad network.
//!
//! [`AdNetwork`] is a single-writer state machine: it renders publisher pages,
//! issues single-use verification tokens, serves ad frames full of signed click
//! links and redirects clicks, appending a [`Visit`](EventKind::Visit),
//! [`Impression`](EventKind::Impression) or [`Click`](EventKind::Click) record
//! for every successful interaction. It is reached in-process through the
//! [`Transport`] trait; the `adlab` crate puts the same object behind HTTP.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::net::Ipv4Addr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::adnet::{
    self, mint_click_url, parse_ad_request_url, verify_click_url, AdConfig, AdLink, AdRequest, AdnetError, Campaign,
    CampaignId, AD_PATH, CLICK_PATH, MIN_KEY_LEN,
};
use crate::event::{Event, EventDetail, EventKind, LabeledLog, SessionId, SiteId, Truth};
use crate::html;
use crate::query;
use crate::time::{SimDuration, SimTime};

pub const BOOTSTRAP_PATH: &str = "/pagead/show_ads.js";
pub const VERIFICATION_PATH: &str = "/pagead/html/zrt_lookup.html";
/// Query key naming the requesting origin on the verification frame.
pub const ORIGIN_PARAM: &str = "origin";
pub const DEFAULT_TOKEN_TTL: SimDuration = SimDuration::from_secs(30);

/// Publisher site carrying one ad block on every page.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PublisherSite {
    pub site_id: SiteId,
    /// `scheme://host` the site is published under.
    pub base_url: String,
    /// Page paths, each starting with `/`.
    pub pages: Vec<String>,
    pub ad_config: AdConfig,
    /// Expected visits per simulated hour.
    pub baseline_popularity: f64,
}

impl PublisherSite {
    pub fn validate(&self) -> Result<(), SetupError> {
        if self.pages.is_empty() {
            return Err(SetupError::Invalid(format!("site {} has no pages", self.site_id)));
        }
        if let Some(p) = self.pages.iter().find(|p| !p.starts_with('/')) {
            return Err(SetupError::Invalid(format!(
                "site {} page {p:?} must start with '/'",
                self.site_id
            )));
        }
        if self.baseline_popularity.is_nan() || self.baseline_popularity <= 0.0 || !self.baseline_popularity.is_finite()
        {
            return Err(SetupError::Invalid(format!(
                "site {} baseline_popularity must be > 0",
                self.site_id
            )));
        }
        if query::host(&self.base_url).is_none() {
            return Err(SetupError::Invalid(format!(
                "site {} base_url is not absolute",
                self.site_id
            )));
        }
        self.ad_config.validate().map_err(SetupError::Ad)
    }

    pub fn page_url(&self, page: &str) -> String {
        let mut s = String::from(self.base_url.trim_end_matches('/'));
        s.push_str(page);
        s
    }

    /// Origin the site's pages run under.
    pub fn origin(&self) -> String {
        query::origin(&self.base_url).unwrap_or_else(|| self.base_url.clone())
    }
}

/// A site that attracts visitors and hosts the hidden frame. It shows no ads.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CaptureSite {
    pub site_id: SiteId,
    pub base_url: String,
    pub pages: Vec<String>,
}

impl CaptureSite {
    pub fn page_url(&self, page: &str) -> String {
        let mut s = String::from(self.base_url.trim_end_matches('/'));
        s.push_str(page);
        s
    }
}

/// Single-use nonce issued by the verification frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationToken {
    pub token: String,
    /// Origin that asked for the token. Recorded, not matched against `p` later.
    pub issued_to: String,
    pub issued_at: SimTime,
    pub ttl: SimDuration,
}

impl VerificationToken {
    pub fn expires_at(&self) -> SimTime {
        self.issued_at + self.ttl
    }
}

/// Who is asking and when. `truth` is generator metadata stamped onto the
/// resulting events; nothing in the network's behaviour depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestCtx {
    pub now: SimTime,
    pub session: SessionId,
    pub ip: Ipv4Addr,
    pub truth: Truth,
}

impl RequestCtx {
    pub fn at(self, now: SimTime) -> Self {
        RequestCtx { now, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Page(String),
    Redirect(String),
}

impl Response {
    pub fn into_page(self) -> Option<String> {
        match self {
            Response::Page(p) => Some(p),
            Response::Redirect(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRejection {
    Unknown,
    Spent,
    Expired,
}

impl TokenRejection {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenRejection::Unknown => "unknown",
            TokenRejection::Spent => "spent",
            TokenRejection::Expired => "expired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("verification token rejected ({})", .0.as_str())]
    TokenRejected(TokenRejection),
    #[error("origin mismatch: url host {url_host:?}, parent host {parent_host:?}, publisher host {expected:?}")]
    OriginMismatch {
        url_host: String,
        parent_host: String,
        expected: String,
    },
    #[error("unknown publisher client {0}")]
    UnknownClient(String),
    #[error("click link failed verification")]
    RejectedLink,
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl From<AdnetError> for ServiceError {
    fn from(e: AdnetError) -> Self {
        ServiceError::BadRequest(e.to_string())
    }
}

impl ServiceError {
    /// Stable machine code, also used as the first field of the HTTP error body.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::TokenRejected(_) => "token_rejected",
            ServiceError::OriginMismatch { .. } => "origin_mismatch",
            ServiceError::UnknownClient(_) => "unknown_client",
            ServiceError::RejectedLink => "rejected_link",
            ServiceError::BadRequest(_) => "bad_request",
        }
    }

    /// Tab-separated `code\tfield...` encoding; inverse of [`ServiceError::from_wire`].
    pub fn to_wire(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n'], " ");
        match self {
            ServiceError::NotFound(p) => format!("not_found\t{}", clean(p)),
            ServiceError::TokenRejected(r) => format!("token_rejected\t{}", r.as_str()),
            ServiceError::OriginMismatch {
                url_host,
                parent_host,
                expected,
            } => format!(
                "origin_mismatch\t{}\t{}\t{}",
                clean(url_host),
                clean(parent_host),
                clean(expected)
            ),
            ServiceError::UnknownClient(c) => format!("unknown_client\t{}", clean(c)),
            ServiceError::RejectedLink => "rejected_link".to_string(),
            ServiceError::BadRequest(m) => format!("bad_request\t{}", clean(m)),
        }
    }

    pub fn from_wire(body: &str) -> Option<ServiceError> {
        let mut f = body.trim_end().split('\t');
        let code = f.next()?;
        let mut field = || f.next().unwrap_or("").to_string();
        Some(match code {
            "not_found" => ServiceError::NotFound(field()),
            "token_rejected" => ServiceError::TokenRejected(match field().as_str() {
                "spent" => TokenRejection::Spent,
                "expired" => TokenRejection::Expired,
                _ => TokenRejection::Unknown,
            }),
            "origin_mismatch" => ServiceError::OriginMismatch {
                url_host: field(),
                parent_host: field(),
                expected: field(),
            },
            "unknown_client" => ServiceError::UnknownClient(field()),
            "rejected_link" => ServiceError::RejectedLink,
            "bad_request" => ServiceError::BadRequest(field()),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// GET-only access to the mock network, in-process or over HTTP.
pub trait Transport {
    fn get(&mut self, url: &str, ctx: &RequestCtx) -> Result<Response, FetchError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SetupError {
    #[error("MAC key must be at least {MIN_KEY_LEN} bytes")]
    KeyTooShort,
    #[error("duplicate site id {0}")]
    DuplicateSite(SiteId),
    #[error("host {0} already registered")]
    DuplicateHost(String),
    #[error("publisher client {0} already registered")]
    DuplicateClient(String),
    #[error("duplicate campaign id {0}")]
    DuplicateCampaign(CampaignId),
    #[error(transparent)]
    Ad(AdnetError),
    #[error("{0}")]
    Invalid(String),
}

/// What the service handed out on one ad-frame serve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImpressionRecord {
    /// `seq` of the Impression event.
    pub seq: u64,
    pub site: SiteId,
    pub correlator: u64,
    pub links: Vec<AdLink>,
}

#[derive(Debug, Clone)]
struct TokenState {
    token: VerificationToken,
    spent: bool,
}

#[derive(Debug, Clone)]
enum HostedSite {
    Publisher(SiteId),
    Capture(SiteId),
}

/// Up to `num` campaigns targeting `channel`, in campaign-id order.
pub fn select_ads<'a>(channel: &str, num: u32, registry: &'a [Campaign]) -> Vec<&'a Campaign> {
    let mut hits: Vec<&Campaign> = registry
        .iter()
        .filter(|c| c.channel_targets.contains(channel))
        .collect();
    hits.sort_by_key(|c| c.id);
    hits.truncate(num as usize);
    hits
}

/// Static body of the ad bootstrap script. The network never executes it; it
/// documents what a browser does with an ad block.
pub fn bootstrap_script() -> &'static str {
    r#"// show_ads.js: builds the verification and ad frames for the google_* block
(function (w, d) {
  var host = d.currentScript.src.replace(/\/pagead\/show_ads\.js.*$/, "");
  var esc = encodeURIComponent;
  var xpc = w.__adlab_xpc; // read from the zrt_lookup frame once it loads
  var q = "client=" + esc("ca-" + w.google_ad_client) +
    "&format=" + esc(w.google_ad_format) + "&h=" + w.google_ad_height +
    "&w=" + w.google_ad_width + "&num_ads=" + w.google_max_num_ads +
    "&channel=" + esc(w.google_ad_channel) + "&ad_type=" + w.google_ad_type +
    "&color_bg=" + w.google_color_bg + "&color_border=" + w.google_color_border +
    "&color_link=" + w.google_color_link + "&color_text=" + w.google_color_text +
    "&color_url=" + w.google_color_url + "&oe=" + esc(w.google_encoding) +
    "&hl=" + esc(w.google_language) + "&url=" + esc(d.location.href) +
    "&adsafe=" + w.google_safe + "&dt=" + Date.now() +
    "&correlator=" + Math.floor(Math.random() * 9e12 + 1e12) +
    "&xpc=" + esc(xpc) + "&p=" + esc(d.location.origin).replace(/%2F/g, "/");
  var f = d.createElement("iframe");
  f.id = f.name = "google_ads_frame1";
  f.width = w.google_ad_width; f.height = w.google_ad_height;
  f.src = host + "/pagead/ads?" + q;
  d.currentScript.parentNode.appendChild(f);
})(window, document);
"#
}

fn js_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '<' => out.push_str("\\x3c"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// The publisher-side ad block: `GoogleAdSense` div, variable script and the
/// bootstrap reference.
pub fn render_ad_block(config: &AdConfig, ad_host: &str) -> String {
    let c = config;
    let mut s = String::with_capacity(900);
    s.push_str("<div id=\"GoogleAdSense\">\n<script language=\"JavaScript\" type=\"text/javascript\">\n");
    let _ = writeln!(s, "  google_ad_client = {};", js_string(&c.client_id));
    let _ = writeln!(s, "  google_ad_channel = {};", js_string(&c.channel));
    let _ = writeln!(s, "  google_ad_type = {};", js_string(c.ad_type.as_str()));
    let _ = writeln!(s, "  google_max_num_ads = {};", c.max_num_ads);
    let _ = writeln!(s, "  google_language = {};", js_string(&c.language));
    let _ = writeln!(s, "  google_safe = {};", js_string(c.safe_level.as_str()));
    let _ = writeln!(s, "  google_encoding = {};", js_string(&c.encoding));
    let _ = writeln!(s, "  google_ad_width = {};", c.width);
    let _ = writeln!(s, "  google_ad_height = {};", c.height);
    let _ = writeln!(s, "  google_ad_format = {};", js_string(&c.format));
    let _ = writeln!(s, "  google_color_border = \"{}\";", c.colors.border);
    let _ = writeln!(s, "  google_color_bg = \"{}\";", c.colors.bg);
    let _ = writeln!(s, "  google_color_link = \"{}\";", c.colors.link);
    let _ = writeln!(s, "  google_color_text = \"{}\";", c.colors.text);
    let _ = writeln!(s, "  google_color_url = \"{}\";", c.colors.url);
    s.push_str("</script>\n<div id=\"GoogleAd\">\n<span>Sponsored links </span>\n");
    let _ = writeln!(
        s,
        "<script language=\"JavaScript\" src=\"{}{BOOTSTRAP_PATH}\"\ntype=\"text/javascript\"></script>",
        html::escape(ad_host.trim_end_matches('/'))
    );
    s.push_str("</div>\n</div>\n");
    s
}

/// Mock ad network plus the publisher and capture sites it hosts.
#[derive(Debug, Clone)]
pub struct AdNetwork {
    ad_host: String,
    key: Vec<u8>,
    token_ttl: SimDuration,
    sites: BTreeMap<SiteId, PublisherSite>,
    capture_sites: BTreeMap<SiteId, CaptureSite>,
    hosts: BTreeMap<String, HostedSite>,
    clients: BTreeMap<String, SiteId>,
    campaigns: Vec<Campaign>,
    campaign_ids: BTreeSet<CampaignId>,
    tokens: BTreeMap<String, TokenState>,
    tokens_issued: u64,
    last_seen: BTreeMap<(SessionId, SiteId), (SimTime, String)>,
    log: LabeledLog,
    impressions: Vec<ImpressionRecord>,
}

impl AdNetwork {
    pub fn new(ad_host: impl Into<String>, key: Vec<u8>) -> Result<Self, SetupError> {
        if key.len() < MIN_KEY_LEN {
            return Err(SetupError::KeyTooShort);
        }
        Ok(AdNetwork {
            ad_host: ad_host.into().trim_end_matches('/').to_string(),
            key,
            token_ttl: DEFAULT_TOKEN_TTL,
            sites: BTreeMap::new(),
            capture_sites: BTreeMap::new(),
            hosts: BTreeMap::new(),
            clients: BTreeMap::new(),
            campaigns: Vec::new(),
            campaign_ids: BTreeSet::new(),
            tokens: BTreeMap::new(),
            tokens_issued: 0,
            last_seen: BTreeMap::new(),
            log: LabeledLog::default(),
            impressions: Vec::new(),
        })
    }

    pub fn with_token_ttl(mut self, ttl: SimDuration) -> Self {
        self.token_ttl = ttl;
        self
    }

    fn claim_host(&mut self, site_id: &SiteId, base_url: &str, hosted: HostedSite) -> Result<(), SetupError> {
        if self.sites.contains_key(site_id) || self.capture_sites.contains_key(site_id) {
            return Err(SetupError::DuplicateSite(site_id.clone()));
        }
        let host = query::host(base_url)
            .ok_or_else(|| SetupError::Invalid(format!("base_url {base_url:?} is not absolute")))?;
        if self.hosts.contains_key(&host) {
            return Err(SetupError::DuplicateHost(host));
        }
        self.hosts.insert(host, hosted);
        Ok(())
    }

    pub fn add_site(&mut self, site: PublisherSite) -> Result<(), SetupError> {
        site.validate()?;
        if self.sites.contains_key(&site.site_id) {
            return Err(SetupError::DuplicateSite(site.site_id));
        }
        if self.clients.contains_key(&site.ad_config.client_id) {
            return Err(SetupError::DuplicateClient(site.ad_config.client_id.clone()));
        }
        self.claim_host(
            &site.site_id,
            &site.base_url,
            HostedSite::Publisher(site.site_id.clone()),
        )?;
        self.clients
            .insert(site.ad_config.client_id.clone(), site.site_id.clone());
        self.sites.insert(site.site_id.clone(), site);
        Ok(())
    }

    pub fn add_capture_site(&mut self, site: CaptureSite) -> Result<(), SetupError> {
        if site.pages.is_empty() {
            return Err(SetupError::Invalid(format!(
                "capture site {} has no pages",
                site.site_id
            )));
        }
        self.claim_host(&site.site_id, &site.base_url, HostedSite::Capture(site.site_id.clone()))?;
        self.capture_sites.insert(site.site_id.clone(), site);
        Ok(())
    }

    pub fn add_campaign(&mut self, campaign: Campaign) -> Result<(), SetupError> {
        campaign.validate().map_err(SetupError::Ad)?;
        if !self.campaign_ids.insert(campaign.id) {
            return Err(SetupError::DuplicateCampaign(campaign.id));
        }
        let pos = self.campaigns.partition_point(|c| c.id < campaign.id);
        self.campaigns.insert(pos, campaign);
        Ok(())
    }

    pub fn ad_host(&self) -> &str {
        &self.ad_host
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    pub fn sites(&self) -> impl Iterator<Item = &PublisherSite> {
        self.sites.values()
    }

    pub fn site(&self, id: &SiteId) -> Option<&PublisherSite> {
        self.sites.get(id)
    }

    pub fn capture_sites(&self) -> impl Iterator<Item = &CaptureSite> {
        self.capture_sites.values()
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    pub fn events(&self) -> &[Event] {
        &self.log.events
    }

    pub fn log(&self) -> &LabeledLog {
        &self.log
    }

    pub fn into_log(self) -> LabeledLog {
        self.log
    }

    pub fn impressions(&self) -> &[ImpressionRecord] {
        &self.impressions
    }

    pub fn site_for_client(&self, client_id: &str) -> Option<&PublisherSite> {
        self.clients.get(client_id).and_then(|id| self.sites.get(id))
    }

    fn record(&mut self, ctx: &RequestCtx, site: &SiteId, page: &str, detail: EventDetail) -> u64 {
        let seq = self.log.events.len() as u64;
        let touches_page = !matches!(detail, EventDetail::Click { .. });
        self.log.events.push(Event {
            seq,
            ts: ctx.now,
            session: ctx.session,
            ip: ctx.ip,
            site: site.clone(),
            page: page.to_string(),
            detail,
        });
        self.log.truth.push(ctx.truth);
        if touches_page {
            self.last_seen
                .insert((ctx.session, site.clone()), (ctx.now, page.to_string()));
        }
        seq
    }

    /// HTML of `page` on publisher `site_id`, without recording anything.
    pub fn render_publisher_page(&self, site_id: &SiteId, page: &str) -> Result<String, ServiceError> {
        let site = self
            .sites
            .get(site_id)
            .ok_or_else(|| ServiceError::NotFound(format!("site {site_id}")))?;
        if !site.pages.iter().any(|p| p == page) {
            return Err(ServiceError::NotFound(format!("{site_id}{page}")));
        }
        let mut s = String::with_capacity(2048);
        s.push_str("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>");
        let _ = write!(s, "{} {}", html::escape(site_id.as_str()), html::escape(page));
        s.push_str("</title></head>\n<body>\n<ul class=\"nav\">\n");
        for p in &site.pages {
            let _ = writeln!(
                s,
                "<li><a href=\"{}\">{}</a></li>",
                html::escape(&site.page_url(p)),
                html::escape(p)
            );
        }
        s.push_str("</ul>\n<p>Articles and listings.</p>\n");
        s.push_str(&render_ad_block(&site.ad_config, &self.ad_host));
        s.push_str("</body>\n</html>\n");
        Ok(s)
    }

    fn render_capture_page(site: &CaptureSite, page: &str) -> String {
        let mut s = String::with_capacity(512);
        s.push_str("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>");
        s.push_str(&html::escape(site.site_id.as_str()));
        s.push_str(
            "</title>\n<script type=\"text/javascript\" src=\"/js/google_analytics_top.js\"></script></head>\n<body>\n",
        );
        let _ = writeln!(s, "<p>{}</p>", html::escape(page));
        s.push_str("<div id=\"booster\"><div id=\"sub1\"></div><div id=\"sub2\"></div></div>\n</body>\n</html>\n");
        s
    }

    /// Serves a page of a hosted site and records a Visit.
    pub fn serve_page(&mut self, site_id: &SiteId, page: &str, ctx: &RequestCtx) -> Result<String, ServiceError> {
        if self.sites.contains_key(site_id) {
            let html = self.render_publisher_page(site_id, page)?;
            self.record(ctx, site_id, page, EventDetail::Visit);
            return Ok(html);
        }
        let site = self
            .capture_sites
            .get(site_id)
            .ok_or_else(|| ServiceError::NotFound(format!("site {site_id}")))?;
        if !site.pages.iter().any(|p| p == page) {
            return Err(ServiceError::NotFound(format!("{site_id}{page}")));
        }
        let html = Self::render_capture_page(site, page);
        self.record(ctx, site_id, page, EventDetail::Visit);
        Ok(html)
    }

    fn mint_token(&mut self, origin: &str, now: SimTime) -> String {
        let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.key).expect("hmac key");
        m.update(b"xpc\0");
        m.update(&self.tokens_issued.to_be_bytes());
        m.update(&now.as_millis().to_be_bytes());
        m.update(origin.as_bytes());
        self.tokens_issued += 1;
        URL_SAFE_NO_PAD.encode(&m.finalize().into_bytes()[..12])
    }

    fn purge_tokens(&mut self, now: SimTime) {
        let ttl = self.token_ttl;
        self.tokens.retain(|_, st| st.token.expires_at() + ttl >= now);
    }

    /// Zero-size verification document plus a fresh token bound to `origin`.
    pub fn serve_verification_frame(&mut self, origin: &str, now: SimTime) -> (String, VerificationToken) {
        if self.tokens_issued % 4096 == 4095 {
            self.purge_tokens(now);
        }
        let token = VerificationToken {
            token: self.mint_token(origin, now),
            issued_to: origin.to_string(),
            issued_at: now,
            ttl: self.token_ttl,
        };
        self.tokens.insert(
            token.token.clone(),
            TokenState {
                token: token.clone(),
                spent: false,
            },
        );
        let html = format!(
            "<!DOCTYPE html><html><head><meta name=\"{}\" content=\"{}\"></head><body></body></html>",
            adnet::TOKEN_PARAM,
            html::escape(&token.token)
        );
        (html, token)
    }

    fn check_origin(&self, request: &AdRequest, site: &PublisherSite) -> Result<(), ServiceError> {
        let url_host = query::registrable_host(&request.page_url).unwrap_or_default();
        let parent_host = query::registrable_host(&request.parent_origin).unwrap_or_default();
        let expected = query::registrable_host(&site.base_url).unwrap_or_default();
        if url_host.is_empty() || url_host != parent_host || url_host != expected {
            return Err(ServiceError::OriginMismatch {
                url_host,
                parent_host,
                expected,
            });
        }
        Ok(())
    }

    fn redeem_token(&mut self, token: &str, now: SimTime) -> Result<(), ServiceError> {
        let st = self
            .tokens
            .get_mut(token)
            .ok_or(ServiceError::TokenRejected(TokenRejection::Unknown))?;
        if st.spent {
            return Err(ServiceError::TokenRejected(TokenRejection::Spent));
        }
        if now > st.token.expires_at() {
            return Err(ServiceError::TokenRejected(TokenRejection::Expired));
        }
        st.spent = true;
        Ok(())
    }

    /// Serves the ad document for `request`: origin coherence first, then the
    /// token, then one signed link per selected campaign and an Impression.
    pub fn serve_ad_frame(&mut self, request: &AdRequest, ctx: &RequestCtx) -> Result<String, ServiceError> {
        let site = self
            .site_for_client(request.client_id())
            .ok_or_else(|| ServiceError::UnknownClient(request.client.clone()))?
            .clone();
        self.check_origin(request, &site)?;
        self.redeem_token(&request.verification_token, ctx.now)?;

        let links: Vec<(AdLink, &Campaign)> = select_ads(&request.channel, request.num_ads, &self.campaigns)
            .into_iter()
            .enumerate()
            .map(|(i, c)| mint_click_url(c, i as u32 + 1, request, &self.key).map(|l| (l, c)))
            .collect::<Result<_, _>>()?;

        let mut s = String::with_capacity(512 + links.len() * 512);
        s.push_str("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>Ads</title></head>\n");
        let _ = writeln!(s, "<body style=\"margin:0;background:#{}\">", request.colors.bg);
        let _ = writeln!(
            s,
            "<div class=\"ads\" style=\"width:{}px;height:{}px;border:1px solid #{}\">",
            request.width, request.height, request.colors.border
        );
        for (link, campaign) in &links {
            let _ = writeln!(
                s,
                "<div class=\"ad\"><a class=\"title\" href=\"{}\" style=\"color:#{}\">{}</a><div class=\"url\" style=\"color:#{}\">{}</div></div>",
                html::escape(&link.to_url(&self.ad_host)),
                request.colors.link,
                html::escape(&campaign.headline),
                request.colors.url,
                html::escape(&query::host(&campaign.landing_url).unwrap_or_default()),
            );
        }
        s.push_str("</div>\n</body>\n</html>\n");

        let links: Vec<AdLink> = links.into_iter().map(|(l, _)| l).collect();
        let page = query::split_url(&request.page_url)
            .map(|p| p.path.to_string())
            .unwrap_or_else(|| "/".to_string());
        let seq = self.record(
            ctx,
            &site.site_id,
            &page,
            EventDetail::Impression {
                ads: links.len() as u32,
            },
        );
        self.impressions.push(ImpressionRecord {
            seq,
            site: site.site_id.clone(),
            correlator: request.correlator,
            links,
        });
        Ok(s)
    }

    /// Verifies a click link, records the Click and returns the landing URL.
    pub fn handle_click(&mut self, link: &AdLink, ctx: &RequestCtx) -> Result<String, ServiceError> {
        if !verify_click_url(link, &self.key) {
            return Err(ServiceError::RejectedLink);
        }
        let client_id = link.client.strip_prefix("ca-").unwrap_or(&link.client);
        let site_id = self
            .clients
            .get(client_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownClient(link.client.clone()))?;
        let (dwell, page) = match self.last_seen.get(&(ctx.session, site_id.clone())) {
            Some((ts, page)) => (ctx.now - *ts, page.clone()),
            None => (SimDuration::ZERO, "/".to_string()),
        };
        self.record(
            ctx,
            &site_id,
            &page,
            EventDetail::Click {
                link: link.clone(),
                dwell_before_click: dwell,
            },
        );
        Ok(link.adurl.clone())
    }

    /// Routes a GET on the mock network.
    pub fn handle(&mut self, url: &str, ctx: &RequestCtx) -> Result<Response, ServiceError> {
        let parts =
            query::split_url(url).ok_or_else(|| ServiceError::BadRequest(format!("not an absolute URL: {url}")))?;
        match parts.path {
            BOOTSTRAP_PATH => Ok(Response::Page(bootstrap_script().to_string())),
            VERIFICATION_PATH => {
                let origin = query::raw_pairs(parts.query.unwrap_or(""))
                    .find(|(k, _)| *k == ORIGIN_PARAM)
                    .and_then(|(_, v)| query::decode(v))
                    .unwrap_or_default();
                Ok(Response::Page(self.serve_verification_frame(&origin, ctx.now).0))
            }
            AD_PATH => {
                let req = parse_ad_request_url(url)?;
                self.serve_ad_frame(&req, ctx).map(Response::Page)
            }
            CLICK_PATH => {
                let link = AdLink::parse(url)?;
                self.handle_click(&link, ctx).map(Response::Redirect)
            }
            path => {
                if let Some(rest) = path.strip_prefix("/site/") {
                    let (id, page) = rest.split_once('/').unwrap_or((rest, ""));
                    let page = format!("/{page}");
                    return self.serve_page(&SiteId::new(id), &page, ctx).map(Response::Page);
                }
                let host = query::host(url).unwrap_or_default();
                let site = match self.hosts.get(&host) {
                    Some(HostedSite::Publisher(id) | HostedSite::Capture(id)) => id.clone(),
                    None => return Err(ServiceError::NotFound(url.to_string())),
                };
                self.serve_page(&site, path, ctx).map(Response::Page)
            }
        }
    }

    /// Number of events of `kind` recorded so far.
    pub fn count(&self, kind: EventKind) -> usize {
        self.log.events.iter().filter(|e| e.kind() == kind).count()
    }
}

impl Transport for AdNetwork {
    fn get(&mut self, url: &str, ctx: &RequestCtx) -> Result<Response, FetchError> {
        self.handle(url, ctx).map_err(FetchError::Service)
    }
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn get(&mut self, url: &str, ctx: &RequestCtx) -> Result<Response, FetchError> {
        (**self).get(url, ctx)
    }
}


#[cfg(test)]
mod tests {
    use super::testnet::*;
    use super::*;
    use crate::adnet::fixtures::{campaign, KEY};
    use crate::extractor::{detect_ad_block, extract_ad_links};
    use alloc::vec;

    fn request_for(net: &mut AdNetwork, page_url: &str, parent: &str, now: u64) -> AdRequest {
        let (_, tok) = net.serve_verification_frame(parent, SimTime::from_millis(now));
        let site = net.site(&SiteId::new("anuncios")).unwrap().clone();
        AdRequest::from_config(
            &site.ad_config,
            page_url,
            parent,
            SimTime::from_millis(now),
            1_234_567_890_123,
            &tok.token,
        )
        .unwrap()
    }

    #[test]
    fn publisher_page_carries_the_ad_block() {
        let net = network(3);
        let site = reference_site();
        let html = net.render_publisher_page(&site.site_id, "/index.html").unwrap();
        assert!(html.contains("<div id=\"GoogleAdSense\">"));
        assert!(html.contains("google_max_num_ads = 3;"));
        assert!(html.contains("google_ad_format = \"336x280_as\";"));
        assert!(html.contains("google_ad_client = \"pub-1229649499684927\";"));
        assert!(html.contains("src=\"http://googleads.test/pagead/show_ads.js\""));
        assert_eq!(detect_ad_block(&html), vec![site.ad_config.clone()]);
        assert!(matches!(
            net.render_publisher_page(&site.site_id, "/missing.html"),
            Err(ServiceError::NotFound(_))
        ));
    }

    #[test]
    fn single_ad_config_renders_one() {
        let mut net = AdNetwork::new(AD_HOST, KEY.to_vec()).unwrap();
        let mut site = reference_site();
        site.ad_config.max_num_ads = 1;
        net.add_site(site.clone()).unwrap();
        let html = net.render_publisher_page(&site.site_id, "/index.html").unwrap();
        assert!(html.contains("google_max_num_ads = 1;"));
    }

    #[test]
    fn verification_tokens_are_fresh_and_single_use() {
        let mut net = network(3);
        let (_, a) = net.serve_verification_frame("http://www.anuncios.com", SimTime::ZERO);
        let (doc, b) = net.serve_verification_frame("http://www.anuncios.com", SimTime::ZERO);
        assert_ne!(a.token, b.token);
        assert!(doc.contains(&b.token));

        let req = request_for(
            &mut net,
            "http://www.anuncios.com/index.html",
            "http://www.anuncios.com",
            0,
        );
        net.serve_ad_frame(&req, &ctx(1_000)).unwrap();
        assert_eq!(
            net.serve_ad_frame(&req, &ctx(2_000)),
            Err(ServiceError::TokenRejected(TokenRejection::Spent))
        );
    }

    #[test]
    fn expired_token_is_rejected() {
        let mut net = network(3);
        let req = request_for(
            &mut net,
            "http://www.anuncios.com/index.html",
            "http://www.anuncios.com",
            0,
        );
        let late = DEFAULT_TOKEN_TTL.as_millis() + 1;
        assert_eq!(
            net.serve_ad_frame(&req, &ctx(late)),
            Err(ServiceError::TokenRejected(TokenRejection::Expired))
        );
        // exactly at expiry still counts
        let req = request_for(
            &mut net,
            "http://www.anuncios.com/index.html",
            "http://www.anuncios.com",
            0,
        );
        net.serve_ad_frame(&req, &ctx(DEFAULT_TOKEN_TTL.as_millis())).unwrap();
        let mut forged = req;
        forged.verification_token = "never-issued".into();
        assert_eq!(
            net.serve_ad_frame(&forged, &ctx(0)),
            Err(ServiceError::TokenRejected(TokenRejection::Unknown))
        );
    }

    #[test]
    fn ad_frame_holds_min_of_slots_and_matches() {
        for (campaigns, expect) in [(5u32, 3usize), (3, 3), (2, 2), (0, 0)] {
            let mut net = network(campaigns);
            let req = request_for(
                &mut net,
                "http://www.anuncios.com/index.html",
                "http://www.anuncios.com",
                0,
            );
            let html = net.serve_ad_frame(&req, &ctx(10)).unwrap();
            let hrefs = extract_ad_links(&html);
            assert_eq!(hrefs.len(), expect, "{campaigns} campaigns");
            assert_eq!(net.count(EventKind::Impression), 1);
            let rec = &net.impressions()[0];
            assert_eq!(rec.links.len(), expect);
            for (href, minted) in hrefs.iter().zip(&rec.links) {
                assert_eq!(&AdLink::parse(href).unwrap(), minted);
                assert!(verify_click_url(minted, KEY));
            }
        }
    }

    #[test]
    fn contaminated_origin_is_refused() {
        let mut net = network(3);
        let req = request_for(
            &mut net,
            "http://localhost/vigilante/exploits/exploit2.php",
            "http://localhost",
            0,
        );
        let err = net.serve_ad_frame(&req, &ctx(5)).unwrap_err();
        assert_eq!(
            err,
            ServiceError::OriginMismatch {
                url_host: "localhost".into(),
                parent_host: "localhost".into(),
                expected: "anuncios.com".into()
            }
        );
        // url and p disagreeing is refused as well
        let req = request_for(&mut net, "http://www.anuncios.com/", "http://localhost", 0);
        assert!(matches!(
            net.serve_ad_frame(&req, &ctx(5)),
            Err(ServiceError::OriginMismatch { .. })
        ));
        assert_eq!(net.count(EventKind::Impression), 0);
    }

    #[test]
    fn clicks_redirect_and_measure_dwell() {
        let mut net = network(3);
        let site = reference_site();
        net.serve_page(&site.site_id, "/index.html", &ctx(1_000)).unwrap();
        let req = request_for(
            &mut net,
            "http://www.anuncios.com/index.html",
            "http://www.anuncios.com",
            1_000,
        );
        net.serve_ad_frame(&req, &ctx(1_000)).unwrap();
        let link = net.impressions()[0].links[0].clone();
        let target = net.handle_click(&link, &ctx(6_000)).unwrap();
        assert_eq!(target, "http://advertiser1.example/landing?src=ppc&id=1");
        let click = net.events().last().unwrap();
        assert_eq!(click.dwell_before_click(), Some(SimDuration::from_secs(5)));
        assert_eq!(click.page, "/index.html");

        let mut swapped = link;
        swapped.adurl = "http://evil.example/".into();
        let before = net.events().len();
        assert_eq!(net.handle_click(&swapped, &ctx(7_000)), Err(ServiceError::RejectedLink));
        assert_eq!(net.events().len(), before);
    }

    #[test]
    fn selection_is_by_id_and_stable() {
        let reg: Vec<Campaign> = [5u32, 2, 9, 1, 7]
            .iter()
            .map(|&i| campaign(i, "X", "http://a.example/"))
            .chain([campaign(3, "Y", "http://b.example/")])
            .collect();
        let ids = |v: Vec<&Campaign>| v.iter().map(|c| c.id.0).collect::<Vec<_>>();
        assert_eq!(ids(select_ads("X", 3, &reg)), vec![1, 2, 5]);
        assert_eq!(ids(select_ads("X", 3, &reg)), ids(select_ads("X", 3, &reg)));
        assert!(select_ads("Z", 3, &reg).is_empty());
        assert_eq!(ids(select_ads("Y", 10, &reg)), vec![3]);
    }

    #[test]
    fn router_serves_every_endpoint() {
        let mut net = network(2);
        let page = net.handle("http://www.anuncios.com/index.html", &ctx(0)).unwrap();
        assert!(page.into_page().unwrap().contains("GoogleAdSense"));
        let page = net
            .handle("http://anything/site/anuncios/empleo.html", &ctx(0))
            .unwrap();
        assert!(page.into_page().unwrap().contains("GoogleAdSense"));
        assert_eq!(net.count(EventKind::Visit), 2);
        let js = net.handle("http://googleads.test/pagead/show_ads.js", &ctx(0)).unwrap();
        assert!(js.into_page().unwrap().contains("google_ads_frame1"));
        assert!(matches!(
            net.handle("http://www.nowhere.com/", &ctx(0)),
            Err(ServiceError::NotFound(_))
        ));
        let vf = net
            .handle(
                "http://googleads.test/pagead/html/zrt_lookup.html?origin=http%3A%2F%2Fwww.anuncios.com",
                &ctx(0),
            )
            .unwrap()
            .into_page()
            .unwrap();
        let doc = html::parse(&vf).unwrap();
        let meta = doc.elements_named("meta").next().unwrap();
        let token = doc.attr(meta, "content").unwrap().to_string();
        let site = reference_site();
        let url = adnet::build_ad_request_url(
            AD_HOST,
            &site.ad_config,
            "http://www.anuncios.com/index.html",
            "http://www.anuncios.com",
            SimTime::ZERO,
            42,
            &token,
        )
        .unwrap();
        let frame = net.handle(&url, &ctx(0)).unwrap().into_page().unwrap();
        let href = extract_ad_links(&frame).remove(0);
        match net.handle(&href, &ctx(3_000)).unwrap() {
            Response::Redirect(to) => assert!(to.starts_with("http://advertiser1.example/")),
            other => panic!("expected redirect, got {other:?}"),
        }
    }

    #[test]
    fn wire_encoding_round_trips_errors() {
        for e in [
            ServiceError::NotFound("/x".into()),
            ServiceError::TokenRejected(TokenRejection::Expired),
            ServiceError::OriginMismatch {
                url_host: "localhost".into(),
                parent_host: "localhost".into(),
                expected: "anuncios.com".into(),
            },
            ServiceError::UnknownClient("ca-pub-1".into()),
            ServiceError::RejectedLink,
            ServiceError::BadRequest("missing parameter `p`".into()),
        ] {
            assert_eq!(ServiceError::from_wire(&e.to_wire()), Some(e));
        }
    }

    #[test]
    fn setup_rejects_duplicates() {
        let mut net = network(1);
        assert!(matches!(
            net.add_site(reference_site()),
            Err(SetupError::DuplicateSite(_))
        ));
        assert!(matches!(
            net.add_campaign(campaign(1, "X", "http://a.example/")),
            Err(SetupError::DuplicateCampaign(_))
        ));
        assert!(matches!(
            net.add_campaign(campaign(2, "X", "relative/landing")),
            Err(SetupError::Ad(_))
        ));
        assert_eq!(
            AdNetwork::new(AD_HOST, b"short".to_vec()).unwrap_err(),
            SetupError::KeyTooShort
        );
    }
}
