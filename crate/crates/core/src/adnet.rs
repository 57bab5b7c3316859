//! Shared ad-network domain model: the publisher ad-unit declaration, the
//! ad-frame request URL and the signed click URL.
//!
//! Click URLs are authenticated with HMAC-SHA256 over the canonical query of
//! every other click parameter, rendered as unpadded base64url. Nothing here
//! touches a clock or an RNG; callers pass time, correlators and keys in.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::query::{self, QueryError, COMPONENT, LANDING, ORIGIN};
use crate::time::SimTime;

type HmacSha256 = Hmac<Sha256>;

/// Path of the ad-frame endpoint.
pub const AD_PATH: &str = "/pagead/ads";
/// Path of the click-redirect endpoint.
pub const CLICK_PATH: &str = "/aclk";
/// Shortest accepted MAC key.
pub const MIN_KEY_LEN: usize = 16;
/// Query key carrying the verification-frame token in an ad-frame URL.
pub const TOKEN_PARAM: &str = "xpc";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdnetError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("slot {slot} outside 1..={max}")]
    SlotRange { slot: u32, max: u32 },
    #[error("MAC key must be at least {MIN_KEY_LEN} bytes, got {0}")]
    KeyTooShort(usize),
    #[error("missing parameter `{0}`")]
    MissingParam(&'static str),
    #[error("bad value for `{name}`: {value:?}")]
    BadParam { name: &'static str, value: String },
    #[error("not a {expected} URL: {url}")]
    WrongEndpoint { expected: &'static str, url: String },
    #[error("invalid ad config: {0}")]
    InvalidConfig(String),
}

fn bad(name: &'static str, value: &str) -> AdnetError {
    AdnetError::BadParam {
        name,
        value: value.to_string(),
    }
}

/// Six hex digits, case preserved.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "String", into = "String")
)]
pub struct HexColor([u8; 6]);

impl HexColor {
    pub fn as_str(&self) -> &str {
        // constructed only from ASCII hex digits
        core::str::from_utf8(&self.0).unwrap_or("000000")
    }
}

impl FromStr for HexColor {
    type Err = AdnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != 6 || !bytes.iter().all(u8::is_ascii_hexdigit) {
            return Err(bad("color", s));
        }
        let mut out = [0u8; 6];
        out.copy_from_slice(bytes);
        Ok(HexColor(out))
    }
}

impl TryFrom<String> for HexColor {
    type Error = AdnetError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<HexColor> for String {
    fn from(c: HexColor) -> String {
        c.as_str().to_string()
    }
}

impl fmt::Display for HexColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for HexColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum AdType {
    Text,
}

impl AdType {
    pub fn as_str(self) -> &'static str {
        match self {
            AdType::Text => "text",
        }
    }
}

impl FromStr for AdType {
    type Err = AdnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(AdType::Text),
            _ => Err(bad("ad_type", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum SafeLevel {
    High,
    Medium,
    Off,
}

impl SafeLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SafeLevel::High => "high",
            SafeLevel::Medium => "medium",
            SafeLevel::Off => "off",
        }
    }
}

impl FromStr for SafeLevel {
    type Err = AdnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(SafeLevel::High),
            "medium" => Ok(SafeLevel::Medium),
            "off" => Ok(SafeLevel::Off),
            _ => Err(bad("adsafe", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdColors {
    pub border: HexColor,
    pub bg: HexColor,
    pub link: HexColor,
    pub text: HexColor,
    pub url: HexColor,
}

/// Publisher-side ad-unit declaration, i.e. the `google_*` variables of an ad block.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdConfig {
    /// Publisher account, e.g. `pub-1229649499684927`.
    pub client_id: String,
    pub channel: String,
    pub ad_type: AdType,
    pub max_num_ads: u32,
    pub language: String,
    pub safe_level: SafeLevel,
    pub encoding: String,
    pub width: u32,
    pub height: u32,
    pub format: String,
    pub colors: AdColors,
}

impl AdConfig {
    /// `{width}x{height}_as`.
    pub fn standard_format(width: u32, height: u32) -> String {
        format!("{width}x{height}_as")
    }

    pub fn validate(&self) -> Result<(), AdnetError> {
        if self.client_id.is_empty() {
            return Err(AdnetError::InvalidConfig("empty client id".into()));
        }
        if self.max_num_ads == 0 {
            return Err(AdnetError::InvalidConfig("max_num_ads must be >= 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(AdnetError::InvalidConfig("width and height must be > 0".into()));
        }
        if self.format != Self::standard_format(self.width, self.height) {
            return Err(AdnetError::InvalidConfig(format!(
                "format {:?} does not match {}x{}",
                self.format, self.width, self.height
            )));
        }
        Ok(())
    }

    /// The `client` value used on the wire (`ca-` prefix).
    pub fn wire_client(&self) -> String {
        format!("ca-{}", self.client_id)
    }
}

/// Parsed parameter set of an ad-frame URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdRequest {
    /// `ca-`-prefixed publisher id.
    pub client: String,
    pub format: String,
    pub height: u32,
    pub width: u32,
    pub num_ads: u32,
    pub channel: String,
    pub ad_type: AdType,
    pub colors: AdColors,
    /// `oe`
    pub encoding: String,
    /// `hl`
    pub language: String,
    /// `url`, decoded.
    pub page_url: String,
    pub adsafe: SafeLevel,
    /// `p`, decoded.
    pub parent_origin: String,
    /// `dt`, simulated epoch milliseconds.
    pub dt: SimTime,
    pub correlator: u64,
    /// Token issued by the verification frame.
    pub verification_token: String,
    /// Unmodelled `key=value` pairs, kept raw and in order.
    pub extras: Vec<(String, String)>,
}

const MODELED_KEYS: [&str; 20] = [
    "client",
    "format",
    "h",
    "w",
    "num_ads",
    "channel",
    "ad_type",
    "color_bg",
    "color_border",
    "color_link",
    "color_text",
    "color_url",
    "oe",
    "hl",
    "url",
    "adsafe",
    "dt",
    "correlator",
    TOKEN_PARAM,
    "p",
];

/// True if `key` is bound to an [`AdRequest`] field rather than carried in `extras`.
pub fn is_modeled_key(key: &str) -> bool {
    MODELED_KEYS.contains(&key)
}

impl AdRequest {
    pub fn from_config(
        config: &AdConfig,
        page_url: &str,
        parent_origin: &str,
        now: SimTime,
        correlator: u64,
        verification_token: &str,
    ) -> Result<Self, AdnetError> {
        if !query::is_absolute(page_url) {
            return Err(bad("url", page_url));
        }
        Ok(AdRequest {
            client: config.wire_client(),
            format: config.format.clone(),
            height: config.height,
            width: config.width,
            num_ads: config.max_num_ads,
            channel: config.channel.clone(),
            ad_type: config.ad_type,
            colors: config.colors,
            encoding: config.encoding.clone(),
            language: config.language.clone(),
            page_url: page_url.to_string(),
            adsafe: config.safe_level,
            parent_origin: parent_origin.to_string(),
            dt: now,
            correlator,
            verification_token: verification_token.to_string(),
            extras: Vec::new(),
        })
    }

    /// Publisher id without the `ca-` prefix.
    pub fn client_id(&self) -> &str {
        self.client.strip_prefix("ca-").unwrap_or(&self.client)
    }

    /// Renders the ad-frame URL on `ad_host`. Parameter order keeps `url` ahead of
    /// `adsafe` and `p` last, the layout the origin rewrite operates on.
    pub fn to_url(&self, ad_host: &str) -> String {
        let mut q: Vec<(&str, String)> = Vec::with_capacity(20 + self.extras.len());
        q.push(("client", query::encode(&self.client, COMPONENT)));
        q.push(("format", query::encode(&self.format, COMPONENT)));
        q.push(("h", self.height.to_string()));
        q.push(("w", self.width.to_string()));
        q.push(("num_ads", self.num_ads.to_string()));
        q.push(("channel", query::encode(&self.channel, COMPONENT)));
        q.push(("ad_type", self.ad_type.as_str().to_string()));
        q.push(("color_bg", self.colors.bg.to_string()));
        q.push(("color_border", self.colors.border.to_string()));
        q.push(("color_link", self.colors.link.to_string()));
        q.push(("color_text", self.colors.text.to_string()));
        q.push(("color_url", self.colors.url.to_string()));
        q.push(("oe", query::encode(&self.encoding, COMPONENT)));
        q.push(("hl", query::encode(&self.language, COMPONENT)));
        q.push(("url", query::encode(&self.page_url, COMPONENT)));
        q.push(("adsafe", self.adsafe.as_str().to_string()));
        q.push(("dt", self.dt.as_millis().to_string()));
        q.push(("correlator", self.correlator.to_string()));
        for (k, v) in &self.extras {
            q.push((k.as_str(), v.clone()));
        }
        q.push((TOKEN_PARAM, query::encode(&self.verification_token, COMPONENT)));
        q.push(("p", query::encode(&self.parent_origin, ORIGIN)));

        let mut out = String::with_capacity(512);
        out.push_str(ad_host.trim_end_matches('/'));
        out.push_str(AD_PATH);
        for (i, (k, v)) in q.iter().enumerate() {
            out.push(if i == 0 { '?' } else { '&' });
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        out
    }
}

/// Builds the ad-frame ("Iframe 2") URL a publisher page would request.
pub fn build_ad_request_url(
    ad_host: &str,
    config: &AdConfig,
    page_url: &str,
    parent_origin: &str,
    now: SimTime,
    correlator: u64,
    verification_token: &str,
) -> Result<String, AdnetError> {
    AdRequest::from_config(config, page_url, parent_origin, now, correlator, verification_token)
        .map(|r| r.to_url(ad_host))
}

#[derive(Default)]
struct RequestSlots {
    values: [Option<String>; 20],
}

impl RequestSlots {
    fn set(&mut self, idx: usize, name: &'static str, raw: &str) -> Result<(), AdnetError> {
        if self.values[idx].is_some() {
            return Err(bad(name, "duplicate"));
        }
        let decoded = query::decode(raw).ok_or_else(|| bad(name, raw))?;
        self.values[idx] = Some(decoded);
        Ok(())
    }

    fn take(&mut self, idx: usize) -> Result<String, AdnetError> {
        self.values[idx]
            .take()
            .ok_or(AdnetError::MissingParam(MODELED_KEYS[idx]))
    }
}

fn parse_num<T: FromStr>(name: &'static str, v: &str) -> Result<T, AdnetError> {
    v.parse().map_err(|_| bad(name, v))
}

/// Parses an ad-frame URL. Host is not checked, only the path.
pub fn parse_ad_request_url(url: &str) -> Result<AdRequest, AdnetError> {
    let parts = query::split_url(url)
        .filter(|p| p.path == AD_PATH)
        .ok_or_else(|| AdnetError::WrongEndpoint {
            expected: "ad frame",
            url: url.to_string(),
        })?;
    let mut slots = RequestSlots::default();
    let mut extras = Vec::new();
    for (k, v) in query::raw_pairs(parts.query.unwrap_or("")) {
        match MODELED_KEYS.iter().position(|m| *m == k) {
            Some(idx) => slots.set(idx, MODELED_KEYS[idx], v)?,
            None => extras.push((k.to_string(), v.to_string())),
        }
    }
    // presence of the identity params is reported before anything else
    for idx in [0usize, 14, 19] {
        if slots.values[idx].is_none() {
            return Err(AdnetError::MissingParam(MODELED_KEYS[idx]));
        }
    }
    let client = slots.take(0)?;
    let format = slots.take(1)?;
    let height = parse_num("h", &slots.take(2)?)?;
    let width = parse_num("w", &slots.take(3)?)?;
    let num_ads = parse_num("num_ads", &slots.take(4)?)?;
    let channel = slots.take(5)?;
    let ad_type = slots.take(6)?.parse()?;
    let color = |s: String| s.parse::<HexColor>();
    let bg = color(slots.take(7)?)?;
    let border = color(slots.take(8)?)?;
    let link = color(slots.take(9)?)?;
    let text = color(slots.take(10)?)?;
    let url_color = color(slots.take(11)?)?;
    let encoding = slots.take(12)?;
    let language = slots.take(13)?;
    let page_url = slots.take(14)?;
    let adsafe = slots.take(15)?.parse()?;
    let dt = SimTime::from_millis(parse_num("dt", &slots.take(16)?)?);
    let correlator = parse_num("correlator", &slots.take(17)?)?;
    let verification_token = slots.take(18)?;
    let parent_origin = slots.take(19)?;
    Ok(AdRequest {
        client,
        format,
        height,
        width,
        num_ads,
        channel,
        ad_type,
        colors: AdColors {
            border,
            bg,
            link,
            text,
            url: url_color,
        },
        encoding,
        language,
        page_url,
        adsafe,
        parent_origin,
        dt,
        correlator,
        verification_token,
        extras,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct CampaignId(pub u32);

impl fmt::Display for CampaignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{:04}", self.0)
    }
}

/// Advertiser campaign eligible for ad slots on the channels it targets.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Campaign {
    pub id: CampaignId,
    pub advertiser_id: String,
    pub landing_url: String,
    pub channel_targets: BTreeSet<String>,
    pub headline: String,
}

impl Campaign {
    pub fn validate(&self) -> Result<(), AdnetError> {
        if !query::is_absolute(&self.landing_url) {
            return Err(AdnetError::InvalidConfig(format!(
                "campaign {} landing url {:?} is not absolute",
                self.id, self.landing_url
            )));
        }
        Ok(())
    }
}

/// Signed click URL (`/aclk?sa=..&ai=..&num=..&sig=..&client=..&adurl=..`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AdLink {
    pub sa: String,
    /// Opaque impression token.
    pub ai: String,
    /// 1-based slot index within the ad frame.
    pub num: u32,
    pub sig: String,
    /// `ca-`-prefixed publisher id.
    pub client: String,
    /// Advertiser landing URL.
    pub adurl: String,
}

impl AdLink {
    /// The signed parameters in canonical encoding; everything except `sig`.
    pub fn signed_params(&self) -> [(&'static str, String); 5] {
        [
            ("sa", query::encode(&self.sa, COMPONENT)),
            ("ai", query::encode(&self.ai, COMPONENT)),
            ("num", self.num.to_string()),
            ("client", query::encode(&self.client, COMPONENT)),
            ("adurl", query::encode(&self.adurl, COMPONENT)),
        ]
    }

    /// `/aclk?...`, host-independent.
    pub fn path_and_query(&self) -> String {
        format!(
            "{CLICK_PATH}?sa={}&ai={}&num={}&sig={}&client={}&adurl={}",
            query::encode(&self.sa, COMPONENT),
            query::encode(&self.ai, COMPONENT),
            self.num,
            query::encode(&self.sig, COMPONENT),
            query::encode(&self.client, COMPONENT),
            query::encode(&self.adurl, LANDING),
        )
    }

    pub fn to_url(&self, ad_host: &str) -> String {
        let mut s = String::from(ad_host.trim_end_matches('/'));
        s.push_str(&self.path_and_query());
        s
    }

    /// Parses an absolute or host-relative `/aclk` URL.
    pub fn parse(url: &str) -> Result<AdLink, AdnetError> {
        let (path, q) = match query::split_url(url) {
            Some(p) => (p.path, p.query),
            None => {
                let u = url.split('#').next().unwrap_or(url);
                match u.split_once('?') {
                    Some((p, q)) => (p, Some(q)),
                    None => (u, None),
                }
            }
        };
        if path != CLICK_PATH {
            return Err(AdnetError::WrongEndpoint {
                expected: "click",
                url: url.to_string(),
            });
        }
        const KEYS: [&str; 6] = ["sa", "ai", "num", "sig", "client", "adurl"];
        let mut vals: [Option<String>; 6] = Default::default();
        for (k, v) in query::raw_pairs(q.unwrap_or("")) {
            let idx = KEYS.iter().position(|key| *key == k).ok_or_else(|| bad("aclk", k))?;
            if vals[idx].is_some() {
                return Err(bad(KEYS[idx], "duplicate"));
            }
            vals[idx] = Some(query::decode(v).ok_or_else(|| bad(KEYS[idx], v))?);
        }
        let mut take = |i: usize| vals[i].take().ok_or(AdnetError::MissingParam(KEYS[i]));
        let sa = take(0)?;
        let ai = take(1)?;
        let num_raw = take(2)?;
        let sig = take(3)?;
        let client = take(4)?;
        let adurl = take(5)?;
        Ok(AdLink {
            sa,
            ai,
            num: parse_num("num", &num_raw)?,
            sig,
            client,
            adurl,
        })
    }
}

fn check_key(key: &[u8]) -> Result<(), AdnetError> {
    if key.len() < MIN_KEY_LEN {
        Err(AdnetError::KeyTooShort(key.len()))
    } else {
        Ok(())
    }
}

fn mac(key: &[u8]) -> HmacSha256 {
    // HMAC accepts keys of any length
    <HmacSha256 as KeyInit>::new_from_slice(key).expect("hmac key")
}

fn compute_sig(key: &[u8], preimage: &str) -> String {
    let mut m = mac(key);
    m.update(preimage.as_bytes());
    URL_SAFE_NO_PAD.encode(m.finalize().into_bytes())
}

/// Deterministic opaque impression token bound to one slot of one ad-frame serve.
fn impression_token(key: &[u8], impression: &AdRequest, campaign: CampaignId, slot: u32) -> String {
    let mut m = mac(key);
    m.update(b"ai\0");
    m.update(impression.client.as_bytes());
    m.update(b"\0");
    m.update(&impression.correlator.to_be_bytes());
    m.update(&impression.dt.as_millis().to_be_bytes());
    m.update(&campaign.0.to_be_bytes());
    m.update(&slot.to_be_bytes());
    let tag = m.finalize().into_bytes();
    URL_SAFE_NO_PAD.encode(&tag[..18])
}

/// Issues the signed click link for `campaign` in ad slot `slot` of `impression`.
pub fn mint_click_url(
    campaign: &Campaign,
    slot: u32,
    impression: &AdRequest,
    key: &[u8],
) -> Result<AdLink, AdnetError> {
    check_key(key)?;
    if slot == 0 || slot > impression.num_ads {
        return Err(AdnetError::SlotRange {
            slot,
            max: impression.num_ads,
        });
    }
    let mut link = AdLink {
        sa: "l".to_string(),
        ai: impression_token(key, impression, campaign.id, slot),
        num: slot,
        sig: String::new(),
        client: impression.client.clone(),
        adurl: campaign.landing_url.clone(),
    };
    let preimage = query::canonicalize_query(&link.signed_params())?;
    link.sig = compute_sig(key, &preimage);
    Ok(link)
}

/// True iff `link.sig` is the MAC of its other parameters under `key`.
pub fn verify_click_url(link: &AdLink, key: &[u8]) -> bool {
    let Ok(preimage) = query::canonicalize_query(&link.signed_params()) else {
        return false;
    };
    let Ok(tag) = URL_SAFE_NO_PAD.decode(link.sig.as_bytes()) else {
        return false;
    };
    let mut m = mac(key);
    m.update(preimage.as_bytes());
    m.verify_slice(&tag).is_ok()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn hex(s: &str) -> HexColor {
        s.parse().unwrap()
    }

    /// The ad block of the reference publisher page.
    pub fn reference_config() -> AdConfig {
        AdConfig {
            client_id: "pub-1229649499684927".into(),
            channel: "ANUNCIOS.COM".into(),
            ad_type: AdType::Text,
            max_num_ads: 3,
            language: "es".into(),
            safe_level: SafeLevel::High,
            encoding: "utf8".into(),
            width: 336,
            height: 280,
            format: "336x280_as".into(),
            colors: AdColors {
                border: hex("EEEEEE"),
                bg: hex("EEEEEE"),
                link: hex("000066"),
                text: hex("000000"),
                url: hex("CC0000"),
            },
        }
    }

    pub fn campaign(id: u32, channel: &str, landing: &str) -> Campaign {
        Campaign {
            id: CampaignId(id),
            advertiser_id: format!("adv{id}"),
            landing_url: landing.into(),
            channel_targets: [channel.to_string()].into_iter().collect(),
            headline: format!("Offer {id}"),
        }
    }

    pub const KEY: &[u8] = b"0123456789abcdef-test-key";
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn impression() -> AdRequest {
        AdRequest::from_config(
            &reference_config(),
            "http://www.anuncios.com/",
            "http://www.anuncios.com",
            SimTime::from_millis(1_410_420_397_140),
            8_467_094_044_672,
            "tok",
        )
        .unwrap()
    }

    #[test]
    fn reference_config_is_valid() {
        reference_config().validate().unwrap();
        let mut c = reference_config();
        c.format = "300x250_as".into();
        assert!(c.validate().is_err());
        c = reference_config();
        c.max_num_ads = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hex_colors_need_six_digits() {
        assert!("EEEEE".parse::<HexColor>().is_err());
        assert!("EEEEEG".parse::<HexColor>().is_err());
        assert_eq!("cc0000".parse::<HexColor>().unwrap().as_str(), "cc0000");
    }

    #[test]
    fn three_campaigns_give_slots_one_to_three() {
        let imp = impression();
        let landings = [
            "http://candidatos.sanroman.com/resultado-busqueda.php?filtro=&area=Marketing",
            "http://es.emailbrain.com/ebs/index.shtml?Medium=PPC",
            "http://www.banderasysoportes.com",
        ];
        let links: Vec<AdLink> = landings
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let c = campaign(i as u32 + 1, "ANUNCIOS.COM", l);
                mint_click_url(&c, i as u32 + 1, &imp, KEY).unwrap()
            })
            .collect();
        assert_eq!(links.iter().map(|l| l.num).collect::<Vec<_>>(), vec![1, 2, 3]);
        for (l, landing) in links.iter().zip(landings) {
            assert_eq!(l.adurl, landing);
            assert_eq!(l.client, "ca-pub-1229649499684927");
            assert!(verify_click_url(l, KEY));
            let url = l.to_url("http://googleads.example");
            assert!(url.starts_with("http://googleads.example/aclk?sa=l&ai="));
            assert_eq!(&AdLink::parse(&url).unwrap(), l);
        }
        assert!(links[0].to_url("http://h").contains("&num=1&sig="));
        assert!(links[2]
            .to_url("http://h")
            .ends_with("&client=ca-pub-1229649499684927&adurl=http://www.banderasysoportes.com"));
    }

    #[test]
    fn minting_is_deterministic() {
        let c = campaign(7, "ANUNCIOS.COM", "http://adv.example/landing");
        let a = mint_click_url(&c, 2, &impression(), KEY).unwrap();
        let b = mint_click_url(&c, 2, &impression(), KEY).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slot_and_key_preconditions() {
        let c = campaign(1, "ANUNCIOS.COM", "http://adv.example/");
        let imp = impression();
        assert_eq!(
            mint_click_url(&c, 0, &imp, KEY),
            Err(AdnetError::SlotRange { slot: 0, max: 3 })
        );
        assert_eq!(
            mint_click_url(&c, 4, &imp, KEY),
            Err(AdnetError::SlotRange { slot: 4, max: 3 })
        );
        assert_eq!(mint_click_url(&c, 1, &imp, b"short"), Err(AdnetError::KeyTooShort(5)));
    }

    /// Independent MAC oracle: recompute HMAC over a hand-built canonical string.
    fn oracle_sig(key: &[u8], l: &AdLink) -> String {
        let pre = std::format!(
            "adurl={}&ai={}&client={}&num={}&sa={}",
            query::encode(&l.adurl, COMPONENT),
            query::encode(&l.ai, COMPONENT),
            query::encode(&l.client, COMPONENT),
            l.num,
            query::encode(&l.sa, COMPONENT)
        );
        compute_sig(key, &pre)
    }

    #[test]
    fn tampering_breaks_the_signature() {
        let c = campaign(1, "ANUNCIOS.COM", "http://adv.example/landing");
        let link = mint_click_url(&c, 1, &impression(), KEY).unwrap();
        assert_eq!(link.sig, oracle_sig(KEY, &link));
        assert!(verify_click_url(&link, KEY));

        let mut flipped = link.clone();
        let mut bytes = flipped.adurl.into_bytes();
        bytes[10] ^= 0x01;
        flipped.adurl = String::from_utf8(bytes).unwrap();
        assert_ne!(oracle_sig(KEY, &flipped), link.sig);
        assert!(!verify_click_url(&flipped, KEY));

        let mut renumbered = link.clone();
        renumbered.num = 2;
        assert_ne!(oracle_sig(KEY, &renumbered), link.sig);
        assert!(!verify_click_url(&renumbered, KEY));

        assert!(!verify_click_url(&link, b"another-key-of-16-bytes"));
        let mut garbage = link;
        garbage.sig = "!!!".into();
        assert!(!verify_click_url(&garbage, KEY));
    }

    #[test]
    fn build_carries_reference_parameters() {
        let url = build_ad_request_url(
            "http://googleads.g.doubleclick.net",
            &reference_config(),
            "http://localhost/x",
            "http://localhost",
            SimTime::from_millis(1_410_420_397_140),
            8_467_094_044_672,
            "EvP9CmkS4y",
        )
        .unwrap();
        assert!(url.starts_with(
            "http://googleads.g.doubleclick.net/pagead/ads?client=ca-pub-1229649499684927&format=336x280_as&"
        ));
        assert!(url.contains("channel=ANUNCIOS.COM"));
        assert!(url.contains("&url=http%3A%2F%2Flocalhost%2Fx&adsafe=high&dt=1410420397140"));
        assert!(url.ends_with("&xpc=EvP9CmkS4y&p=http%3A//localhost"));
        assert!(build_ad_request_url("h", &reference_config(), "not-absolute", "p", SimTime::ZERO, 1, "t").is_err());
    }

    #[test]
    fn parse_reports_missing_and_bad_params() {
        let good = impression().to_url("http://ads.test");
        let no_p = good.replace("&p=", "&q=");
        assert_eq!(parse_ad_request_url(&no_p), Err(AdnetError::MissingParam("p")));
        let no_client = good.replace("?client=", "?cl=");
        assert_eq!(
            parse_ad_request_url(&no_client),
            Err(AdnetError::MissingParam("client"))
        );
        let bad_dt = good.replace("&dt=", "&dt=x");
        assert!(matches!(
            parse_ad_request_url(&bad_dt),
            Err(AdnetError::BadParam { name: "dt", .. })
        ));
        assert!(matches!(
            parse_ad_request_url("http://ads.test/other?client=x"),
            Err(AdnetError::WrongEndpoint { .. })
        ));
    }

    fn arb_color() -> impl Strategy<Value = HexColor> {
        "[0-9A-Fa-f]{6}".prop_map(|s| s.parse().unwrap())
    }

    prop_compose! {
        fn arb_request()(
            client in "ca-pub-[0-9]{16}",
            (w, h) in (1u32..2000, 1u32..2000),
            num_ads in 1u32..10,
            channel in "\\PC{0,12}",
            colors in proptest::array::uniform5(arb_color()),
            encoding in "[a-z0-9-]{1,8}",
            language in "[a-z]{2}",
            page in "[a-z0-9/._~-]{0,20}",
            host in "[a-z]{1,10}\\.(com|test|org)",
            adsafe in prop_oneof![Just(SafeLevel::High), Just(SafeLevel::Medium), Just(SafeLevel::Off)],
            dt in any::<u64>(),
            correlator in 1_000_000_000_000u64..10_000_000_000_000,
            token in "[A-Za-z0-9_-]{4,16}",
            extras in proptest::collection::vec(("[a-z_]{1,8}", "[A-Za-z0-9%.]{0,10}"), 0..6),
        ) -> AdRequest {
            AdRequest {
                client,
                format: AdConfig::standard_format(w, h),
                height: h,
                width: w,
                num_ads,
                channel,
                ad_type: AdType::Text,
                colors: AdColors { border: colors[0], bg: colors[1], link: colors[2], text: colors[3], url: colors[4] },
                encoding,
                language,
                page_url: std::format!("http://{host}/{page}"),
                adsafe,
                parent_origin: std::format!("http://{host}"),
                dt: SimTime::from_millis(dt),
                correlator,
                verification_token: token,
                extras: extras.into_iter().filter(|(k, _)| !is_modeled_key(k)).collect(),
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ad_request_round_trips(req in arb_request()) {
            let url = req.to_url("http://ads.test");
            prop_assert_eq!(parse_ad_request_url(&url).unwrap(), req);
        }
    }

    proptest! {
        #[test]
        fn click_links_round_trip_through_urls(
            adurl in "http://[a-z]{3,10}\\.com/[a-z?=&%#:/]{0,20}",
            slot in 1u32..=3,
            id in 0u32..1000,
        ) {
            let c = campaign(id, "X", &adurl);
            let link = mint_click_url(&c, slot, &impression(), KEY).unwrap();
            let parsed = AdLink::parse(&link.to_url("http://ads.test")).unwrap();
            prop_assert!(verify_click_url(&parsed, KEY));
            prop_assert_eq!(parsed, link);
        }
    }
}
