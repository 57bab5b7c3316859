//! Automatic extraction of the ad links behind a publisher's ad block.
//!
//! The pipeline runs steps a to j against any [`Transport`]:
//!
//! | step | action |
//! |------|--------|
//! | a | fetch the target page source |
//! | b | detect the `google_*` ad blocks |
//! | c | load the bootstrap script named by the block |
//! | d | load the verification frame and compute the ad-frame URL |
//! | e | open the capture form |
//! | f | copy the ad-frame URL into the form field |
//! | g | submit the form back to the extraction environment |
//! | h | rewrite the `url` and `p` origin parameters |
//! | i | fetch the ad frame |
//! | j | collect `/html/body//a` hrefs as click links |
//!
//! A browser would run the bootstrap and expose the ad-frame URL through the
//! DOM; here the URL is computed directly with [`build_ad_request_url`], so
//! steps e to g reduce to handing the string over and re-parsing it. The
//! extractor never clicks.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::adnet::{
    build_ad_request_url, parse_ad_request_url, AdColors, AdConfig, AdLink, AdType, AdnetError, HexColor, SafeLevel,
    TOKEN_PARAM,
};
use crate::html;
use crate::query;
use crate::service::{FetchError, RequestCtx, Response, Transport, BOOTSTRAP_PATH, ORIGIN_PARAM, VERIFICATION_PATH};
use crate::time::SimTime;

/// Where the extraction program itself runs when nothing else is configured.
pub const DEFAULT_EXEC_PAGE: &str = "http://localhost/vigilante/exploits/exploit2.php";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    J,
}

impl Step {
    pub const ALL: [Step; 10] = [
        Step::A,
        Step::B,
        Step::C,
        Step::D,
        Step::E,
        Step::F,
        Step::G,
        Step::H,
        Step::I,
        Step::J,
    ];

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Step> {
        Step::ALL.iter().copied().find(|s| s.letter() == c)
    }

    pub fn describe(self) -> &'static str {
        match self {
            Step::A => "fetch target source",
            Step::B => "detect ad block",
            Step::C => "load bootstrap script",
            Step::D => "load verification and ad frames",
            Step::E => "insert capture form",
            Step::F => "copy ad-frame URL into form",
            Step::G => "submit form",
            Step::H => "rewrite origin parameters",
            Step::I => "fetch ad frame",
            Step::J => "extract ad links",
        }
    }

    /// Process exit code reported by the command line when this step fails.
    pub fn exit_code(self) -> i32 {
        10 + self as i32
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Ok,
    Failed,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Ok => "ok",
            StepStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step: Step,
    pub status: StepStatus,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("origin pattern not found (`{0}`)")]
    PatternNotFound(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("expected a page, got a redirect to {0}")]
    UnexpectedRedirect(String),
    #[error("ad block names no bootstrap script and no ad host was given")]
    NoAdHost,
    #[error("verification frame carries no token")]
    NoToken,
    #[error(transparent)]
    Adnet(#[from] AdnetError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error("anchor {href:?} is not a click link: {source}")]
    BadLink { href: String, source: AdnetError },
}

/// A failed run: the step that failed, why, and the trace up to it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("step {step} ({}) failed: {error}", step.describe())]
pub struct ExtractionFailure {
    pub step: Step,
    pub error: ExtractError,
    pub trace: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RewriteMode {
    /// Use the origin of the target URL.
    ToTarget,
    To(String),
    /// Leave the ad-frame URL as the emulated render produced it.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractorOptions {
    /// Page the extraction program is served from; its origin leaks into `url`/`p`.
    pub exec_page_url: String,
    pub rewrite: RewriteMode,
    /// Overrides the ad host named by the block's bootstrap script.
    pub ad_host: Option<String>,
}

impl Default for ExtractorOptions {
    fn default() -> Self {
        ExtractorOptions {
            exec_page_url: DEFAULT_EXEC_PAGE.to_string(),
            rewrite: RewriteMode::ToTarget,
            ad_host: None,
        }
    }
}

/// One ad block found on the target and what it yielded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockExtraction {
    pub config: AdConfig,
    pub ad_host: String,
    pub ad_frame_url_raw: String,
    pub ad_frame_url_rewritten: String,
    pub links: Vec<AdLink>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionResult {
    pub target_url: String,
    /// Ad blocks in document order.
    pub blocks: Vec<BlockExtraction>,
    /// Links of every block, concatenated in document order.
    pub links: Vec<AdLink>,
    pub step_trace: Vec<StepRecord>,
}

impl ExtractionResult {
    /// Configuration of the first ad block, if any.
    pub fn config(&self) -> Option<&AdConfig> {
        self.blocks.first().map(|b| &b.config)
    }
}

/// An ad block plus the ad host its bootstrap script points at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectedBlock {
    pub config: AdConfig,
    pub ad_host: Option<String>,
}

/// Fetches `url` and returns the page text.
pub fn fetch_source<T: Transport + ?Sized>(
    transport: &mut T,
    url: &str,
    ctx: &RequestCtx,
) -> Result<String, ExtractError> {
    match transport.get(url, ctx)? {
        Response::Page(p) => Ok(p),
        Response::Redirect(to) => Err(ExtractError::UnexpectedRedirect(to)),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum JsValue {
    Str(String),
    Num(String),
}

impl JsValue {
    fn text(&self) -> &str {
        match self {
            JsValue::Str(s) | JsValue::Num(s) => s,
        }
    }
}

fn read_js_string(bytes: &[u8], mut i: usize, quote: u8) -> Option<(String, usize)> {
    let mut out = Vec::new();
    i += 1;
    while i < bytes.len() {
        match bytes[i] {
            b if b == quote => return Some((String::from_utf8(out).ok()?, i + 1)),
            b'\\' if i + 1 < bytes.len() => {
                i += 1;
                match bytes[i] {
                    b'n' => out.push(b'\n'),
                    b't' => out.push(b'\t'),
                    b'x' if i + 2 < bytes.len() => {
                        let h = core::str::from_utf8(&bytes[i + 1..i + 3]).ok()?;
                        out.push(u8::from_str_radix(h, 16).ok()?);
                        i += 2;
                    }
                    other => out.push(other),
                }
            }
            b'\n' => return None,
            b => out.push(b),
        }
        i += 1;
    }
    None
}

/// `name = value` statements of a script body, terminated by `;` or newline.
fn js_assignments(src: &str) -> Vec<(String, JsValue)> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let skip_line = |mut i: usize| {
        while i < b.len() && b[i] != b'\n' && b[i] != b';' {
            i += 1;
        }
        i + 1
    };
    while i < b.len() {
        while i < b.len() && (b[i].is_ascii_whitespace() || b[i] == b';') {
            i += 1;
        }
        if b[i..].starts_with(b"//") {
            i = skip_line(i);
            continue;
        }
        if b[i..].starts_with(b"/*") {
            i = src[i + 2..].find("*/").map_or(b.len(), |e| i + 4 + e);
            continue;
        }
        let start = i;
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'$' || b[i] == b'.') {
            i += 1;
        }
        let mut name = &src[start..i];
        if name == "var" || name == "let" || name == "const" {
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'$') {
                i += 1;
            }
            name = &src[s..i];
        }
        let name = name.strip_prefix("window.").unwrap_or(name);
        while i < b.len() && (b[i] == b' ' || b[i] == b'\t') {
            i += 1;
        }
        if name.is_empty() || i >= b.len() || b[i] != b'=' || b.get(i + 1) == Some(&b'=') {
            i = skip_line(i.max(start));
            continue;
        }
        i += 1;
        while i < b.len() && (b[i] == b' ' || b[i] == b'\t') {
            i += 1;
        }
        if i >= b.len() {
            break;
        }
        if b[i] == b'"' || b[i] == b'\'' {
            match read_js_string(b, i, b[i]) {
                Some((s, end)) => {
                    out.push((name.to_string(), JsValue::Str(s)));
                    i = end;
                }
                None => i = skip_line(i),
            }
        } else {
            let s = i;
            while i < b.len() && b[i] != b';' && b[i] != b'\n' {
                i += 1;
            }
            out.push((name.to_string(), JsValue::Num(src[s..i].trim().to_string())));
        }
    }
    out
}

fn config_from_vars(vars: &[(String, JsValue)]) -> Option<AdConfig> {
    let get = |k: &str| vars.iter().rev().find(|(n, _)| n == k).map(|(_, v)| v.text());
    let num = |k: &str| get(k).and_then(|v| v.parse::<u32>().ok());
    let color = |k: &str, d: &str| -> HexColor {
        get(k)
            .and_then(|v| v.trim_start_matches('#').parse().ok())
            .unwrap_or_else(|| d.parse().expect("default color"))
    };
    let client_id = get("google_ad_client")?;
    let client_id = client_id.strip_prefix("ca-").unwrap_or(client_id).to_string();
    let width = num("google_ad_width")?;
    let height = num("google_ad_height")?;
    let cfg = AdConfig {
        client_id,
        channel: get("google_ad_channel").unwrap_or("").to_string(),
        ad_type: get("google_ad_type")
            .and_then(|v| v.parse().ok())
            .unwrap_or(AdType::Text),
        max_num_ads: num("google_max_num_ads").unwrap_or(3),
        language: get("google_language").unwrap_or("en").to_string(),
        safe_level: get("google_safe")
            .and_then(|v| v.parse().ok())
            .unwrap_or(SafeLevel::High),
        encoding: get("google_encoding").unwrap_or("utf8").to_string(),
        width,
        height,
        format: get("google_ad_format")
            .map(str::to_string)
            .unwrap_or_else(|| AdConfig::standard_format(width, height)),
        colors: AdColors {
            border: color("google_color_border", "FFFFFF"),
            bg: color("google_color_bg", "FFFFFF"),
            link: color("google_color_link", "0000FF"),
            text: color("google_color_text", "000000"),
            url: color("google_color_url", "008000"),
        },
    };
    Some(cfg)
}

/// Every script block assigning `google_ad_client`, in document order, with
/// the ad host of the bootstrap script that follows it.
pub fn detect_ad_blocks(page: &str) -> Vec<DetectedBlock> {
    let Ok(doc) = html::parse(page) else {
        return Vec::new();
    };
    let scripts: Vec<usize> = doc.elements_named("script").collect();
    let mut out: Vec<DetectedBlock> = Vec::new();
    let mut pending: Option<usize> = None;
    for &s in &scripts {
        if let Some(src) = doc.attr(s, "src") {
            let path = src.split(['?', '#']).next().unwrap_or(src);
            if let (Some(idx), Some(host)) = (pending, path.strip_suffix(BOOTSTRAP_PATH)) {
                if query::is_absolute(path) {
                    out[idx].ad_host = Some(host.to_string());
                }
                pending = None;
            }
            continue;
        }
        let vars = js_assignments(&doc.text_content(s));
        if let Some(config) = config_from_vars(&vars) {
            pending = Some(out.len());
            out.push(DetectedBlock { config, ad_host: None });
        }
    }
    out
}

/// Ad configurations declared on a page, in document order.
pub fn detect_ad_block(page: &str) -> Vec<AdConfig> {
    detect_ad_blocks(page).into_iter().map(|b| b.config).collect()
}

fn page_of(t: Result<Response, FetchError>) -> Result<String, ExtractError> {
    match t? {
        Response::Page(p) => Ok(p),
        Response::Redirect(to) => Err(ExtractError::UnexpectedRedirect(to)),
    }
}

fn verification_url(ad_host: &str, origin: &str) -> String {
    let mut u = String::from(ad_host.trim_end_matches('/'));
    u.push_str(VERIFICATION_PATH);
    u.push('?');
    u.push_str(ORIGIN_PARAM);
    u.push('=');
    u.push_str(&query::encode(origin, query::COMPONENT));
    u
}

/// Loads the verification frame for `origin` and returns its token.
pub fn request_token<T: Transport + ?Sized>(
    transport: &mut T,
    ad_host: &str,
    origin: &str,
    ctx: &RequestCtx,
) -> Result<String, ExtractError> {
    let page = page_of(transport.get(&verification_url(ad_host, origin), ctx))?;
    let doc = html::parse(&page).map_err(|_| ExtractError::NoToken)?;
    let token = doc
        .elements_named("meta")
        .find(|&m| doc.attr(m, "name") == Some(TOKEN_PARAM))
        .and_then(|m| doc.attr(m, "content"))
        .map(str::to_string);
    token.ok_or(ExtractError::NoToken)
}

fn origin_of(url: &str) -> Result<String, ExtractError> {
    query::origin(url).ok_or_else(|| {
        ExtractError::Adnet(AdnetError::BadParam {
            name: "url",
            value: url.to_string(),
        })
    })
}

/// Does what the bootstrap does in a browser running at `exec_page_url`:
/// fetch a token, then build the ad-frame URL with that page as `url` and its
/// origin as `p`.
pub fn emulate_client_render<T: Transport + ?Sized>(
    transport: &mut T,
    config: &AdConfig,
    ad_host: &str,
    exec_page_url: &str,
    ctx: &RequestCtx,
    correlator: u64,
) -> Result<String, ExtractError> {
    let origin = origin_of(exec_page_url)?;
    let token = request_token(transport, ad_host, &origin, ctx)?;
    Ok(build_ad_request_url(
        ad_host,
        config,
        exec_page_url,
        &origin,
        ctx.now,
        correlator,
        &token,
    )?)
}

/// Points the `url` and `p` parameters of an ad-frame URL at `target_domain`.
///
/// Same result as replacing `&url=.*&adsafe` (greedy) with
/// `&url={domain}/&adsafe` and then `&p=http.*` with `&p={domain}`.
pub fn rewrite_origin_params(url: &str, target_domain: &str) -> Result<String, RewriteError> {
    let domain = target_domain.trim_end_matches('/');
    let start = url
        .find("&url=")
        .ok_or(RewriteError::PatternNotFound("&url=...&adsafe"))?;
    let end = url[start..]
        .rfind("&adsafe")
        .filter(|&e| e >= "&url=".len())
        .map(|e| start + e)
        .ok_or(RewriteError::PatternNotFound("&url=...&adsafe"))?;
    let mut out = String::with_capacity(url.len() + domain.len() * 2);
    out.push_str(&url[..start]);
    out.push_str("&url=");
    out.push_str(domain);
    out.push('/');
    out.push_str(&url[end..]);

    let p = out.find("&p=http").ok_or(RewriteError::PatternNotFound("&p=http..."))?;
    out.truncate(p);
    out.push_str("&p=");
    out.push_str(domain);
    Ok(out)
}

/// `href` of every anchor under `/html/body`, in document order.
pub fn extract_ad_links(ad_html: &str) -> Vec<String> {
    let Ok(doc) = html::parse(ad_html) else {
        return Vec::new();
    };
    doc.select(&["html", "body"], "a")
        .into_iter()
        .filter_map(|a| doc.attr(a, "href").map(str::to_string))
        .collect()
}

struct Run {
    trace: Vec<StepRecord>,
    at: SimTime,
}

impl Run {
    fn step<V>(&mut self, step: Step, r: Result<V, ExtractError>) -> Result<V, ExtractionFailure> {
        match r {
            Ok(v) => {
                self.trace.push(StepRecord {
                    step,
                    status: StepStatus::Ok,
                    at: self.at,
                });
                Ok(v)
            }
            Err(error) => {
                self.trace.push(StepRecord {
                    step,
                    status: StepStatus::Failed,
                    at: self.at,
                });
                Err(ExtractionFailure {
                    step,
                    error,
                    trace: core::mem::take(&mut self.trace),
                })
            }
        }
    }
}

/// Runs steps a to j against `target_url`. Steps c to j repeat for every ad
/// block; block `k` uses correlator `correlator + k`.
pub fn run_extraction<T: Transport + ?Sized>(
    transport: &mut T,
    target_url: &str,
    ctx: &RequestCtx,
    correlator: u64,
    opts: &ExtractorOptions,
) -> Result<ExtractionResult, ExtractionFailure> {
    let mut run = Run {
        trace: Vec::with_capacity(10),
        at: ctx.now,
    };
    let source = run.step(Step::A, fetch_source(transport, target_url, ctx))?;
    let blocks = run.step(Step::B, Ok(detect_ad_blocks(&source)))?;

    let mut out = Vec::with_capacity(blocks.len());
    for (k, block) in blocks.into_iter().enumerate() {
        let correlator = correlator.wrapping_add(k as u64);
        let ad_host = run.step(
            Step::C,
            opts.ad_host
                .clone()
                .or(block.ad_host)
                .ok_or(ExtractError::NoAdHost)
                .and_then(|h| {
                    let script = h.trim_end_matches('/').to_string() + BOOTSTRAP_PATH;
                    page_of(transport.get(&script, ctx)).map(|_| h)
                }),
        )?;
        let rendered = run.step(
            Step::D,
            emulate_client_render(transport, &block.config, &ad_host, &opts.exec_page_url, ctx, correlator),
        )?;
        run.step(Step::E, Ok(()))?;
        let raw = run.step(Step::F, Ok(rendered))?;
        run.step(
            Step::G,
            parse_ad_request_url(&raw).map(|_| ()).map_err(ExtractError::from),
        )?;
        let target_domain = match &opts.rewrite {
            RewriteMode::ToTarget => Some(origin_of(target_url)),
            RewriteMode::To(d) => Some(Ok(d.clone())),
            RewriteMode::Skip => None,
        };
        let rewritten = run.step(
            Step::H,
            match target_domain {
                None => Ok(raw.clone()),
                Some(d) => d.and_then(|d| rewrite_origin_params(&raw, &d).map_err(ExtractError::from)),
            },
        )?;
        let frame = run.step(Step::I, page_of(transport.get(&rewritten, ctx)))?;
        let links = run.step(
            Step::J,
            extract_ad_links(&frame)
                .into_iter()
                .map(|href| AdLink::parse(&href).map_err(|source| ExtractError::BadLink { href, source }))
                .collect::<Result<Vec<_>, _>>(),
        )?;
        out.push(BlockExtraction {
            config: block.config,
            ad_host,
            ad_frame_url_raw: raw,
            ad_frame_url_rewritten: rewritten,
            links,
        });
    }
    let links = out.iter().flat_map(|b| b.links.iter().cloned()).collect();
    Ok(ExtractionResult {
        target_url: target_url.to_string(),
        blocks: out,
        links,
        step_trace: run.trace,
    })
}
