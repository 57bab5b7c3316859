//! The four commands, callable without the command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adlab_core::adnet::verify_click_url;
use adlab_core::corpus::generate_corpus;
use adlab_core::detection::{evaluate, rate_windows, run_detection, FilterVerdict};
use adlab_core::extractor::{run_extraction, ExtractionResult, ExtractorOptions, RewriteMode, Step, StepRecord};
use adlab_core::service::{AdNetwork, PublisherSite, RequestCtx, Transport};
use adlab_core::sim::{network_key, run_scenario, SimStats};
use adlab_core::{Campaign, SessionId, SimTime, Truth};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::AppError;
use crate::formats::{self, WindowRow};
use crate::http::{HttpTransport, Server};
use crate::report::{render_text, RunReport, Unavailable};
use crate::scenario::{Scenario, DEFAULT_AD_HOST};

/// Environment variable overriding the default output root.
pub const OUT_ENV: &str = "ADLAB_OUT";
pub const DEFAULT_OUT: &str = "adlab-out";
pub const CORPUS_FILE: &str = "corpus.json";
pub const PAGES_DIR: &str = "pages";

/// `$ADLAB_OUT`, or `adlab-out` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}

fn create_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A generated corpus together with the network parameters serving it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub seed: u64,
    pub ad_host: String,
    /// Hex-encoded MAC key of the network.
    pub key: String,
    pub sites: Vec<PublisherSite>,
    pub campaigns: Vec<Campaign>,
}

impl CorpusFile {
    pub fn load(dir: &Path) -> Result<CorpusFile, AppError> {
        let text = formats::read_required(dir, CORPUS_FILE)?;
        serde_json::from_str(&text).map_err(|e| AppError::Format(format!("{CORPUS_FILE}: {e}")))
    }

    pub fn key_bytes(&self) -> Result<Vec<u8>, AppError> {
        hex::decode(&self.key).map_err(|e| AppError::Format(format!("{CORPUS_FILE}: key: {e}")))
    }

    pub fn network(&self) -> Result<AdNetwork, AppError> {
        let mut net =
            AdNetwork::new(self.ad_host.clone(), self.key_bytes()?).map_err(|e| AppError::Config(e.to_string()))?;
        for s in &self.sites {
            net.add_site(s.clone()).map_err(|e| AppError::Config(e.to_string()))?;
        }
        for c in &self.campaigns {
            net.add_campaign(c.clone())
                .map_err(|e| AppError::Config(e.to_string()))?;
        }
        Ok(net)
    }
}

/// Writes `corpus.json` and every publisher page under `pages/<site>/`.
pub fn cmd_gen_corpus(
    n_sites: u32,
    campaigns_per_site: u32,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusFile, AppError> {
    if n_sites == 0 {
        return Err(AppError::Config("n_sites must be >= 1".into()));
    }
    let corpus = generate_corpus(n_sites, campaigns_per_site, &mut ChaCha8Rng::seed_from_u64(seed));
    let file = CorpusFile {
        seed,
        ad_host: DEFAULT_AD_HOST.to_string(),
        key: hex::encode(network_key(seed)),
        sites: corpus.sites,
        campaigns: corpus.campaigns,
    };
    let net = file.network()?;
    create_dir(out_dir)?;
    let json = serde_json::to_string_pretty(&file).expect("corpus serializes") + "\n";
    formats::write_file(out_dir, CORPUS_FILE, &json)?;
    for site in &file.sites {
        let dir = out_dir.join(PAGES_DIR).join(site.site_id.as_str());
        create_dir(&dir)?;
        for page in &site.pages {
            let html = net
                .render_publisher_page(&site.site_id, page)
                .map_err(|e| AppError::Config(e.to_string()))?;
            formats::write_file(&dir, page.trim_start_matches('/'), &html)?;
        }
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub legit_sessions: u64,
    pub hijack_sessions: u64,
    pub boost_visits: u64,
    pub extraction_failures: u64,
    pub ad_load_failures: u64,
    pub legit_clicks: u64,
    pub fraud_clicks: u64,
}

impl From<&SimStats> for SimSummary {
    fn from(s: &SimStats) -> Self {
        SimSummary {
            legit_sessions: s.legit_sessions,
            hijack_sessions: s.hijack_sessions,
            boost_visits: s.boost_visits,
            extraction_failures: s.extraction_failures,
            ad_load_failures: s.ad_load_failures,
            legit_clicks: s.legit_clicks,
            fraud_clicks: s.fraud_clicks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    /// SHA-256 of the resolved scenario, seed included.
    pub scenario_hash: String,
    pub seed: u64,
    pub corpus_seed: u64,
    pub versions: BTreeMap<String, String>,
    /// SHA-256 of every other file in the run directory.
    pub files: BTreeMap<String, String>,
    pub events: usize,
    pub clicks: usize,
    pub sim: SimSummary,
    pub unavailable: Vec<Unavailable>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<RunManifest, AppError> {
        let text = formats::read_required(dir, formats::MANIFEST_FILE)?;
        serde_json::from_str(&text).map_err(|e| AppError::Format(format!("{}: {e}", formats::MANIFEST_FILE)))
    }
}

/// Windows of the rate filter with the number of fraud events inside each.
fn window_rows(
    events: &[adlab_core::Event],
    truth: &[Truth],
    thresholds: &adlab_core::detection::Thresholds,
) -> Vec<WindowRow> {
    let width = thresholds.rate_window.as_millis();
    let mut fraud: BTreeMap<(&str, u64), u64> = BTreeMap::new();
    for (e, t) in events.iter().zip(truth) {
        if *t == Truth::Fraud {
            *fraud
                .entry((e.site.as_str(), e.ts.as_millis() / width * width))
                .or_default() += 1;
        }
    }
    rate_windows(events, thresholds)
        .into_iter()
        .map(|stat| {
            let fraud_events = fraud
                .get(&(stat.site.as_str(), stat.window_start.as_millis()))
                .copied()
                .unwrap_or(0);
            WindowRow { stat, fraud_events }
        })
        .collect()
}

/// Simulates `scenario`, runs the enabled filters, evaluates them against
/// ground truth and writes the run directory.
pub fn cmd_run(scenario: &Scenario, out_dir: &Path) -> Result<RunManifest, AppError> {
    let started = Instant::now();
    let cfg = scenario.to_config()?;
    let out = run_scenario(&cfg)?;
    let log = out.log();
    let thresholds = &scenario.detection;
    let detection = run_detection(&log.events, thresholds, SimTime::ZERO + cfg.warmup);
    let fvs: Vec<FilterVerdict> = detection.all_filter_verdicts().cloned().collect();
    let click_truth = log.click_truth();
    let evaluated = evaluate(&detection.verdicts, &fvs, &click_truth)?;
    let unavailable: Vec<Unavailable> = detection
        .unavailable
        .iter()
        .map(|(f, e)| Unavailable {
            filter: *f,
            reason: e.to_string(),
        })
        .collect();
    let windows = window_rows(&log.events, &log.truth, thresholds);
    let report = RunReport::new(
        &evaluated,
        thresholds,
        Some((&scenario.name, scenario.seed)),
        unavailable.clone(),
        Some(&windows),
    );

    let mut panel = String::new();
    for item in &detection.panel {
        panel.push_str(&item.describe());
        panel.push('\n');
    }
    let files = [
        (
            formats::SCENARIO_FILE,
            serde_json::to_string_pretty(scenario).expect("scenario serializes") + "\n",
        ),
        (formats::EVENTS_FILE, formats::write_events(&log.events)),
        (formats::TRUTH_FILE, formats::write_truth(&log.events, &log.truth)),
        (formats::VERDICTS_FILE, formats::write_verdicts(&detection.verdicts)),
        (formats::FILTERS_FILE, formats::write_filter_verdicts(&fvs)),
        (formats::WINDOWS_FILE, formats::write_windows(&windows)),
        (formats::PANEL_FILE, panel),
        (formats::REPORT_TXT, render_text(&report, None)),
        (formats::REPORT_JSON, report.to_json()),
    ];
    create_dir(out_dir)?;
    let mut hashes = BTreeMap::new();
    for (name, body) in &files {
        formats::write_file(out_dir, name, body)?;
        hashes.insert(name.to_string(), sha256_hex(body.as_bytes()));
    }
    let manifest = RunManifest {
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        corpus_seed: scenario.corpus_seed(),
        versions: BTreeMap::from([
            ("adlab".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("adlab-core".to_string(), adlab_core::VERSION.to_string()),
        ]),
        files: hashes,
        events: log.events.len(),
        clicks: click_truth.len(),
        sim: (&out.stats).into(),
        unavailable,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    formats::write_file(out_dir, formats::MANIFEST_FILE, &json)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub url: String,
    pub adurl: String,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub client_id: String,
    pub channel: String,
    pub max_num_ads: u32,
    pub ad_host: String,
    pub ad_frame_url_raw: String,
    pub ad_frame_url_rewritten: String,
    pub links: Vec<LinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: String,
    pub action: String,
    pub status: String,
}

impl From<&StepRecord> for TraceRecord {
    fn from(r: &StepRecord) -> Self {
        TraceRecord {
            step: r.step.letter().to_string(),
            action: r.step.describe().to_string(),
            status: r.status.as_str().to_string(),
        }
    }
}

/// What `extract` writes: the links found, or the step that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub target_url: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub failed_step: Option<String>,
    pub blocks: Vec<BlockRecord>,
    pub trace: Vec<TraceRecord>,
}

impl ExtractionRecord {
    pub fn link_count(&self) -> usize {
        self.blocks.iter().map(|b| b.links.len()).sum()
    }
}

fn record_of(result: &ExtractionResult, key: &[u8]) -> ExtractionRecord {
    let blocks = result
        .blocks
        .iter()
        .map(|b| BlockRecord {
            client_id: b.config.client_id.clone(),
            channel: b.config.channel.clone(),
            max_num_ads: b.config.max_num_ads,
            ad_host: b.ad_host.clone(),
            ad_frame_url_raw: b.ad_frame_url_raw.clone(),
            ad_frame_url_rewritten: b.ad_frame_url_rewritten.clone(),
            links: b
                .links
                .iter()
                .map(|l| LinkRecord {
                    url: l.to_url(&b.ad_host),
                    adurl: l.adurl.clone(),
                    verified: verify_click_url(l, key),
                })
                .collect(),
        })
        .collect();
    ExtractionRecord {
        target_url: result.target_url.clone(),
        exit_code: 0,
        error: None,
        failed_step: None,
        blocks,
        trace: result.step_trace.iter().map(TraceRecord::from).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractArgs {
    pub corpus_dir: PathBuf,
    pub target_url: String,
    /// Origin written into the ad-frame URL; `None` leaves it as rendered.
    pub rewrite_domain: Option<String>,
    pub exec_page: Option<String>,
    pub out_file: Option<PathBuf>,
    /// Reach the network over HTTP instead of in process.
    pub http: bool,
}

/// Runs the extraction pipeline against a corpus network. The record is
/// written to `out_file` whether or not extraction succeeds; the result is
/// `Ok` only when links were found and all of them verify.
pub fn cmd_extract(args: &ExtractArgs) -> Result<ExtractionRecord, AppError> {
    let corpus = CorpusFile::load(&args.corpus_dir)?;
    let key = corpus.key_bytes()?;
    let net = corpus.network()?;
    let opts = ExtractorOptions {
        exec_page_url: args
            .exec_page
            .clone()
            .unwrap_or_else(|| ExtractorOptions::default().exec_page_url),
        rewrite: args.rewrite_domain.clone().map_or(RewriteMode::Skip, RewriteMode::To),
        ad_host: None,
    };
    let ctx = RequestCtx {
        now: SimTime::ZERO,
        session: SessionId(0),
        ip: std::net::Ipv4Addr::LOCALHOST,
        truth: Truth::Legit,
    };
    let outcome = if args.http {
        let server = Server::start(net)?;
        let mut t = HttpTransport::new(&server.url())?;
        let r = extract_with(&mut t, &args.target_url, &ctx, &opts);
        drop(server);
        r
    } else {
        let mut net = net;
        extract_with(&mut net, &args.target_url, &ctx, &opts)
    };
    let (record, result) = match outcome {
        Ok(res) => {
            let mut rec = record_of(&res, &key);
            let total = rec.link_count();
            let bad = rec.blocks.iter().flat_map(|b| &b.links).filter(|l| !l.verified).count();
            let verdict = if rec.blocks.is_empty() {
                Err(AppError::NoAdBlock)
            } else if total == 0 {
                Err(AppError::NoLinks)
            } else if bad > 0 {
                Err(AppError::Unverified { bad, total })
            } else {
                Ok(())
            };
            if let Err(e) = &verdict {
                rec.exit_code = e.exit_code();
                rec.error = Some(e.to_string());
                if matches!(e, AppError::NoAdBlock) {
                    rec.failed_step = Some(Step::B.letter().to_string());
                }
            }
            (rec, verdict)
        }
        Err(failure) => {
            let rec = ExtractionRecord {
                target_url: args.target_url.clone(),
                exit_code: failure.step.exit_code(),
                error: Some(failure.to_string()),
                failed_step: Some(failure.step.letter().to_string()),
                blocks: Vec::new(),
                trace: failure.trace.iter().map(TraceRecord::from).collect(),
            };
            (rec, Err(AppError::Extraction(failure)))
        }
    };
    if let Some(path) = &args.out_file {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        let json = serde_json::to_string_pretty(&record).expect("record serializes") + "\n";
        std::fs::write(path, json).map_err(|e| AppError::io(path, e))?;
    }
    result.map(|()| record)
}

fn extract_with<T: Transport + ?Sized>(
    t: &mut T,
    url: &str,
    ctx: &RequestCtx,
    opts: &ExtractorOptions,
) -> Result<ExtractionResult, adlab_core::extractor::ExtractionFailure> {
    run_extraction(t, url, ctx, 1, opts)
}

/// The text report of a run directory, optionally compared with another run.
pub fn cmd_report(run_dir: &Path, compare: Option<&Path>) -> Result<(RunReport, String), AppError> {
    let report = RunReport::load(run_dir)?;
    let other = compare.map(RunReport::load).transpose()?;
    let text = render_text(&report, other.as_ref());
    Ok((report, text))
}
