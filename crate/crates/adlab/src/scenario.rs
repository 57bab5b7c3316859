//! Scenario files: a TOML description of one simulated experiment.

use std::path::Path;

use adlab_core::corpus::{generate_corpus, Corpus};
use adlab_core::detection::Thresholds;
use adlab_core::sim::{CaptureRate, ConfigError, FraudPolicy, LegitProfile, ScenarioConfig};
use adlab_core::{SimDuration, SiteId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::AppError;

pub const DEFAULT_AD_HOST: &str = "http://googleads.test";

fn default_ad_host() -> String {
    DEFAULT_AD_HOST.to_string()
}

fn default_capture_rate() -> CaptureRate {
    CaptureRate::PerHour(0.0)
}

/// Which sites the fraud apparatus attacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    Named(TargetSet),
    Sites(Vec<SiteId>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSet {
    All,
    /// The site with the highest baseline popularity.
    MostPopular,
}

impl Default for Targets {
    fn default() -> Self {
        Targets::Named(TargetSet::All)
    }
}

/// Parameters of the generated publisher corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_sites: u32,
    pub campaigns_per_site: u32,
    /// Defaults to the scenario seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_hours: u64,
    /// Fraud-free lead-in, also the behaviour classifier's training window.
    pub warmup_hours: u64,
    #[serde(default = "default_ad_host")]
    pub ad_host: String,
    pub n_legit_users: u32,
    #[serde(default)]
    pub n_capture_sites: u32,
    #[serde(default = "default_capture_rate")]
    pub capture_visit_rate: CaptureRate,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub captured_ip_pool: u32,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub legit: LegitProfile,
    #[serde(default)]
    pub fraud_policy: FraudPolicy,
    #[serde(default)]
    pub detection: Thresholds,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, AppError> {
        toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scenario, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Scenario::parse(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The same scenario under another seed.
    pub fn with_seed(mut self, seed: u64) -> Scenario {
        self.seed = seed;
        self
    }

    pub fn corpus_seed(&self) -> u64 {
        self.corpus.seed.unwrap_or(self.seed)
    }

    pub fn corpus(&self) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.corpus_seed());
        generate_corpus(self.corpus.n_sites, self.corpus.campaigns_per_site, &mut rng)
    }

    /// The resolved scenario, defaults filled in, as canonical JSON.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of [`Scenario::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// The simulator configuration this scenario describes.
    pub fn to_config(&self) -> Result<ScenarioConfig, ConfigError> {
        if self.corpus.n_sites == 0 {
            return Err(ConfigError::field("corpus.n_sites", "must be >= 1"));
        }
        let corpus = self.corpus();
        let target_sites = match &self.targets {
            Targets::Named(TargetSet::All) => Vec::new(),
            Targets::Named(TargetSet::MostPopular) => corpus
                .sites
                .iter()
                .max_by(|a, b| a.baseline_popularity.total_cmp(&b.baseline_popularity))
                .map(|s| vec![s.site_id.clone()])
                .unwrap_or_default(),
            Targets::Sites(ids) => ids.clone(),
        };
        let cfg = ScenarioConfig {
            seed: self.seed,
            duration: SimDuration::from_hours(self.duration_hours),
            warmup: SimDuration::from_hours(self.warmup_hours),
            ad_host: self.ad_host.clone(),
            sites: corpus.sites,
            campaigns: corpus.campaigns,
            n_legit_users: self.n_legit_users,
            legit: self.legit,
            n_capture_sites: self.n_capture_sites,
            capture_visit_rate: self.capture_visit_rate,
            target_sites,
            captured_ip_pool: self.captured_ip_pool,
            fraud_policy: self.fraud_policy,
            thresholds: self.detection.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
