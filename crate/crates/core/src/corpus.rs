//! Random publisher corpora for extraction runs and scenarios.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::adnet::{AdColors, AdConfig, AdType, Campaign, CampaignId, HexColor, SafeLevel};
use crate::event::SiteId;
use crate::service::{AdNetwork, PublisherSite, SetupError};

/// Ad sizes a generated block may use. The first entry is the reference size.
pub const SIZE_PALETTE: [(u32, u32); 5] = [(336, 280), (300, 250), (728, 90), (160, 600), (468, 60)];

const PAGE_WORDS: [&str; 12] = [
    "news", "sports", "weather", "jobs", "cars", "travel", "recipes", "music", "games", "contact", "about", "forum",
];

const LANGUAGES: [&str; 4] = ["es", "en", "fr", "de"];

const PALETTES: [[&str; 5]; 3] = [
    ["EEEEEE", "EEEEEE", "000066", "000000", "CC0000"],
    ["FFFFFF", "FFFFFF", "0000FF", "333333", "008000"],
    ["336699", "F0F8FF", "003366", "000000", "666666"],
];

/// Lowest and highest generated `baseline_popularity`, in visits per hour.
pub const POPULARITY_RANGE: (f64, f64) = (50.0, 300.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sites: Vec<PublisherSite>,
    pub campaigns: Vec<Campaign>,
}

impl Corpus {
    /// An ad network serving this corpus under `ad_host`.
    pub fn network(&self, ad_host: impl Into<String>, key: Vec<u8>) -> Result<AdNetwork, SetupError> {
        let mut net = AdNetwork::new(ad_host.into(), key)?;
        for s in &self.sites {
            net.add_site(s.clone())?;
        }
        for c in &self.campaigns {
            net.add_campaign(c.clone())?;
        }
        Ok(net)
    }

    /// Links a page of `site` should carry: `min(num_ads, matching campaigns)`.
    pub fn expected_links(&self, site: &PublisherSite) -> usize {
        let matching = self
            .campaigns
            .iter()
            .filter(|c| c.channel_targets.contains(&site.ad_config.channel))
            .count();
        matching.min(site.ad_config.max_num_ads as usize)
    }
}

fn hex(s: &str) -> HexColor {
    s.parse().expect("palette colours are valid")
}

fn client_id<R: Rng + ?Sized>(rng: &mut R, used: &mut BTreeSet<u64>) -> String {
    loop {
        let n = rng.random_range(1_000_000_000_000_000..10_000_000_000_000_000u64);
        if used.insert(n) {
            return format!("pub-{n}");
        }
    }
}

/// `n_sites` publisher sites, each with its own ad block and
/// `campaigns_per_site` campaigns targeting its channel.
pub fn generate_corpus<R: Rng + ?Sized>(n_sites: u32, campaigns_per_site: u32, rng: &mut R) -> Corpus {
    let mut used = BTreeSet::new();
    let mut sites = Vec::with_capacity(n_sites as usize);
    let mut campaigns = Vec::new();
    for i in 0..n_sites {
        let host = format!("www.site{i:03}.test");
        let channel = format!("SITE{i:03}.TEST");
        let mut words = PAGE_WORDS.to_vec();
        words.shuffle(rng);
        let n_pages = rng.random_range(5..=8);
        let mut pages = Vec::with_capacity(n_pages);
        pages.push(String::from("/index.html"));
        pages.extend(words.iter().take(n_pages - 1).map(|w| format!("/{w}.html")));
        let (width, height) = *SIZE_PALETTE.choose(rng).expect("palette is non-empty");
        let colors = PALETTES.choose(rng).expect("palettes are non-empty");
        let ad_config = AdConfig {
            client_id: client_id(rng, &mut used),
            channel: channel.clone(),
            ad_type: AdType::Text,
            max_num_ads: rng.random_range(1..=3),
            language: String::from(*LANGUAGES.choose(rng).expect("languages are non-empty")),
            safe_level: SafeLevel::High,
            encoding: String::from("utf8"),
            width,
            height,
            format: AdConfig::standard_format(width, height),
            colors: AdColors {
                border: hex(colors[0]),
                bg: hex(colors[1]),
                link: hex(colors[2]),
                text: hex(colors[3]),
                url: hex(colors[4]),
            },
        };
        let popularity = rng.random_range(POPULARITY_RANGE.0..POPULARITY_RANGE.1);
        sites.push(PublisherSite {
            site_id: SiteId::new(format!("site{i:03}")),
            base_url: format!("http://{host}"),
            pages,
            ad_config,
            baseline_popularity: libm::round(popularity),
        });
        for j in 0..campaigns_per_site {
            let id = campaigns.len() as u32 + 1;
            campaigns.push(Campaign {
                id: CampaignId(id),
                advertiser_id: format!("adv{:03}", rng.random_range(0..1000)),
                landing_url: format!("http://shop{id}.example/offer?src=site{i:03}&slot={j}"),
                channel_targets: [channel.clone()].into_iter().collect(),
                headline: format!("Offer {id}"),
            });
        }
    }
    Corpus { sites, campaigns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::detect_ad_block;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_and_valid() {
        let a = generate_corpus(20, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_corpus(20, 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let clients: BTreeSet<&str> = a.sites.iter().map(|s| s.ad_config.client_id.as_str()).collect();
        assert_eq!(clients.len(), 20);
        for s in &a.sites {
            s.validate().unwrap();
            assert!((1..=3).contains(&s.ad_config.max_num_ads));
            assert!((5..=8).contains(&s.pages.len()));
            assert!(SIZE_PALETTE.contains(&(s.ad_config.width, s.ad_config.height)));
            assert!(s.baseline_popularity >= POPULARITY_RANGE.0 && s.baseline_popularity <= POPULARITY_RANGE.1);
            assert_eq!(a.expected_links(s), s.ad_config.max_num_ads as usize);
        }
        assert_eq!(a.campaigns.len(), 60);
        assert!(SIZE_PALETTE.contains(&(336, 280)));
    }

    #[test]
    fn pages_round_trip_through_detection() {
        let corpus = generate_corpus(10, 2, &mut ChaCha8Rng::seed_from_u64(4));
        let net = corpus.network("http://googleads.test", alloc::vec![7u8; 32]).unwrap();
        for s in &corpus.sites {
            for p in &s.pages {
                let html = net.render_publisher_page(&s.site_id, p).unwrap();
                assert_eq!(detect_ad_block(&html), alloc::vec![s.ad_config.clone()]);
            }
        }
    }
}
