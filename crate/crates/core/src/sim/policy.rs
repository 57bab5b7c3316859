//! Decision policy of the hijacking apparatus.

use core::net::Ipv4Addr;

use rand::Rng;

use crate::dist::LogNormalSpec;

use super::ConfigError;

/// What the CTR cap is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum CtrReference {
    /// `target_ctr_cap` is the CTR limit itself.
    Absolute,
    /// The limit is `target_ctr_cap` times the site's baseline CTR.
    SiteBaseline,
}

/// Source address of the background traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum IpMode {
    /// The captured visitor's own address, drawn per session from the pool.
    PerSession,
    /// Every background request leaves from one address.
    Single(Ipv4Addr),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct FraudPolicy {
    pub p_wait: f64,
    /// Length of a wait, and the gap before an extra page visit.
    pub wait: LogNormalSpec,
    pub p_extra_visit: f64,
    pub target_ctr_cap: f64,
    pub ctr_reference: CtrReference,
    /// Click-free boost visits per budgeted click.
    pub boost_ratio: f64,
    /// Clicks allowed per simulated day, over all targets.
    pub click_budget: u32,
    /// Delay between the decision and the click; `None` clicks at once.
    pub click_delay: Option<LogNormalSpec>,
    pub ip_mode: IpMode,
    /// Ramp hijack and boost rates up linearly over the fraud period.
    pub progressive: bool,
    /// Decisions per hijacked session before it gives up.
    pub max_steps: u32,
}

impl Default for FraudPolicy {
    fn default() -> Self {
        FraudPolicy {
            p_wait: 0.0,
            wait: LogNormalSpec::new(20.0, 0.6),
            p_extra_visit: 0.0,
            target_ctr_cap: 1.0,
            ctr_reference: CtrReference::Absolute,
            boost_ratio: 0.0,
            click_budget: u32::MAX,
            click_delay: None,
            ip_mode: IpMode::PerSession,
            progressive: false,
            max_steps: 8,
        }
    }
}

fn prob(name: &'static str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::field(name, "must be in [0, 1]"))
    }
}

impl FraudPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        prob("fraud_policy.p_wait", self.p_wait)?;
        prob("fraud_policy.p_extra_visit", self.p_extra_visit)?;
        if self.p_wait + self.p_extra_visit > 1.0 {
            return Err(ConfigError::field(
                "fraud_policy",
                "p_wait + p_extra_visit must be <= 1",
            ));
        }
        if !(self.target_ctr_cap > 0.0 && self.target_ctr_cap.is_finite()) {
            return Err(ConfigError::field("fraud_policy.target_ctr_cap", "must be > 0"));
        }
        if self.ctr_reference == CtrReference::Absolute && self.target_ctr_cap > 1.0 {
            return Err(ConfigError::field(
                "fraud_policy.target_ctr_cap",
                "absolute cap must be in (0, 1]",
            ));
        }
        if !(self.boost_ratio >= 0.0 && self.boost_ratio.is_finite()) {
            return Err(ConfigError::field("fraud_policy.boost_ratio", "must be >= 0"));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::field("fraud_policy.max_steps", "must be >= 1"));
        }
        self.wait
            .validate()
            .map_err(|e| ConfigError::dist("fraud_policy.wait", e))?;
        if let Some(d) = &self.click_delay {
            d.validate()
                .map_err(|e| ConfigError::dist("fraud_policy.click_delay", e))?;
        }
        Ok(())
    }

    /// Highest fraud CTR the policy tolerates on a site with `baseline_ctr`.
    pub fn ctr_limit(&self, baseline_ctr: f64) -> f64 {
        match self.ctr_reference {
            CtrReference::Absolute => self.target_ctr_cap,
            CtrReference::SiteBaseline => self.target_ctr_cap * baseline_ctr,
        }
    }
}

/// What the apparatus knows about one target when it decides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteStats {
    /// Background visits already completed, not counting the one in progress.
    pub visits: u64,
    /// Clicks already made or committed.
    pub clicks: u64,
    pub baseline_ctr: f64,
    /// Clicks left in today's budget.
    pub budget_left: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Wait,
    ExtraVisit,
    Skip,
    Click,
}

/// Whether one more click keeps the CTR within the cap and the budget.
pub fn click_allowed(policy: &FraudPolicy, stats: &SiteStats) -> bool {
    let ctr = (stats.clicks + 1) as f64 / (stats.visits + 1) as f64;
    stats.budget_left > 0 && ctr <= policy.ctr_limit(stats.baseline_ctr)
}

/// One decision of the hijacked session: wait, look at another page, give
/// up, or click.
pub fn decide_action<R: Rng + ?Sized>(policy: &FraudPolicy, stats: &SiteStats, rng: &mut R) -> Action {
    let u: f64 = rng.random();
    if click_allowed(policy, stats) {
        if u < policy.p_wait {
            Action::Wait
        } else if u < policy.p_wait + policy.p_extra_visit {
            Action::ExtraVisit
        } else {
            Action::Click
        }
    } else if u < policy.p_extra_visit {
        Action::ExtraVisit
    } else {
        Action::Skip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open(budget: u32) -> SiteStats {
        SiteStats {
            visits: 1_000,
            clicks: 0,
            baseline_ctr: 0.05,
            budget_left: budget,
        }
    }

    #[test]
    fn exhausted_budget_never_clicks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FraudPolicy {
            p_extra_visit: 0.3,
            ..FraudPolicy::default()
        };
        assert!((0..5_000).all(|_| decide_action(&p, &open(0), &mut rng) != Action::Click));
    }

    #[test]
    fn ctr_at_cap_never_clicks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FraudPolicy {
            target_ctr_cap: 1.0,
            ctr_reference: CtrReference::SiteBaseline,
            p_extra_visit: 0.3,
            ..FraudPolicy::default()
        };
        let at_cap = SiteStats {
            visits: 99,
            clicks: 5,
            baseline_ctr: 0.05,
            budget_left: 10,
        };
        assert!(!click_allowed(&p, &at_cap));
        let seen: std::collections::HashSet<Action> =
            (0..5_000).map(|_| decide_action(&p, &at_cap, &mut rng)).collect();
        assert_eq!(seen, [Action::Skip, Action::ExtraVisit].into_iter().collect());
        let below = SiteStats { clicks: 4, ..at_cap };
        assert!(click_allowed(&p, &below));
    }

    #[test]
    fn action_frequencies_follow_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FraudPolicy {
            p_wait: 0.5,
            p_extra_visit: 0.3,
            ..FraudPolicy::default()
        };
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[decide_action(&p, &open(u32::MAX), &mut rng) as usize] += 1;
        }
        let f = |i: usize| counts[i] as f64 / n as f64;
        assert!((f(Action::Wait as usize) - 0.5).abs() < 0.02);
        assert!((f(Action::ExtraVisit as usize) - 0.3).abs() < 0.02);
        assert!((f(Action::Click as usize) - 0.2).abs() < 0.02);
        assert_eq!(counts[Action::Skip as usize], 0);
    }

    #[test]
    fn validation_rejects_bad_policies() {
        let ok = FraudPolicy::default();
        assert!(ok.validate().is_ok());
        for bad in [
            FraudPolicy {
                p_wait: 0.7,
                p_extra_visit: 0.4,
                ..ok
            },
            FraudPolicy {
                target_ctr_cap: 0.0,
                ..ok
            },
            FraudPolicy {
                target_ctr_cap: 1.5,
                ..ok
            },
            FraudPolicy {
                boost_ratio: -1.0,
                ..ok
            },
            FraudPolicy { max_steps: 0, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let relative = FraudPolicy {
            target_ctr_cap: 1.5,
            ctr_reference: CtrReference::SiteBaseline,
            ..ok
        };
        assert!(relative.validate().is_ok());
    }
}
