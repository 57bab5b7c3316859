//! Event records produced by the ad network.
//!
//! An [`Event`] deliberately carries no ground-truth label. The simulator keeps
//! labels in a parallel vector ([`LabeledLog`]) so detection code, which only
//! ever sees `&[Event]`, cannot read them.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::net::Ipv4Addr;
use core::str::FromStr;

use crate::adnet::AdLink;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct SiteId(pub String);

impl SiteId {
    pub fn new(s: impl Into<String>) -> Self {
        SiteId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl FromStr for SessionId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        s.strip_prefix('s')
            .and_then(|n| n.parse().ok())
            .map(SessionId)
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Visit,
    Impression,
    Click,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Visit => "visit",
            EventKind::Impression => "impression",
            EventKind::Click => "click",
        }
    }
}

impl FromStr for EventKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "visit" => Ok(EventKind::Visit),
            "impression" => Ok(EventKind::Impression),
            "click" => Ok(EventKind::Click),
            _ => Err(()),
        }
    }
}

/// Generator-assigned ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum Truth {
    #[default]
    Legit,
    Fraud,
}

impl Truth {
    pub fn as_str(self) -> &'static str {
        match self {
            Truth::Legit => "legit",
            Truth::Fraud => "fraud",
        }
    }
}

impl FromStr for Truth {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "legit" => Ok(Truth::Legit),
            "fraud" => Ok(Truth::Fraud),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventDetail {
    Visit,
    Impression {
        ads: u32,
    },
    Click {
        link: AdLink,
        dwell_before_click: SimDuration,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    /// Position in the append-only log; doubles as the click reference.
    pub seq: u64,
    pub ts: SimTime,
    pub session: SessionId,
    pub ip: Ipv4Addr,
    pub site: SiteId,
    /// Path on the site, always starting with `/`.
    pub page: String,
    pub detail: EventDetail,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self.detail {
            EventDetail::Visit => EventKind::Visit,
            EventDetail::Impression { .. } => EventKind::Impression,
            EventDetail::Click { .. } => EventKind::Click,
        }
    }

    pub fn is_click(&self) -> bool {
        matches!(self.detail, EventDetail::Click { .. })
    }

    pub fn dwell_before_click(&self) -> Option<SimDuration> {
        match &self.detail {
            EventDetail::Click { dwell_before_click, .. } => Some(*dwell_before_click),
            _ => None,
        }
    }

    pub fn link(&self) -> Option<&AdLink> {
        match &self.detail {
            EventDetail::Click { link, .. } => Some(link),
            _ => None,
        }
    }
}

/// Event log plus its ground truth, index-aligned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledLog {
    pub events: Vec<Event>,
    pub truth: Vec<Truth>,
}

impl LabeledLog {
    pub fn iter(&self) -> impl Iterator<Item = (&Event, Truth)> {
        self.events.iter().zip(self.truth.iter().copied())
    }

    /// `(click ref, truth)` for every click, in log order.
    pub fn click_truth(&self) -> Vec<(u64, Truth)> {
        self.iter()
            .filter(|(e, _)| e.is_click())
            .map(|(e, t)| (e.seq, t))
            .collect()
    }

    pub fn count(&self, kind: EventKind, truth: Option<Truth>) -> usize {
        self.iter()
            .filter(|(e, t)| e.kind() == kind && truth.is_none_or(|want| want == *t))
            .count()
    }
}
