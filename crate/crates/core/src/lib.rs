//! Core of a self-contained pay-per-click sandbox.
//!
//! The crate models a mock ad network (publisher pages, a verification frame,
//! an ad frame carrying signed click links and a click-redirect endpoint), the
//! automatic link-extraction pipeline that defeats the client-side ad
//! obfuscation, a discrete-event traffic simulator with legitimate users and a
//! session-hijacking fraud apparatus, and a set of invalid-click filters that
//! are evaluated against generator ground truth.
//!
//! Everything here is `no_std` + `alloc`: the network is an in-memory state
//! machine reached through the [`service::Transport`] trait, time is a
//! simulated millisecond clock and all randomness comes from one seeded
//! stream. File formats, HTTP and the command line live in the `adlab` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adnet;
pub mod corpus;
pub mod detection;
pub mod dist;
pub mod event;
pub mod extractor;
pub mod html;
pub mod query;
pub mod service;
pub mod sim;
pub mod time;

pub use adnet::{AdConfig, AdLink, AdRequest, Campaign, CampaignId};
pub use event::{Event, EventKind, SessionId, SiteId, Truth};
pub use time::{SimDuration, SimTime};

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
