use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use crate::adnet::AdLink;
use crate::event::{Event, EventDetail, SessionId, SiteId};
use crate::time::{SimDuration, SimTime};

#[derive(Default)]
pub struct LogBuilder {
    pub events: Vec<Event>,
}

pub fn ip(n: u32) -> Ipv4Addr {
    Ipv4Addr::from(0x0a00_0000 | n)
}

fn link() -> AdLink {
    AdLink {
        sa: "l".to_string(),
        ai: "x".to_string(),
        num: 1,
        sig: "s".to_string(),
        client: "ca-pub-1".to_string(),
        adurl: "http://adv.test/".to_string(),
    }
}

impl LogBuilder {
    fn push(&mut self, session: u64, ipn: u32, site: &str, page: &str, t_ms: u64, detail: EventDetail) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            ts: SimTime::from_millis(t_ms),
            session: SessionId(session),
            ip: ip(ipn),
            site: SiteId::new(site),
            page: String::from(page),
            detail,
        });
        seq
    }

    pub fn visit(&mut self, session: u64, ipn: u32, site: &str, page: &str, t_ms: u64) -> u64 {
        self.push(session, ipn, site, page, t_ms, EventDetail::Visit)
    }

    pub fn click(&mut self, session: u64, ipn: u32, site: &str, t_ms: u64, dwell_ms: u64) -> u64 {
        let page = self
            .events
            .iter()
            .rev()
            .find(|e| e.session.0 == session)
            .map(|e| e.page.clone())
            .unwrap_or_else(|| "/".to_string());
        self.push(
            session,
            ipn,
            site,
            &page,
            t_ms,
            EventDetail::Click {
                link: link(),
                dwell_before_click: SimDuration::from_millis(dwell_ms),
            },
        )
    }
}
