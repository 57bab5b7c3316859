//! HTTP mode: the mock network behind a local server. The client sends every
//! request to the server and names the sandbox URL it means in a header, so
//! hostnames such as `www.site000.test` need no DNS.
//!
//! Request context travels in `x-adlab-*` headers. Errors come back as a 4xx
//! or 5xx status whose body is the service error's wire encoding.

use std::io::Read;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use adlab_core::service::{AdNetwork, FetchError, RequestCtx, Response, ServiceError, Transport};
use adlab_core::{SessionId, SimTime, Truth};

use crate::error::AppError;

const H_URL: &str = "x-adlab-url";
const H_NOW: &str = "x-adlab-now-ms";
const H_SESSION: &str = "x-adlab-session";
const H_IP: &str = "x-adlab-ip";
const H_TRUTH: &str = "x-adlab-truth";

fn status_of(e: &ServiceError) -> u16 {
    match e {
        ServiceError::NotFound(_) => 404,
        ServiceError::TokenRejected(_) | ServiceError::OriginMismatch { .. } | ServiceError::RejectedLink => 403,
        ServiceError::UnknownClient(_) | ServiceError::BadRequest(_) => 400,
    }
}

/// A running server. Dropping it stops the server and hands nothing back;
/// [`Server::shutdown`] returns the network with its event log.
pub struct Server {
    addr: SocketAddr,
    http: Arc<tiny_http::Server>,
    net: Arc<Mutex<AdNetwork>>,
    worker: Option<JoinHandle<()>>,
}

impl Server {
    /// Serves `net` on an ephemeral loopback port.
    pub fn start(net: AdNetwork) -> Result<Server, AppError> {
        let http = tiny_http::Server::http("127.0.0.1:0").map_err(|e| AppError::Http(e.to_string()))?;
        let addr = http
            .server_addr()
            .to_ip()
            .ok_or_else(|| AppError::Http("server has no IP address".into()))?;
        let http = Arc::new(http);
        let net = Arc::new(Mutex::new(net));
        let worker = {
            let http = Arc::clone(&http);
            let net = Arc::clone(&net);
            std::thread::spawn(move || {
                for req in http.incoming_requests() {
                    let (status, location, body) = handle(&net, &req);
                    let mut resp = tiny_http::Response::from_string(body).with_status_code(status);
                    if let Some(loc) = location {
                        if let Ok(h) = tiny_http::Header::from_bytes("Location", loc.as_bytes()) {
                            resp.add_header(h);
                        }
                    }
                    let _ = req.respond(resp);
                }
            })
        };
        Ok(Server {
            addr,
            http,
            net,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port` of the server.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn stop(&mut self) {
        self.http.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) -> AdNetwork {
        self.stop();
        let net = Arc::clone(&self.net);
        drop(self);
        match Arc::try_unwrap(net) {
            Ok(m) => m.into_inner().unwrap_or_else(|p| p.into_inner()),
            Err(shared) => shared.lock().unwrap_or_else(|p| p.into_inner()).clone(),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

fn header<'a>(req: &'a tiny_http::Request, name: &str) -> Option<&'a str> {
    req.headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str())
}

fn parse_ctx(req: &tiny_http::Request) -> Result<RequestCtx, String> {
    let now: u64 = header(req, H_NOW)
        .unwrap_or("0")
        .parse()
        .map_err(|_| format!("bad {H_NOW}"))?;
    let session: SessionId = header(req, H_SESSION)
        .unwrap_or("s0")
        .parse()
        .map_err(|_| format!("bad {H_SESSION}"))?;
    let ip: Ipv4Addr = header(req, H_IP)
        .unwrap_or("127.0.0.1")
        .parse()
        .map_err(|_| format!("bad {H_IP}"))?;
    let truth: Truth = header(req, H_TRUTH)
        .unwrap_or("legit")
        .parse()
        .map_err(|_| format!("bad {H_TRUTH}"))?;
    Ok(RequestCtx {
        now: SimTime::from_millis(now),
        session,
        ip,
        truth,
    })
}

/// The sandbox URL asked for: the `x-adlab-url` header, or else the request
/// path completed with the `Host` header.
fn target_url(req: &tiny_http::Request) -> String {
    match header(req, H_URL) {
        Some(u) => u.to_string(),
        None => format!("http://{}{}", header(req, "host").unwrap_or("localhost"), req.url()),
    }
}

fn handle(net: &Mutex<AdNetwork>, req: &tiny_http::Request) -> (u16, Option<String>, String) {
    if *req.method() != tiny_http::Method::Get {
        return (405, None, ServiceError::BadRequest("only GET".into()).to_wire());
    }
    let ctx = match parse_ctx(req) {
        Ok(c) => c,
        Err(m) => return (400, None, ServiceError::BadRequest(m).to_wire()),
    };
    let url = target_url(req);
    let mut net = net.lock().unwrap_or_else(|p| p.into_inner());
    match net.handle(&url, &ctx) {
        Ok(Response::Page(body)) => (200, None, body),
        Ok(Response::Redirect(to)) => (302, Some(to), String::new()),
        Err(e) => (status_of(&e), None, e.to_wire()),
    }
}

/// Transport reaching a [`Server`] over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
    server: String,
}

impl HttpTransport {
    /// A client that sends every request to the server at `server_url`.
    pub fn new(server_url: &str) -> Result<HttpTransport, AppError> {
        let agent = ureq::Agent::config_builder()
            .max_redirects(0)
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            server: server_url.trim_end_matches('/').to_string(),
        })
    }
}

impl Transport for HttpTransport {
    fn get(&mut self, url: &str, ctx: &RequestCtx) -> Result<Response, FetchError> {
        let mut resp = self
            .agent
            .get(format!("{}/", self.server))
            .header(H_URL, url)
            .header(H_NOW, ctx.now.as_millis().to_string())
            .header(H_SESSION, ctx.session.to_string())
            .header(H_IP, ctx.ip.to_string())
            .header(H_TRUTH, ctx.truth.as_str())
            .call()
            .map_err(|e| FetchError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        if (300..400).contains(&status) {
            let to = resp
                .headers()
                .get("location")
                .and_then(|v| v.to_str().ok())
                .ok_or_else(|| FetchError::Protocol(format!("{status} without Location")))?;
            return Ok(Response::Redirect(to.to_string()));
        }
        let mut body = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut body)
            .map_err(|e| FetchError::Protocol(e.to_string()))?;
        match status {
            200 => Ok(Response::Page(body)),
            _ => Err(ServiceError::from_wire(&body)
                .map(FetchError::Service)
                .unwrap_or_else(|| FetchError::Protocol(format!("status {status}: {body}")))),
        }
    }
}
