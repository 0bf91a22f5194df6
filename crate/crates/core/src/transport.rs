//! AC1 line protocol for serving plans on peer servers.
//!
//! ```text
//! AC1 REQ <service_id> <item>,<item>,...\n
//! AC1 OK <cost>\n
//! AC1 ERR <message>\n
//! ```
//!
//! Lines are ASCII, fields are separated by exactly one space, item indices
//! are strictly ascending decimals without leading zeros, and costs are
//! integer minor currency units.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::composer::{quote_cost, PriceCatalog};
use crate::decision::RegistryView;
use crate::dispatcher::RemoteInvoker;
use crate::itemset::{ItemId, Itemset};
use crate::service::{Money, ServiceId};

pub const PROTOCOL_VERSION: u32 = 1;
const MAX_LINE: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolErrorKind {
    NotAscii,
    MissingNewline,
    EmbeddedNewline,
    UnsupportedVersion(String),
    BadVersionToken,
    UnknownVerb(String),
    MissingField(&'static str),
    BadServiceId,
    BadItems(String),
    BadCost,
    EmptyMessage,
    TrailingData,
}

impl fmt::Display for ProtocolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolErrorKind::NotAscii => f.write_str("non-ASCII or control byte"),
            ProtocolErrorKind::MissingNewline => f.write_str("line is not newline-terminated"),
            ProtocolErrorKind::EmbeddedNewline => f.write_str("newline inside line"),
            ProtocolErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            ProtocolErrorKind::BadVersionToken => f.write_str("expected version token AC<n>"),
            ProtocolErrorKind::UnknownVerb(v) => write!(f, "unknown verb {v:?}"),
            ProtocolErrorKind::MissingField(what) => write!(f, "missing {what}"),
            ProtocolErrorKind::BadServiceId => f.write_str("invalid service id"),
            ProtocolErrorKind::BadItems(why) => write!(f, "invalid item list: {why}"),
            ProtocolErrorKind::BadCost => f.write_str("invalid cost"),
            ProtocolErrorKind::EmptyMessage => f.write_str("empty error message"),
            ProtocolErrorKind::TrailingData => f.write_str("unexpected trailing data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol error at byte {offset}: {kind}")]
pub struct ProtocolError {
    pub offset: usize,
    pub kind: ProtocolErrorKind,
}

fn perr<T>(offset: usize, kind: ProtocolErrorKind) -> Result<T, ProtocolError> {
    Err(ProtocolError { offset, kind })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteRequest {
    service_id: ServiceId,
    items: Itemset,
}

impl RemoteRequest {
    /// `None` when `items` is empty.
    pub fn new(service_id: ServiceId, items: Itemset) -> Option<Self> {
        (!items.is_empty()).then_some(RemoteRequest { service_id, items })
    }

    pub fn protocol_version(&self) -> u32 {
        PROTOCOL_VERSION
    }

    pub fn service_id(&self) -> &ServiceId {
        &self.service_id
    }

    pub fn items(&self) -> &Itemset {
        &self.items
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteResponse {
    Ok { total_cost: Money },
    Error { message: String },
}

impl RemoteResponse {
    pub fn ok(total_cost: Money) -> Self {
        RemoteResponse::Ok { total_cost }
    }

    /// Messages must be non-empty printable ASCII; anything else is
    /// replaced with `?` so the response always encodes.
    pub fn error(message: impl AsRef<str>) -> Self {
        let mut message: String = message
            .as_ref()
            .chars()
            .map(|c| if (' '..='~').contains(&c) { c } else { '?' })
            .collect();
        if message.is_empty() {
            message.push('?');
        }
        RemoteResponse::Error { message }
    }
}

pub fn encode_request(req: &RemoteRequest) -> Vec<u8> {
    format!(
        "AC{PROTOCOL_VERSION} REQ {} {}\n",
        req.service_id,
        req.items.to_csv()
    )
    .into_bytes()
}

pub fn encode_response(resp: &RemoteResponse) -> Vec<u8> {
    match resp {
        RemoteResponse::Ok { total_cost } => format!("AC{PROTOCOL_VERSION} OK {total_cost}\n"),
        RemoteResponse::Error { message } => format!("AC{PROTOCOL_VERSION} ERR {message}\n"),
    }
    .into_bytes()
}

/// Byte cursor over one line body (newline already stripped).
struct Fields<'a> {
    line: &'a str,
    pos: usize,
}

impl<'a> Fields<'a> {
    /// Next field. Fields are separated by exactly one space.
    fn next(&mut self, what: &'static str) -> Result<(usize, &'a str), ProtocolError> {
        let mut start = self.pos;
        if start > 0 {
            if start >= self.line.len() {
                return perr(start, ProtocolErrorKind::MissingField(what));
            }
            // the previous field stopped on a space
            start += 1;
        }
        let end = self.line[start..]
            .find(' ')
            .map_or(self.line.len(), |i| start + i);
        if end == start {
            return perr(start, ProtocolErrorKind::MissingField(what));
        }
        self.pos = end;
        Ok((start, &self.line[start..end]))
    }

    /// Everything after the next separator, for free-text fields.
    fn rest(&mut self) -> (usize, &'a str) {
        let start = (self.pos + 1).min(self.line.len());
        self.pos = self.line.len();
        (start, &self.line[start..])
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos < self.line.len() {
            return perr(self.pos, ProtocolErrorKind::TrailingData);
        }
        Ok(())
    }
}

fn split_line(bytes: &[u8]) -> Result<&str, ProtocolError> {
    let Some((&last, body)) = bytes.split_last() else {
        return perr(0, ProtocolErrorKind::MissingNewline);
    };
    if let Some(i) = body.iter().position(|&b| b == b'\n') {
        return perr(i, ProtocolErrorKind::EmbeddedNewline);
    }
    if let Some(i) = body.iter().position(|&b| !(0x20..=0x7e).contains(&b)) {
        return perr(i, ProtocolErrorKind::NotAscii);
    }
    if last != b'\n' {
        return perr(bytes.len() - 1, ProtocolErrorKind::MissingNewline);
    }
    Ok(std::str::from_utf8(body).expect("printable ASCII"))
}

fn check_version(offset: usize, token: &str) -> Result<(), ProtocolError> {
    let digits = token.strip_prefix("AC").unwrap_or("");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return perr(offset, ProtocolErrorKind::BadVersionToken);
    }
    if digits != PROTOCOL_VERSION.to_string() {
        return perr(
            offset,
            ProtocolErrorKind::UnsupportedVersion(token.to_string()),
        );
    }
    Ok(())
}

fn parse_decimal(s: &str) -> Option<u64> {
    let canonical = s == "0" || (s.starts_with(|c: char| ('1'..='9').contains(&c)));
    if !canonical || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_items(offset: usize, field: &str) -> Result<Itemset, ProtocolError> {
    let mut items = Vec::new();
    let mut at = offset;
    for tok in field.split(',') {
        let index = parse_decimal(tok)
            .filter(|&v| v > 0 && v <= u32::MAX as u64)
            .and_then(|v| ItemId::new(v as u32));
        let Some(item) = index else {
            return perr(
                at,
                ProtocolErrorKind::BadItems(format!("bad index {tok:?}")),
            );
        };
        if items.last().is_some_and(|&prev| prev >= item) {
            return perr(
                at,
                ProtocolErrorKind::BadItems("indices not strictly ascending".into()),
            );
        }
        items.push(item);
        at += tok.len() + 1;
    }
    Ok(Itemset::from_sorted(items))
}

pub fn decode_request(bytes: &[u8]) -> Result<RemoteRequest, ProtocolError> {
    let line = split_line(bytes)?;
    let mut fields = Fields { line, pos: 0 };
    let (at, version) = fields.next("version")?;
    check_version(at, version)?;
    let (at, verb) = fields.next("verb")?;
    if verb != "REQ" {
        return perr(at, ProtocolErrorKind::UnknownVerb(verb.to_string()));
    }
    let (at, sid) = fields.next("service id")?;
    let service_id = ServiceId::new(sid).or_else(|_| perr(at, ProtocolErrorKind::BadServiceId))?;
    let (at, items) = fields.next("item list")?;
    let items = parse_items(at, items)?;
    fields.finish()?;
    Ok(RemoteRequest { service_id, items })
}

pub fn decode_response(bytes: &[u8]) -> Result<RemoteResponse, ProtocolError> {
    let line = split_line(bytes)?;
    let mut fields = Fields { line, pos: 0 };
    let (at, version) = fields.next("version")?;
    check_version(at, version)?;
    let (at, verb) = fields.next("status")?;
    match verb {
        "OK" => {
            let (at, cost) = fields.next("cost")?;
            let total_cost = parse_decimal(cost)
                .map(Money)
                .map_or_else(|| perr(at, ProtocolErrorKind::BadCost), Ok)?;
            fields.finish()?;
            Ok(RemoteResponse::Ok { total_cost })
        }
        "ERR" => {
            let (at, message) = fields.rest();
            if message.is_empty() {
                return perr(at, ProtocolErrorKind::EmptyMessage);
            }
            Ok(RemoteResponse::Error {
                message: message.to_string(),
            })
        }
        other => perr(at, ProtocolErrorKind::UnknownVerb(other.to_string())),
    }
}

/// Answers decoded requests on the serving side.
pub trait ServiceDirectory: Send + Sync {
    fn serve(&self, request: &RemoteRequest) -> RemoteResponse;
}

/// Quotes from a catalog for a fixed set of services.
#[derive(Debug, Clone)]
pub struct CatalogDirectory {
    catalog: Arc<PriceCatalog>,
    services: std::collections::BTreeMap<ServiceId, Itemset>,
}

impl CatalogDirectory {
    pub fn new(catalog: Arc<PriceCatalog>) -> Self {
        CatalogDirectory {
            catalog,
            services: Default::default(),
        }
    }

    pub fn with_service(mut self, id: ServiceId, covers: Itemset) -> Self {
        self.services.insert(id, covers);
        self
    }

    /// Per-item services, the bundle service and the view's composites.
    pub fn from_view(view: &RegistryView, catalog: Arc<PriceCatalog>) -> Self {
        let mut dir = CatalogDirectory::new(catalog.clone());
        let all = Itemset::from_indices(catalog.items().map(ItemId::index)).expect("1-based");
        for id in catalog.items() {
            let sid = ServiceId::for_item(id);
            if view.local_services.contains(&sid) {
                dir.services.insert(sid, Itemset::single(id));
            }
        }
        if view.local_services.contains(&ServiceId::bundle()) {
            dir.services.insert(ServiceId::bundle(), all);
        }
        for c in &view.composites {
            dir.services.insert(ServiceId::composite(c), c.clone());
        }
        dir
    }
}

impl ServiceDirectory for CatalogDirectory {
    fn serve(&self, request: &RemoteRequest) -> RemoteResponse {
        match self.services.get(request.service_id()) {
            None => RemoteResponse::error("no such service"),
            Some(covers) if !request.items().is_subset_of(covers) => {
                RemoteResponse::error(format!(
                    "{} does not serve {}",
                    request.service_id(),
                    request.items()
                ))
            }
            Some(_) => match quote_cost(request.items(), &self.catalog) {
                Ok(cost) => RemoteResponse::ok(cost),
                Err(e) => RemoteResponse::error(e.to_string()),
            },
        }
    }
}

/// One request line in, one response line out. Malformed requests get an
/// `ERR` response rather than a dropped connection.
pub fn answer_line(directory: &dyn ServiceDirectory, line: &[u8]) -> Vec<u8> {
    let response = match decode_request(line) {
        Ok(req) => directory.serve(&req),
        Err(e) => RemoteResponse::error(e.to_string()),
    };
    encode_response(&response)
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid endpoint {0:?}")]
    BadEndpoint(String),
    #[error("connection to {addr} failed: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("timed out talking to {0}")]
    Timeout(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the connection without answering")]
    Closed,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Where a peer can be reached.
#[derive(Clone)]
pub enum Endpoint {
    Tcp(SocketAddr),
    Loopback(Arc<dyn ServiceDirectory>),
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "Tcp({addr})"),
            Endpoint::Loopback(_) => f.write_str("Loopback"),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "{addr}"),
            Endpoint::Loopback(_) => f.write_str("loopback"),
        }
    }
}

fn resolve(target: &str) -> Result<SocketAddr, TransportError> {
    target
        .to_socket_addrs()
        .ok()
        .and_then(|mut addrs| addrs.next())
        .ok_or_else(|| TransportError::BadEndpoint(target.to_string()))
}

impl Endpoint {
    /// Parses a `host:port` string.
    pub fn tcp(target: &str) -> Result<Self, TransportError> {
        resolve(target).map(Endpoint::Tcp)
    }
}

/// A running peer server. Dropping it stops the listener.
pub struct PeerServer {
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl PeerServer {
    pub fn endpoint(&self) -> Endpoint {
        self.endpoint.clone()
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        match self.endpoint {
            Endpoint::Tcp(addr) => Some(addr),
            Endpoint::Loopback(_) => None,
        }
    }

    pub fn shutdown(mut self) {
        self.stop_listener();
    }

    fn stop_listener(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let (Some(handle), Endpoint::Tcp(addr)) = (self.accept_thread.take(), &self.endpoint) {
            // wake the blocking accept
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
            let _ = handle.join();
        }
    }
}

impl Drop for PeerServer {
    fn drop(&mut self) {
        self.stop_listener();
    }
}

/// Starts answering AC1 requests at `bind` (`host:port` or `loopback`).
pub fn serve_peer(
    bind: &str,
    directory: Arc<dyn ServiceDirectory>,
) -> Result<PeerServer, TransportError> {
    let stop = Arc::new(AtomicBool::new(false));
    if bind == "loopback" {
        return Ok(PeerServer {
            endpoint: Endpoint::Loopback(directory),
            stop,
            accept_thread: None,
        });
    }
    let addr = resolve(bind)?;
    let listener = TcpListener::bind(addr).map_err(|source| TransportError::Connect {
        addr: bind.to_string(),
        source,
    })?;
    let local = listener.local_addr()?;
    let stop_flag = stop.clone();
    let accept_thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let directory = directory.clone();
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, directory.as_ref()) {
                            debug!("peer connection ended: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    Ok(PeerServer {
        endpoint: Endpoint::Tcp(local),
        stop,
        accept_thread: Some(accept_thread),
    })
}

fn serve_connection(stream: TcpStream, directory: &dyn ServiceDirectory) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = (&mut reader)
            .take(MAX_LINE as u64)
            .read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok(());
        }
        let oversized = n == MAX_LINE && line.last() != Some(&b'\n');
        writer.write_all(&answer_line(directory, &line))?;
        writer.flush()?;
        if oversized || line.last() != Some(&b'\n') {
            // cannot resynchronise on a line boundary
            return Ok(());
        }
    }
}

/// Synchronous request/response against a peer.
pub fn call_peer(
    endpoint: &Endpoint,
    request: &RemoteRequest,
    timeout: Duration,
) -> Result<RemoteResponse, TransportError> {
    let bytes = encode_request(request);
    let reply = match endpoint {
        Endpoint::Loopback(directory) => answer_line(directory.as_ref(), &bytes),
        Endpoint::Tcp(addr) => {
            let timed_out = |e: io::Error| match e.kind() {
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => {
                    TransportError::Timeout(addr.to_string())
                }
                _ => TransportError::Io(e),
            };
            let mut stream = TcpStream::connect_timeout(addr, timeout).map_err(|source| {
                if source.kind() == io::ErrorKind::TimedOut {
                    TransportError::Timeout(addr.to_string())
                } else {
                    TransportError::Connect {
                        addr: addr.to_string(),
                        source,
                    }
                }
            })?;
            stream.set_read_timeout(Some(timeout))?;
            stream.set_write_timeout(Some(timeout))?;
            stream.write_all(&bytes).map_err(timed_out)?;
            let mut reader = BufReader::new(stream);
            let mut line = Vec::new();
            let n = (&mut reader)
                .take(MAX_LINE as u64)
                .read_until(b'\n', &mut line)
                .map_err(timed_out)?;
            if n == 0 {
                return Err(TransportError::Closed);
            }
            line
        }
    };
    Ok(decode_response(&reply)?)
}

/// [`RemoteInvoker`] backed by an AC1 peer.
#[derive(Debug, Clone)]
pub struct PeerClient {
    endpoint: Endpoint,
    timeout: Duration,
}

impl PeerClient {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        PeerClient { endpoint, timeout }
    }
}

impl RemoteInvoker for PeerClient {
    fn invoke(&mut self, service: &ServiceId, items: &Itemset) -> Result<Money, String> {
        let request = RemoteRequest::new(service.clone(), items.clone())
            .ok_or_else(|| "empty remote request".to_string())?;
        match call_peer(&self.endpoint, &request, self.timeout) {
            Ok(RemoteResponse::Ok { total_cost }) => Ok(total_cost),
            Ok(RemoteResponse::Error { message }) => Err(format!("peer refused: {message}")),
            Err(e) => Err(e.to_string()),
        }
    }
}
