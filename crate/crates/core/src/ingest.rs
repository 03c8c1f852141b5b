//! Turning raw log records into typed bipartite edges.
//!
//! Netflow records connect an internal host (top) to an external host
//! (bottom) on the layer `protocol/port-token/direction`. Authentication
//! records connect users (top) to hosts (bottom) on `logon type/package/
//! Local|From|To`. Repeated triples only raise the edge multiplicity.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphStats, MultiplexBipartiteGraph};

pub const OTHER_PORT: &str = "Other";

/// Default well-known ports kept as distinct layer tokens.
pub const DEFAULT_PORT_WHITELIST: [(&str, u16); 10] = [
    ("TCP", 20),
    ("TCP", 21),
    ("TCP", 22),
    ("TCP", 23),
    ("TCP", 25),
    ("TCP", 53),
    ("TCP", 80),
    ("TCP", 443),
    ("TCP", 465),
    ("TCP", 587),
];

const VAST_PRESET: &str = include_str!("../presets/vast-nf.toml");
const LANL_PRESET: &str = include_str!("../presets/lanl-auth.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetflowRecord {
    pub src_host: String,
    pub dst_host: String,
    pub protocol: String,
    pub dst_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthRecord {
    pub src_user: String,
    pub dst_user: String,
    pub src_host: String,
    pub dst_host: String,
    pub logon_type: String,
    pub auth_package: String,
    pub outcome: String,
    pub event_kind: String,
}

/// An IPv4 or IPv6 network in CIDR notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cidr {
    network: IpAddr,
    prefix: u8,
}

impl Cidr {
    pub fn contains(&self, addr: &IpAddr) -> bool {
        match (self.network, addr) {
            (IpAddr::V4(net), IpAddr::V4(a)) => {
                let mask = u32::MAX.checked_shl(32 - u32::from(self.prefix)).unwrap_or(0);
                u32::from(net) & mask == u32::from(*a) & mask
            }
            (IpAddr::V6(net), IpAddr::V6(a)) => {
                let mask = u128::MAX.checked_shl(128 - u32::from(self.prefix)).unwrap_or(0);
                u128::from(net) & mask == u128::from(*a) & mask
            }
            _ => false,
        }
    }
}

impl FromStr for Cidr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("invalid CIDR {s:?}"));
        let (addr, prefix) = match s.split_once('/') {
            Some((a, p)) => (a, Some(p)),
            None => (s, None),
        };
        let network: IpAddr = addr.trim().parse().map_err(|_| bad())?;
        let max = if network.is_ipv4() { 32 } else { 128 };
        let prefix = match prefix {
            Some(p) => p.trim().parse::<u8>().map_err(|_| bad())?,
            None => max,
        };
        if prefix > max {
            return Err(bad());
        }
        Ok(Self { network, prefix })
    }
}

/// Predicate deciding which hosts are internal: CIDR ranges for IP
/// addresses plus an explicit list for anything else.
#[derive(Debug, Clone, Default)]
pub struct InternalHosts {
    cidrs: Vec<Cidr>,
    hosts: HashSet<String>,
}

impl InternalHosts {
    pub fn new(cidrs: &[String], hosts: &[String]) -> Result<Self> {
        Ok(Self {
            cidrs: cidrs.iter().map(|c| c.parse()).collect::<Result<_>>()?,
            hosts: hosts.iter().cloned().collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.cidrs.is_empty() && self.hosts.is_empty()
    }

    pub fn contains(&self, host: &str) -> bool {
        if self.hosts.contains(host) {
            return true;
        }
        match host.parse::<IpAddr>() {
            Ok(addr) => self.cidrs.iter().any(|c| c.contains(&addr)),
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortWhitelist(HashSet<(String, u16)>);

impl Default for PortWhitelist {
    fn default() -> Self {
        Self(
            DEFAULT_PORT_WHITELIST
                .iter()
                .map(|&(p, port)| (p.to_owned(), port))
                .collect(),
        )
    }
}

impl PortWhitelist {
    /// Parses entries such as `TCP/80`.
    pub fn parse(entries: &[String]) -> Result<Self> {
        let mut set = HashSet::new();
        for e in entries {
            let (proto, port) = e
                .split_once('/')
                .ok_or_else(|| Error::InvalidParameter(format!("bad whitelist entry {e:?}")))?;
            let port: u16 = port
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad whitelist entry {e:?}")))?;
            set.insert((normalize_protocol(proto), port));
        }
        Ok(Self(set))
    }

    pub fn port_token(&self, protocol: &str, port: Option<u16>) -> String {
        match port {
            Some(p) if self.0.contains(&(protocol.to_owned(), p)) => p.to_string(),
            _ => OTHER_PORT.to_owned(),
        }
    }
}

fn normalize_protocol(p: &str) -> String {
    p.trim().to_ascii_uppercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Inbound,
    Outbound,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Inbound => "inbound",
            Direction::Outbound => "outbound",
        }
    }
}

pub fn netflow_layer(protocol: &str, port_token: &str, direction: Direction) -> String {
    format!("{protocol}/{port_token}/{}", direction.as_str())
}

/// What happened to one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    /// Produced this many events.
    Added(u64),
    /// Well-formed but out of scope (e.g. internal-to-internal flow, failed logon).
    Filtered,
}

#[derive(Debug, Clone, Default)]
pub struct NetflowRules {
    pub internal: InternalHosts,
    pub whitelist: PortWhitelist,
}

impl NetflowRules {
    /// Adds the edge for one flow, or filters it when both endpoints are on
    /// the same side of the boundary.
    pub fn apply(&self, graph: &mut MultiplexBipartiteGraph, r: &NetflowRecord) -> Result<RecordOutcome> {
        if r.src_host.is_empty() || r.dst_host.is_empty() {
            return Err(Error::RejectedInput("empty host".into()));
        }
        let src_internal = self.internal.contains(&r.src_host);
        let dst_internal = self.internal.contains(&r.dst_host);
        let (internal, external, direction) = match (src_internal, dst_internal) {
            (true, false) => (&r.src_host, &r.dst_host, Direction::Outbound),
            (false, true) => (&r.dst_host, &r.src_host, Direction::Inbound),
            _ => return Ok(RecordOutcome::Filtered),
        };
        let protocol = normalize_protocol(&r.protocol);
        if protocol.is_empty() {
            return Err(Error::RejectedInput("empty protocol".into()));
        }
        let token = self.whitelist.port_token(&protocol, r.dst_port);
        graph.add_event(internal, external, &netflow_layer(&protocol, &token, direction))?;
        Ok(RecordOutcome::Added(1))
    }
}

/// Builds a graph from netflow records.
pub fn ingest_netflow<I>(records: I, rules: &NetflowRules) -> Result<(MultiplexBipartiteGraph, IngestReport)>
where
    I: IntoIterator<Item = NetflowRecord>,
{
    let mut graph = MultiplexBipartiteGraph::new();
    let mut report = IngestReport::default();
    for r in records {
        report.record(rules.apply(&mut graph, &r));
    }
    report.stats = graph.stats();
    Ok((graph, report))
}

#[derive(Debug, Clone)]
pub struct AuthRules {
    pub accept_event_kind: String,
    pub accept_outcome: String,
}

impl Default for AuthRules {
    fn default() -> Self {
        Self {
            accept_event_kind: "LogOn".into(),
            accept_outcome: "Success".into(),
        }
    }
}

impl AuthRules {
    /// Local logons give one `(DU, DH, LT/AP/Local)` edge; remote ones give
    /// `(SU, SH, LT/AP/From)` and `(DU, DH, LT/AP/To)`.
    pub fn apply(&self, graph: &mut MultiplexBipartiteGraph, r: &AuthRecord) -> Result<RecordOutcome> {
        if !r.event_kind.eq_ignore_ascii_case(&self.accept_event_kind)
            || !r.outcome.eq_ignore_ascii_case(&self.accept_outcome)
        {
            return Ok(RecordOutcome::Filtered);
        }
        let fields = [
            &r.src_user,
            &r.dst_user,
            &r.src_host,
            &r.dst_host,
            &r.logon_type,
            &r.auth_package,
        ];
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::RejectedInput("empty identity field".into()));
        }
        let prefix = format!("{}/{}", r.logon_type, r.auth_package);
        if r.src_host == r.dst_host {
            graph.add_event(&r.dst_user, &r.dst_host, &format!("{prefix}/Local"))?;
            Ok(RecordOutcome::Added(1))
        } else {
            graph.add_event(&r.src_user, &r.src_host, &format!("{prefix}/From"))?;
            graph.add_event(&r.dst_user, &r.dst_host, &format!("{prefix}/To"))?;
            Ok(RecordOutcome::Added(2))
        }
    }
}

pub fn ingest_auth<I>(records: I, rules: &AuthRules) -> Result<(MultiplexBipartiteGraph, IngestReport)>
where
    I: IntoIterator<Item = AuthRecord>,
{
    let mut graph = MultiplexBipartiteGraph::new();
    let mut report = IngestReport::default();
    for r in records {
        report.record(rules.apply(&mut graph, &r));
    }
    report.stats = graph.stats();
    Ok((graph, report))
}

const MAX_WARNINGS: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: u64,
    pub records_skipped: u64,
    pub records_filtered: u64,
    pub events_added: u64,
    pub stats: GraphStats,
    /// The first few skip reasons.
    pub warnings: Vec<String>,
}

impl IngestReport {
    fn record(&mut self, outcome: Result<RecordOutcome>) {
        self.records_read += 1;
        match outcome {
            Ok(RecordOutcome::Added(n)) => self.events_added += n,
            Ok(RecordOutcome::Filtered) => self.records_filtered += 1,
            Err(e) => self.skip(e.to_string()),
        }
    }

    fn skip(&mut self, reason: String) {
        self.records_skipped += 1;
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(reason);
        }
    }
}

/// A CSV column addressed by header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    fn resolve(&self, headers: Option<&csv::StringRecord>) -> Result<usize> {
        match (self, headers) {
            (ColumnRef::Index(i), _) => Ok(*i),
            (ColumnRef::Name(name), Some(h)) => h
                .iter()
                .position(|col| col.trim() == name)
                .ok_or_else(|| Error::MalformedHeader(format!("missing column {name:?}"))),
            (ColumnRef::Name(name), None) => Err(Error::MalformedHeader(format!(
                "column {name:?} referenced by name but the input has no header"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetflowColumns {
    pub src_host: ColumnRef,
    pub dst_host: ColumnRef,
    pub protocol: ColumnRef,
    pub dst_port: ColumnRef,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalSpec {
    #[serde(default)]
    pub cidrs: Vec<String>,
    #[serde(default)]
    pub hosts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetflowSettings {
    pub columns: NetflowColumns,
    #[serde(default)]
    pub internal: InternalSpec,
    #[serde(default = "default_whitelist")]
    pub port_whitelist: Vec<String>,
}

fn default_whitelist() -> Vec<String> {
    DEFAULT_PORT_WHITELIST
        .iter()
        .map(|(p, port)| format!("{p}/{port}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthColumns {
    pub src_user: ColumnRef,
    pub dst_user: ColumnRef,
    pub src_host: ColumnRef,
    pub dst_host: ColumnRef,
    pub logon_type: ColumnRef,
    pub auth_package: ColumnRef,
    pub event_kind: ColumnRef,
    pub outcome: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthSettings {
    pub columns: AuthColumns,
    #[serde(default = "default_event_kind")]
    pub accept_event_kind: String,
    #[serde(default = "default_outcome")]
    pub accept_outcome: String,
}

fn default_event_kind() -> String {
    "LogOn".into()
}

fn default_outcome() -> String {
    "Success".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    Netflow,
    Auth,
}

/// A dataset preset: input layout plus typing rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub name: String,
    pub mode: IngestMode,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    /// Default event-count filter for summaries of this dataset.
    #[serde(default)]
    pub min_events: Option<u64>,
    /// Default rate filter for summaries of this dataset.
    #[serde(default)]
    pub min_rate: Option<f64>,
    #[serde(default)]
    pub netflow: Option<NetflowSettings>,
    #[serde(default)]
    pub auth: Option<AuthSettings>,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl IngestSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("preset: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// One of the shipped presets: `vast-nf` or `lanl-auth`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vast-nf" => Self::from_toml(VAST_PRESET),
            "lanl-auth" => Self::from_toml(LANL_PRESET),
            other => Err(Error::InvalidParameter(format!(
                "unknown preset {other:?} (expected vast-nf or lanl-auth)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidParameter("delimiter must be ASCII".into()));
        }
        match self.mode {
            IngestMode::Netflow => {
                let nf = self.netflow.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("netflow preset needs a [netflow] section".into())
                })?;
                InternalHosts::new(&nf.internal.cidrs, &nf.internal.hosts)?;
                PortWhitelist::parse(&nf.port_whitelist)?;
            }
            IngestMode::Auth => {
                if self.auth.is_none() {
                    return Err(Error::InvalidParameter(
                        "auth preset needs an [auth] section".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Opens a file, transparently decompressing gzip input.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    maybe_gunzip(file)
}

/// Wraps a reader, decompressing it when it starts with the gzip magic bytes.
pub fn maybe_gunzip<R: Read + 'static>(reader: R) -> Result<Box<dyn BufRead>> {
    let mut buffered = BufReader::with_capacity(1 << 16, reader);
    let head = buffered.fill_buf()?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::with_capacity(
            1 << 16,
            MultiGzDecoder::new(buffered),
        )))
    } else {
        Ok(Box::new(buffered))
    }
}

enum Typing {
    Netflow {
        rules: NetflowRules,
        cols: [usize; 4],
    },
    Auth {
        rules: AuthRules,
        cols: [usize; 8],
    },
}

fn field(record: &csv::StringRecord, idx: usize) -> Result<&str> {
    record
        .get(idx)
        .map(str::trim)
        .ok_or_else(|| Error::RejectedInput(format!("record has no column {idx}")))
}

fn parse_port(s: &str) -> Result<Option<u16>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<u16>()
        .map(Some)
        .map_err(|_| Error::RejectedInput(format!("invalid port {s:?}")))
}

/// Streams delimiter-separated records from `input` into `graph`,
/// accumulating counts in `report`. Memory grows with the number of
/// distinct edges only.
pub fn ingest_reader<R: Read>(
    input: R,
    spec: &IngestSpec,
    graph: &mut MultiplexBipartiteGraph,
    report: &mut IngestReport,
) -> Result<()> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .has_headers(spec.has_header)
        .flexible(true)
        .from_reader(input);
    let headers = if spec.has_header {
        match reader.headers() {
            Ok(h) => Some(h.clone()),
            Err(e) => return Err(Error::MalformedHeader(e.to_string())),
        }
    } else {
        None
    };
    let headers = headers.as_ref();
    // an empty input has an empty header row; there is nothing to map
    if headers.is_some_and(|h| h.is_empty()) {
        report.stats = graph.stats();
        return Ok(());
    }

    let typing = match spec.mode {
        IngestMode::Netflow => {
            let nf = spec.netflow.as_ref().expect("validated");
            let c = &nf.columns;
            Typing::Netflow {
                rules: NetflowRules {
                    internal: InternalHosts::new(&nf.internal.cidrs, &nf.internal.hosts)?,
                    whitelist: PortWhitelist::parse(&nf.port_whitelist)?,
                },
                cols: [
                    c.src_host.resolve(headers)?,
                    c.dst_host.resolve(headers)?,
                    c.protocol.resolve(headers)?,
                    c.dst_port.resolve(headers)?,
                ],
            }
        }
        IngestMode::Auth => {
            let a = spec.auth.as_ref().expect("validated");
            let c = &a.columns;
            Typing::Auth {
                rules: AuthRules {
                    accept_event_kind: a.accept_event_kind.clone(),
                    accept_outcome: a.accept_outcome.clone(),
                },
                cols: [
                    c.src_user.resolve(headers)?,
                    c.dst_user.resolve(headers)?,
                    c.src_host.resolve(headers)?,
                    c.dst_host.resolve(headers)?,
                    c.logon_type.resolve(headers)?,
                    c.auth_package.resolve(headers)?,
                    c.event_kind.resolve(headers)?,
                    c.outcome.resolve(headers)?,
                ],
            }
        }
    };

    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                report.records_read += 1;
                report.skip(e.to_string());
                continue;
            }
        }
        if record.len() == 1 && record.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line());
        let outcome = match &typing {
            Typing::Netflow { rules, cols, .. } => (|| {
                let r = NetflowRecord {
                    src_host: field(&record, cols[0])?.to_owned(),
                    dst_host: field(&record, cols[1])?.to_owned(),
                    protocol: field(&record, cols[2])?.to_owned(),
                    dst_port: parse_port(field(&record, cols[3])?)?,
                };
                rules.apply(graph, &r)
            })(),
            Typing::Auth { rules, cols } => (|| {
                let f = |k: usize| field(&record, cols[k]).map(str::to_owned);
                let r = AuthRecord {
                    src_user: f(0)?,
                    dst_user: f(1)?,
                    src_host: f(2)?,
                    dst_host: f(3)?,
                    logon_type: f(4)?,
                    auth_package: f(5)?,
                    event_kind: f(6)?,
                    outcome: f(7)?,
                };
                rules.apply(graph, &r)
            })(),
        };
        report.record(outcome.map_err(|e| Error::parse(line as usize, e.to_string())));
    }
    report.stats = graph.stats();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vast_rules() -> NetflowRules {
        NetflowRules {
            internal: InternalHosts::new(&["172.0.0.0/8".into()], &[]).unwrap(),
            whitelist: PortWhitelist::default(),
        }
    }

    fn flow(src: &str, dst: &str, proto: &str, port: Option<u16>) -> NetflowRecord {
        NetflowRecord {
            src_host: src.into(),
            dst_host: dst.into(),
            protocol: proto.into(),
            dst_port: port,
        }
    }

    #[test]
    fn outbound_whitelisted_port() {
        let (g, _) = ingest_netflow([flow("172.10.0.4", "10.0.3.77", "TCP", Some(80))], &vast_rules()).unwrap();
        assert_eq!(g.layers().labels(), ["TCP/80/outbound"]);
        assert_eq!(g.top().names(), ["172.10.0.4"]);
        assert_eq!(g.bottom().names(), ["10.0.3.77"]);
    }

    #[test]
    fn inbound_unlisted_port_maps_to_other() {
        let (g, _) = ingest_netflow([flow("10.9.81.5", "172.20.1.1", "tcp", Some(8443))], &vast_rules()).unwrap();
        assert_eq!(g.layers().labels(), ["TCP/Other/inbound"]);
        assert_eq!(g.top().names(), ["172.20.1.1"]);
    }

    #[test]
    fn udp_and_icmp_never_use_tcp_whitelist() {
        let (g, _) = ingest_netflow(
            [
                flow("172.1.1.1", "10.0.0.1", "UDP", Some(53)),
                flow("10.0.0.1", "172.1.1.1", "ICMP", None),
            ],
            &vast_rules(),
        )
        .unwrap();
        assert_eq!(g.layers().labels(), ["UDP/Other/outbound", "ICMP/Other/inbound"]);
    }

    #[test]
    fn same_side_flows_are_filtered() {
        let (g, report) = ingest_netflow(
            [
                flow("172.1.1.1", "172.1.1.2", "TCP", Some(80)),
                flow("10.0.0.1", "10.0.0.2", "TCP", Some(80)),
                flow("172.1.1.1", "10.0.0.2", "TCP", Some(80)),
                flow("172.1.1.1", "10.0.0.2", "TCP", Some(80)),
            ],
            &vast_rules(),
        )
        .unwrap();
        assert_eq!(report.records_filtered, 2);
        assert_eq!(g.stats().as_tuple(), (1, 1, 1, 1, 2));
    }

    fn logon(su: &str, du: &str, sh: &str, dh: &str) -> AuthRecord {
        AuthRecord {
            src_user: su.into(),
            dst_user: du.into(),
            src_host: sh.into(),
            dst_host: dh.into(),
            logon_type: "Service".into(),
            auth_package: "Negotiate".into(),
            outcome: "Success".into(),
            event_kind: "LogOn".into(),
        }
    }

    #[test]
    fn local_logon_creates_one_edge() {
        let (g, report) = ingest_auth([logon("U7", "U7", "C101", "C101")], &AuthRules::default()).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges.len(), 1);
        assert_eq!(g.top().name(0), "U7");
        assert_eq!(g.bottom().name(0), "C101");
        assert_eq!(g.layers().label(0), "Service/Negotiate/Local");
        assert_eq!(report.events_added, 1);
    }

    #[test]
    fn remote_logon_creates_from_and_to_edges() {
        let (g, _) = ingest_auth([logon("U1", "U2", "C1", "C2")], &AuthRules::default()).unwrap();
        assert_eq!(g.stats().as_tuple(), (2, 2, 2, 2, 2));
        let u1 = g.top().index_of("U1").unwrap();
        let c1 = g.bottom().index_of("C1").unwrap();
        let from = g.layers().index_of("Service/Negotiate/From").unwrap();
        assert_eq!(g.multiplicity(u1, c1, from), 1);
        let u2 = g.top().index_of("U2").unwrap();
        let c2 = g.bottom().index_of("C2").unwrap();
        let to = g.layers().index_of("Service/Negotiate/To").unwrap();
        assert_eq!(g.multiplicity(u2, c2, to), 1);
    }

    #[test]
    fn failed_and_logoff_events_are_filtered() {
        let mut failed = logon("U1", "U1", "C1", "C1");
        failed.outcome = "Fail".into();
        let mut logoff = logon("U1", "U1", "C1", "C1");
        logoff.event_kind = "LogOff".into();
        let (g, report) = ingest_auth([failed, logoff], &AuthRules::default()).unwrap();
        assert_eq!(report.records_filtered, 2);
        assert_eq!(g.stats().events, 0);
    }

    #[test]
    fn cidr_membership() {
        let c: Cidr = "172.16.0.0/12".parse().unwrap();
        assert!(c.contains(&"172.31.255.1".parse().unwrap()));
        assert!(!c.contains(&"172.32.0.1".parse().unwrap()));
        let all: Cidr = "0.0.0.0/0".parse().unwrap();
        assert!(all.contains(&"8.8.8.8".parse().unwrap()));
        let v6: Cidr = "fd00::/8".parse().unwrap();
        assert!(v6.contains(&"fd12::1".parse().unwrap()));
        assert!(!v6.contains(&"10.0.0.1".parse().unwrap()));
        assert!("10.0.0.0/33".parse::<Cidr>().is_err());
        let hosts = InternalHosts::new(&[], &["C17693".into()]).unwrap();
        assert!(hosts.contains("C17693"));
        assert!(!hosts.contains("C1"));
    }

    #[test]
    fn presets_parse() {
        let vast = IngestSpec::preset("vast-nf").unwrap();
        assert_eq!(vast.mode, IngestMode::Netflow);
        assert_eq!(vast.min_events, Some(40));
        assert_eq!(
            PortWhitelist::parse(&vast.netflow.unwrap().port_whitelist).unwrap(),
            PortWhitelist::default()
        );
        let lanl = IngestSpec::preset("lanl-auth").unwrap();
        assert!(!lanl.has_header);
        assert_eq!(lanl.min_rate, Some(0.7));
        assert!(IngestSpec::preset("nope").is_err());
    }

    #[test]
    fn missing_header_column_is_fatal() {
        let spec = IngestSpec::preset("vast-nf").unwrap();
        let csv = "a,b,c\n1,2,3\n";
        let mut g = MultiplexBipartiteGraph::new();
        let mut report = IngestReport::default();
        let err = ingest_reader(csv.as_bytes(), &spec, &mut g, &mut report).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn bad_rows_are_skipped_and_counted() {
        let spec = IngestSpec::preset("vast-nf").unwrap();
        let csv = "\
firstSeenSrcIp,firstSeenDestIp,ipLayerProtocolCode,firstSeenDestPort
172.10.0.1,10.0.0.9,TCP,80
172.10.0.1,10.0.0.9,TCP,notaport
172.10.0.1,10.0.0.9,TCP,70000
,10.0.0.9,TCP,80
172.10.0.1
10.0.0.9,172.10.0.2,UDP,
";
        let mut g = MultiplexBipartiteGraph::new();
        let mut report = IngestReport::default();
        ingest_reader(csv.as_bytes(), &spec, &mut g, &mut report).unwrap();
        assert_eq!(report.records_read, 6);
        assert_eq!(report.records_skipped, 4);
        assert_eq!(report.events_added, 2);
        assert_eq!(g.layers().labels(), ["TCP/80/outbound", "UDP/Other/inbound"]);
        assert!(report.warnings[0].contains("line 3"), "{:?}", report.warnings);
    }

    #[test]
    fn gzip_input_is_detected() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let text = b"1,U1@D,U1@D,C1,C1,Kerberos,Interactive,LogOn,Success\n";
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(text).unwrap();
        let gz = enc.finish().unwrap();
        let spec = IngestSpec::preset("lanl-auth").unwrap();
        let mut g = MultiplexBipartiteGraph::new();
        let mut report = IngestReport::default();
        let reader = maybe_gunzip(std::io::Cursor::new(gz)).unwrap();
        ingest_reader(reader, &spec, &mut g, &mut report).unwrap();
        assert_eq!(g.layers().labels(), ["Interactive/Kerberos/Local"]);
        assert_eq!(g.top().names(), ["U1@D"]);
    }
}
