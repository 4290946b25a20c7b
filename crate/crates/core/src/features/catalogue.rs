//! Feature catalogues: ordered, typed feature definitions.
//!
//! A catalogue is plain text. The first meaningful line is
//! `version=<string>`; every other line is `name,kind,rule_id`. Blank lines
//! and lines starting with `#` are ignored. Rules come from a closed table
//! ([`Rule`]) and none of them can see addresses, IP ID, TCP sequence or
//! acknowledgement numbers, or raw port numbers.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{payload_entropy, protocol_label, FeatureError, PortClass, PROTOCOL_LABELS};
use crate::decode::{AppMarker, LayerStack};

pub const DEFAULT_CATALOGUE_VERSION: &str = "iotdevid-default-v1";
const DEFAULT_CATALOGUE_TEXT: &str = include_str!("../../data/catalogue-default-v1.txt");

/// Value used for numeric features whose layer is absent.
pub const ABSENT_NUMERIC: f64 = -1.0;
/// Reserved category name for categorical features with nothing to report.
pub const ABSENT_CATEGORY: &str = "absent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Boolean,
    Categorical,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Boolean => "boolean",
            FeatureKind::Categorical => "categorical",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(FeatureKind::Numeric),
            "boolean" => Ok(FeatureKind::Boolean),
            "categorical" => Ok(FeatureKind::Categorical),
            other => Err(FeatureError::Catalogue(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TcpFlagBit {
    Fin,
    Syn,
    Rst,
    Psh,
    Ack,
    Urg,
    Ece,
    Cwr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TcpOption {
    Mss,
    WindowScale,
    SackPermitted,
    Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Ethernet,
    Arp,
    Ip,
    Tcp,
    Udp,
    Icmp,
}

/// Extraction rules. Each reads only [`LayerStack`] header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    FrameSize,
    Ethertype,
    IsIpv6,
    ArpOpcode,
    ArpHwType,
    ArpProtoType,
    IpVersion,
    IpHeaderLen,
    IpTos,
    IpTotalLen,
    IpFlags,
    IpDontFragment,
    IpMoreFragments,
    IpFragOffset,
    IpTtl,
    IpProtocol,
    IpHasOptions,
    TcpDataOffset,
    TcpWindow,
    TcpUrgentPtr,
    TcpFlag(TcpFlagBit),
    TcpOption(TcpOption),
    UdpLength,
    IcmpType,
    IcmpCode,
    HasLayer(Layer),
    Marker(AppMarker),
    PayloadBytes,
    PayloadEntropy,
    Protocol,
    SrcPortClass,
    DstPortClass,
}

const FLAG_BITS: [(TcpFlagBit, &str); 8] = [
    (TcpFlagBit::Fin, "fin"),
    (TcpFlagBit::Syn, "syn"),
    (TcpFlagBit::Rst, "rst"),
    (TcpFlagBit::Psh, "psh"),
    (TcpFlagBit::Ack, "ack"),
    (TcpFlagBit::Urg, "urg"),
    (TcpFlagBit::Ece, "ece"),
    (TcpFlagBit::Cwr, "cwr"),
];

const OPTIONS: [(TcpOption, &str); 4] = [
    (TcpOption::Mss, "mss"),
    (TcpOption::WindowScale, "window_scale"),
    (TcpOption::SackPermitted, "sack_permitted"),
    (TcpOption::Timestamp, "timestamp"),
];

const LAYERS: [(Layer, &str); 6] = [
    (Layer::Ethernet, "ethernet"),
    (Layer::Arp, "arp"),
    (Layer::Ip, "ip"),
    (Layer::Tcp, "tcp"),
    (Layer::Udp, "udp"),
    (Layer::Icmp, "icmp"),
];

impl Rule {
    /// Every rule in the table.
    pub fn all() -> Vec<Rule> {
        let mut rules = vec![
            Rule::FrameSize,
            Rule::Ethertype,
            Rule::IsIpv6,
            Rule::ArpOpcode,
            Rule::ArpHwType,
            Rule::ArpProtoType,
            Rule::IpVersion,
            Rule::IpHeaderLen,
            Rule::IpTos,
            Rule::IpTotalLen,
            Rule::IpFlags,
            Rule::IpDontFragment,
            Rule::IpMoreFragments,
            Rule::IpFragOffset,
            Rule::IpTtl,
            Rule::IpProtocol,
            Rule::IpHasOptions,
            Rule::TcpDataOffset,
            Rule::TcpWindow,
            Rule::TcpUrgentPtr,
        ];
        rules.extend(FLAG_BITS.iter().map(|(b, _)| Rule::TcpFlag(*b)));
        rules.extend(OPTIONS.iter().map(|(o, _)| Rule::TcpOption(*o)));
        rules.extend([Rule::UdpLength, Rule::IcmpType, Rule::IcmpCode]);
        rules.extend(LAYERS.iter().map(|(l, _)| Rule::HasLayer(*l)));
        rules.extend(AppMarker::ALL.iter().map(|m| Rule::Marker(*m)));
        rules.extend([Rule::PayloadBytes, Rule::PayloadEntropy, Rule::Protocol, Rule::SrcPortClass, Rule::DstPortClass]);
        rules
    }

    pub fn id(&self) -> String {
        let fixed = match self {
            Rule::FrameSize => "eth.frame_size",
            Rule::Ethertype => "eth.ethertype",
            Rule::IsIpv6 => "eth.is_ipv6",
            Rule::ArpOpcode => "arp.opcode",
            Rule::ArpHwType => "arp.hw_type",
            Rule::ArpProtoType => "arp.proto_type",
            Rule::IpVersion => "ip.version",
            Rule::IpHeaderLen => "ip.header_len",
            Rule::IpTos => "ip.tos",
            Rule::IpTotalLen => "ip.total_len",
            Rule::IpFlags => "ip.flags",
            Rule::IpDontFragment => "ip.df",
            Rule::IpMoreFragments => "ip.mf",
            Rule::IpFragOffset => "ip.frag_offset",
            Rule::IpTtl => "ip.ttl",
            Rule::IpProtocol => "ip.protocol",
            Rule::IpHasOptions => "ip.has_options",
            Rule::TcpDataOffset => "tcp.data_offset",
            Rule::TcpWindow => "tcp.window",
            Rule::TcpUrgentPtr => "tcp.urgent_ptr",
            Rule::UdpLength => "udp.length",
            Rule::IcmpType => "icmp.type",
            Rule::IcmpCode => "icmp.code",
            Rule::PayloadBytes => "payload.bytes",
            Rule::PayloadEntropy => "payload.entropy",
            Rule::Protocol => "protocol",
            Rule::SrcPortClass => "port.src_class",
            Rule::DstPortClass => "port.dst_class",
            Rule::TcpFlag(b) => {
                let name = FLAG_BITS.iter().find(|(x, _)| x == b).map(|(_, n)| *n).unwrap_or("?");
                return format!("tcp.flag.{name}");
            }
            Rule::TcpOption(o) => {
                let name = OPTIONS.iter().find(|(x, _)| x == o).map(|(_, n)| *n).unwrap_or("?");
                return format!("tcp.opt.{name}");
            }
            Rule::HasLayer(l) => {
                let name = LAYERS.iter().find(|(x, _)| x == l).map(|(_, n)| *n).unwrap_or("?");
                return format!("layer.{name}");
            }
            Rule::Marker(m) => return format!("marker.{}", m.name().to_ascii_lowercase()),
        };
        fixed.to_string()
    }

    pub fn from_id(id: &str) -> Option<Rule> {
        Rule::all().into_iter().find(|r| r.id() == id)
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Rule::IsIpv6
            | Rule::IpDontFragment
            | Rule::IpMoreFragments
            | Rule::IpHasOptions
            | Rule::TcpFlag(_)
            | Rule::TcpOption(_)
            | Rule::HasLayer(_)
            | Rule::Marker(_) => FeatureKind::Boolean,
            Rule::Protocol | Rule::SrcPortClass | Rule::DstPortClass => FeatureKind::Categorical,
            _ => FeatureKind::Numeric,
        }
    }

    /// Category names for categorical rules; index = encoded value.
    pub fn vocabulary(&self) -> Option<Vec<&'static str>> {
        match self {
            Rule::Protocol => Some(std::iter::once(ABSENT_CATEGORY).chain(PROTOCOL_LABELS.iter().copied()).collect()),
            Rule::SrcPortClass | Rule::DstPortClass => {
                Some(std::iter::once(ABSENT_CATEGORY).chain(PortClass::ALL.iter().map(|c| c.name())).collect())
            }
            _ => None,
        }
    }

    /// Encoded value of this rule on `stack`.
    pub fn eval(&self, stack: &LayerStack) -> f64 {
        fn num<T: Into<f64>>(v: Option<T>) -> f64 {
            v.map_or(ABSENT_NUMERIC, Into::into)
        }
        fn flag(b: bool) -> f64 {
            if b {
                1.0
            } else {
                0.0
            }
        }
        let eth = stack.ethernet.as_ref();
        let arp = stack.arp.as_ref();
        let ip = stack.ip.as_ref();
        let tcp = stack.tcp();
        match self {
            Rule::FrameSize => num(eth.map(|e| e.frame_size as f64)),
            Rule::Ethertype => num(eth.map(|e| e.ethertype)),
            Rule::IsIpv6 => flag(eth.is_some_and(|e| e.ethertype == crate::decode::ETHERTYPE_IPV6)),
            Rule::ArpOpcode => num(arp.map(|a| a.opcode)),
            Rule::ArpHwType => num(arp.map(|a| a.hw_type)),
            Rule::ArpProtoType => num(arp.map(|a| a.proto_type)),
            Rule::IpVersion => num(ip.map(|i| i.version)),
            Rule::IpHeaderLen => num(ip.map(|i| i.header_len)),
            Rule::IpTos => num(ip.map(|i| i.tos)),
            Rule::IpTotalLen => num(ip.map(|i| i.total_len)),
            Rule::IpFlags => num(ip.map(|i| i.flags)),
            Rule::IpDontFragment => flag(ip.is_some_and(|i| i.dont_fragment())),
            Rule::IpMoreFragments => flag(ip.is_some_and(|i| i.more_fragments())),
            Rule::IpFragOffset => num(ip.map(|i| i.frag_offset)),
            Rule::IpTtl => num(ip.map(|i| i.ttl)),
            Rule::IpProtocol => num(ip.map(|i| i.protocol_number)),
            Rule::IpHasOptions => flag(ip.is_some_and(|i| i.header_len > 5)),
            Rule::TcpDataOffset => num(tcp.map(|t| t.data_offset)),
            Rule::TcpWindow => num(tcp.map(|t| t.window)),
            Rule::TcpUrgentPtr => num(tcp.map(|t| t.urgent_ptr)),
            Rule::TcpFlag(bit) => flag(tcp.is_some_and(|t| {
                let f = t.flags;
                match bit {
                    TcpFlagBit::Fin => f.fin,
                    TcpFlagBit::Syn => f.syn,
                    TcpFlagBit::Rst => f.rst,
                    TcpFlagBit::Psh => f.psh,
                    TcpFlagBit::Ack => f.ack,
                    TcpFlagBit::Urg => f.urg,
                    TcpFlagBit::Ece => f.ece,
                    TcpFlagBit::Cwr => f.cwr,
                }
            })),
            Rule::TcpOption(opt) => flag(tcp.is_some_and(|t| {
                let o = t.options;
                match opt {
                    TcpOption::Mss => o.mss,
                    TcpOption::WindowScale => o.window_scale,
                    TcpOption::SackPermitted => o.sack_permitted,
                    TcpOption::Timestamp => o.timestamp,
                }
            })),
            Rule::UdpLength => num(stack.udp().map(|u| u.length)),
            Rule::IcmpType => num(stack.icmp().map(|i| i.icmp_type)),
            Rule::IcmpCode => num(stack.icmp().map(|i| i.code)),
            Rule::HasLayer(layer) => flag(match layer {
                Layer::Ethernet => eth.is_some(),
                Layer::Arp => arp.is_some(),
                Layer::Ip => ip.is_some(),
                Layer::Tcp => tcp.is_some(),
                Layer::Udp => stack.udp().is_some(),
                Layer::Icmp => stack.icmp().is_some(),
            }),
            Rule::Marker(m) => flag(stack.markers.contains(*m)),
            Rule::PayloadBytes => stack.payload.len() as f64,
            Rule::PayloadEntropy => payload_entropy(&stack.payload),
            Rule::Protocol => {
                let label = protocol_label(stack);
                PROTOCOL_LABELS.iter().position(|l| *l == label).map_or(0.0, |i| (i + 1) as f64)
            }
            Rule::SrcPortClass => port_code(PortClass::of(stack.src_port())),
            Rule::DstPortClass => port_code(PortClass::of(stack.dst_port())),
        }
    }
}

fn port_code(class: PortClass) -> f64 {
    (1 + PortClass::ALL.iter().position(|c| *c == class).expect("all classes listed")) as f64
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub name: String,
    pub kind: FeatureKind,
    pub rule: Rule,
}

/// Ordered feature definitions. Column order of every dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalogue {
    version: String,
    entries: Vec<FeatureEntry>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl FeatureCatalogue {
    pub fn new(version: impl Into<String>, entries: Vec<FeatureEntry>) -> Result<Self, FeatureError> {
        let version = version.into();
        if version.trim().is_empty() {
            return Err(FeatureError::Catalogue("empty catalogue version".into()));
        }
        if entries.is_empty() {
            return Err(FeatureError::Catalogue("catalogue has no entries".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !valid_name(&e.name) {
                return Err(FeatureError::Catalogue(format!("invalid feature name {:?}", e.name)));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(FeatureError::Catalogue(format!("duplicate feature name {:?}", e.name)));
            }
            if e.kind != e.rule.kind() {
                return Err(FeatureError::Catalogue(format!(
                    "feature {:?} declared {} but rule {} is {}",
                    e.name,
                    e.kind.as_str(),
                    e.rule,
                    e.rule.kind().as_str()
                )));
            }
        }
        Ok(FeatureCatalogue { version, entries })
    }

    /// The shipped catalogue.
    pub fn default_catalogue() -> Self {
        DEFAULT_CATALOGUE_TEXT.parse().expect("shipped catalogue is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| FeatureError::Catalogue(format!("{}: {e}", path.as_ref().display())))?;
        text.parse()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Category dictionaries of every categorical feature, keyed by name.
    pub fn encodings(&self) -> Vec<(String, Vec<String>)> {
        self.entries
            .iter()
            .filter_map(|e| e.rule.vocabulary().map(|v| (e.name.clone(), v.into_iter().map(String::from).collect())))
            .collect()
    }

    /// Text form of an encoded value, as written to dataset files.
    pub fn format_value(&self, index: usize, value: f64) -> String {
        let entry = &self.entries[index];
        match entry.kind {
            FeatureKind::Numeric => format!("{value}"),
            FeatureKind::Boolean => if value != 0.0 { "true" } else { "false" }.to_string(),
            FeatureKind::Categorical => {
                let vocab = entry.rule.vocabulary().unwrap_or_default();
                vocab.get(value as usize).copied().unwrap_or(ABSENT_CATEGORY).to_string()
            }
        }
    }

    pub fn parse_value(&self, index: usize, text: &str) -> Result<f64, FeatureError> {
        let entry = &self.entries[index];
        let bad = || FeatureError::InvalidValue { feature: entry.name.clone(), value: text.to_string() };
        match entry.kind {
            FeatureKind::Numeric => text.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad),
            FeatureKind::Boolean => match text {
                "true" | "1" => Ok(1.0),
                "false" | "0" => Ok(0.0),
                _ => Err(bad()),
            },
            FeatureKind::Categorical => {
                let vocab = entry.rule.vocabulary().unwrap_or_default();
                vocab.iter().position(|c| *c == text).map(|i| i as f64).ok_or_else(bad)
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("version={}\n", self.version);
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.name, e.kind.as_str(), e.rule));
        }
        out
    }
}

impl FromStr for FeatureCatalogue {
    type Err = FeatureError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut version = None;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("version=") {
                if version.is_some() || !entries.is_empty() {
                    return Err(FeatureError::Catalogue(format!("line {}: misplaced version line", lineno + 1)));
                }
                version = Some(v.trim().to_string());
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [name, kind, rule_id] = fields[..] else {
                return Err(FeatureError::Catalogue(format!("line {}: expected name,kind,rule_id", lineno + 1)));
            };
            let rule = Rule::from_id(rule_id)
                .ok_or_else(|| FeatureError::Catalogue(format!("line {}: unknown rule {rule_id:?}", lineno + 1)))?;
            entries.push(FeatureEntry { name: name.to_string(), kind: kind.parse()?, rule });
        }
        let version = version.ok_or_else(|| FeatureError::Catalogue("missing version= line".into()))?;
        FeatureCatalogue::new(version, entries)
    }
}
