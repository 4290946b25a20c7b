//! Packet behaviour features.
//!
//! A [`FeatureVector`] is a dense array of `f64` aligned to a
//! [`FeatureCatalogue`]. Booleans encode as 0/1, categoricals as their index
//! in the rule's vocabulary (0 is the reserved "absent" category), and
//! numerics whose layer is missing as [`ABSENT_NUMERIC`].

mod catalogue;
mod entropy;
mod port;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalogue::{
    FeatureCatalogue, FeatureEntry, FeatureKind, Layer, Rule, TcpFlagBit, TcpOption, ABSENT_CATEGORY, ABSENT_NUMERIC,
    DEFAULT_CATALOGUE_VERSION,
};
pub use entropy::payload_entropy;
pub use port::{classify_port, PortClass};

use crate::decode::{AppMarker, LayerStack, Transport};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("port {0} is outside 0..=65535")]
    OutOfRange(i64),
    #[error("invalid catalogue: {0}")]
    Catalogue(String),
    #[error("invalid value {value:?} for feature {feature}")]
    InvalidValue { feature: String, value: String },
}

/// Protocol names in precedence order, highest first.
pub const PROTOCOL_LABELS: [&str; 14] =
    ["DNS", "BOOTP", "HTTP", "HTTPS", "NTP", "SSDP", "MDNS", "EAPOL", "TCP", "UDP", "ICMP", "ARP", "IP", "Ethernet"];

const MARKER_PRECEDENCE: [AppMarker; 8] = [
    AppMarker::Dns,
    AppMarker::Bootp,
    AppMarker::Http,
    AppMarker::Https,
    AppMarker::Ntp,
    AppMarker::Ssdp,
    AppMarker::Mdns,
    AppMarker::Eapol,
];

/// Name of the highest decoded or marked protocol in the stack.
///
/// Returns [`ABSENT_CATEGORY`] when nothing at all was decoded (non-Ethernet
/// link types).
pub fn protocol_label(stack: &LayerStack) -> &'static str {
    if let Some(m) = MARKER_PRECEDENCE.iter().find(|m| stack.markers.contains(**m)) {
        return m.name();
    }
    match stack.transport {
        Some(Transport::Tcp(_)) => "TCP",
        Some(Transport::Udp(_)) => "UDP",
        Some(Transport::Icmp(_)) => "ICMP",
        None if stack.arp.is_some() => "ARP",
        None if stack.ip.is_some() => "IP",
        None if stack.ethernet.is_some() => "Ethernet",
        None => ABSENT_CATEGORY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn extract_features(stack: &LayerStack, catalogue: &FeatureCatalogue) -> FeatureVector {
    FeatureVector(catalogue.entries().iter().map(|e| e.rule.eval(stack)).collect())
}
