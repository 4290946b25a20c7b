use std::fmt;

use super::FeatureError;

/// Service bucket for a transport port.
///
/// Exact service ports win over the numeric ranges, so port 53 is `Dns53`
/// and never `WellKnown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortClass {
    NoPort,
    Reserved0,
    Dns53,
    BootpServer67,
    BootpClient68,
    Http80,
    Ntp123,
    Https443,
    Ssdp1900,
    Mdns5353,
    Antlr49153,
    WellKnown,
    Registered,
    Dynamic,
}

impl PortClass {
    pub const ALL: [PortClass; 14] = [
        PortClass::NoPort,
        PortClass::Reserved0,
        PortClass::Dns53,
        PortClass::BootpServer67,
        PortClass::BootpClient68,
        PortClass::Http80,
        PortClass::Ntp123,
        PortClass::Https443,
        PortClass::Ssdp1900,
        PortClass::Mdns5353,
        PortClass::Antlr49153,
        PortClass::WellKnown,
        PortClass::Registered,
        PortClass::Dynamic,
    ];

    pub fn of(port: Option<u16>) -> PortClass {
        let Some(port) = port else { return PortClass::NoPort };
        match port {
            0 => PortClass::Reserved0,
            53 => PortClass::Dns53,
            67 => PortClass::BootpServer67,
            68 => PortClass::BootpClient68,
            80 => PortClass::Http80,
            123 => PortClass::Ntp123,
            443 => PortClass::Https443,
            1900 => PortClass::Ssdp1900,
            5353 => PortClass::Mdns5353,
            49153 => PortClass::Antlr49153,
            1..=1023 => PortClass::WellKnown,
            1024..=49151 => PortClass::Registered,
            49152..=65535 => PortClass::Dynamic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PortClass::NoPort => "NoPort",
            PortClass::Reserved0 => "Reserved0",
            PortClass::Dns53 => "DNS53",
            PortClass::BootpServer67 => "BOOTPServer67",
            PortClass::BootpClient68 => "BOOTPClient68",
            PortClass::Http80 => "HTTP80",
            PortClass::Ntp123 => "NTP123",
            PortClass::Https443 => "HTTPS443",
            PortClass::Ssdp1900 => "SSDP1900",
            PortClass::Mdns5353 => "MDNS5353",
            PortClass::Antlr49153 => "ANTLR49153",
            PortClass::WellKnown => "WellKnown",
            PortClass::Registered => "Registered",
            PortClass::Dynamic => "Dynamic",
        }
    }
}

impl fmt::Display for PortClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies an optional port given as a plain integer.
pub fn classify_port(port: Option<i64>) -> Result<PortClass, FeatureError> {
    match port {
        None => Ok(PortClass::NoPort),
        Some(p) => u16::try_from(p).map(|p| PortClass::of(Some(p))).map_err(|_| FeatureError::OutOfRange(p)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_examples() {
        assert_eq!(classify_port(Some(53)).unwrap(), PortClass::Dns53);
        assert_eq!(classify_port(None).unwrap(), PortClass::NoPort);
        assert_eq!(classify_port(Some(49153)).unwrap(), PortClass::Antlr49153);
        assert_eq!(classify_port(Some(22)).unwrap(), PortClass::WellKnown);
        assert_eq!(classify_port(Some(8080)).unwrap(), PortClass::Registered);
        assert_eq!(classify_port(Some(60000)).unwrap(), PortClass::Dynamic);
        assert_eq!(classify_port(Some(0)).unwrap(), PortClass::Reserved0);
    }

    #[test]
    fn range_boundaries() {
        assert_eq!(PortClass::of(Some(1)), PortClass::WellKnown);
        assert_eq!(PortClass::of(Some(1023)), PortClass::WellKnown);
        assert_eq!(PortClass::of(Some(1024)), PortClass::Registered);
        assert_eq!(PortClass::of(Some(49151)), PortClass::Registered);
        assert_eq!(PortClass::of(Some(49152)), PortClass::Dynamic);
        assert_eq!(PortClass::of(Some(65535)), PortClass::Dynamic);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(classify_port(Some(65536)), Err(FeatureError::OutOfRange(65536))));
        assert!(matches!(classify_port(Some(-1)), Err(FeatureError::OutOfRange(-1))));
    }

    #[test]
    fn fourteen_classes_partition_every_input() {
        let mut seen = std::collections::BTreeMap::new();
        for p in std::iter::once(None).chain((0..=65535u16).map(Some)) {
            *seen.entry(PortClass::of(p)).or_insert(0usize) += 1;
        }
        assert_eq!(seen.len(), 14);
        assert_eq!(seen.values().sum::<usize>(), 65537);
        // 53, 67, 68, 80, 123 and 443 have their own classes.
        assert_eq!(seen[&PortClass::WellKnown], 1023 - 6);
        assert_eq!(seen[&PortClass::Registered], 49151 - 1024 + 1 - 2);
        assert_eq!(seen[&PortClass::Dynamic], 65535 - 49152 + 1 - 1);
    }
}
