//! Per-packet protocol layer decoding.
//!
//! Decoding never fails: when a header is too short or inconsistent, that
//! layer is left absent and descent stops, with everything from that point
//! kept as payload. Every packet must still be scored by the classifier.

use std::fmt;

use crate::mac::MacAddr;
use crate::pcap::{RawPacketView, LINKTYPE_ETHERNET};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const ETHERTYPE_IPV6: u16 = 0x86dd;
pub const ETHERTYPE_EAPOL: u16 = 0x888e;

pub const IPPROTO_ICMP: u8 = 1;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetHeader {
    pub dst_mac: MacAddr,
    pub src_mac: MacAddr,
    /// Inner ethertype when an 802.1Q tag is present. Values below 0x0600
    /// are 802.3 length fields.
    pub ethertype: u16,
    pub vlan_id: Option<u16>,
    /// Whole frame length in octets.
    pub frame_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArpHeader {
    pub hw_type: u16,
    pub proto_type: u16,
    pub opcode: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub version: u8,
    /// IHL field, in 32-bit words.
    pub header_len: u8,
    pub tos: u8,
    pub total_len: u16,
    /// Reserved, DF, MF (most significant first) as a 3-bit value.
    pub flags: u8,
    pub frag_offset: u16,
    pub ttl: u8,
    pub protocol_number: u8,
}

impl Ipv4Header {
    pub fn dont_fragment(&self) -> bool {
        self.flags & 0b010 != 0
    }

    pub fn more_fragments(&self) -> bool {
        self.flags & 0b001 != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags {
    pub fin: bool,
    pub syn: bool,
    pub rst: bool,
    pub psh: bool,
    pub ack: bool,
    pub urg: bool,
    pub ece: bool,
    pub cwr: bool,
}

impl TcpFlags {
    pub fn from_byte(b: u8) -> Self {
        TcpFlags {
            fin: b & 0x01 != 0,
            syn: b & 0x02 != 0,
            rst: b & 0x04 != 0,
            psh: b & 0x08 != 0,
            ack: b & 0x10 != 0,
            urg: b & 0x20 != 0,
            ece: b & 0x40 != 0,
            cwr: b & 0x80 != 0,
        }
    }

    pub fn to_byte(self) -> u8 {
        [self.fin, self.syn, self.rst, self.psh, self.ack, self.urg, self.ece, self.cwr]
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &set)| acc | (u8::from(set) << i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpOptionPresence {
    pub mss: bool,
    pub window_scale: bool,
    pub sack_permitted: bool,
    pub timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    /// Data offset field, in 32-bit words.
    pub data_offset: u8,
    pub flags: TcpFlags,
    pub window: u16,
    pub urgent_ptr: u16,
    pub options: TcpOptionPresence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub length: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IcmpHeader {
    pub icmp_type: u8,
    pub code: u8,
}

/// The (single) transport layer above IPv4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Tcp(TcpHeader),
    Udp(UdpHeader),
    Icmp(IcmpHeader),
}

impl Transport {
    pub fn ports(&self) -> Option<(u16, u16)> {
        match self {
            Transport::Tcp(t) => Some((t.src_port, t.dst_port)),
            Transport::Udp(u) => Some((u.src_port, u.dst_port)),
            Transport::Icmp(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AppMarker {
    Dns,
    Bootp,
    Http,
    Https,
    Ntp,
    Ssdp,
    Mdns,
    Tls,
    Eapol,
    Llc,
}

impl AppMarker {
    pub const ALL: [AppMarker; 10] = [
        AppMarker::Dns,
        AppMarker::Bootp,
        AppMarker::Http,
        AppMarker::Https,
        AppMarker::Ntp,
        AppMarker::Ssdp,
        AppMarker::Mdns,
        AppMarker::Tls,
        AppMarker::Eapol,
        AppMarker::Llc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AppMarker::Dns => "DNS",
            AppMarker::Bootp => "BOOTP",
            AppMarker::Http => "HTTP",
            AppMarker::Https => "HTTPS",
            AppMarker::Ntp => "NTP",
            AppMarker::Ssdp => "SSDP",
            AppMarker::Mdns => "MDNS",
            AppMarker::Tls => "TLS",
            AppMarker::Eapol => "EAPOL",
            AppMarker::Llc => "LLC",
        }
    }

    /// Well-known service port membership.
    pub fn for_port(port: u16) -> Option<AppMarker> {
        match port {
            53 => Some(AppMarker::Dns),
            67 | 68 => Some(AppMarker::Bootp),
            80 => Some(AppMarker::Http),
            443 => Some(AppMarker::Https),
            123 => Some(AppMarker::Ntp),
            1900 => Some(AppMarker::Ssdp),
            5353 => Some(AppMarker::Mdns),
            _ => None,
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

impl fmt::Display for AppMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct AppMarkers(u16);

impl AppMarkers {
    pub fn insert(&mut self, m: AppMarker) {
        self.0 |= m.bit();
    }

    pub fn contains(&self, m: AppMarker) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = AppMarker> + '_ {
        AppMarker::ALL.into_iter().filter(|m| self.contains(*m))
    }
}

impl FromIterator<AppMarker> for AppMarkers {
    fn from_iter<I: IntoIterator<Item = AppMarker>>(iter: I) -> Self {
        let mut set = AppMarkers::default();
        for m in iter {
            set.insert(m);
        }
        set
    }
}

/// Session-identifying header values. Decoded so the leakage audit can
/// measure them; the feature catalogue has no rule that reads them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionFields {
    pub ip_id: Option<u16>,
    pub tcp_seq: Option<u32>,
    pub tcp_ack: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerStack {
    pub ethernet: Option<EthernetHeader>,
    pub arp: Option<ArpHeader>,
    pub ip: Option<Ipv4Header>,
    pub transport: Option<Transport>,
    pub markers: AppMarkers,
    /// Octets after the highest decoded header.
    pub payload: Vec<u8>,
    pub session: SessionFields,
}

impl LayerStack {
    pub fn tcp(&self) -> Option<&TcpHeader> {
        match &self.transport {
            Some(Transport::Tcp(t)) => Some(t),
            _ => None,
        }
    }

    pub fn udp(&self) -> Option<&UdpHeader> {
        match &self.transport {
            Some(Transport::Udp(u)) => Some(u),
            _ => None,
        }
    }

    pub fn icmp(&self) -> Option<&IcmpHeader> {
        match &self.transport {
            Some(Transport::Icmp(i)) => Some(i),
            _ => None,
        }
    }

    pub fn src_port(&self) -> Option<u16> {
        self.transport.and_then(|t| t.ports()).map(|p| p.0)
    }

    pub fn dst_port(&self) -> Option<u16> {
        self.transport.and_then(|t| t.ports()).map(|p| p.1)
    }

    pub fn src_mac(&self) -> Option<MacAddr> {
        self.ethernet.as_ref().map(|e| e.src_mac)
    }
}

pub fn decode_layers(pkt: &RawPacketView) -> LayerStack {
    decode_frame(pkt.link_type, &pkt.bytes)
}

pub fn decode_frame(link_type: u32, bytes: &[u8]) -> LayerStack {
    let mut stack = LayerStack::default();
    if link_type != LINKTYPE_ETHERNET {
        stack.payload = bytes.to_vec();
        return stack;
    }
    let rest = decode_ethernet(&mut stack, bytes);
    stack.payload = rest.to_vec();
    stack
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn decode_ethernet<'a>(stack: &mut LayerStack, frame: &'a [u8]) -> &'a [u8] {
    if frame.len() < 14 {
        return frame;
    }
    let mut ethertype = be16(frame, 12);
    let mut body = &frame[14..];
    let mut vlan_id = None;
    if ethertype == ETHERTYPE_VLAN && body.len() >= 4 {
        vlan_id = Some(be16(body, 0) & 0x0fff);
        ethertype = be16(body, 2);
        body = &body[4..];
    }
    stack.ethernet = Some(EthernetHeader {
        dst_mac: MacAddr::from_slice(&frame[0..6]).unwrap_or_default(),
        src_mac: MacAddr::from_slice(&frame[6..12]).unwrap_or_default(),
        ethertype,
        vlan_id,
        frame_size: frame.len(),
    });
    match ethertype {
        0..=0x05ff => {
            stack.markers.insert(AppMarker::Llc);
            body
        }
        ETHERTYPE_EAPOL => {
            stack.markers.insert(AppMarker::Eapol);
            body
        }
        ETHERTYPE_ARP => decode_arp(stack, body),
        ETHERTYPE_IPV4 => decode_ipv4(stack, body),
        _ => body,
    }
}

fn decode_arp<'a>(stack: &mut LayerStack, body: &'a [u8]) -> &'a [u8] {
    if body.len() < 8 {
        return body;
    }
    stack.arp = Some(ArpHeader { hw_type: be16(body, 0), proto_type: be16(body, 2), opcode: be16(body, 6) });
    let addr_len = 2 * (usize::from(body[4]) + usize::from(body[5]));
    &body[(8 + addr_len).min(body.len())..]
}

fn decode_ipv4<'a>(stack: &mut LayerStack, datagram: &'a [u8]) -> &'a [u8] {
    if datagram.len() < 20 {
        return datagram;
    }
    let version = datagram[0] >> 4;
    let ihl = datagram[0] & 0x0f;
    let header_bytes = usize::from(ihl) * 4;
    if version != 4 || ihl < 5 || header_bytes > datagram.len() {
        return datagram;
    }
    let total_len = be16(datagram, 2);
    let flags_frag = be16(datagram, 6);
    let ip = Ipv4Header {
        version,
        header_len: ihl,
        tos: datagram[1],
        total_len,
        flags: (flags_frag >> 13) as u8,
        frag_offset: flags_frag & 0x1fff,
        ttl: datagram[8],
        protocol_number: datagram[9],
    };
    stack.ip = Some(ip);
    stack.session.ip_id = Some(be16(datagram, 4));

    // Trailing link-layer padding is not part of the datagram.
    let end = if usize::from(total_len) >= header_bytes && usize::from(total_len) <= datagram.len() {
        usize::from(total_len)
    } else {
        datagram.len()
    };
    let body = &datagram[header_bytes..end];
    if ip.frag_offset != 0 {
        return body;
    }
    match ip.protocol_number {
        IPPROTO_TCP => decode_tcp(stack, body),
        IPPROTO_UDP => decode_udp(stack, body),
        IPPROTO_ICMP => decode_icmp(stack, body),
        _ => body,
    }
}

fn mark_ports(stack: &mut LayerStack, src: u16, dst: u16) {
    for port in [src, dst] {
        if let Some(m) = AppMarker::for_port(port) {
            stack.markers.insert(m);
        }
    }
}

fn looks_like_tls_record(payload: &[u8]) -> bool {
    payload.len() >= 5 && (20..=23).contains(&payload[0]) && payload[1] == 3 && payload[2] <= 4
}

fn decode_tcp<'a>(stack: &mut LayerStack, seg: &'a [u8]) -> &'a [u8] {
    if seg.len() < 20 {
        return seg;
    }
    let data_offset = seg[12] >> 4;
    let header_bytes = usize::from(data_offset) * 4;
    if data_offset < 5 || header_bytes > seg.len() {
        return seg;
    }
    let tcp = TcpHeader {
        src_port: be16(seg, 0),
        dst_port: be16(seg, 2),
        data_offset,
        flags: TcpFlags::from_byte(seg[13]),
        window: be16(seg, 14),
        urgent_ptr: be16(seg, 18),
        options: parse_tcp_options(&seg[20..header_bytes]),
    };
    stack.session.tcp_seq = Some(be32(seg, 4));
    stack.session.tcp_ack = Some(be32(seg, 8));
    stack.transport = Some(Transport::Tcp(tcp));
    mark_ports(stack, tcp.src_port, tcp.dst_port);
    let payload = &seg[header_bytes..];
    if looks_like_tls_record(payload) {
        stack.markers.insert(AppMarker::Tls);
    }
    payload
}

fn parse_tcp_options(mut opts: &[u8]) -> TcpOptionPresence {
    let mut seen = TcpOptionPresence::default();
    while let Some(&kind) = opts.first() {
        match kind {
            0 => break,
            1 => {
                opts = &opts[1..];
                continue;
            }
            _ => {}
        }
        let Some(&len) = opts.get(1) else { break };
        let len = usize::from(len);
        if len < 2 || len > opts.len() {
            break;
        }
        match kind {
            2 => seen.mss = true,
            3 => seen.window_scale = true,
            4 => seen.sack_permitted = true,
            8 => seen.timestamp = true,
            _ => {}
        }
        opts = &opts[len..];
    }
    seen
}

fn decode_udp<'a>(stack: &mut LayerStack, dgram: &'a [u8]) -> &'a [u8] {
    if dgram.len() < 8 {
        return dgram;
    }
    let udp = UdpHeader { src_port: be16(dgram, 0), dst_port: be16(dgram, 2), length: be16(dgram, 4) };
    stack.transport = Some(Transport::Udp(udp));
    mark_ports(stack, udp.src_port, udp.dst_port);
    &dgram[8..]
}

fn decode_icmp<'a>(stack: &mut LayerStack, msg: &'a [u8]) -> &'a [u8] {
    if msg.len() < 4 {
        return msg;
    }
    stack.transport = Some(Transport::Icmp(IcmpHeader { icmp_type: msg[0], code: msg[1] }));
    &msg[8.min(msg.len())..]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{self, Ipv4Spec, TcpSpec, UdpSpec};
    use proptest::prelude::*;

    const SRC: MacAddr = MacAddr::new([0x00, 0x17, 0x88, 0x24, 0x76, 0xff]);
    const DST: MacAddr = MacAddr::new([0x1c, 0x5f, 0x2b, 0xaa, 0xfd, 0x4e]);

    #[test]
    fn udp_dns_frame_hand_encoded() {
        // 14 Ethernet + 20 IPv4 + 8 UDP = 42 octets, no payload.
        #[rustfmt::skip]
        let frame: [u8; 42] = [
            0x1c, 0x5f, 0x2b, 0xaa, 0xfd, 0x4e, 0x00, 0x17, 0x88, 0x24, 0x76, 0xff, 0x08, 0x00,
            0x45, 0x00, 0x00, 0x1c, 0x12, 0x34, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00,
            192, 168, 1, 10, 8, 8, 8, 8,
            0xc3, 0x50, 0x00, 0x35, 0x00, 0x08, 0x00, 0x00,
        ];
        let s = decode_frame(1, &frame);
        let eth = s.ethernet.as_ref().unwrap();
        assert_eq!(eth.src_mac, SRC);
        assert_eq!(eth.dst_mac, DST);
        assert_eq!(eth.ethertype, 0x0800);
        assert_eq!(eth.frame_size, 42);
        let ip = s.ip.unwrap();
        assert_eq!(ip.version, 4);
        assert_eq!(ip.header_len, 5);
        assert_eq!(ip.total_len, 28);
        assert_eq!(ip.flags, 0b010);
        assert!(ip.dont_fragment());
        assert_eq!(ip.frag_offset, 0);
        assert_eq!(ip.ttl, 64);
        assert_eq!(ip.protocol_number, 17);
        let udp = s.udp().unwrap();
        assert_eq!((udp.src_port, udp.dst_port, udp.length), (50000, 53, 8));
        assert!(s.markers.contains(AppMarker::Dns));
        assert_eq!(s.session.ip_id, Some(0x1234));
        assert!(s.payload.is_empty());
    }

    #[test]
    fn arp_frame_hand_encoded() {
        let mut frame = vec![0xff; 6];
        frame.extend_from_slice(&SRC.0);
        frame.extend_from_slice(&[0x08, 0x06, 0x00, 0x01, 0x08, 0x00, 6, 4, 0x00, 0x02]);
        frame.extend_from_slice(&[0u8; 20]);
        frame.resize(60, 0);
        let s = decode_frame(1, &frame);
        assert_eq!(s.arp, Some(ArpHeader { hw_type: 1, proto_type: 0x0800, opcode: 2 }));
        assert!(s.ip.is_none());
        assert!(s.transport.is_none());
        assert_eq!(s.payload.len(), 60 - 14 - 28);
    }

    #[test]
    fn bare_ethernet_header_only() {
        let frame = encode::ethernet(DST, SRC, 0x0800, &[]);
        assert_eq!(frame.len(), 14);
        let s = decode_frame(1, &frame);
        assert!(s.ethernet.is_some());
        assert!(s.arp.is_none() && s.ip.is_none() && s.transport.is_none());
        assert!(s.payload.is_empty());
    }

    #[test]
    fn non_ethernet_link_type_passes_through() {
        let bytes = vec![1, 2, 3, 4, 5];
        let s = decode_frame(105, &bytes);
        assert!(s.ethernet.is_none());
        assert_eq!(s.payload, bytes);
    }

    #[test]
    fn ipv6_stops_at_ethernet() {
        let body = vec![0x60, 0, 0, 0, 0, 8, 17, 64];
        let frame = encode::ethernet(DST, SRC, ETHERTYPE_IPV6, &body);
        let s = decode_frame(1, &frame);
        assert_eq!(s.ethernet.as_ref().unwrap().ethertype, ETHERTYPE_IPV6);
        assert!(s.ip.is_none());
        assert_eq!(s.payload, body);
    }

    #[test]
    fn eapol_and_llc_markers() {
        let s = decode_frame(1, &encode::ethernet(DST, SRC, ETHERTYPE_EAPOL, &[1, 0, 0, 0]));
        assert!(s.markers.contains(AppMarker::Eapol));
        let s = decode_frame(1, &encode::ethernet(DST, SRC, 0x0026, &[0x42, 0x42, 0x03]));
        assert!(s.markers.contains(AppMarker::Llc));
    }

    #[test]
    fn vlan_tag_is_skipped() {
        let udp = encode::udp_datagram(&UdpSpec { src_port: 5353, dst_port: 5353 }, b"hi");
        let ip = encode::ipv4_packet(&Ipv4Spec { protocol: 17, ..Ipv4Spec::default() }, &udp);
        let mut body = vec![0x00, 0x05, 0x08, 0x00];
        body.extend_from_slice(&ip);
        let s = decode_frame(1, &encode::ethernet(DST, SRC, ETHERTYPE_VLAN, &body));
        let eth = s.ethernet.unwrap();
        assert_eq!(eth.vlan_id, Some(5));
        assert_eq!(eth.ethertype, ETHERTYPE_IPV4);
        assert!(s.markers.contains(AppMarker::Mdns));
        assert_eq!(s.payload, b"hi");
    }

    #[test]
    fn padding_after_datagram_is_not_payload() {
        let udp = encode::udp_datagram(&UdpSpec { src_port: 1000, dst_port: 2000 }, &[]);
        let ip = encode::ipv4_packet(&Ipv4Spec { protocol: 17, ..Ipv4Spec::default() }, &udp);
        let mut frame = encode::ethernet(DST, SRC, ETHERTYPE_IPV4, &ip);
        frame.resize(60, 0);
        let s = decode_frame(1, &frame);
        assert!(s.udp().is_some());
        assert!(s.payload.is_empty());
    }

    #[test]
    fn later_fragment_skips_transport() {
        let spec = Ipv4Spec { protocol: 17, frag_offset: 100, ..Ipv4Spec::default() };
        let ip = encode::ipv4_packet(&spec, &[0xaa; 12]);
        let s = decode_frame(1, &encode::ethernet(DST, SRC, ETHERTYPE_IPV4, &ip));
        assert_eq!(s.ip.unwrap().frag_offset, 100);
        assert!(s.transport.is_none());
        assert_eq!(s.payload, vec![0xaa; 12]);
    }

    #[test]
    fn tcp_options_and_tls() {
        let tcp = TcpSpec {
            src_port: 443,
            dst_port: 50123,
            flags: TcpFlags::from_byte(0x18),
            options: TcpOptionPresence { mss: true, window_scale: false, sack_permitted: true, timestamp: true },
            ..TcpSpec::default()
        };
        let seg = encode::tcp_segment(&tcp, &[0x17, 0x03, 0x03, 0x00, 0x10, 0xde, 0xad]);
        let ip = encode::ipv4_packet(&Ipv4Spec { protocol: 6, ..Ipv4Spec::default() }, &seg);
        let s = decode_frame(1, &encode::ethernet(DST, SRC, ETHERTYPE_IPV4, &ip));
        let t = s.tcp().unwrap();
        assert_eq!(t.options, tcp.options);
        assert!(t.flags.psh && t.flags.ack && !t.flags.syn);
        assert!(s.markers.contains(AppMarker::Https));
        assert!(s.markers.contains(AppMarker::Tls));
    }

    #[test]
    fn truncated_tcp_header_leaves_transport_absent() {
        let seg = encode::tcp_segment(&TcpSpec::default(), &[]);
        let ip = encode::ipv4_packet(&Ipv4Spec { protocol: 6, ..Ipv4Spec::default() }, &seg[..12]);
        let s = decode_frame(1, &encode::ethernet(DST, SRC, ETHERTYPE_IPV4, &ip));
        assert!(s.ip.is_some());
        assert!(s.transport.is_none());
        assert_eq!(s.payload.len(), 12);
    }

    #[test]
    fn flags_byte_round_trip() {
        for b in 0..=255u8 {
            assert_eq!(TcpFlags::from_byte(b).to_byte(), b);
        }
    }

    fn arb_mac() -> impl Strategy<Value = MacAddr> {
        any::<[u8; 6]>().prop_map(MacAddr)
    }

    fn arb_options() -> impl Strategy<Value = TcpOptionPresence> {
        any::<[bool; 4]>().prop_map(|b| TcpOptionPresence { mss: b[0], window_scale: b[1], sack_permitted: b[2], timestamp: b[3] })
    }

    #[derive(Debug, Clone)]
    enum L4 {
        Tcp(TcpSpec),
        Udp(UdpSpec),
        Icmp(u8, u8),
    }

    fn arb_l4() -> impl Strategy<Value = L4> {
        prop_oneof![
            (any::<u16>(), any::<u16>(), any::<u8>(), any::<u16>(), any::<u16>(), any::<u32>(), any::<u32>(), arb_options())
                .prop_map(|(sp, dp, fl, win, urg, seq, ack, options)| L4::Tcp(TcpSpec {
                    src_port: sp,
                    dst_port: dp,
                    flags: TcpFlags::from_byte(fl),
                    window: win,
                    urgent_ptr: urg,
                    seq,
                    ack,
                    options,
                })),
            (any::<u16>(), any::<u16>()).prop_map(|(s, d)| L4::Udp(UdpSpec { src_port: s, dst_port: d })),
            (any::<u8>(), any::<u8>()).prop_map(|(t, c)| L4::Icmp(t, c)),
        ]
    }

    fn arb_ip() -> impl Strategy<Value = Ipv4Spec> {
        (any::<u8>(), 0u8..8, any::<u8>(), any::<u16>(), any::<[u8; 4]>(), any::<[u8; 4]>(), 0usize..=10)
            .prop_map(|(tos, flags, ttl, id, src, dst, opt_words)| Ipv4Spec {
                tos,
                flags,
                frag_offset: 0,
                ttl,
                id,
                protocol: 0,
                src,
                dst,
                options: vec![1u8; opt_words * 4],
            })
    }

    proptest! {
        #[test]
        fn round_trip_recovers_encoded_fields(
            src in arb_mac(), dst in arb_mac(), ip in arb_ip(), l4 in arb_l4(),
            payload in proptest::collection::vec(any::<u8>(), 0..200),
        ) {
            let (proto, seg) = match &l4 {
                L4::Tcp(t) => (6, encode::tcp_segment(t, &payload)),
                L4::Udp(u) => (17, encode::udp_datagram(u, &payload)),
                L4::Icmp(t, c) => (1, encode::icmp_message(*t, *c, &payload)),
            };
            let ip = Ipv4Spec { protocol: proto, ..ip };
            let datagram = encode::ipv4_packet(&ip, &seg);
            let frame = encode::ethernet(dst, src, ETHERTYPE_IPV4, &datagram);
            let s = decode_frame(1, &frame);

            let eth = s.ethernet.clone().unwrap();
            prop_assert_eq!(eth.src_mac, src);
            prop_assert_eq!(eth.dst_mac, dst);
            prop_assert_eq!(eth.frame_size, frame.len());
            let got = s.ip.unwrap();
            prop_assert_eq!(usize::from(got.header_len), 5 + ip.options.len() / 4);
            prop_assert_eq!(got.tos, ip.tos);
            prop_assert_eq!(usize::from(got.total_len), datagram.len());
            prop_assert_eq!(got.flags, ip.flags);
            prop_assert_eq!(got.ttl, ip.ttl);
            prop_assert_eq!(got.protocol_number, proto);
            prop_assert_eq!(s.session.ip_id, Some(ip.id));
            prop_assert_eq!(&s.payload, &payload);
            match l4 {
                L4::Tcp(t) => {
                    let d = s.tcp().unwrap();
                    prop_assert_eq!((d.src_port, d.dst_port), (t.src_port, t.dst_port));
                    prop_assert_eq!(d.flags, t.flags);
                    prop_assert_eq!(d.window, t.window);
                    prop_assert_eq!(d.urgent_ptr, t.urgent_ptr);
                    prop_assert_eq!(d.options, t.options);
                    prop_assert_eq!(s.session.tcp_seq, Some(t.seq));
                    prop_assert_eq!(s.session.tcp_ack, Some(t.ack));
                }
                L4::Udp(u) => {
                    let d = s.udp().unwrap();
                    prop_assert_eq!((d.src_port, d.dst_port), (u.src_port, u.dst_port));
                    prop_assert_eq!(usize::from(d.length), 8 + payload.len());
                }
                L4::Icmp(t, c) => {
                    let d = s.icmp().unwrap();
                    prop_assert_eq!((d.icmp_type, d.code), (t, c));
                }
            }
        }

        #[test]
        fn decoding_is_total_and_deterministic(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let a = decode_frame(1, &bytes);
            let b = decode_frame(1, &bytes);
            prop_assert_eq!(&a, &b);
            if a.ip.is_none() {
                prop_assert!(a.transport.is_none());
            }
            prop_assert!(a.payload.len() <= bytes.len());
        }

        #[test]
        fn decoding_is_total_on_ipv4_shaped_garbage(tail in proptest::collection::vec(any::<u8>(), 0..200), proto in prop_oneof![Just(1u8), Just(6u8), Just(17u8)], ihl in 0u8..16) {
            let mut frame = vec![0u8; 12];
            frame.extend_from_slice(&[0x08, 0x00, 0x40 | ihl, 0, 0, 0, 0, 0, 0, 0, 64, proto]);
            frame.extend_from_slice(&tail);
            let s = decode_frame(1, &frame);
            if s.ip.is_none() {
                prop_assert!(s.transport.is_none());
            }
        }
    }

    #[test]
    fn decoding_max_size_frame() {
        let bytes: Vec<u8> = (0..65535u32).map(|i| (i * 31 % 251) as u8).collect();
        let _ = decode_frame(1, &bytes);
    }
}
