//! Frame encoders for synthetic traffic.
//!
//! The inverse of [`crate::decode`]: tests, benches and the synthetic
//! corpora use these to build byte-exact Ethernet/IPv4/TCP/UDP/ICMP frames.

use crate::decode::{TcpFlags, TcpOptionPresence};
use crate::mac::MacAddr;

pub fn ethernet(dst: MacAddr, src: MacAddr, ethertype: u16, body: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity(14 + body.len());
    f.extend_from_slice(&dst.0);
    f.extend_from_slice(&src.0);
    f.extend_from_slice(&ethertype.to_be_bytes());
    f.extend_from_slice(body);
    f
}

/// ARP over Ethernet/IPv4 (28-octet body).
pub fn arp_body(opcode: u16, sender_mac: MacAddr, sender_ip: [u8; 4], target_mac: MacAddr, target_ip: [u8; 4]) -> Vec<u8> {
    let mut b = Vec::with_capacity(28);
    b.extend_from_slice(&1u16.to_be_bytes());
    b.extend_from_slice(&0x0800u16.to_be_bytes());
    b.extend_from_slice(&[6, 4]);
    b.extend_from_slice(&opcode.to_be_bytes());
    b.extend_from_slice(&sender_mac.0);
    b.extend_from_slice(&sender_ip);
    b.extend_from_slice(&target_mac.0);
    b.extend_from_slice(&target_ip);
    b
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Spec {
    pub tos: u8,
    /// 3-bit flags field (reserved, DF, MF).
    pub flags: u8,
    pub frag_offset: u16,
    pub ttl: u8,
    pub id: u16,
    pub protocol: u8,
    pub src: [u8; 4],
    pub dst: [u8; 4],
    /// Raw option octets; padded with end-of-list to a 4-octet boundary.
    pub options: Vec<u8>,
}

impl Default for Ipv4Spec {
    fn default() -> Self {
        Ipv4Spec {
            tos: 0,
            flags: 0b010,
            frag_offset: 0,
            ttl: 64,
            id: 0,
            protocol: 17,
            src: [192, 168, 1, 10],
            dst: [192, 168, 1, 1],
            options: Vec::new(),
        }
    }
}

fn internet_checksum(data: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in data.chunks(2) {
        let word = u16::from_be_bytes([chunk[0], *chunk.get(1).unwrap_or(&0)]);
        sum += u32::from(word);
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn ipv4_packet(spec: &Ipv4Spec, body: &[u8]) -> Vec<u8> {
    let mut options = spec.options.clone();
    options.resize(options.len().div_ceil(4) * 4, 0);
    let ihl = 5 + options.len() / 4;
    assert!(ihl <= 15, "IPv4 options exceed 40 octets");
    let total_len = ihl * 4 + body.len();
    let total_len = u16::try_from(total_len).expect("datagram exceeds 65535 octets");
    let flags_frag = (u16::from(spec.flags & 0b111) << 13) | (spec.frag_offset & 0x1fff);

    let mut p = Vec::with_capacity(usize::from(total_len));
    p.push(0x40 | ihl as u8);
    p.push(spec.tos);
    p.extend_from_slice(&total_len.to_be_bytes());
    p.extend_from_slice(&spec.id.to_be_bytes());
    p.extend_from_slice(&flags_frag.to_be_bytes());
    p.push(spec.ttl);
    p.push(spec.protocol);
    p.extend_from_slice(&[0, 0]);
    p.extend_from_slice(&spec.src);
    p.extend_from_slice(&spec.dst);
    p.extend_from_slice(&options);
    let csum = internet_checksum(&p);
    p[10..12].copy_from_slice(&csum.to_be_bytes());
    p.extend_from_slice(body);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpSpec {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub urgent_ptr: u16,
    pub options: TcpOptionPresence,
}

impl Default for TcpSpec {
    fn default() -> Self {
        TcpSpec {
            src_port: 49200,
            dst_port: 80,
            seq: 1,
            ack: 0,
            flags: TcpFlags { syn: true, ..TcpFlags::default() },
            window: 65535,
            urgent_ptr: 0,
            options: TcpOptionPresence::default(),
        }
    }
}

pub fn tcp_segment(spec: &TcpSpec, payload: &[u8]) -> Vec<u8> {
    let mut opts = Vec::new();
    if spec.options.mss {
        opts.extend_from_slice(&[2, 4, 0x05, 0xb4]);
    }
    if spec.options.sack_permitted {
        opts.extend_from_slice(&[4, 2]);
    }
    if spec.options.timestamp {
        opts.extend_from_slice(&[8, 10, 0, 0, 0, 1, 0, 0, 0, 0]);
    }
    if spec.options.window_scale {
        opts.extend_from_slice(&[1, 3, 3, 7]);
    }
    opts.resize(opts.len().div_ceil(4) * 4, 0);
    let data_offset = 5 + opts.len() / 4;

    let mut s = Vec::with_capacity(data_offset * 4 + payload.len());
    s.extend_from_slice(&spec.src_port.to_be_bytes());
    s.extend_from_slice(&spec.dst_port.to_be_bytes());
    s.extend_from_slice(&spec.seq.to_be_bytes());
    s.extend_from_slice(&spec.ack.to_be_bytes());
    s.push((data_offset as u8) << 4);
    s.push(spec.flags.to_byte());
    s.extend_from_slice(&spec.window.to_be_bytes());
    s.extend_from_slice(&[0, 0]);
    s.extend_from_slice(&spec.urgent_ptr.to_be_bytes());
    s.extend_from_slice(&opts);
    s.extend_from_slice(payload);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpSpec {
    pub src_port: u16,
    pub dst_port: u16,
}

pub fn udp_datagram(spec: &UdpSpec, payload: &[u8]) -> Vec<u8> {
    let len = u16::try_from(8 + payload.len()).expect("UDP datagram exceeds 65535 octets");
    let mut d = Vec::with_capacity(usize::from(len));
    d.extend_from_slice(&spec.src_port.to_be_bytes());
    d.extend_from_slice(&spec.dst_port.to_be_bytes());
    d.extend_from_slice(&len.to_be_bytes());
    d.extend_from_slice(&[0, 0]);
    d.extend_from_slice(payload);
    d
}

pub fn icmp_message(icmp_type: u8, code: u8, payload: &[u8]) -> Vec<u8> {
    let mut m = vec![icmp_type, code, 0, 0, 0, 0, 0, 0];
    m.extend_from_slice(payload);
    let csum = internet_checksum(&m);
    m[2..4].copy_from_slice(&csum.to_be_bytes());
    m
}

/// Ethernet + IPv4 + UDP in one call.
pub fn udp_frame(src: MacAddr, dst: MacAddr, ip: &Ipv4Spec, udp: &UdpSpec, payload: &[u8]) -> Vec<u8> {
    let ip = Ipv4Spec { protocol: 17, ..ip.clone() };
    ethernet(dst, src, 0x0800, &ipv4_packet(&ip, &udp_datagram(udp, payload)))
}

/// Ethernet + IPv4 + TCP in one call.
pub fn tcp_frame(src: MacAddr, dst: MacAddr, ip: &Ipv4Spec, tcp: &TcpSpec, payload: &[u8]) -> Vec<u8> {
    let ip = Ipv4Spec { protocol: 6, ..ip.clone() };
    ethernet(dst, src, 0x0800, &ipv4_packet(&ip, &tcp_segment(tcp, payload)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipv4_checksum_verifies() {
        let p = ipv4_packet(&Ipv4Spec::default(), &[1, 2, 3]);
        assert_eq!(internet_checksum(&p[..20]), 0);
    }

    #[test]
    fn options_are_padded() {
        let p = ipv4_packet(&Ipv4Spec { options: vec![1, 1, 1], ..Ipv4Spec::default() }, &[]);
        assert_eq!(p[0] & 0x0f, 6);
        assert_eq!(p.len(), 24);
    }
}
