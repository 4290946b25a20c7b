use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use devid_core::encode::{tcp_frame, udp_frame, Ipv4Spec, TcpSpec, UdpSpec};
use devid_core::pcap::write_capture;
use devid_core::{MacAddr, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEVICES: [(&str, &str); 3] = [("Cam", "02:00:00:00:00:01"), ("Plug", "02:00:00:00:00:02"), ("Bulb", "02:00:00:00:00:03")];
const GATEWAY: &str = "02:00:00:00:00:fe";

pub fn mac(s: &str) -> MacAddr {
    s.parse().unwrap()
}

fn dns_like(rng: &mut ChaCha8Rng, src: MacAddr) -> Vec<u8> {
    let payload: Vec<u8> = (0..rng.gen_range(30..34)).map(|_| rng.gen()).collect();
    udp_frame(src, mac(GATEWAY), &Ipv4Spec { ttl: 128, id: rng.gen(), ..Ipv4Spec::default() }, &UdpSpec { src_port: rng.gen_range(50000..60000), dst_port: 53 }, &payload)
}

/// One frame from `device`. A third of the bulb's packets copy the plug's
/// DNS traffic, so per-packet predictions for the bulb are noisy.
fn frame(rng: &mut ChaCha8Rng, device: usize) -> Vec<u8> {
    let src = mac(DEVICES[device].1);
    match device {
        0 => {
            let payload: Vec<u8> = (0..rng.gen_range(200..300)).map(|_| rng.gen()).collect();
            let tcp = TcpSpec { dst_port: 443, seq: rng.gen(), ..TcpSpec::default() };
            tcp_frame(src, mac(GATEWAY), &Ipv4Spec { id: rng.gen(), ..Ipv4Spec::default() }, &tcp, &payload)
        }
        1 => dns_like(rng, src),
        _ if rng.gen_bool(0.33) => dns_like(rng, src),
        _ => {
            let payload = vec![0x23; 48];
            udp_frame(src, mac(GATEWAY), &Ipv4Spec { ttl: 255, id: rng.gen(), ..Ipv4Spec::default() }, &UdpSpec { src_port: 123, dst_port: 123 }, &payload)
        }
    }
}

/// `<root>/<device>/capN.pcap` for each device, plus a label map at
/// `<root>/labels.csv`. Returns the capture root.
pub fn write_corpus(root: &Path, captures_per_device: usize, packets: usize) -> PathBuf {
    let pcaps = root.join("pcaps");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (d, (name, _)) in DEVICES.iter().enumerate() {
        fs::create_dir_all(pcaps.join(name)).unwrap();
        for c in 0..captures_per_device {
            let frames: Vec<(Timestamp, Vec<u8>)> =
                (0..packets).map(|i| (Timestamp { secs: 1_500_000_000 + i as u32, micros: 0 }, frame(&mut rng, d))).collect();
            write_capture(pcaps.join(name).join(format!("cap{c}.pcap")), &frames).unwrap();
        }
    }
    let mut map = String::from("mac,label,transfer\n");
    for (name, m) in DEVICES {
        map.push_str(&format!("{m},{name},false\n"));
    }
    fs::write(root.join("labels.csv"), map).unwrap();
    pcaps
}

pub fn devid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devid")).args(args).env_remove("DEVID_SEED").env_remove("DEVID_OUT_DIR").output().unwrap()
}

pub fn ok(args: &[&str]) -> Output {
    let out = devid(args);
    assert!(out.status.success(), "devid {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
