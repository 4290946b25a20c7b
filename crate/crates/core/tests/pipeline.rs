//! Library pipeline over synthetic captures written to a temp directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use devid_core::aggregate::{aggregate, mixed, AggregationConfig};
use devid_core::dataset::{assign_labels, discover_captures, extract_captures, split_by_capture, LabelMap};
use devid_core::encode::{tcp_frame, udp_frame, Ipv4Spec, TcpSpec, UdpSpec};
use devid_core::pcap::{write_capture, Timestamp};
use devid_core::tree::{load_model, save_model, train_tree, FeatureSchema, Hyperparams, TrainingSet};
use devid_core::{evaluate, FeatureCatalogue, MacAddr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAM: MacAddr = MacAddr([2, 0, 0, 0, 0, 1]);
const PLUG: MacAddr = MacAddr([2, 0, 0, 0, 0, 2]);
const GATEWAY: MacAddr = MacAddr([2, 0, 0, 0, 0, 0xfe]);

fn frame(dev: MacAddr, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let ip = Ipv4Spec { src: [192, 168, 1, dev.0[5]], dst: [10, 0, 0, 1], id: rng.gen(), ..Ipv4Spec::default() };
    if dev == CAM && rng.gen_bool(0.9) {
        let payload: Vec<u8> = (0..rng.gen_range(200..300)).map(|_| rng.gen()).collect();
        let tcp = TcpSpec { src_port: rng.gen_range(40000..60000), dst_port: 443, seq: rng.gen(), ..TcpSpec::default() };
        tcp_frame(dev, GATEWAY, &ip, &tcp, &payload)
    } else {
        let payload = vec![0u8; rng.gen_range(30..40)];
        udp_frame(dev, GATEWAY, &ip, &UdpSpec { src_port: rng.gen_range(40000..60000), dst_port: 53 }, &payload)
    }
}

fn write_corpus(root: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, dev) in [("cam", CAM), ("plug", PLUG)] {
        fs::create_dir_all(root.join(name)).unwrap();
        for c in 0..3 {
            let frames: Vec<(Timestamp, Vec<u8>)> =
                (0..120).map(|i| (Timestamp { secs: 1_600_000_000 + i, micros: 0 }, frame(dev, &mut rng))).collect();
            write_capture(root.join(name).join(format!("c{c}.pcap")), &frames).unwrap();
        }
    }
}

#[test]
fn captures_to_mixed_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let labels: LabelMap = format!("{CAM},Cam\n{PLUG},Plug\n").parse().unwrap();
    let cat = FeatureCatalogue::default_catalogue();

    let ids = discover_captures(dir.path()).unwrap();
    assert_eq!(ids.len(), 6);
    let plan = split_by_capture(&ids, 0.67, 0).unwrap();
    let train_ids: Vec<String> = plan.train_files.iter().cloned().collect();
    let test_ids: Vec<String> = plan.test_files.iter().cloned().collect();
    assert!(train_ids.iter().all(|f| !plan.test_files.contains(f)));
    let devices: BTreeSet<&str> = test_ids.iter().map(|f| f.split('/').next().unwrap()).collect();
    assert_eq!(devices.len(), 2, "every device has a test capture");

    let mut train = extract_captures(dir.path(), &train_ids, &cat, false).unwrap().records;
    let mut test = extract_captures(dir.path(), &test_ids, &cat, false).unwrap().records;
    assign_labels(&mut train, &labels);
    assign_labels(&mut test, &labels);
    assert!(train.iter().chain(&test).all(|r| r.label.is_some()));

    let set = TrainingSet::from_records(&train, &cat).unwrap();
    let model = train_tree(&set, &Hyperparams::default()).unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();
    let model = load_model(&path, &FeatureSchema::from_catalogue(&cat)).unwrap();

    let individual: Vec<String> = test.iter().map(|r| model.label(model.predict_unchecked(r.features.values()).class).to_string()).collect();
    let truth: Vec<String> = test.iter().map(|r| r.label.clone().unwrap()).collect();
    let macs: Vec<Option<MacAddr>> = test.iter().map(|r| r.mac).collect();
    let agg = aggregate(&macs, &individual, &AggregationConfig::default()).unwrap();
    let mix = mixed(&macs, &individual, &agg);
    assert!(agg.exceptions.is_empty());
    assert_eq!(mix, agg.new_labels);

    let ind = evaluate(&truth, &individual).unwrap();
    let ag = evaluate(&truth, &agg.new_labels).unwrap();
    assert!(ind.accuracy > 0.85, "individual accuracy {}", ind.accuracy);
    assert!(ag.accuracy >= ind.accuracy);
    assert_eq!(ag.accuracy, 1.0);
}
