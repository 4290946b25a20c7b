//! Labelled packet datasets: MAC label maps, capture-isolated splits and
//! CSV persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{decode_layers, LayerStack};
use crate::features::{extract_features, FeatureCatalogue, FeatureError, FeatureVector};
use crate::mac::MacAddr;
use crate::pcap::{read_capture, PcapError};

const AALTO_LABELS: &str = include_str!("../data/aalto-labels.csv");
const AALTO_ALIASES: &str = include_str!("../data/aalto-aliases.csv");

/// Leading columns of every dataset CSV, before the feature names.
pub const META_COLUMNS: [&str; 5] = ["mac", "label", "transfer", "capture_id", "index"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("dataset header does not match the catalogue: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },
    #[error("label map line {line}: {reason}")]
    InvalidLabelMap { line: usize, reason: String },
    #[error("label map has no entries")]
    EmptyLabelMap,
    #[error("alias chain {from} -> {via} -> {to}")]
    AliasChain { from: String, via: String, to: String },
    #[error("need at least 2 capture files, got {0}")]
    InsufficientFiles(usize),
    #[error("split ratio {0} is not in (0, 1)")]
    InvalidRatio(f64),
}

fn parse_bool(text: &str) -> Option<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Data lines of a small `a,b[,c]` text file, skipping blanks, `#` comments
/// and a header row whose first field is `header`.
fn table_lines<'a>(text: &'a str, header: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split(',').map(str::trim).collect::<Vec<_>>()))
        .filter(move |(_, f)| !f[0].eq_ignore_ascii_case(header))
}

/// MAC address to device label, plus the MACs that several devices share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    /// Every label documented for a MAC; the first is the primary one.
    entries: BTreeMap<MacAddr, Vec<String>>,
    shared: BTreeSet<MacAddr>,
}

impl LabelMap {
    pub fn new(entries: BTreeMap<MacAddr, Vec<String>>, shared: BTreeSet<MacAddr>) -> Result<Self, DatasetError> {
        if entries.is_empty() || entries.values().any(Vec::is_empty) {
            return Err(DatasetError::EmptyLabelMap);
        }
        if let Some(mac) = shared.iter().find(|m| !entries.contains_key(m)) {
            return Err(DatasetError::InvalidLabelMap { line: 0, reason: format!("shared MAC {mac} has no label") });
        }
        Ok(LabelMap { entries, shared })
    }

    /// The published Aalto device MACs.
    pub fn aalto() -> Self {
        AALTO_LABELS.parse().expect("shipped label map is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        fs::read_to_string(path)?.parse()
    }

    /// Primary label of a MAC.
    pub fn get(&self, mac: &MacAddr) -> Option<&str> {
        self.entries.get(mac).map(|l| l[0].as_str())
    }

    /// All labels documented for a MAC, primary first.
    pub fn labels_of(&self, mac: &MacAddr) -> &[String] {
        self.entries.get(mac).map_or(&[], Vec::as_slice)
    }

    pub fn is_shared(&self, mac: &MacAddr) -> bool {
        self.shared.contains(mac)
    }

    pub fn shared_macs(&self) -> &BTreeSet<MacAddr> {
        &self.shared
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.entries.values().flatten().map(String::as_str).collect()
    }

    /// MACs with their primary labels.
    pub fn iter(&self) -> impl Iterator<Item = (&MacAddr, &str)> {
        self.entries.iter().map(|(m, l)| (m, l[0].as_str()))
    }
}

impl FromStr for LabelMap {
    type Err = DatasetError;

    /// Lines of `mac,label[,transfer]`. A MAC that appears again keeps its
    /// first label as primary and becomes shared.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = BTreeMap::new();
        let mut shared = BTreeSet::new();
        for (line, fields) in table_lines(text, "mac") {
            let bad = |reason: String| DatasetError::InvalidLabelMap { line, reason };
            if !(2..=3).contains(&fields.len()) {
                return Err(bad(format!("expected mac,label[,transfer], got {} fields", fields.len())));
            }
            let mac: MacAddr = fields[0].parse().map_err(|e| bad(format!("{e}")))?;
            let label = fields[1];
            if label.is_empty() {
                return Err(bad("empty label".into()));
            }
            let transfer = match fields.get(2) {
                Some(t) => parse_bool(t).ok_or_else(|| bad(format!("bad transfer flag {t:?}")))?,
                None => false,
            };
            let labels: &mut Vec<String> = entries.entry(mac).or_default();
            if !labels.is_empty() {
                shared.insert(mac);
            }
            if !labels.iter().any(|l| l == label) {
                labels.push(label.to_string());
            }
            if transfer {
                shared.insert(mac);
            }
        }
        LabelMap::new(entries, shared)
    }
}

/// Device label to merged group label. Applied in a single step; chains
/// are rejected when the map is built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap(BTreeMap<String, String>);

impl AliasMap {
    pub fn new(map: BTreeMap<String, String>) -> Result<Self, DatasetError> {
        for (from, via) in &map {
            if from == via {
                continue;
            }
            if let Some(to) = map.get(via).filter(|to| *to != via) {
                return Err(DatasetError::AliasChain { from: from.clone(), via: via.clone(), to: to.clone() });
            }
        }
        Ok(AliasMap(map))
    }

    /// Same-vendor groups of the Aalto devices.
    pub fn aalto() -> Self {
        AALTO_ALIASES.parse().expect("shipped alias map is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        fs::read_to_string(path)?.parse()
    }

    pub fn apply<'a>(&'a self, label: &'a str) -> &'a str {
        self.0.get(label).map_or(label, String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

impl FromStr for AliasMap {
    type Err = DatasetError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut map = BTreeMap::new();
        for (line, fields) in table_lines(text, "label") {
            let bad = |reason: String| DatasetError::InvalidLabelMap { line, reason };
            let [from, to] = fields[..] else {
                return Err(bad(format!("expected label,group, got {} fields", fields.len())));
            };
            if from.is_empty() || to.is_empty() {
                return Err(bad("empty label".into()));
            }
            if map.insert(from.to_string(), to.to_string()).is_some() {
                return Err(bad(format!("label {from} aliased twice")));
            }
        }
        AliasMap::new(map)
    }
}

/// One packet with its identity context and feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Source MAC; absent for frames without an Ethernet header.
    pub mac: Option<MacAddr>,
    pub label: Option<String>,
    /// Set when the MAC is shared by several devices.
    pub transfer: bool,
    pub capture_id: Arc<str>,
    pub index: usize,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub labeled: usize,
    pub unlabeled: usize,
    pub transfer: usize,
}

/// Labels every record by source MAC. Existing labels are overwritten, so
/// repeated application gives the same result.
pub fn assign_labels(records: &mut [PacketRecord], map: &LabelMap) -> LabelStats {
    let mut stats = LabelStats::default();
    for r in records.iter_mut() {
        let label = r.mac.as_ref().and_then(|m| map.get(m));
        r.label = label.map(str::to_string);
        r.transfer = r.mac.as_ref().is_some_and(|m| map.is_shared(m));
        match label {
            Some(_) => stats.labeled += 1,
            None => stats.unlabeled += 1,
        }
        if r.transfer {
            stats.transfer += 1;
        }
    }
    stats
}

/// Labels each record with its capture's device directory, provided the
/// map documents that device for the record's MAC. Other records are left
/// unlabelled. This recovers ground truth for devices that sit behind a
/// shared MAC, whose captures are filed under their own directory.
pub fn assign_labels_by_capture(records: &mut [PacketRecord], map: &LabelMap) -> LabelStats {
    let mut stats = LabelStats::default();
    for r in records.iter_mut() {
        let device = device_of(&r.capture_id);
        let device = device.rsplit(['/', '\\']).next().unwrap_or(device);
        let known = r.mac.as_ref().is_some_and(|m| map.labels_of(m).iter().any(|l| l == device));
        r.label = known.then(|| device.to_string());
        r.transfer = r.mac.as_ref().is_some_and(|m| map.is_shared(m));
        if known {
            stats.labeled += 1;
        } else {
            stats.unlabeled += 1;
        }
        if r.transfer {
            stats.transfer += 1;
        }
    }
    stats
}

pub fn merge_labels(records: &mut [PacketRecord], aliases: &AliasMap) {
    for r in records.iter_mut() {
        if let Some(label) = &r.label {
            let merged = aliases.apply(label);
            if merged != label {
                r.label = Some(merged.to_string());
            }
        }
    }
}

/// Keeps at most `cap` records per label, sampled uniformly without
/// replacement. Unlabelled records and input order are preserved.
pub fn cap_per_class(records: Vec<PacketRecord>, cap: usize, seed: u64) -> Vec<PacketRecord> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(l) = &r.label {
            by_label.entry(l.as_str()).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; records.len()];
    for idx in by_label.values().filter(|v| v.len() > cap) {
        idx.iter().for_each(|&i| keep[i] = false);
        for &i in idx.choose_multiple(&mut rng, cap) {
            keep[i] = true;
        }
    }
    records.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// Whole-file assignment of captures to train and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub ratio: f64,
    pub train_files: BTreeSet<String>,
    pub test_files: BTreeSet<String>,
    /// Device groups that had a single capture, assigned to train.
    #[serde(default)]
    pub single_file_devices: Vec<String>,
}

impl SplitPlan {
    pub fn partition_of(&self, capture_id: &str) -> Option<Partition> {
        if self.train_files.contains(capture_id) {
            Some(Partition::Train)
        } else if self.test_files.contains(capture_id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn is_isolated(&self) -> bool {
        self.train_files.is_disjoint(&self.test_files)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::from)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let plan: SplitPlan = serde_json::from_str(&fs::read_to_string(path)?).map_err(io::Error::from)?;
        if !plan.is_isolated() {
            return Err(DatasetError::InvalidRecord { row: 0, reason: "split plan shares files between partitions".into() });
        }
        Ok(plan)
    }
}

/// Device a capture belongs to: its parent directory.
pub fn device_of(capture_id: &str) -> &str {
    capture_id.rsplit_once(['/', '\\']).map_or("", |(dir, _)| dir)
}

/// Splits capture files per device so that `ceil(ratio * n)` of each
/// device's `n` files go to train, but at least one goes to test.
pub fn split_by_capture(files: &[String], ratio: f64, seed: u64) -> Result<SplitPlan, DatasetError> {
    if files.len() < 2 {
        return Err(DatasetError::InsufficientFiles(files.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut groups: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in files {
        groups.entry(device_of(f)).or_default().insert(f.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan {
        seed,
        ratio,
        train_files: BTreeSet::new(),
        test_files: BTreeSet::new(),
        single_file_devices: Vec::new(),
    };
    for (device, group) in groups {
        let mut members: Vec<&str> = group.into_iter().collect();
        let n = members.len();
        if n == 1 {
            log::warn!("device {device:?} has a single capture; assigning it to train");
            plan.single_file_devices.push(device.to_string());
            plan.train_files.insert(members[0].to_string());
            continue;
        }
        members.shuffle(&mut rng);
        // The epsilon keeps ratio * n from rounding up past an exact integer.
        let n_train = ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
        plan.train_files.extend(members[..n_train].iter().map(|s| s.to_string()));
        plan.test_files.extend(members[n_train..].iter().map(|s| s.to_string()));
    }
    Ok(plan)
}

fn header(catalogue: &FeatureCatalogue) -> Vec<String> {
    META_COLUMNS.iter().copied().chain(catalogue.names()).map(String::from).collect()
}

pub fn write_dataset_to<W: Write>(records: &[PacketRecord], catalogue: &FeatureCatalogue, out: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(catalogue))?;
    let mut row: Vec<String> = Vec::with_capacity(META_COLUMNS.len() + catalogue.len());
    for r in records {
        if r.features.len() != catalogue.len() {
            return Err(DatasetError::InvalidRecord {
                row: r.index,
                reason: format!("{} features, catalogue has {}", r.features.len(), catalogue.len()),
            });
        }
        row.clear();
        row.push(r.mac.map(|m| m.to_string()).unwrap_or_default());
        row.push(r.label.clone().unwrap_or_default());
        row.push(r.transfer.to_string());
        row.push(r.capture_id.to_string());
        row.push(r.index.to_string());
        row.extend(r.features.values().iter().enumerate().map(|(i, v)| catalogue.format_value(i, *v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(records: &[PacketRecord], catalogue: &FeatureCatalogue, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = io::BufWriter::new(fs::File::create(path)?);
    write_dataset_to(records, catalogue, file)
}

pub fn read_dataset_from<R: Read>(input: R, catalogue: &FeatureCatalogue) -> Result<Vec<PacketRecord>, DatasetError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rd.records();
    let expected = header(catalogue);
    let found: Vec<String> = match rows.next() {
        Some(h) => h?.iter().map(String::from).collect(),
        None => Vec::new(),
    };
    if found != expected {
        return Err(DatasetError::SchemaMismatch { expected, found });
    }
    let mut ids: BTreeMap<String, Arc<str>> = BTreeMap::new();
    let mut records = Vec::new();
    for (n, row) in rows.enumerate() {
        let row = row?;
        let line = n + 2;
        let bad = |reason: String| DatasetError::InvalidRecord { row: line, reason };
        if row.len() != expected.len() {
            return Err(bad(format!("{} fields, expected {}", row.len(), expected.len())));
        }
        let mac = match &row[0] {
            "" => None,
            s => Some(s.parse::<MacAddr>().map_err(|e| bad(e.to_string()))?),
        };
        let label = (!row[1].is_empty()).then(|| row[1].to_string());
        let transfer = parse_bool(&row[2]).ok_or_else(|| bad(format!("bad transfer flag {:?}", &row[2])))?;
        let capture_id = ids.entry(row[3].to_string()).or_insert_with(|| Arc::from(&row[3])).clone();
        let index = row[4].parse().map_err(|_| bad(format!("bad index {:?}", &row[4])))?;
        let features = row
            .iter()
            .skip(META_COLUMNS.len())
            .enumerate()
            .map(|(i, text)| catalogue.parse_value(i, text))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(PacketRecord { mac, label, transfer, capture_id, index, features: FeatureVector(features) });
    }
    Ok(records)
}

pub fn read_dataset(path: impl AsRef<Path>, catalogue: &FeatureCatalogue) -> Result<Vec<PacketRecord>, DatasetError> {
    read_dataset_from(io::BufReader::new(fs::File::open(path)?), catalogue)
}

/// Session-specific header values of a packet, kept out of every catalogue.
/// Used only by the leakage audit. Absent fields are `-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionValues {
    pub ip_id: f64,
    pub tcp_seq: f64,
    pub tcp_ack: f64,
    pub src_port: f64,
    pub dst_port: f64,
}

impl SessionValues {
    pub const NAMES: [&'static str; 5] = ["IP_id", "TCP_seq", "TCP_ack", "sport", "dport"];

    pub fn of(stack: &LayerStack) -> Self {
        let v = |x: Option<f64>| x.unwrap_or(-1.0);
        SessionValues {
            ip_id: v(stack.session.ip_id.map(f64::from)),
            tcp_seq: v(stack.session.tcp_seq.map(f64::from)),
            tcp_ack: v(stack.session.tcp_ack.map(f64::from)),
            src_port: v(stack.src_port().map(f64::from)),
            dst_port: v(stack.dst_port().map(f64::from)),
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        [self.ip_id, self.tcp_seq, self.tcp_ack, self.src_port, self.dst_port][i]
    }
}

#[derive(Debug, Default)]
pub struct Extraction {
    pub records: Vec<PacketRecord>,
    /// Parallel to `records` when requested.
    pub session: Vec<SessionValues>,
    /// Captures whose final record was cut short.
    pub truncated_captures: Vec<String>,
}

/// Capture files under `root`, as `/`-separated paths relative to it, sorted.
pub fn discover_captures(root: impl AsRef<Path>) -> Result<Vec<String>, DatasetError> {
    fn walk(dir: &Path, rel: &str, out: &mut Vec<String>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let child = if rel.is_empty() { name.clone() } else { format!("{rel}/{name}") };
            let ty = entry.file_type()?;
            if ty.is_dir() {
                walk(&entry.path(), &child, out)?;
            } else if matches!(Path::new(&name).extension().and_then(|e| e.to_str()), Some("pcap" | "cap")) {
                out.push(child);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root.as_ref(), "", &mut out)?;
    out.sort();
    Ok(out)
}

/// Reads, decodes and featurises the given captures (relative to `root`)
/// in parallel. Records come back in `ids` order, then packet order.
pub fn extract_captures(
    root: impl AsRef<Path>,
    ids: &[String],
    catalogue: &FeatureCatalogue,
    with_session: bool,
) -> Result<Extraction, DatasetError> {
    let root: PathBuf = root.as_ref().to_path_buf();
    let per_file = ids
        .par_iter()
        .map(|id| {
            let mut cap = read_capture(root.join(id))?;
            let capture_id: Arc<str> = Arc::from(id.as_str());
            let mut records = Vec::with_capacity(cap.packets.len());
            let mut session = Vec::new();
            for pkt in cap.packets.drain(..) {
                let stack = decode_layers(&pkt);
                if with_session {
                    session.push(SessionValues::of(&stack));
                }
                records.push(PacketRecord {
                    mac: stack.src_mac(),
                    label: None,
                    transfer: false,
                    capture_id: capture_id.clone(),
                    index: pkt.index,
                    features: extract_features(&stack, catalogue),
                });
            }
            if let Some(t) = &cap.truncated {
                log::warn!("{id}: record {} claims {} bytes, {} remain; stopped reading", t.index, t.claimed, t.available);
            }
            Ok::<_, DatasetError>((records, session, cap.truncated.is_some()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Extraction::default();
    for (id, (records, session, truncated)) in ids.iter().zip(per_file) {
        out.records.extend(records);
        out.session.extend(session);
        if truncated {
            out.truncated_captures.push(id.clone());
        }
    }
    Ok(out)
}
