//! Group-wise relabelling of per-packet predictions.
//!
//! Predictions are grouped by source address in arrival order, each group is
//! cut into consecutive chunks of `g` packets, and every packet in a chunk
//! takes the chunk's most frequent label. Addresses whose chunks disagree
//! with no dominant label are listed as exceptions; the mixed method keeps
//! individual predictions for those.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroUsize;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GROUP_SIZE: usize = 13;
pub const DEFAULT_DOMINANCE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("{macs} addresses but {labels} labels")]
    LengthMismatch { macs: usize, labels: usize },
    #[error("no packets to aggregate")]
    Empty,
    #[error("dominance threshold {0} is not in (0, 1]")]
    InvalidThreshold(f64),
}

/// Treatment of the last `len % g` packets of an address.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailRule {
    /// Relabel them as one smaller chunk.
    #[default]
    Process,
    /// Leave their individual labels untouched and record no mode for them.
    Unprocessed,
}

impl FromStr for TailRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "process" => Ok(TailRule::Process),
            "unprocessed" => Ok(TailRule::Unprocessed),
            other => Err(format!("unknown tail rule {other:?} (expected process or unprocessed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub g: NonZeroUsize,
    pub tail: TailRule,
    /// An address is an exception when no chunk-mode label holds more than
    /// this share of its chunks.
    pub dominance_threshold: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            g: NonZeroUsize::new(DEFAULT_GROUP_SIZE).expect("non-zero"),
            tail: TailRule::Process,
            dominance_threshold: DEFAULT_DOMINANCE,
        }
    }
}

impl AggregationConfig {
    pub fn with_g(g: NonZeroUsize) -> Self {
        AggregationConfig { g, ..Self::default() }
    }

    fn validate(&self) -> Result<(), AggregationError> {
        let t = self.dominance_threshold;
        if t > 0.0 && t <= 1.0 {
            Ok(())
        } else {
            Err(AggregationError::InvalidThreshold(t))
        }
    }
}

/// One chunk of an address's packets: positions `start..end` within that
/// address's arrival-ordered packet list, and the chunk's mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk<L> {
    pub start: usize,
    pub end: usize,
    pub mode: L,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressGroup<K, L> {
    pub key: K,
    /// Input indices of this address's packets, in arrival order.
    pub members: Vec<usize>,
    pub chunks: Vec<Chunk<L>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationResult<K, L> {
    pub new_labels: Vec<L>,
    /// Addresses in order of first appearance.
    pub groups: Vec<AddressGroup<K, L>>,
    pub exceptions: BTreeSet<K>,
}

/// Most frequent label, ties going to the one seen first.
pub fn mode<L: PartialEq + Clone>(labels: impl IntoIterator<Item = L>) -> Option<L> {
    let mut counts: Vec<(L, usize)> = Vec::new();
    for l in labels {
        match counts.iter_mut().find(|(x, _)| *x == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(l, _)| l)
}

pub fn aggregate<K, L>(macs: &[K], labels: &[L], cfg: &AggregationConfig) -> Result<AggregationResult<K, L>, AggregationError>
where
    K: Ord + Clone,
    L: PartialEq + Clone,
{
    if macs.len() != labels.len() {
        return Err(AggregationError::LengthMismatch { macs: macs.len(), labels: labels.len() });
    }
    if macs.is_empty() {
        return Err(AggregationError::Empty);
    }
    cfg.validate()?;

    let mut slot: BTreeMap<&K, usize> = BTreeMap::new();
    let mut groups: Vec<AddressGroup<K, L>> = Vec::new();
    for (i, k) in macs.iter().enumerate() {
        let g = *slot.entry(k).or_insert_with(|| {
            groups.push(AddressGroup { key: k.clone(), members: Vec::new(), chunks: Vec::new() });
            groups.len() - 1
        });
        groups[g].members.push(i);
    }

    let g = cfg.g.get();
    let mut new_labels = labels.to_vec();
    for group in &mut groups {
        let n = group.members.len();
        let mut start = 0;
        while start < n {
            let end = (start + g).min(n);
            if end - start < g && cfg.tail == TailRule::Unprocessed {
                break;
            }
            let members = &group.members[start..end];
            let m = mode(members.iter().map(|&i| &labels[i])).expect("chunk is non-empty").clone();
            for &i in members {
                new_labels[i] = m.clone();
            }
            group.chunks.push(Chunk { start, end, mode: m });
            start = end;
        }
    }

    let mut result = AggregationResult { new_labels, groups, exceptions: BTreeSet::new() };
    result.exceptions = detect_exceptions(&result, cfg);
    Ok(result)
}

/// Addresses whose chunk modes include at least two labels, none holding
/// more than `dominance_threshold` of the chunks.
pub fn detect_exceptions<K, L>(result: &AggregationResult<K, L>, cfg: &AggregationConfig) -> BTreeSet<K>
where
    K: Ord + Clone,
    L: PartialEq + Clone,
{
    result
        .groups
        .iter()
        .filter(|grp| {
            let n = grp.chunks.len();
            let mut counts: Vec<(&L, usize)> = Vec::new();
            for c in &grp.chunks {
                match counts.iter_mut().find(|(x, _)| **x == c.mode) {
                    Some((_, k)) => *k += 1,
                    None => counts.push((&c.mode, 1)),
                }
            }
            let top = counts.iter().map(|(_, k)| *k).max().unwrap_or(0);
            counts.len() >= 2 && (top as f64) / (n as f64) <= cfg.dominance_threshold
        })
        .map(|grp| grp.key.clone())
        .collect()
}

/// Individual labels for exception addresses, aggregated labels elsewhere.
pub fn mixed<K, L>(macs: &[K], individual: &[L], result: &AggregationResult<K, L>) -> Vec<L>
where
    K: Ord,
    L: Clone,
{
    macs.iter()
        .zip(individual)
        .zip(&result.new_labels)
        .map(|((k, ind), agg)| if result.exceptions.contains(k) { ind.clone() } else { agg.clone() })
        .collect()
}
