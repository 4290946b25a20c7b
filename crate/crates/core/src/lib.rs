//! Packet-level IoT device identification.
//!
//! Pipeline: [`pcap`] capture reading, [`decode`] layer decoding,
//! [`features`] extraction, [`dataset`] labelling and splitting, [`tree`]
//! classification, [`aggregate`] group-wise relabelling, [`select`] feature
//! selection and [`metrics`] evaluation.

pub mod aggregate;
pub mod dataset;
pub mod decode;
pub mod encode;
pub mod features;
pub mod mac;
pub mod metrics;
pub mod pcap;
pub mod select;
pub mod tree;

pub use decode::{decode_frame, decode_layers, LayerStack};
pub use features::{extract_features, FeatureCatalogue, FeatureError, FeatureVector, PortClass};
pub use mac::MacAddr;
pub use pcap::{read_capture, Capture, PcapError, RawPacketView, Timestamp};
pub use aggregate::{aggregate, detect_exceptions, mixed, AggregationConfig, AggregationError, AggregationResult, TailRule};
pub use dataset::{DatasetError, LabelMap, PacketRecord, SplitPlan};
pub use metrics::{evaluate, EvaluationReport, MetricsError};
pub use select::{audit_leakage, ga_select, score_features, vote_filter, GaConfig, SelectError, SelectionMask, VoteConfig, VoteReport};
pub use tree::{train_tree, tune, DecisionTreeModel, Hyperparams, SearchSpace, TrainingSet, TreeError};
