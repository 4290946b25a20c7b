//! CART decision trees over packet feature vectors.
//!
//! Splits are binary `x <= threshold` tests chosen to minimise weighted Gini
//! impurity, with thresholds at midpoints between consecutive distinct
//! values. Ties go to the lowest feature index, then the lowest threshold,
//! so training is fully deterministic.

mod cart;
mod tune;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PacketRecord;
use crate::features::FeatureCatalogue;

pub use cart::{train_tree, train_tree_on, train_tree_with_importances};
pub(crate) use tune::cv_score;
pub use tune::{make_folds, nested_cv, tune, tune_on, CvRow, Folds, NestedCvResult, OuterFold, SearchSpace, TuneResult};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("no labelled rows to train on")]
    EmptyTrainingSet,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("feature vector has {found} values, model expects {expected}")]
    CatalogueMismatch { expected: usize, found: usize },
    #[error("model was built for catalogue {model:?}, active catalogue is {active:?}")]
    VersionMismatch { model: String, active: String },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("search space is empty")]
    EmptySpace,
    #[error("cannot make {folds} folds from {rows} rows")]
    InvalidFolds { folds: usize, rows: usize },
    #[error("row {row}, feature {feature}: value is not finite")]
    NonFiniteFeature { row: usize, feature: usize },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Feature names, catalogue version and category dictionaries a model was
/// trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub catalogue_version: String,
    pub feature_names: Vec<String>,
    pub encodings: BTreeMap<String, Vec<String>>,
}

impl FeatureSchema {
    pub fn from_catalogue(catalogue: &FeatureCatalogue) -> Self {
        FeatureSchema {
            catalogue_version: catalogue.version().to_string(),
            feature_names: catalogue.names().map(String::from).collect(),
            encodings: catalogue.encodings().into_iter().collect(),
        }
    }

    /// Schema for plain numeric matrices: features `f0`, `f1`, ...
    pub fn anonymous(n_features: usize) -> Self {
        FeatureSchema {
            catalogue_version: "anonymous".into(),
            feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
            encodings: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_names.is_empty()
    }
}

/// Dense labelled feature matrix with an optional group per row (the
/// capture file), used for group-aware folds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    schema: FeatureSchema,
    x: Vec<f64>,
    y: Vec<usize>,
    labels: Vec<String>,
    groups: Vec<usize>,
}

impl TrainingSet {
    /// Builds a set from rows and string labels; the label table is the
    /// sorted set of distinct labels. `groups` defaults to one group per row.
    pub fn new<S: AsRef<str>>(
        schema: FeatureSchema,
        rows: &[Vec<f64>],
        labels: &[S],
        groups: Option<&[usize]>,
    ) -> Result<Self, TreeError> {
        let table: Vec<String> = labels
            .iter()
            .map(|l| l.as_ref())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        Self::with_label_table(schema, rows, labels, groups, table)
    }

    pub fn with_label_table<S: AsRef<str>>(
        schema: FeatureSchema,
        rows: &[Vec<f64>],
        labels: &[S],
        groups: Option<&[usize]>,
        table: Vec<String>,
    ) -> Result<Self, TreeError> {
        assert_eq!(rows.len(), labels.len(), "one label per row");
        let d = schema.len();
        let mut x = Vec::with_capacity(rows.len() * d);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(TreeError::CatalogueMismatch { expected: d, found: row.len() });
            }
            if let Some(f) = row.iter().position(|v| !v.is_finite()) {
                return Err(TreeError::NonFiniteFeature { row: r, feature: f });
            }
            x.extend_from_slice(row);
        }
        let y = labels
            .iter()
            .map(|l| {
                table
                    .iter()
                    .position(|t| t == l.as_ref())
                    .ok_or_else(|| TreeError::InvalidHyperparams(format!("label {:?} missing from label table", l.as_ref())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let groups = match groups {
            Some(g) => {
                assert_eq!(g.len(), rows.len(), "one group per row");
                g.to_vec()
            }
            None => (0..rows.len()).collect(),
        };
        Ok(TrainingSet { schema, x, y, labels: table, groups })
    }

    /// Labelled records only; rows are grouped by capture file.
    pub fn from_records(records: &[PacketRecord], catalogue: &FeatureCatalogue) -> Result<Self, TreeError> {
        let labelled: Vec<&PacketRecord> = records.iter().filter(|r| r.label.is_some()).collect();
        let mut capture_ids: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &labelled {
            let next = capture_ids.len();
            capture_ids.entry(&r.capture_id).or_insert(next);
        }
        let rows: Vec<Vec<f64>> = labelled.iter().map(|r| r.features.values().to_vec()).collect();
        let labels: Vec<&str> = labelled.iter().map(|r| r.label.as_deref().expect("filtered")).collect();
        let groups: Vec<usize> = labelled.iter().map(|r| capture_ids[&*r.capture_id]).collect();
        Self::new(FeatureSchema::from_catalogue(catalogue), &rows, &labels, Some(&groups))
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_features() + feature]
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Same rows with one feature column replaced.
    pub fn with_column(&self, feature: usize, values: &[f64]) -> Self {
        let mut out = self.clone();
        let d = self.n_features();
        for (r, v) in values.iter().enumerate() {
            out.x[r * d + feature] = *v;
        }
        out
    }

    /// Same rows with an extra feature column at the end.
    pub fn append_column(&self, name: &str, values: &[f64]) -> Result<Self, TreeError> {
        assert_eq!(values.len(), self.len(), "one value per row");
        if let Some(r) = values.iter().position(|v| !v.is_finite()) {
            return Err(TreeError::NonFiniteFeature { row: r, feature: self.n_features() });
        }
        let d = self.n_features();
        let mut x = Vec::with_capacity(self.len() * (d + 1));
        for (r, v) in values.iter().enumerate() {
            x.extend_from_slice(self.row(r));
            x.push(*v);
        }
        let mut schema = self.schema.clone();
        schema.feature_names.push(name.to_string());
        Ok(TrainingSet { schema, x, y: self.y.clone(), labels: self.labels.clone(), groups: self.groups.clone() })
    }

    /// Same rows with every column outside `keep` set to zero. A constant
    /// column never splits, so models trained on the result use only `keep`
    /// yet still read full-length vectors.
    pub fn masked(&self, keep: &[usize]) -> Self {
        let d = self.n_features();
        let drop: Vec<bool> = (0..d).map(|f| !keep.contains(&f)).collect();
        let mut out = self.clone();
        for (i, v) in out.x.iter_mut().enumerate() {
            if drop[i % d] {
                *v = 0.0;
            }
        }
        out
    }

    /// Same rows with every row in its own group, so folds ignore captures.
    pub fn ungrouped(&self) -> Self {
        TrainingSet { groups: (0..self.len()).collect(), ..self.clone() }
    }

    /// Same rows with labels replaced by "is `class`" / "rest".
    pub fn one_vs_rest(&self, class: usize) -> Self {
        let labels = vec![self.labels[class].clone(), "rest".to_string()];
        let y = self.y.iter().map(|&c| usize::from(c != class)).collect();
        TrainingSet { labels, y, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Recorded for provenance; training itself uses no randomness.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { max_depth: None, min_samples_split: 2, min_samples_leaf: 1, seed: 0 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.max_depth == Some(0) {
            return Err(TreeError::InvalidHyperparams("max_depth must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(TreeError::InvalidHyperparams("min_samples_split must be at least 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(TreeError::InvalidHyperparams("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { counts: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub model_version: u32,
    pub catalogue_version: String,
    pub feature_names: Vec<String>,
    pub encodings: BTreeMap<String, Vec<String>>,
    pub label_table: Vec<String>,
    pub hyperparams: Hyperparams,
    /// Root first; children always have larger indices than their parent.
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

impl DecisionTreeModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            max = max.max(depth[i]);
            if let Node::Split { left, right, .. } = n {
                depth[*left] = depth[i] + 1;
                depth[*right] = depth[i] + 1;
            }
        }
        max
    }

    pub fn leaf_for(&self, fv: &[f64]) -> &[u64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if fv[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Leaf majority class (lowest label-table index on ties) and its share
    /// of the leaf. Callers must pass a vector of the right length.
    pub fn predict_unchecked(&self, fv: &[f64]) -> Prediction {
        let counts = self.leaf_for(fv);
        let total: u64 = counts.iter().sum();
        let (class, best) = counts.iter().enumerate().fold((0, 0), |acc, (c, &n)| if n > acc.1 { (c, n) } else { acc });
        Prediction { class, confidence: best as f64 / total as f64 }
    }

    pub fn predict(&self, fv: &[f64]) -> Result<Prediction, TreeError> {
        if fv.len() != self.n_features() {
            return Err(TreeError::CatalogueMismatch { expected: self.n_features(), found: fv.len() });
        }
        Ok(self.predict_unchecked(fv))
    }

    pub fn label(&self, class: usize) -> &str {
        &self.label_table[class]
    }

    /// Structural checks applied on load.
    pub fn validate(&self) -> Result<(), TreeError> {
        let corrupt = |m: String| Err(TreeError::CorruptModel(m));
        if self.model_version != MODEL_VERSION {
            return corrupt(format!("unsupported model version {}", self.model_version));
        }
        if self.nodes.is_empty() {
            return corrupt("no nodes".into());
        }
        if self.label_table.is_empty() {
            return corrupt("empty label table".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Split { feature, threshold, left, right } => {
                    if *feature >= self.n_features() {
                        return corrupt(format!("node {i} splits on feature {feature} of {}", self.n_features()));
                    }
                    if !threshold.is_finite() {
                        return corrupt(format!("node {i} has a non-finite threshold"));
                    }
                    for &c in [left, right] {
                        if c <= i || c >= self.nodes.len() {
                            return corrupt(format!("node {i} has invalid child {c}"));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf { counts } => {
                    if counts.len() != self.label_table.len() || counts.iter().sum::<u64>() == 0 {
                        return corrupt(format!("leaf {i} has invalid class counts"));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return corrupt("nodes do not form a tree".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model is serialisable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let model: DecisionTreeModel = serde_json::from_str(text).map_err(|e| TreeError::CorruptModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Rejects models built for a different catalogue.
    pub fn check_schema(&self, active: &FeatureSchema) -> Result<(), TreeError> {
        if self.catalogue_version != active.catalogue_version {
            return Err(TreeError::VersionMismatch { model: self.catalogue_version.clone(), active: active.catalogue_version.clone() });
        }
        if self.feature_names != active.feature_names {
            return Err(TreeError::CatalogueMismatch { expected: self.n_features(), found: active.len() });
        }
        Ok(())
    }
}

pub fn save_model(model: &DecisionTreeModel, path: impl AsRef<Path>) -> Result<(), TreeError> {
    fs::write(path, model.to_json())?;
    Ok(())
}

/// Loads a model and checks it against the active catalogue.
pub fn load_model(path: impl AsRef<Path>, active: &FeatureSchema) -> Result<DecisionTreeModel, TreeError> {
    let model = DecisionTreeModel::from_json(&fs::read_to_string(path)?)?;
    model.check_schema(active)?;
    Ok(model)
}

#[cfg(test)]
mod tests;
