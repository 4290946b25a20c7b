use super::{DecisionTreeModel, Hyperparams, Node, TrainingSet, TreeError, MODEL_VERSION};

/// Trains on every row and feature of `set`.
pub fn train_tree(set: &TrainingSet, hp: &Hyperparams) -> Result<DecisionTreeModel, TreeError> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let features: Vec<usize> = (0..set.n_features()).collect();
    train_tree_on(set, &rows, &features, hp)
}

/// Trains on the given rows (repeats allowed, as in a bootstrap sample),
/// splitting only on `features`. The model still reads full-length vectors.
pub fn train_tree_on(set: &TrainingSet, rows: &[usize], features: &[usize], hp: &Hyperparams) -> Result<DecisionTreeModel, TreeError> {
    train_tree_with_importances(set, rows, features, hp).map(|(m, _)| m)
}

/// As [`train_tree_on`], also returning the total weighted Gini decrease
/// credited to each feature, normalised to sum to 1 (all zero for a stump).
pub fn train_tree_with_importances(
    set: &TrainingSet,
    rows: &[usize],
    features: &[usize],
    hp: &Hyperparams,
) -> Result<(DecisionTreeModel, Vec<f64>), TreeError> {
    hp.validate()?;
    if rows.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    if let Some(&f) = features.iter().find(|&&f| f >= set.n_features()) {
        return Err(TreeError::CatalogueMismatch { expected: set.n_features(), found: f + 1 });
    }

    let mut b = Builder::new(set, rows, &features, hp);
    let first = set.y()[rows[0]];
    if rows.iter().all(|&r| set.y()[r] == first) {
        log::warn!("training data holds a single class ({}); the tree is one leaf", set.labels()[first]);
    }
    b.build();
    let total: f64 = b.importance.iter().sum();
    let importances = if total > 0.0 { b.importance.iter().map(|v| v / total).collect() } else { b.importance.clone() };
    let schema = set.schema();
    let model = DecisionTreeModel {
        model_version: MODEL_VERSION,
        catalogue_version: schema.catalogue_version.clone(),
        feature_names: schema.feature_names.clone(),
        encodings: schema.encodings.clone(),
        label_table: set.labels().to_vec(),
        hyperparams: *hp,
        nodes: b.nodes,
    };
    Ok((model, importances))
}

struct Task {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

struct Best {
    score: f64,
    feature: usize,
    threshold: f64,
    n_left: usize,
}

/// Presorted CART builder. Every feature keeps the sample slots of the
/// current node as a contiguous, value-sorted segment; a split stably
/// partitions each segment into its left and right halves.
struct Builder<'a> {
    hp: &'a Hyperparams,
    features: &'a [usize],
    k: usize,
    n_total_features: usize,
    /// Class of each sample slot.
    y: Vec<usize>,
    /// `cols[j][slot]`: value of `features[j]` for a slot.
    cols: Vec<Vec<f64>>,
    /// `sorted[j]`: slots ordered by `cols[j]`, segmented by node.
    sorted: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    n_slots: usize,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    if m >= b || m < a {
        a
    } else {
        m
    }
}

fn sum_sq(counts: &[u64]) -> u64 {
    counts.iter().map(|c| c * c).sum()
}

fn gini_mass(counts: &[u64], n: u64) -> f64 {
    // n * gini = n - sum(c^2) / n
    n as f64 - sum_sq(counts) as f64 / n as f64
}

impl<'a> Builder<'a> {
    fn new(set: &TrainingSet, rows: &[usize], features: &'a [usize], hp: &'a Hyperparams) -> Self {
        let y: Vec<usize> = rows.iter().map(|&r| set.y()[r]).collect();
        let cols: Vec<Vec<f64>> = features.iter().map(|&f| rows.iter().map(|&r| set.value(r, f)).collect()).collect();
        let sorted = cols
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..rows.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Builder {
            hp,
            features,
            k: set.n_classes(),
            n_total_features: set.n_features(),
            y,
            cols,
            sorted,
            go_left: vec![false; rows.len()],
            scratch: Vec::with_capacity(rows.len()),
            nodes: Vec::new(),
            importance: vec![0.0; set.n_features()],
            n_slots: rows.len(),
        }
    }

    fn counts(&self, start: usize, end: usize) -> Vec<u64> {
        let mut c = vec![0u64; self.k];
        // Any feature's segment holds the node's slots; with no features,
        // the node is the whole sample.
        match self.sorted.first() {
            Some(s) => s[start..end].iter().for_each(|&slot| c[self.y[slot as usize]] += 1),
            None => self.y.iter().for_each(|&cls| c[cls] += 1),
        }
        c
    }

    fn build(&mut self) {
        self.nodes.push(Node::Leaf { counts: Vec::new() });
        let mut stack = vec![Task { node: 0, start: 0, end: self.n_slots, depth: 0 }];
        while let Some(t) = stack.pop() {
            let counts = self.counts(t.start, t.end);
            let n = t.end - t.start;
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_ok = self.hp.max_depth.is_none_or(|d| t.depth < d);
            let can_split = !pure && depth_ok && n >= self.hp.min_samples_split && n >= 2 * self.hp.min_samples_leaf;
            let best = if can_split { self.best_split(&counts, t.start, t.end) } else { None };
            let Some(best) = best else {
                self.nodes[t.node] = Node::Leaf { counts };
                continue;
            };

            let j = self.features.iter().position(|&f| f == best.feature).expect("split feature is in the pool");
            for &slot in &self.sorted[j][t.start..t.end] {
                self.go_left[slot as usize] = self.cols[j][slot as usize] <= best.threshold;
            }
            for seg in &mut self.sorted {
                partition(&mut seg[t.start..t.end], &self.go_left, &mut self.scratch);
            }
            let mid = t.start + best.n_left;
            let left_counts = self.counts(t.start, mid);
            let right_counts: Vec<u64> = counts.iter().zip(&left_counts).map(|(a, b)| a - b).collect();
            self.importance[best.feature] += gini_mass(&counts, n as u64)
                - gini_mass(&left_counts, best.n_left as u64)
                - gini_mass(&right_counts, (n - best.n_left) as u64);

            let left = self.nodes.len();
            let right = left + 1;
            self.nodes.push(Node::Leaf { counts: Vec::new() });
            self.nodes.push(Node::Leaf { counts: Vec::new() });
            self.nodes[t.node] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
            // Right is pushed first so the left subtree is finished first.
            stack.push(Task { node: right, start: mid, end: t.end, depth: t.depth + 1 });
            stack.push(Task { node: left, start: t.start, end: mid, depth: t.depth + 1 });
        }
        debug_assert!(self.importance.len() == self.n_total_features);
    }

    /// Maximises `sum(L_c^2)/n_L + sum(R_c^2)/n_R`, which is equivalent to
    /// minimising weighted Gini impurity. Strict improvement is required to
    /// replace the incumbent, giving the lowest-feature, lowest-threshold
    /// tie rule.
    fn best_split(&self, counts: &[u64], start: usize, end: usize) -> Option<Best> {
        let n = end - start;
        let min_leaf = self.hp.min_samples_leaf;
        let total_sq = sum_sq(counts);
        let mut best: Option<Best> = None;
        let mut left = vec![0u64; self.k];
        for (j, &feature) in self.features.iter().enumerate() {
            let seg = &self.sorted[j][start..end];
            let col = &self.cols[j];
            if col[seg[0] as usize] == col[seg[n - 1] as usize] {
                continue;
            }
            left.iter_mut().for_each(|c| *c = 0);
            let (mut sq_left, mut sq_right) = (0u64, total_sq);
            for i in 0..n - 1 {
                let slot = seg[i] as usize;
                let c = self.y[slot];
                let right_c = counts[c] - left[c];
                sq_left += 2 * left[c] + 1;
                sq_right -= 2 * right_c - 1;
                left[c] += 1;
                let n_left = i + 1;
                let (v, next) = (col[slot], col[seg[i + 1] as usize]);
                if v == next || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let score = sq_left as f64 / n_left as f64 + sq_right as f64 / (n - n_left) as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Best { score, feature, threshold: midpoint(v, next), n_left });
                }
            }
        }
        best
    }
}

/// Stable partition of `seg` into slots with `go_left` set, then the rest.
fn partition(seg: &mut [u32], go_left: &[bool], scratch: &mut Vec<u32>) {
    scratch.clear();
    let mut w = 0;
    for i in 0..seg.len() {
        let s = seg[i];
        if go_left[s as usize] {
            seg[w] = s;
            w += 1;
        } else {
            scratch.push(s);
        }
    }
    seg[w..].copy_from_slice(scratch);
}
