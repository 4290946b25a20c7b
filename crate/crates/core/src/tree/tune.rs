use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_tree_on, Hyperparams, TrainingSet, TreeError};
use crate::metrics::macro_f1_indices;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            max_depth: vec![Some(5), Some(10), Some(15), Some(20), None],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 5],
        }
    }
}

impl SearchSpace {
    /// Every configuration, depth-major.
    pub fn grid(&self, seed: u64) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &max_depth in &self.max_depth {
            for &min_samples_split in &self.min_samples_split {
                for &min_samples_leaf in &self.min_samples_leaf {
                    out.push(Hyperparams { max_depth, min_samples_split, min_samples_leaf, seed });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: Hyperparams,
    pub fold_scores: Vec<f64>,
    pub mean_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Hyperparams,
    pub best_score: f64,
    /// Evaluated configurations in grid order.
    pub table: Vec<CvRow>,
    /// False when there were too few capture groups and folds fell back to
    /// row-level assignment.
    pub grouped_folds: bool,
}

/// Held-out row sets, one per fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Folds {
    pub test: Vec<Vec<usize>>,
    pub grouped: bool,
}

impl Folds {
    /// Training rows of fold `i`: every row not held out by it.
    pub fn train(&self, i: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self.test.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, t)| t.iter().copied()).collect();
        rows.sort_unstable();
        rows
    }
}

/// Splits `rows` into `k` folds along group boundaries. Groups are shuffled
/// by `seed`, then placed largest first into the currently smallest fold.
/// With fewer than `k` groups, rows are dealt round-robin after a shuffle.
pub fn make_folds(set: &TrainingSet, rows: &[usize], k: usize, seed: u64) -> Result<Folds, TreeError> {
    if k < 2 || rows.len() < k {
        return Err(TreeError::InvalidFolds { folds: k, rows: rows.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by_group.entry(set.groups()[r]).or_default().push(r);
    }
    let mut test = vec![Vec::new(); k];
    let grouped = by_group.len() >= k;
    if grouped {
        let mut groups: Vec<Vec<usize>> = by_group.into_values().collect();
        groups.shuffle(&mut rng);
        groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
        for g in groups {
            let smallest = (0..k).min_by_key(|&i| test[i].len()).expect("k >= 2");
            test[smallest].extend(g);
        }
    } else {
        log::warn!("only {} capture groups for {k} folds; folding by row", by_group.len());
        let mut shuffled = rows.to_vec();
        shuffled.shuffle(&mut rng);
        for (i, r) in shuffled.into_iter().enumerate() {
            test[i % k].push(r);
        }
    }
    test.iter_mut().for_each(|t| t.sort_unstable());
    Ok(Folds { test, grouped })
}

fn fold_score(set: &TrainingSet, folds: &Folds, i: usize, features: &[usize], hp: &Hyperparams) -> Result<f64, TreeError> {
    let model = train_tree_on(set, &folds.train(i), features, hp)?;
    let test = &folds.test[i];
    let truth: Vec<usize> = test.iter().map(|&r| set.y()[r]).collect();
    let pred: Vec<usize> = test.iter().map(|&r| model.predict_unchecked(set.row(r)).class).collect();
    Ok(macro_f1_indices(&truth, &pred, set.n_classes()))
}

/// Mean cross-validated macro-F1 of `hp` over `folds`.
pub(crate) fn cv_score(set: &TrainingSet, folds: &Folds, features: &[usize], hp: &Hyperparams) -> Result<Vec<f64>, TreeError> {
    (0..folds.test.len()).map(|i| fold_score(set, folds, i, features, hp)).collect()
}

/// Random search over `space` scored by mean macro-F1 across group folds of
/// all rows. Returns the best configuration (earliest in grid order on ties).
pub fn tune(set: &TrainingSet, space: &SearchSpace, folds: usize, iters: usize, seed: u64) -> Result<TuneResult, TreeError> {
    let rows: Vec<usize> = (0..set.len()).collect();
    tune_on(set, &rows, space, folds, iters, seed)
}

pub fn tune_on(
    set: &TrainingSet,
    rows: &[usize],
    space: &SearchSpace,
    folds: usize,
    iters: usize,
    seed: u64,
) -> Result<TuneResult, TreeError> {
    let grid = space.grid(seed);
    if grid.is_empty() || iters == 0 {
        return Err(TreeError::EmptySpace);
    }
    grid.iter().try_for_each(Hyperparams::validate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = if grid.len() <= iters {
        (0..grid.len()).collect()
    } else {
        (0..grid.len()).collect::<Vec<_>>().choose_multiple(&mut rng, iters).copied().collect()
    };
    picked.sort_unstable();

    let f = make_folds(set, rows, folds, seed)?;
    let features: Vec<usize> = (0..set.n_features()).collect();
    let table = picked
        .par_iter()
        .map(|&g| {
            let params = grid[g];
            let fold_scores = cv_score(set, &f, &features, &params)?;
            let mean_macro_f1 = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            Ok(CvRow { params, fold_scores, mean_macro_f1 })
        })
        .collect::<Result<Vec<_>, TreeError>>()?;
    let best = table
        .iter()
        .fold(None::<&CvRow>, |acc, row| match acc {
            Some(b) if b.mean_macro_f1 >= row.mean_macro_f1 => Some(b),
            _ => Some(row),
        })
        .expect("at least one configuration");
    Ok(TuneResult { best: best.params, best_score: best.mean_macro_f1, table: table.clone(), grouped_folds: f.grouped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterFold {
    pub params: Hyperparams,
    pub inner_score: f64,
    pub test_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvResult {
    pub outer: Vec<OuterFold>,
    pub mean_macro_f1: f64,
}

/// Tuning inside each outer training fold, scored on the outer test fold.
pub fn nested_cv(
    set: &TrainingSet,
    space: &SearchSpace,
    outer_folds: usize,
    inner_folds: usize,
    iters: usize,
    seed: u64,
) -> Result<NestedCvResult, TreeError> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let outer = make_folds(set, &rows, outer_folds, seed)?;
    let features: Vec<usize> = (0..set.n_features()).collect();
    let mut results = Vec::with_capacity(outer_folds);
    for i in 0..outer_folds {
        let train = outer.train(i);
        let inner = tune_on(set, &train, space, inner_folds, iters, seed.wrapping_add(i as u64 + 1))?;
        let model = train_tree_on(set, &train, &features, &inner.best)?;
        let test = &outer.test[i];
        let truth: Vec<usize> = test.iter().map(|&r| set.y()[r]).collect();
        let pred: Vec<usize> = test.iter().map(|&r| model.predict_unchecked(set.row(r)).class).collect();
        results.push(OuterFold {
            params: inner.best,
            inner_score: inner.best_score,
            test_macro_f1: macro_f1_indices(&truth, &pred, set.n_classes()),
        });
    }
    let mean_macro_f1 = results.iter().map(|o| o.test_macro_f1).sum::<f64>() / results.len() as f64;
    Ok(NestedCvResult { outer: results, mean_macro_f1 })
}
