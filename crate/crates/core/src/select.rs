//! Feature selection: importance voting to prune dead features, then a
//! genetic wrapper search scored by a decision tree on a capture-isolated
//! validation split.
//!
//! Four voters score every feature: chi-square and mutual information over
//! quantile bins, mean impurity importance from a bagged tree ensemble, and
//! permutation importance on a group-aware holdout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::macro_f1_indices;
use crate::tree::{cv_score, make_folds, train_tree_on, train_tree_with_importances, Hyperparams, TrainingSet, TreeError};

pub const TECHNIQUES: [&str; 4] = ["chi2", "mutual_info", "tree_importance", "permutation"];

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("need at least two classes, found {0}")]
    DegenerateData(usize),
    #[error("no feature survives the vote filter")]
    EmptyResult,
    #[error("feature pool is empty")]
    EmptyPool,
    #[error("feature {index} is outside the catalogue of {len}")]
    InvalidPool { index: usize, len: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least two capture groups for an isolated split, found {0}")]
    InsufficientGroups(usize),
    #[error("capture group {0} is in both the training and validation rows")]
    IsolationViolated(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub seed: u64,
    /// Share of features (by rank) each technique votes for.
    pub top_fraction: f64,
    /// Quantile bins for the chi-square and mutual-information scores.
    pub bins: usize,
    pub n_trees: usize,
    pub permutation_repeats: usize,
    /// Share of capture groups held out for permutation importance.
    pub holdout: f64,
    pub hyperparams: Hyperparams,
    /// Score each class against the rest; a feature votes for a technique if
    /// it wins that vote on any class.
    pub one_vs_rest: bool,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            seed: 0,
            top_fraction: 0.5,
            bins: 10,
            n_trees: 10,
            permutation_repeats: 3,
            holdout: 0.25,
            hyperparams: Hyperparams { max_depth: Some(12), ..Hyperparams::default() },
            one_vs_rest: false,
        }
    }
}

impl VoteConfig {
    fn validate(&self) -> Result<(), SelectError> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(SelectError::InvalidConfig(format!("top_fraction {} not in (0, 1]", self.top_fraction)));
        }
        if self.bins < 2 || self.n_trees == 0 || self.permutation_repeats == 0 {
            return Err(SelectError::InvalidConfig("bins >= 2, n_trees >= 1 and permutation_repeats >= 1 required".into()));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(SelectError::InvalidConfig(format!("holdout {} not in (0, 1)", self.holdout)));
        }
        self.hyperparams.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    /// One score per entry of [`TECHNIQUES`].
    pub scores: [f64; 4],
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteReport {
    pub features: Vec<FeatureScore>,
    /// In one-vs-rest mode: per class, the total votes each feature earned.
    pub per_class: BTreeMap<String, Vec<usize>>,
}

impl VoteReport {
    pub fn votes_of(&self, name: &str) -> Option<usize> {
        self.features.iter().find(|f| f.name == name).map(|f| f.votes)
    }

    /// The report restricted to `names`, in report order.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> VoteReport {
        let keep: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
        let idx: Vec<usize> = (0..self.features.len()).filter(|&i| keep.contains(self.features[i].name.as_str())).collect();
        VoteReport {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            per_class: self.per_class.iter().map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect())).collect(),
        }
    }

    /// `feature,chi2,mutual_info,tree_importance,permutation,votes`
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "feature,{},votes", TECHNIQUES.join(","))?;
        for f in &self.features {
            let scores: Vec<String> = f.scores.iter().map(|s| format!("{s:.6}")).collect();
            writeln!(out, "{},{},{}", f.name, scores.join(","), f.votes)?;
        }
        Ok(())
    }
}

/// Values mapped to quantile bins. Ties always share a bin, so a constant
/// column is a single bin and two equal columns bin identically.
fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..bins).map(|i| sorted[(i * n / bins).min(n - 1)]).collect();
    edges.dedup();
    values.iter().map(|v| edges.partition_point(|e| e <= v)).collect()
}

fn contingency(bins: &[usize], y: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let n_bins = bins.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; n_classes]; n_bins];
    for (&b, &c) in bins.iter().zip(y) {
        table[b][c] += 1;
    }
    table.retain(|row| row.iter().any(|&c| c > 0));
    table
}

fn chi2(table: &[Vec<u64>]) -> f64 {
    if table.len() < 2 {
        return 0.0;
    }
    let n: u64 = table.iter().flatten().sum();
    let k = table[0].len();
    let col: Vec<u64> = (0..k).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let mut total = 0.0;
    for row in table {
        let r: u64 = row.iter().sum();
        for c in 0..k {
            if col[c] == 0 {
                continue;
            }
            let e = r as f64 * col[c] as f64 / n as f64;
            let d = row[c] as f64 - e;
            total += d * d / e;
        }
    }
    total
}

/// Mutual information in bits.
fn mutual_info(table: &[Vec<u64>]) -> f64 {
    if table.len() < 2 {
        return 0.0;
    }
    let n = table.iter().flatten().sum::<u64>() as f64;
    let k = table[0].len();
    let col: Vec<f64> = (0..k).map(|c| table.iter().map(|r| r[c]).sum::<u64>() as f64).collect();
    let mut total = 0.0;
    for row in table {
        let r = row.iter().sum::<u64>() as f64;
        for c in 0..k {
            if row[c] > 0 {
                let joint = row[c] as f64;
                total += joint / n * (joint * n / (r * col[c])).log2();
            }
        }
    }
    total.max(0.0)
}

/// Splits `rows` into training and held-out rows along group boundaries,
/// holding out about `ratio` of the groups (at least one, never all).
pub fn group_holdout(set: &TrainingSet, rows: &[usize], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), SelectError> {
    let groups: BTreeSet<usize> = rows.iter().map(|&r| set.groups()[r]).collect();
    if groups.len() < 2 {
        return Err(SelectError::InsufficientGroups(groups.len()));
    }
    let mut order: Vec<usize> = groups.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = ((order.len() as f64 * ratio).round() as usize).clamp(1, order.len() - 1);
    let held: BTreeSet<usize> = order[..n_held].iter().copied().collect();
    let (valid, train): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| held.contains(&set.groups()[r]));
    Ok((train, valid))
}

fn check_isolated(set: &TrainingSet, train: &[usize], valid: &[usize]) -> Result<(), SelectError> {
    let train_groups: BTreeSet<usize> = train.iter().map(|&r| set.groups()[r]).collect();
    match valid.iter().map(|&r| set.groups()[r]).find(|g| train_groups.contains(g)) {
        Some(g) => Err(SelectError::IsolationViolated(g)),
        None => Ok(()),
    }
}

fn filter_scores(set: &TrainingSet, bins: usize) -> Vec<(f64, f64)> {
    (0..set.n_features())
        .into_par_iter()
        .map(|f| {
            let col: Vec<f64> = (0..set.len()).map(|r| set.value(r, f)).collect();
            let table = contingency(&quantile_bins(&col, bins), set.y(), set.n_classes());
            (chi2(&table), mutual_info(&table))
        })
        .collect()
}

fn bagged_importance(set: &TrainingSet, cfg: &VoteConfig) -> Result<Vec<f64>, SelectError> {
    let features: Vec<usize> = (0..set.n_features()).collect();
    let per_tree = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let sample: Vec<usize> = (0..set.len()).map(|_| rng.gen_range(0..set.len())).collect();
            train_tree_with_importances(set, &sample, &features, &cfg.hyperparams).map(|(_, imp)| imp)
        })
        .collect::<Result<Vec<_>, TreeError>>()?;
    let mut mean = vec![0.0; set.n_features()];
    for imp in &per_tree {
        mean.iter_mut().zip(imp).for_each(|(m, v)| *m += v / cfg.n_trees as f64);
    }
    Ok(mean)
}

fn permutation_importance(set: &TrainingSet, cfg: &VoteConfig) -> Result<Vec<f64>, SelectError> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let (train, held) = match group_holdout(set, &rows, cfg.holdout, cfg.seed) {
        Ok(split) => split,
        Err(SelectError::InsufficientGroups(_)) => {
            log::warn!("fewer than two capture groups; permutation holdout is row-level");
            group_holdout(&set.ungrouped(), &rows, cfg.holdout, cfg.seed)?
        }
        Err(e) => return Err(e),
    };
    let features: Vec<usize> = (0..set.n_features()).collect();
    let model = train_tree_on(set, &train, &features, &cfg.hyperparams)?;
    let truth: Vec<usize> = held.iter().map(|&r| set.y()[r]).collect();
    let score = |rows: &mut dyn Iterator<Item = Vec<f64>>| {
        let pred: Vec<usize> = rows.map(|x| model.predict_unchecked(&x).class).collect();
        macro_f1_indices(&truth, &pred, set.n_classes())
    };
    let base = score(&mut held.iter().map(|&r| set.row(r).to_vec()));
    let drops = features
        .par_iter()
        .map(|&f| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (f as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut total = 0.0;
            for _ in 0..cfg.permutation_repeats {
                let mut col: Vec<f64> = held.iter().map(|&r| set.value(r, f)).collect();
                col.shuffle(&mut rng);
                let permuted = held.iter().zip(&col).map(|(&r, &v)| {
                    let mut x = set.row(r).to_vec();
                    x[f] = v;
                    x
                });
                total += base - score(&mut permuted.into_iter());
            }
            total / cfg.permutation_repeats as f64
        })
        .collect();
    Ok(drops)
}

/// Features winning each technique's vote: score at or above the score
/// ranked `ceil(top_fraction * d)`, and strictly positive.
fn technique_votes(scores: &[f64], top_fraction: f64) -> Vec<bool> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((top_fraction * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
    let cut = sorted[k - 1];
    scores.iter().map(|&s| s >= cut && s > 0.0).collect()
}

fn score_matrix(set: &TrainingSet, cfg: &VoteConfig) -> Result<Vec<[f64; 4]>, SelectError> {
    let filters = filter_scores(set, cfg.bins);
    let bagged = bagged_importance(set, cfg)?;
    let perm = permutation_importance(set, cfg)?;
    Ok((0..set.n_features()).map(|f| [filters[f].0, filters[f].1, bagged[f], perm[f]]).collect())
}

fn votes_matrix(scores: &[[f64; 4]], top_fraction: f64) -> Vec<[bool; 4]> {
    let mut out = vec![[false; 4]; scores.len()];
    for t in 0..TECHNIQUES.len() {
        let col: Vec<f64> = scores.iter().map(|s| s[t]).collect();
        for (f, v) in technique_votes(&col, top_fraction).into_iter().enumerate() {
            out[f][t] = v;
        }
    }
    out
}

/// Scores every feature with the four techniques and counts its votes.
pub fn score_features(set: &TrainingSet, cfg: &VoteConfig) -> Result<VoteReport, SelectError> {
    cfg.validate()?;
    let present: BTreeSet<usize> = set.y().iter().copied().collect();
    if present.len() < 2 {
        return Err(SelectError::DegenerateData(present.len()));
    }
    let names = &set.schema().feature_names;
    if !cfg.one_vs_rest {
        let scores = score_matrix(set, cfg)?;
        let votes = votes_matrix(&scores, cfg.top_fraction);
        let features = names
            .iter()
            .zip(scores.iter().zip(&votes))
            .map(|(name, (s, v))| FeatureScore { name: name.clone(), scores: *s, votes: v.iter().filter(|&&b| b).count() })
            .collect();
        return Ok(VoteReport { features, per_class: BTreeMap::new() });
    }

    let mut sums = vec![[0.0; 4]; set.n_features()];
    let mut any = vec![[false; 4]; set.n_features()];
    let mut per_class = BTreeMap::new();
    for &class in &present {
        let scores = score_matrix(&set.one_vs_rest(class), cfg)?;
        let votes = votes_matrix(&scores, cfg.top_fraction);
        for f in 0..set.n_features() {
            for t in 0..TECHNIQUES.len() {
                sums[f][t] += scores[f][t] / present.len() as f64;
                any[f][t] |= votes[f][t];
            }
        }
        per_class.insert(set.labels()[class].clone(), votes.iter().map(|v| v.iter().filter(|&&b| b).count()).collect());
    }
    let features = names
        .iter()
        .enumerate()
        .map(|(f, name)| FeatureScore { name: name.clone(), scores: sums[f], votes: any[f].iter().filter(|&&b| b).count() })
        .collect();
    Ok(VoteReport { features, per_class })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteFilter {
    pub retained: Vec<String>,
    pub removed: Vec<String>,
}

/// Keeps features with at least `min_votes` votes.
pub fn vote_filter(report: &VoteReport, min_votes: usize) -> Result<VoteFilter, SelectError> {
    let (kept, dropped): (Vec<&FeatureScore>, Vec<&FeatureScore>) = report.features.iter().partition(|f| f.votes >= min_votes);
    if kept.is_empty() {
        return Err(SelectError::EmptyResult);
    }
    Ok(VoteFilter {
        retained: kept.into_iter().map(|f| f.name.clone()).collect(),
        removed: dropped.into_iter().map(|f| f.name.clone()).collect(),
    })
}

/// Column indices of `names` in `set`.
pub fn resolve_features<S: AsRef<str>>(set: &TrainingSet, names: &[S]) -> Result<Vec<usize>, SelectError> {
    let all = &set.schema().feature_names;
    names
        .iter()
        .map(|n| all.iter().position(|a| a == n.as_ref()).ok_or_else(|| SelectError::UnknownFeature(n.as_ref().to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability; `None` means `1 / |pool|`.
    pub mutation_rate: Option<f64>,
    pub tournament_k: usize,
    pub seed: u64,
    /// Share of capture groups used for validation.
    pub validation_ratio: f64,
    pub hyperparams: Hyperparams,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            generations: 30,
            crossover_rate: 0.9,
            mutation_rate: None,
            tournament_k: 3,
            seed: 0,
            validation_ratio: 0.25,
            hyperparams: Hyperparams::default(),
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<(), SelectError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.population < 2 || self.generations < 1 || self.tournament_k < 2 {
            return Err(SelectError::InvalidConfig("population >= 2, generations >= 1 and tournament_k >= 2 required".into()));
        }
        if !unit(self.crossover_rate) || !self.mutation_rate.is_none_or(unit) {
            return Err(SelectError::InvalidConfig("crossover and mutation rates must lie in [0, 1]".into()));
        }
        if !(self.validation_ratio > 0.0 && self.validation_ratio < 1.0) {
            return Err(SelectError::InvalidConfig(format!("validation_ratio {} not in (0, 1)", self.validation_ratio)));
        }
        self.hyperparams.validate()?;
        Ok(())
    }
}

/// One bit per catalogue feature and the validation macro-F1 it achieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub names: Vec<String>,
    pub bits: Vec<bool>,
    pub fitness: f64,
}

impl SelectionMask {
    pub fn selected(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn selected_names(&self) -> Vec<&str> {
        self.selected().into_iter().map(|i| self.names[i].as_str()).collect()
    }

    /// Retained feature names, one per line.
    pub fn write_mask<W: Write>(&self, mut out: W) -> io::Result<()> {
        self.selected_names().into_iter().try_for_each(|n| writeln!(out, "{n}"))
    }
}

/// Reads a mask file: one feature name per line, blank lines and `#`
/// comments ignored.
pub fn read_mask_file(path: &Path) -> Result<Vec<String>, SelectError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_so_far: f64,
    pub generation_best: f64,
    pub generation_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub mask: SelectionMask,
    /// Fitness of the whole pool.
    pub baseline_fitness: f64,
    pub trace: Vec<GenerationStats>,
    pub evaluations: usize,
}

type Chromosome = Vec<bool>;

/// Higher fitness wins, then fewer bits.
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn ones(c: &Chromosome) -> usize {
    c.iter().filter(|&&b| b).count()
}

fn repair(c: &mut Chromosome, rng: &mut ChaCha8Rng) {
    if !c.contains(&true) {
        let i = rng.gen_range(0..c.len());
        c[i] = true;
    }
}

struct Fitness<'a> {
    set: &'a TrainingSet,
    train: &'a [usize],
    valid: &'a [usize],
    truth: Vec<usize>,
    pool: &'a [usize],
    hp: &'a Hyperparams,
    cache: BTreeMap<Chromosome, f64>,
}

impl Fitness<'_> {
    fn eval_one(&self, c: &Chromosome) -> Result<f64, TreeError> {
        let features: Vec<usize> = c.iter().zip(self.pool).filter(|(&b, _)| b).map(|(_, &f)| f).collect();
        let model = train_tree_on(self.set, self.train, &features, self.hp)?;
        let pred: Vec<usize> = self.valid.iter().map(|&r| model.predict_unchecked(self.set.row(r)).class).collect();
        Ok(macro_f1_indices(&self.truth, &pred, self.set.n_classes()))
    }

    /// Scores the whole population, evaluating unseen chromosomes in parallel.
    fn eval(&mut self, pop: &[Chromosome]) -> Result<Vec<f64>, TreeError> {
        let fresh: Vec<&Chromosome> = pop.iter().filter(|c| !self.cache.contains_key(*c)).collect::<BTreeSet<_>>().into_iter().collect();
        let scores = fresh.par_iter().map(|c| self.eval_one(c)).collect::<Result<Vec<_>, _>>()?;
        for (c, s) in fresh.into_iter().zip(scores) {
            self.cache.insert(c.clone(), s);
        }
        Ok(pop.iter().map(|c| self.cache[c]).collect())
    }
}

fn tournament(fit: &[f64], pop: &[Chromosome], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..k {
        let i = rng.gen_range(0..pop.len());
        if better((fit[i], ones(&pop[i])), (fit[best], ones(&pop[best]))) {
            best = i;
        }
    }
    best
}

/// Genetic search over subsets of `pool`. Fitness is the macro-F1 of a tree
/// trained on `train` rows and scored on `valid` rows using only the masked
/// features; the two row sets must share no capture group.
pub fn ga_select(set: &TrainingSet, train: &[usize], valid: &[usize], pool: &[usize], cfg: &GaConfig) -> Result<GaResult, SelectError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    if let Some(&index) = pool.iter().find(|&&f| f >= set.n_features()) {
        return Err(SelectError::InvalidPool { index, len: set.n_features() });
    }
    if train.is_empty() || valid.is_empty() {
        return Err(SelectError::Tree(TreeError::EmptyTrainingSet));
    }
    check_isolated(set, train, valid)?;

    let n = pool.len();
    let mutation = cfg.mutation_rate.unwrap_or(1.0 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fitness = Fitness {
        set,
        train,
        valid,
        truth: valid.iter().map(|&r| set.y()[r]).collect(),
        pool,
        hp: &cfg.hyperparams,
        cache: BTreeMap::new(),
    };

    let mut pop: Vec<Chromosome> = vec![vec![true; n]];
    while pop.len() < cfg.population {
        let mut c: Chromosome = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        repair(&mut c, &mut rng);
        pop.push(c);
    }
    let mut fit = fitness.eval(&pop)?;
    let baseline_fitness = fit[0];
    let mut best = (pop[0].clone(), fit[0]);
    let mut trace = Vec::with_capacity(cfg.generations + 1);

    for generation in 0..=cfg.generations {
        if generation > 0 {
            let elite = (0..pop.len()).fold(0, |b, i| if better((fit[i], ones(&pop[i])), (fit[b], ones(&pop[b]))) { i } else { b });
            let mut next = vec![pop[elite].clone()];
            while next.len() < cfg.population {
                let a = pop[tournament(&fit, &pop, cfg.tournament_k, &mut rng)].clone();
                let b = pop[tournament(&fit, &pop, cfg.tournament_k, &mut rng)].clone();
                let (mut c1, mut c2) = (a, b);
                if rng.gen_bool(cfg.crossover_rate) {
                    for i in 0..n {
                        if rng.gen_bool(0.5) {
                            std::mem::swap(&mut c1[i], &mut c2[i]);
                        }
                    }
                }
                for c in [&mut c1, &mut c2] {
                    c.iter_mut().for_each(|bit| {
                        if rng.gen_bool(mutation) {
                            *bit = !*bit;
                        }
                    });
                    repair(c, &mut rng);
                }
                next.push(c1);
                if next.len() < cfg.population {
                    next.push(c2);
                }
            }
            pop = next;
            fit = fitness.eval(&pop)?;
        }
        for (c, &f) in pop.iter().zip(&fit) {
            if better((f, ones(c)), (best.1, ones(&best.0))) {
                best = (c.clone(), f);
            }
        }
        let generation_best = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        trace.push(GenerationStats {
            generation,
            best_so_far: best.1,
            generation_best,
            generation_mean: fit.iter().sum::<f64>() / fit.len() as f64,
        });
        log::debug!("generation {generation}: best so far {:.4}", best.1);
    }

    let mut bits = vec![false; set.n_features()];
    for (&b, &f) in best.0.iter().zip(pool) {
        bits[f] = b;
    }
    let mask = SelectionMask { names: set.schema().feature_names.clone(), bits, fitness: best.1 };
    Ok(GaResult { mask, baseline_fitness, trace, evaluations: fitness.cache.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub feature: String,
    pub cv_baseline: f64,
    pub cv_with: f64,
    pub isolated_baseline: f64,
    pub isolated_with: f64,
}

impl LeakageRow {
    /// How much more the feature appears to help under row-level folds than
    /// under capture-isolated folds.
    pub fn gap(&self) -> f64 {
        self.cv_with - self.isolated_with
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub folds: usize,
    /// False when there were too few captures for isolated folds.
    pub isolated: bool,
    pub rows: Vec<LeakageRow>,
}

impl LeakageReport {
    /// `feature,cv_baseline,cv_with,isolated_baseline,isolated_with,gap`
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "feature,cv_baseline,cv_with,isolated_baseline,isolated_with,gap")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.feature,
                r.cv_baseline,
                r.cv_with,
                r.isolated_baseline,
                r.isolated_with,
                r.gap()
            )?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean macro-F1 of the baseline features with and without each candidate
/// column, under row-level folds and under capture-isolated folds.
pub fn audit_leakage<S: AsRef<str> + Sync>(
    set: &TrainingSet,
    candidates: &[(S, Vec<f64>)],
    folds: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<LeakageReport, SelectError> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let base_features: Vec<usize> = (0..set.n_features()).collect();
    let row_folds = make_folds(&set.ungrouped(), &rows, folds, seed)?;
    let group_folds = make_folds(set, &rows, folds, seed)?;
    if !group_folds.grouped {
        log::warn!("too few captures for isolated folds; isolated scores are row-level");
    }
    let cv_baseline = mean(&cv_score(set, &row_folds, &base_features, hp)?);
    let isolated_baseline = mean(&cv_score(set, &group_folds, &base_features, hp)?);
    let out = candidates
        .par_iter()
        .map(|(name, values)| {
            let extended = set.append_column(name.as_ref(), values)?;
            let features: Vec<usize> = (0..extended.n_features()).collect();
            Ok(LeakageRow {
                feature: name.as_ref().to_string(),
                cv_baseline,
                cv_with: mean(&cv_score(&extended, &row_folds, &features, hp)?),
                isolated_baseline,
                isolated_with: mean(&cv_score(&extended, &group_folds, &features, hp)?),
            })
        })
        .collect::<Result<Vec<_>, TreeError>>()?;
    Ok(LeakageReport { folds, isolated: group_folds.grouped, rows: out })
}
