use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use devid_core::aggregate::{aggregate, mixed, AggregationConfig};
use devid_core::dataset::{
    assign_labels, assign_labels_by_capture, cap_per_class, discover_captures, extract_captures, merge_labels, read_dataset,
    split_by_capture, write_dataset, AliasMap, LabelMap, Partition, PacketRecord, SessionValues, SplitPlan,
};
use devid_core::metrics::{evaluate as score, evaluate_by_device, sweep_group_size, write_sweep_csv};
use devid_core::select::{
    audit_leakage as audit, ga_select, group_holdout, read_mask_file, resolve_features, score_features, vote_filter, GaConfig,
    VoteConfig,
};
use devid_core::tree::{load_model, nested_cv, save_model, train_tree, tune as tune_search, FeatureSchema, Hyperparams, SearchSpace, TuneResult};
use devid_core::{FeatureCatalogue, TrainingSet};

use crate::files::{join, resolve, sibling, truth_index, write_predictions, GroupKey, Manifest, PredictionRow, Table, METHODS};
use crate::{
    AuditArgs, CatalogueArg, EvaluateArgs, ExtractArgs, LabelArgs, LabelSource, PredictArgs, SelectArgs, SplitArgs, SweepArgs,
    TrainArgs, TreeArgs, TuneArgs,
};

pub struct Context {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Context {
    fn out(&self, path: &Path) -> Result<PathBuf> {
        resolve(self.out_dir.as_deref(), path)
    }
}

fn load_catalogue(arg: &CatalogueArg, manifest: &mut Manifest) -> Result<FeatureCatalogue> {
    let cat = match &arg.catalogue {
        Some(path) => {
            manifest.input(path);
            FeatureCatalogue::load(path).with_context(|| format!("loading catalogue {}", path.display()))?
        }
        None => FeatureCatalogue::default_catalogue(),
    };
    manifest.catalogue_version = Some(cat.version().to_string());
    Ok(cat)
}

fn load_label_map(source: &str, manifest: &mut Manifest) -> Result<LabelMap> {
    if source == "aalto" {
        return Ok(LabelMap::aalto());
    }
    manifest.input(Path::new(source));
    LabelMap::load(source).with_context(|| format!("loading label map {source}"))
}

fn load_aliases(source: &str, manifest: &mut Manifest) -> Result<AliasMap> {
    if source == "aalto" {
        return Ok(AliasMap::aalto());
    }
    manifest.input(Path::new(source));
    AliasMap::load(source).with_context(|| format!("loading aliases {source}"))
}

/// Labels, merges, drops unlabelled records (unless kept) and caps classes.
fn label_records(mut records: Vec<PacketRecord>, args: &LabelArgs, keep_unlabelled: bool, seed: u64, manifest: &mut Manifest) -> Result<Vec<PacketRecord>> {
    let map = load_label_map(&args.label_map, manifest)?;
    let stats = match args.label_source {
        LabelSource::Mac => assign_labels(&mut records, &map),
        LabelSource::Capture => assign_labels_by_capture(&mut records, &map),
    };
    log::info!("{} labelled, {} unlabelled, {} behind shared MACs", stats.labeled, stats.unlabeled, stats.transfer);
    manifest.set("label_stats", stats);
    if let Some(source) = &args.aliases {
        merge_labels(&mut records, &load_aliases(source, manifest)?);
    }
    if !keep_unlabelled {
        records.retain(|r| r.label.is_some());
    }
    if let Some(cap) = args.cap_per_class {
        records = cap_per_class(records, cap, seed);
    }
    Ok(records)
}

fn hyperparams(args: &TreeArgs, seed: u64) -> Hyperparams {
    Hyperparams { max_depth: args.max_depth, min_samples_split: args.min_samples_split, min_samples_leaf: args.min_samples_leaf, seed }
}

fn load_training_set(features: &Path, cat: &FeatureCatalogue, manifest: &mut Manifest) -> Result<(Vec<PacketRecord>, TrainingSet)> {
    manifest.input(features);
    let records = read_dataset(features, cat).with_context(|| format!("reading {}", features.display()))?;
    let set = TrainingSet::from_records(&records, cat)?;
    manifest.set("rows", set.len());
    manifest.set("classes", set.n_classes());
    Ok((records, set))
}

fn apply_mask(set: TrainingSet, mask: Option<&Path>, manifest: &mut Manifest) -> Result<TrainingSet> {
    let Some(path) = mask else { return Ok(set) };
    manifest.input(path);
    let names = read_mask_file(path)?;
    if names.is_empty() {
        bail!("mask {} lists no features", path.display());
    }
    let keep = resolve_features(&set, &names)?;
    manifest.set("mask", &names);
    Ok(set.masked(&keep))
}

pub fn extract(ctx: &Context, a: ExtractArgs) -> Result<()> {
    let mut m = Manifest::new("extract", ctx.seed);
    let cat = load_catalogue(&a.catalogue, &mut m)?;
    m.input(&a.pcap_dir);
    let mut ids = discover_captures(&a.pcap_dir)?;
    if let (Some(plan_path), Some(part)) = (&a.split, &a.partition) {
        m.input(plan_path);
        let plan = SplitPlan::load(plan_path)?;
        let part: Partition = part.parse().map_err(|e: String| anyhow!(e))?;
        let unplanned = ids.iter().filter(|id| plan.partition_of(id).is_none()).count();
        if unplanned > 0 {
            log::warn!("{unplanned} captures are not in the split plan and are skipped");
        }
        ids.retain(|id| plan.partition_of(id) == Some(part));
        m.set("partition", part);
    }
    if ids.is_empty() {
        bail!("no capture files under {}", a.pcap_dir.display());
    }
    let ex = extract_captures(&a.pcap_dir, &ids, &cat, false)?;
    m.set("captures", ids.len());
    m.set("packets", ex.records.len());
    m.set("truncated_captures", &ex.truncated_captures);
    let records = label_records(ex.records, &a.labels, a.keep_unlabelled, ctx.seed, &mut m)?;
    m.set("records_written", records.len());
    let out = ctx.out(&a.out)?;
    write_dataset(&records, &cat, &out)?;
    m.write(&out)
}

pub fn split(ctx: &Context, a: SplitArgs) -> Result<()> {
    let mut m = Manifest::new("split", ctx.seed);
    m.input(&a.pcap_dir);
    let ids = discover_captures(&a.pcap_dir)?;
    let plan = split_by_capture(&ids, a.ratio, ctx.seed)?;
    m.set("train_files", plan.train_files.len());
    m.set("test_files", plan.test_files.len());
    m.set("single_file_devices", &plan.single_file_devices);
    let out = ctx.out(&a.out)?;
    plan.save(&out)?;
    m.write(&out)
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let mut m = Manifest::new("train", ctx.seed);
    let cat = load_catalogue(&a.catalogue, &mut m)?;
    let (_, set) = load_training_set(&a.features, &cat, &mut m)?;
    let set = apply_mask(set, a.mask.as_deref(), &mut m)?;
    let hp = match &a.params {
        Some(path) => {
            m.input(path);
            let tuned: TuneResult = serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?;
            Hyperparams { seed: ctx.seed, ..tuned.best }
        }
        None => hyperparams(&a.tree, ctx.seed),
    };
    let started = Instant::now();
    let model = train_tree(&set, &hp)?;
    m.set("train_t", started.elapsed().as_secs_f64());
    m.set("hyperparams", hp);
    m.set("depth", model.depth());
    m.set("nodes", model.nodes.len());
    let out = ctx.out(&a.out)?;
    save_model(&model, &out)?;
    m.write(&out)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| anyhow!("bad {what} value {s:?}")))
        .collect()
}

pub fn tune(ctx: &Context, a: TuneArgs) -> Result<()> {
    let mut m = Manifest::new("tune", ctx.seed);
    let cat = load_catalogue(&a.catalogue, &mut m)?;
    let (_, set) = load_training_set(&a.features, &cat, &mut m)?;
    let set = apply_mask(set, a.mask.as_deref(), &mut m)?;
    let max_depth = a
        .max_depths
        .split(',')
        .map(|s| match s.trim() {
            "none" => Ok(None),
            d => d.parse().map(Some).map_err(|_| anyhow!("bad depth {d:?}")),
        })
        .collect::<Result<Vec<_>>>()?;
    let space = SearchSpace {
        max_depth,
        min_samples_split: parse_list(&a.min_samples_splits, "min_samples_split")?,
        min_samples_leaf: parse_list(&a.min_samples_leaves, "min_samples_leaf")?,
    };
    let result = tune_search(&set, &space, a.folds, a.iters, ctx.seed)?;
    if !result.grouped_folds {
        log::warn!("folds are row-level: too few capture files for group folds");
    }
    let mut doc = serde_json::to_value(&result)?;
    if let Some(outer) = a.nested {
        let nested = nested_cv(&set, &space, outer, a.folds, a.iters, ctx.seed)?;
        doc["nested"] = serde_json::to_value(&nested)?;
        m.set("nested_macro_f1", nested.mean_macro_f1);
    }
    m.set("best", result.best);
    m.set("best_macro_f1", result.best_score);
    if let Some(path) = &a.model_out {
        let path = ctx.out(path)?;
        save_model(&train_tree(&set, &result.best)?, &path)?;
        m.output(&path);
    }
    let out = ctx.out(&a.out)?;
    fs::write(&out, serde_json::to_string_pretty(&doc)? + "\n")?;
    m.write(&out)
}

pub fn predict(ctx: &Context, a: PredictArgs) -> Result<()> {
    let mut m = Manifest::new("predict", ctx.seed);
    let cat = load_catalogue(&a.catalogue, &mut m)?;
    m.input(&a.features);
    m.input(&a.model);
    let model = load_model(&a.model, &FeatureSchema::from_catalogue(&cat))?;
    let records = read_dataset(&a.features, &cat)?;
    if records.is_empty() {
        bail!("{} holds no records", a.features.display());
    }

    let started = Instant::now();
    let predictions = records.iter().map(|r| model.predict(r.features.values())).collect::<Result<Vec<_>, _>>()?;
    let test_t = started.elapsed().as_secs_f64();
    let individual: Vec<&str> = predictions.iter().map(|p| model.label(p.class)).collect();
    let keys: Vec<GroupKey> = records.iter().enumerate().map(|(i, r)| GroupKey::of(r.mac, i)).collect();

    let cfg = a.aggregation.config();
    let started = Instant::now();
    let result = aggregate(&keys, &individual, &cfg)?;
    let mixed_labels = mixed(&keys, &individual, &result);
    let alg_t = started.elapsed().as_secs_f64();

    let rows: Vec<PredictionRow> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (ind, agg, mix) = (individual[i], result.new_labels[i], mixed_labels[i]);
            let predicted = match a.method {
                crate::Method::Individual => ind,
                crate::Method::Aggregated => agg,
                crate::Method::Mixed => mix,
            };
            PredictionRow {
                capture_id: r.capture_id.to_string(),
                index: r.index,
                mac: r.mac,
                individual: ind.into(),
                confidence: predictions[i].confidence,
                aggregated: agg.into(),
                mixed: mix.into(),
                predicted: predicted.into(),
            }
        })
        .collect();
    let exceptions: Vec<String> = result
        .exceptions
        .iter()
        .filter_map(|k| match k {
            GroupKey::Mac(mac) => Some(mac.to_string()),
            GroupKey::Solo(_) => None,
        })
        .collect();
    m.set("method", a.method.column());
    m.set("aggregation", cfg);
    m.set("exceptions", &exceptions);
    m.set("test_t", test_t);
    m.set("alg_t", alg_t);
    m.set("rows", rows.len());
    let out = ctx.out(&a.out)?;
    write_predictions(&out, &rows)?;
    m.write(&out)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let mut m = Manifest::new("evaluate", ctx.seed);
    m.input(&a.truth);
    m.input(&a.pred);
    let truth_table = Table::read(&a.truth)?;
    let pred = Table::read(&a.pred)?;
    let (rows, mut truth) = join(&truth_index(&truth_table)?, &pred)?;
    let aliases = a.aliases.as_deref().map(|s| load_aliases(s, &mut m)).transpose()?;
    let merge = |labels: &mut Vec<String>| {
        if let Some(al) = &aliases {
            labels.iter_mut().for_each(|l| *l = al.apply(l).to_string());
        }
    };
    merge(&mut truth);
    let column_labels = |col: usize| {
        let mut v: Vec<String> = rows.iter().map(|&i| pred.rows[i][col].clone()).collect();
        merge(&mut v);
        v
    };

    let method = a.method.column();
    let col = pred.column(method).or_else(|| pred.column("predicted")).ok_or_else(|| anyhow!("{} has no {method:?} or \"predicted\" column", a.pred.display()))?;
    let predicted = column_labels(col);
    let report = score(&truth, &predicted)?;
    if !report.prediction_only.is_empty() {
        log::warn!("labels predicted but never true: {}", report.prediction_only.join(", "));
    }

    let methods: Vec<(&str, Vec<String>)> = METHODS.iter().filter_map(|&name| pred.column(name).map(|c| (name, column_labels(c)))).collect();
    let methods: Vec<(&str, Vec<String>)> = if methods.is_empty() { vec![(method, predicted.clone())] } else { methods };
    let slices: Vec<(&str, &[String])> = methods.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    let devices = evaluate_by_device(&truth, &slices)?;

    let out = ctx.out(&a.out)?;
    write_file(&out, |w| report.write_csv(w))?;
    let confusion = sibling(&out, "confusion.csv");
    write_file(&confusion, |w| report.write_confusion_csv(w))?;
    let summary = sibling(&out, "json");
    fs::write(&summary, report.to_json() + "\n")?;
    let by_device = sibling(&out, "devices.csv");
    write_file(&by_device, |w| devices.write_csv(w))?;
    for p in [&confusion, &summary, &by_device] {
        m.output(p);
    }
    m.set("method", method);
    m.set("evaluated_rows", rows.len());
    m.set("unmatched_prediction_rows", pred.rows.len() - rows.len());
    m.set("accuracy", report.accuracy);
    m.set("macro_f1", report.macro_f1);
    let pred_manifest = a.pred.with_file_name(format!("{}.manifest.json", a.pred.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()));
    if let Ok(text) = fs::read_to_string(&pred_manifest) {
        let v: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
        m.set("test_t", v.get("test_t"));
        m.set("alg_t", v.get("alg_t"));
    }
    m.write(&out)
}

pub fn select_features(ctx: &Context, a: SelectArgs) -> Result<()> {
    let mut m = Manifest::new("select-features", ctx.seed);
    let cat = load_catalogue(&a.catalogue, &mut m)?;
    let (_, set) = load_training_set(&a.features, &cat, &mut m)?;
    let out = ctx.out(&a.out)?;

    let vote_cfg = VoteConfig { seed: ctx.seed, n_trees: a.trees, one_vs_rest: a.one_vs_rest, ..VoteConfig::default() };
    let report = score_features(&set, &vote_cfg)?;
    let votes_path = sibling(&out, "votes.csv");
    write_file(&votes_path, |w| report.write_csv(w))?;
    m.output(&votes_path);
    let filtered = vote_filter(&report, a.min_votes)?;
    log::info!("{} features kept by voting, {} removed", filtered.retained.len(), filtered.removed.len());
    m.set("removed_by_vote", &filtered.removed);

    let names: Vec<String> = if a.no_ga {
        filtered.retained
    } else {
        let pool = resolve_features(&set, &filtered.retained)?;
        let rows: Vec<usize> = (0..set.len()).collect();
        let (train_rows, valid_rows) = group_holdout(&set, &rows, a.validation_ratio, ctx.seed)?;
        let cfg = GaConfig {
            population: a.population,
            generations: a.generations,
            crossover_rate: a.crossover,
            mutation_rate: a.mutation,
            tournament_k: a.tournament,
            seed: ctx.seed,
            validation_ratio: a.validation_ratio,
            hyperparams: hyperparams(&a.tree, ctx.seed),
        };
        let result = ga_select(&set, &train_rows, &valid_rows, &pool, &cfg)?;
        let trace_path = sibling(&out, "trace.csv");
        write_file(&trace_path, |w| {
            writeln!(w, "generation,best_so_far,generation_best,generation_mean")?;
            for t in &result.trace {
                writeln!(w, "{},{:.6},{:.6},{:.6}", t.generation, t.best_so_far, t.generation_best, t.generation_mean)?;
            }
            Ok(())
        })?;
        m.output(&trace_path);
        m.set("baseline_fitness", result.baseline_fitness);
        m.set("fitness", result.mask.fitness);
        m.set("evaluations", result.evaluations);
        result.mask.selected_names().into_iter().map(String::from).collect()
    };
    m.set("selected", &names);
    write_file(&out, |w| names.iter().try_for_each(|n| writeln!(w, "{n}")))?;
    m.write(&out)
}

pub fn sweep(ctx: &Context, a: SweepArgs) -> Result<()> {
    let mut m = Manifest::new("sweep-group-size", ctx.seed);
    m.input(&a.truth);
    m.input(&a.pred);
    if a.g_min == 0 || a.g_max < a.g_min {
        bail!("group sizes must satisfy 1 <= g-min <= g-max");
    }
    let pred = Table::read(&a.pred)?;
    let (rows, truth) = join(&truth_index(&Table::read(&a.truth)?)?, &pred)?;
    let macs = pred.macs()?;
    let keys: Vec<GroupKey> = rows.iter().map(|&i| GroupKey::of(macs[i], i)).collect();
    let ind = pred.require("individual")?;
    let individual: Vec<String> = rows.iter().map(|&i| pred.rows[i][ind].clone()).collect();
    let base = AggregationConfig { tail: a.tail.parse().map_err(|e: String| anyhow!(e))?, ..AggregationConfig::default() };
    let gs = (a.g_min..=a.g_max).filter_map(NonZeroUsize::new);
    let table = sweep_group_size(&keys, &individual, &truth, gs, &base)?;
    let out = ctx.out(&a.out)?;
    write_file(&out, |w| write_sweep_csv(&table, w))?;
    m.set("rows", rows.len());
    m.write(&out)
}

pub fn audit_leakage(ctx: &Context, a: AuditArgs) -> Result<()> {
    let mut m = Manifest::new("audit-leakage", ctx.seed);
    let cat = load_catalogue(&a.catalogue, &mut m)?;
    m.input(&a.pcap_dir);
    let fields = a
        .fields
        .iter()
        .map(|f| SessionValues::NAMES.iter().position(|n| n == f).ok_or_else(|| anyhow!("unknown session field {f:?}; expected one of {:?}", SessionValues::NAMES)))
        .collect::<Result<Vec<_>>>()?;
    let ids = discover_captures(&a.pcap_dir)?;
    if ids.is_empty() {
        bail!("no capture files under {}", a.pcap_dir.display());
    }
    let ex = extract_captures(&a.pcap_dir, &ids, &cat, true)?;
    let session: HashMap<(Arc<str>, usize), SessionValues> =
        ex.records.iter().zip(&ex.session).map(|(r, s)| ((r.capture_id.clone(), r.index), *s)).collect();
    let records = label_records(ex.records, &a.labels, false, ctx.seed, &mut m)?;
    let set = TrainingSet::from_records(&records, &cat)?;
    let candidates: Vec<(&str, Vec<f64>)> = fields
        .iter()
        .map(|&f| (SessionValues::NAMES[f], records.iter().map(|r| session[&(r.capture_id.clone(), r.index)].get(f)).collect()))
        .collect();
    let report = audit(&set, &candidates, a.folds, &hyperparams(&a.tree, ctx.seed), ctx.seed)?;
    if !report.isolated {
        log::warn!("too few capture files for isolated folds");
    }
    let out = ctx.out(&a.out)?;
    write_file(&out, |w| report.write_csv(w))?;
    let json = sibling(&out, "json");
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;
    m.output(&json);
    m.set("rows", set.len());
    m.set("isolated", report.isolated);
    m.write(&out)
}
