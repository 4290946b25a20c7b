use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set_from(rows: Vec<Vec<f64>>, labels: &[&str]) -> TrainingSet {
    let d = rows[0].len();
    TrainingSet::new(FeatureSchema::anonymous(d), &rows, labels, None).unwrap()
}

fn separable() -> TrainingSet {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..100 {
        rows.push(vec![-1.0 - i as f64]);
        labels.push("A");
        rows.push(vec![i as f64]);
        labels.push("B");
    }
    set_from(rows, &labels)
}

/// Ten thousand points from a fixed threshold rule over two of five
/// uniform features.
fn three_class(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<&'static str>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        labels.push(if x[0] < 0.3 {
            "A"
        } else if x[2] < 0.6 {
            "B"
        } else {
            "C"
        });
        rows.push(x);
    }
    (rows, labels)
}

fn accuracy(model: &DecisionTreeModel, rows: &[Vec<f64>], labels: &[&str]) -> f64 {
    let hits = rows.iter().zip(labels).filter(|(r, l)| model.label(model.predict(r).unwrap().class) == **l).count();
    hits as f64 / rows.len() as f64
}

#[test]
fn separable_data_gives_a_stump() {
    let set = separable();
    let model = train_tree(&set, &Hyperparams::default()).unwrap();
    assert_eq!(model.depth(), 1);
    assert_eq!(model.nodes.len(), 3);
    match &model.nodes[0] {
        Node::Split { feature: 0, threshold, .. } => assert_eq!(*threshold, -0.5),
        other => panic!("unexpected root {other:?}"),
    }
    for r in 0..set.len() {
        assert_eq!(model.predict(set.row(r)).unwrap().class, set.y()[r]);
    }
    let p = model.predict(&[-5.0]).unwrap();
    assert_eq!((model.label(p.class), p.confidence), ("A", 1.0));
}

#[test]
fn single_class_is_one_leaf() {
    let set = set_from(vec![vec![1.0], vec![2.0], vec![3.0]], &["X", "X", "X"]);
    let model = train_tree(&set, &Hyperparams::default()).unwrap();
    assert_eq!(model.nodes, vec![Node::Leaf { counts: vec![3] }]);
    assert_eq!(model.predict(&[100.0]).unwrap(), Prediction { class: 0, confidence: 1.0 });
}

#[test]
fn wrong_vector_length() {
    let model = train_tree(&separable(), &Hyperparams::default()).unwrap();
    assert!(matches!(model.predict(&[1.0, 2.0]), Err(TreeError::CatalogueMismatch { expected: 1, found: 2 })));
}

#[test]
fn ties_prefer_lower_feature_then_lower_threshold() {
    // Thresholds 0.5 and 2.5 give the same impurity; so do the two copies.
    let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
    let set = set_from(rows, &["A", "B", "B", "A"]);
    let model = train_tree(&set, &Hyperparams { max_depth: Some(1), ..Hyperparams::default() }).unwrap();
    assert_eq!(model.nodes[0], Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 });
}

#[test]
fn leaf_ties_follow_label_table_order() {
    let set = set_from(vec![vec![0.0], vec![0.0]], &["B", "A"]);
    let model = train_tree(&set, &Hyperparams::default()).unwrap();
    let p = model.predict(&[0.0]).unwrap();
    assert_eq!((model.label(p.class), p.confidence), ("A", 0.5));
}

#[test]
fn generative_three_class_rule() {
    let (rows, labels) = three_class(10_000, 1);
    let set = set_from(rows[..8000].to_vec(), &labels[..8000]);
    let model = train_tree(&set, &Hyperparams::default()).unwrap();
    assert!(accuracy(&model, &rows[8000..], &labels[8000..]) >= 0.99);
    assert_eq!(model, train_tree(&set, &Hyperparams::default()).unwrap());
}

#[test]
fn counts_cover_training_set_and_depth_is_capped() {
    let (rows, labels) = three_class(3000, 2);
    let set = set_from(rows, &labels);
    for depth in [1, 2, 4, 7] {
        let hp = Hyperparams { max_depth: Some(depth), min_samples_leaf: 3, ..Hyperparams::default() };
        let model = train_tree(&set, &hp).unwrap();
        assert!(model.depth() <= depth);
        let total: u64 = model.nodes.iter().filter_map(|n| if let Node::Leaf { counts } = n { Some(counts.iter().sum::<u64>()) } else { None }).sum();
        assert_eq!(total, set.len() as u64);
        for n in &model.nodes {
            if let Node::Leaf { counts } = n {
                assert!(counts.iter().sum::<u64>() >= 3);
            }
        }
        model.validate().unwrap();
    }
}

#[test]
fn confidence_is_leaf_fraction() {
    let (rows, labels) = three_class(2000, 3);
    let set = set_from(rows.clone(), &labels);
    let model = train_tree(&set, &Hyperparams { max_depth: Some(2), ..Hyperparams::default() }).unwrap();
    for r in rows.iter().take(200) {
        let counts = model.leaf_for(r);
        let p = model.predict(r).unwrap();
        assert_eq!(p.confidence, counts[p.class] as f64 / counts.iter().sum::<u64>() as f64);
        assert!(counts.iter().all(|&c| c <= counts[p.class]));
    }
}

#[test]
fn importances_favour_informative_features() {
    let (rows, labels) = three_class(3000, 4);
    let set = set_from(rows, &labels);
    let all: Vec<usize> = (0..set.len()).collect();
    let (_, imp) = train_tree_with_importances(&set, &all, &[0, 1, 2, 3, 4], &Hyperparams::default()).unwrap();
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(imp[0] + imp[2] > 0.95);
}

#[test]
fn feature_subsets_are_respected() {
    let (rows, labels) = three_class(1000, 5);
    let set = set_from(rows, &labels);
    let all: Vec<usize> = (0..set.len()).collect();
    let model = train_tree_on(&set, &all, &[1, 3], &Hyperparams::default()).unwrap();
    assert!(model.nodes.iter().all(|n| !matches!(n, Node::Split { feature, .. } if *feature != 1 && *feature != 3)));
    assert_eq!(model.n_features(), 5);
}

#[test]
fn invalid_hyperparams() {
    let set = separable();
    for hp in [
        Hyperparams { max_depth: Some(0), ..Hyperparams::default() },
        Hyperparams { min_samples_split: 1, ..Hyperparams::default() },
        Hyperparams { min_samples_leaf: 0, ..Hyperparams::default() },
    ] {
        assert!(matches!(train_tree(&set, &hp), Err(TreeError::InvalidHyperparams(_))));
    }
    assert!(matches!(train_tree_on(&set, &[], &[0], &Hyperparams::default()), Err(TreeError::EmptyTrainingSet)));
}

#[test]
fn non_finite_inputs_rejected() {
    let err = TrainingSet::new(FeatureSchema::anonymous(1), &[vec![f64::NAN]], &["A"], None);
    assert!(matches!(err, Err(TreeError::NonFiniteFeature { row: 0, feature: 0 })));
}

#[test]
fn tune_single_configuration() {
    let set = separable();
    let space = SearchSpace { max_depth: vec![Some(3)], min_samples_split: vec![4], min_samples_leaf: vec![2] };
    let r = tune(&set, &space, 3, 20, 0).unwrap();
    assert_eq!(r.best, Hyperparams { max_depth: Some(3), min_samples_split: 4, min_samples_leaf: 2, seed: 0 });
    assert_eq!(r.table.len(), 1);
    let empty = SearchSpace { max_depth: vec![], ..SearchSpace::default() };
    assert!(matches!(tune(&set, &empty, 3, 20, 0), Err(TreeError::EmptySpace)));
}

#[test]
fn tune_is_deterministic_and_finds_separating_depth() {
    let (rows, labels) = three_class(3000, 6);
    let groups: Vec<usize> = (0..rows.len()).map(|i| i % 30).collect();
    let set = TrainingSet::new(FeatureSchema::anonymous(5), &rows, &labels, Some(&groups)).unwrap();
    let space = SearchSpace { max_depth: (1..=10).map(Some).collect(), min_samples_split: vec![2], min_samples_leaf: vec![1] };
    let a = tune(&set, &space, 3, 5, 9).unwrap();
    let b = tune(&set, &space, 3, 5, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.grouped_folds);
    assert_eq!(a.table.len(), 5);
    let full = tune(&set, &space, 3, 20, 9).unwrap();
    assert_eq!(full.table.len(), 10);
    assert!(full.best_score >= 0.99, "{}", full.best_score);
    assert!(full.best.max_depth.unwrap() >= 2);
}

#[test]
fn folds_respect_groups() {
    let (rows, labels) = three_class(600, 7);
    let groups: Vec<usize> = (0..rows.len()).map(|i| i / 50).collect();
    let set = TrainingSet::new(FeatureSchema::anonymous(5), &rows, &labels, Some(&groups)).unwrap();
    let all: Vec<usize> = (0..set.len()).collect();
    let folds = make_folds(&set, &all, 4, 1).unwrap();
    assert!(folds.grouped);
    let mut seen = vec![0; set.len()];
    for (i, t) in folds.test.iter().enumerate() {
        let test_groups: std::collections::BTreeSet<usize> = t.iter().map(|&r| groups[r]).collect();
        for r in folds.train(i) {
            assert!(!test_groups.contains(&groups[r]));
        }
        t.iter().for_each(|&r| seen[r] += 1);
    }
    assert!(seen.iter().all(|&s| s == 1));

    let few = make_folds(&set, &all, 20, 1).unwrap();
    assert!(!few.grouped);
    assert!(matches!(make_folds(&set, &all[..2], 3, 1), Err(TreeError::InvalidFolds { .. })));
}

#[test]
fn nested_cross_validation() {
    let (rows, labels) = three_class(1500, 8);
    let groups: Vec<usize> = (0..rows.len()).map(|i| i % 12).collect();
    let set = TrainingSet::new(FeatureSchema::anonymous(5), &rows, &labels, Some(&groups)).unwrap();
    let space = SearchSpace { max_depth: vec![Some(1), Some(4)], min_samples_split: vec![2], min_samples_leaf: vec![1] };
    let r = nested_cv(&set, &space, 3, 2, 5, 0).unwrap();
    assert_eq!(r.outer.len(), 3);
    assert!(r.outer.iter().all(|o| o.params.max_depth == Some(4)));
    assert!(r.mean_macro_f1 > 0.97);
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let (rows, labels) = three_class(2000, 9);
    let set = set_from(rows, &labels);
    let model = train_tree(&set, &Hyperparams::default()).unwrap();
    save_model(&model, &path).unwrap();
    let back = load_model(&path, set.schema()).unwrap();
    assert_eq!(back, model);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.5..1.5)).collect();
        assert_eq!(back.predict(&v).unwrap(), model.predict(&v).unwrap());
    }

    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_model(&path, set.schema()), Err(TreeError::CorruptModel(_))));

    save_model(&model, &path).unwrap();
    let v2 = FeatureSchema { catalogue_version: "v2".into(), ..set.schema().clone() };
    assert!(matches!(load_model(&path, &v2), Err(TreeError::VersionMismatch { .. })));
}

#[test]
fn structural_validation() {
    let model = train_tree(&separable(), &Hyperparams::default()).unwrap();
    let mut bad = model.clone();
    if let Node::Split { left, .. } = &mut bad.nodes[0] {
        *left = 0;
    }
    assert!(matches!(bad.validate(), Err(TreeError::CorruptModel(_))));
    let mut bad = model.clone();
    bad.nodes[1] = Node::Leaf { counts: vec![0, 0] };
    assert!(matches!(bad.validate(), Err(TreeError::CorruptModel(_))));
    let mut bad = model;
    bad.model_version = 99;
    assert!(matches!(bad.validate(), Err(TreeError::CorruptModel(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A strictly increasing transform of one feature moves thresholds but
    /// not partitions, so predictions on transformed training points match.
    #[test]
    fn monotone_transform_invariance(seed in any::<u64>(), feature in 0usize..3, kind in 0u8..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..3).map(|_| f64::from(rng.gen_range(0..40u8))).collect()).collect();
        let labels: Vec<&str> = rows.iter().map(|r| if r[0] + r[1] > 40.0 { "P" } else if r[2] > 20.0 { "Q" } else { "R" }).collect();
        let f = |v: f64| match kind { 0 => v.powi(3) + 7.0, 1 => (v + 1.0).ln(), _ => 2.0 * v - 100.0 };
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| { let mut r = r.clone(); r[feature] = f(r[feature]); r }).collect();
        let a = train_tree(&set_from(rows.clone(), &labels), &Hyperparams::default()).unwrap();
        let b = train_tree(&set_from(moved.clone(), &labels), &Hyperparams::default()).unwrap();
        for (r, m) in rows.iter().zip(&moved) {
            prop_assert_eq!(a.predict(r).unwrap(), b.predict(m).unwrap());
        }
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let (rows, labels) = three_class(400, seed);
        let set = set_from(rows, &labels);
        prop_assert_eq!(train_tree(&set, &Hyperparams::default()).unwrap(), train_tree(&set, &Hyperparams::default()).unwrap());
    }
}
