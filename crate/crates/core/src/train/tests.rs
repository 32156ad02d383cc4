use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::models::{Fusion, Mode, Model, ModelKind};
use crate::pointcloud::Point3;
use crate::synth::{default_archetypes, generate_dataset, DatasetOptions, PointCount};
use crate::tensor::Optimizer;

fn dataset(counts: &[usize]) -> LabeledDataset {
    let mut items = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for j in 0..n {
            let p = Point3::new(label as f64, j as f64, 1.0);
            items.push(LabeledItem {
                cloud: PointCloud::new(format!("c{label}_{j}"), vec![p]).unwrap(),
                label,
            });
        }
    }
    let names = (0..counts.len()).map(|i| format!("s{i}")).collect();
    LabeledDataset::new(items, ClassDictionary::closed(names)).unwrap()
}

fn ids(ds: &LabeledDataset) -> Vec<String> {
    ds.items().iter().map(|i| i.cloud.id.clone()).collect()
}

#[test]
fn dataset_rejects_bad_labels_and_duplicate_ids() {
    let d = ClassDictionary::closed(vec!["a".into()]);
    let c = PointCloud::new("x", vec![Point3::default()]).unwrap();
    let bad = LabeledItem {
        cloud: c.clone(),
        label: 1,
    };
    assert!(matches!(
        LabeledDataset::new(vec![bad], d.clone()),
        Err(Error::LabelOutOfRange { .. })
    ));
    let twice = vec![
        LabeledItem {
            cloud: c.clone(),
            label: 0,
        },
        LabeledItem { cloud: c, label: 0 },
    ];
    assert!(LabeledDataset::new(twice, d).is_err());
}

#[test]
fn split_examples() {
    let ds = dataset(&[100]);
    let (tr, te) = stratified_split(&ds, 0.8, 3).unwrap();
    assert_eq!((tr.len(), te.len()), (80, 20));
    let (tr2, te2) = stratified_split(&ds, 0.8, 3).unwrap();
    assert_eq!((ids(&tr), ids(&te)), (ids(&tr2), ids(&te2)));
    assert_ne!(ids(&stratified_split(&ds, 0.8, 4).unwrap().0), ids(&tr));
    assert!(matches!(
        stratified_split(&dataset(&[5, 1]), 0.8, 0),
        Err(Error::ClassTooSmall { class: 1, count: 1 })
    ));
    assert!(stratified_split(&ds, 1.0, 0).is_err());
    // an empty class is skipped, not an error
    let (tr, te) = stratified_split(&dataset(&[4, 0, 3]), 0.5, 0).unwrap();
    assert_eq!(
        (tr.class_counts(), te.class_counts()),
        (vec![2, 0, 1], vec![2, 0, 2])
    );
}

#[test]
fn resample_examples() {
    let ds = dataset(&[10, 4]);
    assert_eq!(resample(&ds, Resample::None, 0), ds);
    let up = resample(&ds, Resample::Up, 1);
    assert_eq!(up.class_counts(), vec![10, 10]);
    let down = resample(&ds, Resample::Down, 1);
    assert_eq!(down.class_counts(), vec![4, 4]);
    // the result is itself a valid dataset
    LabeledDataset::new(up.items().to_vec(), up.dictionary().clone()).unwrap();
    assert_eq!("up".parse::<Resample>().unwrap(), Resample::Up);
    assert!("sideways".parse::<Resample>().is_err());
}

proptest! {
    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(2usize..30, 1..5),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let ds = dataset(&counts);
        let (tr, te) = stratified_split(&ds, fraction, seed).unwrap();
        let a: HashSet<String> = ids(&tr).into_iter().collect();
        let b: HashSet<String> = ids(&te).into_iter().collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), ds.len());
        for (c, &n) in counts.iter().enumerate() {
            let t = tr.class_counts()[c] as f64;
            prop_assert!((t - fraction * n as f64).abs() <= 1.0);
        }
        // original order survives in both halves
        let pos = |id: &String| ids(&ds).iter().position(|x| x == id).unwrap();
        let order: Vec<usize> = ids(&tr).iter().map(pos).collect();
        prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn resample_keeps_or_never_duplicates_originals(
        counts in prop::collection::vec(1usize..20, 1..5),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&counts);
        let orig: HashSet<String> = ids(&ds).into_iter().collect();
        let up = resample(&ds, Resample::Up, seed);
        let up_ids: HashSet<String> = ids(&up).into_iter().collect();
        prop_assert!(orig.is_subset(&up_ids));
        prop_assert_eq!(up_ids.len(), up.len());
        let max = *counts.iter().max().unwrap();
        prop_assert!(up.class_counts().iter().all(|&c| c == max));

        let down = resample(&ds, Resample::Down, seed);
        let down_ids: Vec<String> = ids(&down);
        let unique: HashSet<&String> = down_ids.iter().collect();
        prop_assert_eq!(unique.len(), down_ids.len());
        prop_assert!(down_ids.iter().all(|id| orig.contains(id)));
        let min = *counts.iter().min().unwrap();
        prop_assert!(down.class_counts().iter().all(|&c| c == min));
    }
}

fn synth_split(per_class: usize, points: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let opts = DatasetOptions {
        per_class,
        points: PointCount::Fixed(points),
        ..Default::default()
    };
    let s = generate_dataset(&default_archetypes(), &opts, seed).unwrap();
    stratified_split(&s.dataset, 0.75, seed).unwrap()
}

fn small_config(model: ModelKind) -> TrainConfig {
    TrainConfig {
        model,
        batch_size: 8,
        epochs: 2,
        lr: 1e-3,
        seed: 11,
        tiny: true,
        res: 16,
        input_points: (model == ModelKind::PcTrees).then_some(128),
        ..Default::default()
    }
}

#[test]
fn loss_falls_on_a_repeated_batch_for_every_architecture() {
    let (train, _) = synth_split(4, 200, 2);
    for model_kind in ModelKind::ALL {
        let cfg = small_config(model_kind);
        let arch = cfg.architecture(3).unwrap();
        let input = Preprocessor::input_for(&arch, cfg.raster_extent, cfg.raster_mode);
        let prep = Preprocessor::fit(cfg.height_rescale(), input, &train.clouds(), 0).unwrap();
        let enc = prep.encode(&train.clouds()).unwrap();
        let all: Vec<usize> = (0..enc.len()).collect();
        let x = enc.batch(&all).unwrap();
        let y = train.labels();
        let mut model = Model::new(arch, 5).unwrap();
        let mut opt = Optimizer::adam(model.params.values(), 1e-3);
        let mut losses = Vec::new();
        for _ in 0..10 {
            // session seed fixed: the dropout mask, and so the objective,
            // is the same every step
            let (net, mut s) = model.session(Mode::Train, 0);
            let loss = net.forward(&mut s, &x).unwrap().cross_entropy(&y).unwrap();
            loss.backward();
            let g = s.grads();
            drop(s);
            opt.step(model.params.values_mut(), &g).unwrap();
            losses.push(loss.item().unwrap());
        }
        assert!(
            losses[9] < losses[0],
            "{model_kind}: loss did not fall over 10 steps: {losses:?}"
        );
    }
}

#[test]
fn training_is_deterministic_and_reports_every_epoch() {
    let (train, test) = synth_split(4, 150, 7);
    for model_kind in [ModelKind::PcTrees, ModelKind::BaselinePlusPlus] {
        let cfg = small_config(model_kind);
        let a = train_model(&cfg, &train, &test, |_| true).unwrap();
        let b = train_model(&cfg, &train, &test, |_| true).unwrap();
        assert_eq!(a.history.len(), 2);
        let strip = |o: &TrainOutcome| {
            o.history
                .iter()
                .map(|r| {
                    (
                        r.epoch,
                        r.loss,
                        r.report.overall_accuracy,
                        r.report.auc_macro_ovr,
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.initial.overall_accuracy, b.initial.overall_accuracy);
        let r = a.final_report();
        assert_eq!(r.reference.unwrap().model, model_kind);
        let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
        assert_eq!(r.overall_accuracy, trace as f64 / test.len() as f64);

        let dir = tempfile::tempdir().unwrap();
        write_metrics(&dir.path().join("a.csv"), &a.history, false).unwrap();
        write_metrics(&dir.path().join("b.csv"), &b.history, false).unwrap();
        let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(
            text,
            std::fs::read_to_string(dir.path().join("b.csv")).unwrap()
        );
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("epoch,loss,overall_accuracy,auc_macro_ovr,seconds\n"));
    }
}

#[test]
fn callback_can_stop_a_run() {
    let (train, test) = synth_split(3, 150, 1);
    let mut cfg = small_config(ModelKind::PcTrees);
    cfg.epochs = 5;
    let out = train_model(&cfg, &train, &test, |r| r.epoch < 2).unwrap();
    assert_eq!(out.history.len(), 2);
}

#[test]
fn saved_outcome_restores_preprocessing_and_predictions() {
    let (train, test) = synth_split(3, 150, 4);
    let cfg = small_config(ModelKind::Baseline);
    let out = train_model(&cfg, &train, &test, |_| true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.save(dir.path()).unwrap();
    let (mut model, kv) = Model::load(dir.path()).unwrap();
    let prep = Preprocessor::from_key_values(model.arch(), &kv).unwrap();
    assert_eq!(prep, out.preprocessor);
    assert_eq!(dictionary_from_key_values(&kv).unwrap(), out.dictionary);
    let enc = prep.encode(&test.clouds()).unwrap();
    let r = evaluate(&mut model, &enc, &test.labels()).unwrap();
    assert_eq!(r.overall_accuracy, out.final_report().overall_accuracy);
    assert_eq!(r.auc_macro_ovr, out.final_report().auc_macro_ovr);
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    assert_eq!(
        (c.batch_size, c.epochs, c.lr, c.split_fraction),
        (32, 100, 1e-5, 0.8)
    );
    c.validate().unwrap();
    c.fusion = Some(Fusion::Channels);
    assert!(c.validate().is_err());
    let c = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(c.validate().is_err());
    let c = TrainConfig {
        model: ModelKind::Baseline,
        ..Default::default()
    };
    assert_eq!(c.fusion(), Some(Fusion::Separate));
    assert!(!c.height_rescale());
    let c = TrainConfig {
        model: ModelKind::BaselinePlusPlus,
        height_rescale: Some(false),
        ..Default::default()
    };
    assert_eq!(c.fusion(), Some(Fusion::Channels));
    assert!(!c.height_rescale());
}

#[test]
fn mismatched_dictionaries_rejected() {
    let a = dataset(&[3, 3]);
    let b = dataset(&[3, 3, 3]);
    assert!(matches!(
        train_model(&small_config(ModelKind::PcTrees), &a, &b, |_| true),
        Err(Error::ConfigMismatch(_))
    ));
}
