use ppc_core::models::{AdaptiveFusion, Model, ModelKind, ModelSpec};
use ppc_core::synthetic::{generate_dataset_with, DatasetConfig};
use ppc_core::training::{
    cross_validate, make_folds, ExperimentConfig, InputMode, LabeledScan, Method, Trained,
};
use ppc_core::Category;

fn tiny_dataset() -> Vec<LabeledScan> {
    let mut cfg = DatasetConfig::new(3, 3, 11);
    cfg.width = 64;
    generate_dataset_with(&cfg).unwrap()
}

fn spec(channels: usize) -> ModelSpec {
    ModelSpec::new(channels, true, true).with_divisor(16).with_input_size(32, 64)
}

#[test]
fn trained_models_survive_save_and_load() {
    let scans = tiny_dataset();
    let refs: Vec<&LabeledScan> = scans.iter().collect();
    let net = |channels, seed| Model::<f32>::build(spec(channels), seed).unwrap();
    let candidates = [
        Trained::Single {
            mode: InputMode::Both,
            model: Model::build_kind(ModelKind::Late, spec(2), 3).unwrap(),
        },
        Trained::Average { depth: net(1, 4), reflectance: net(1, 5) },
        Trained::Adaptive(AdaptiveFusion::new(net(1, 6), net(1, 7), 8, 9).unwrap()),
    ];
    for trained in candidates {
        let dir = tempfile::tempdir().unwrap();
        trained.save(dir.path()).unwrap();
        let loaded = Trained::load(dir.path()).unwrap();
        assert_eq!(loaded.method_name(), trained.method_name());
        assert_eq!(loaded.predict(&refs).unwrap(), trained.predict(&refs).unwrap());
    }
}

#[test]
fn loading_a_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Trained::load(dir.path().join("absent")).is_err());
}

#[test]
fn cross_validation_is_reproducible_and_consistent() {
    let scans = tiny_dataset();
    let mut cfg = ExperimentConfig::new(spec(1), Method::Single { mode: InputMode::Depth, kind: ModelKind::Single });
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 8;
    let a = cross_validate(&scans, 3, &cfg, 1).unwrap();
    let b = cross_validate(&scans, 3, &cfg, 1).unwrap();

    assert_eq!(a.folds.len(), 3);
    let plan = make_folds(&scans, 3).unwrap();
    for ((fa, fb), fold) in a.folds.iter().zip(&b.folds).zip(&plan.folds) {
        assert_eq!(fa.evaluation.total, fb.evaluation.total);
        let m = &fa.evaluation.confusion;
        assert_eq!(m.total() as usize, fold.test.len());
        assert_eq!(fa.evaluation.total, m.trace() as f64 / m.total() as f64);
    }
    assert_eq!(a.confusion().total() as usize, scans.len());
    assert_eq!(a.mean_per_class().len(), Category::COUNT);
}
