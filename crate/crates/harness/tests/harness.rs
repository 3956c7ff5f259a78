use std::collections::BTreeMap;

use uniq::mse::unit_step;
use uniq::nn::{build_model, Model, Precision};
use uniq::optim::OptimizerKind;
use uniq::quant::QuantMode;
use uniq::Tensor;
use uniq_harness::data::{synthetic_gaussian, Dataset};
use uniq_harness::init::{calibrate, initialize, weight_steps};
use uniq_harness::{train_on, Arch, DatasetConfig, ExperimentConfig, InitMethod, RunResult, ScheduleConfig};

const DIM: usize = 16;

fn data() -> (Dataset, Dataset) {
    synthetic_gaussian(4, DIM, 1024, 256, 1.0, 7)
}

fn config(name: &str, out: &std::path::Path, bits: Precision) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, Arch::MlpS, bits, bits, OptimizerKind::sgd(), ScheduleConfig::cosine(0.02));
    c.dataset = DatasetConfig::SyntheticGaussian { classes: 4, dim: DIM, train: 1024, test: 256, separation: 1.0, seed: 7 };
    c.output_dir = out.to_path_buf();
    c.epochs = 3;
    c.batch_size = 64;
    c.stat_batches = 8;
    c.dynamics.every_steps = 4;
    c
}

fn run(cfg: &ExperimentConfig) -> RunResult {
    let (tr, te) = data();
    train_on(cfg, &tr, &te).unwrap().0
}

#[test]
fn per_kernel_steps_scale_with_group_std() {
    // Two kernels with population stds 0.1 and 0.2.
    let row = |s: f64| (0..8).map(move |i| if i % 2 == 0 { s } else { -s });
    let w = Tensor::<f32>::from_f64(&[2, 8], &row(0.1).chain(row(0.2)).collect::<Vec<_>>()).unwrap();
    let spec = uniq::quant::QuantSpec::weight(2, uniq::quant::Granularity::PerKernel).unwrap();
    let (steps, _) = weight_steps(InitMethod::OursMse, &w, &spec, 2).unwrap();
    assert!((steps[0] - 0.0996).abs() < 5e-4 && (steps[1] - 0.1992).abs() < 5e-4, "{steps:?}");
    let (c, _) = weight_steps(InitMethod::Constant { value: 0.1 }, &w, &spec, 2).unwrap();
    assert_eq!(c, vec![0.1, 0.1]);
}

#[test]
fn constant_init_sets_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("c", dir.path(), Precision::Bits(2));
    cfg.init_method = InitMethod::Constant { value: 0.1 };
    let mut model: Model<f32> = build_model(&cfg.arch_spec(), &cfg.precision_plan(), 0).unwrap();
    let report = initialize(&mut model, &cfg, &data().0).unwrap();
    assert_eq!(report.calibration_batches, 0);
    for steps in model.step_sizes().values() {
        assert!(steps.iter().all(|&d| (d - 0.1).abs() < 1e-7));
    }
}

#[test]
fn calibration_changes_nothing_but_step_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("cal", dir.path(), Precision::Bits(2));
    let mut model: Model<f32> = build_model(&cfg.arch_spec(), &cfg.precision_plan(), 0).unwrap();
    let before = model.named_tensors();
    let seen = calibrate(&mut model, &data().0, 64, 5).unwrap();
    assert_eq!(seen, 5);
    assert_eq!(model.named_tensors(), before);
    let report = initialize(&mut model, &cfg, &data().0).unwrap();
    assert_eq!(model.named_tensors(), before);
    assert_eq!(report.calibration_batches, 8);
}

#[test]
fn precision_map_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("p", dir.path(), Precision::Bits(2));
    cfg.overrides = BTreeMap::from([("fc2".into(), Precision::Bits(4)), ("act2".into(), Precision::FullPrecision)]);
    let mut model: Model<f32> = build_model(&cfg.arch_spec(), &cfg.precision_plan(), 0).unwrap();
    let weights: BTreeMap<String, u32> = model.weight_quantizers().iter().map(|q| (q.layer.to_string(), q.quant.bits)).collect();
    assert_eq!(weights, BTreeMap::from([("fc2".to_string(), 4)]));
    let acts: Vec<(String, u32)> = model.activation_quantizers().iter().map(|a| (a.name.clone(), a.bits)).collect();
    assert_eq!(acts, vec![("act1".to_string(), 2)]);
}

#[test]
fn fresh_weight_quantizers_start_near_optimal_sqnr() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("sqnr", dir.path(), Precision::Bits(2));
    cfg.epochs = 0;
    let r = run(&cfg);
    let optimum = uniq::mse::sqnr_db(unit_step(QuantMode::Weight, 4).unwrap(), 4, QuantMode::Weight).unwrap();
    let fc2: Vec<_> = r.dynamics.iter().filter(|d| d.layer == "fc2").collect();
    assert_eq!(fc2.len(), 1);
    assert!((fc2[0].sqnr_db - optimum).abs() < 0.5, "{} vs {optimum}", fc2[0].sqnr_db);
    assert!(r.epochs.is_empty());
    assert_eq!(r.final_test_acc, r.init_test_acc);
}

#[test]
fn runs_are_deterministic_and_chain() {
    let dir = tempfile::tempdir().unwrap();
    let fp = run(&config("fp", dir.path(), Precision::FullPrecision));
    assert_eq!(fp.epochs.len(), 3);
    assert!(fp.dynamics.is_empty());
    assert!(fp.final_test_acc > 0.5, "{}", fp.final_test_acc);

    let mut w2 = config("w2", dir.path(), Precision::Bits(2));
    w2.init_from = Some(fp.checkpoint.clone());
    let a = run(&w2);
    let csv = std::fs::read(&a.result_csv).unwrap();
    let ckpt = std::fs::read(&a.checkpoint).unwrap();
    let dyn_csv = std::fs::read(a.dynamics_csv.as_ref().unwrap()).unwrap();
    let b = run(&w2);
    assert_eq!(a, b);
    assert_eq!(csv, std::fs::read(&b.result_csv).unwrap());
    assert_eq!(ckpt, std::fs::read(&b.checkpoint).unwrap());
    assert_eq!(dyn_csv, std::fs::read(b.dynamics_csv.as_ref().unwrap()).unwrap());

    let mut w1 = config("w1", dir.path(), Precision::Bits(1));
    w1.optimizer = OptimizerKind::adam();
    w1.schedule = ScheduleConfig::warmup(0.001, 1, 0.004);
    assert!(w1.validate().is_err());
    w1.init_from = Some(fp.checkpoint.clone());
    let (tr, te) = data();
    assert!(matches!(train_on(&w1, &tr, &te), Err(uniq::Error::Config(_))));
    w1.init_from = Some(a.checkpoint.clone());
    let r = run(&w1);
    assert!(r.init_test_acc > 0.25, "chain init at chance: {}", r.init_test_acc);
}

#[test]
fn arch_mismatch_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut other = config("o", dir.path(), Precision::FullPrecision);
    other.epochs = 0;
    other.dataset = DatasetConfig::SyntheticGaussian { classes: 3, dim: DIM, train: 64, test: 32, separation: 1.0, seed: 1 };
    let (tr, te) = synthetic_gaussian(3, DIM, 64, 32, 1.0, 1);
    let parent = train_on(&other, &tr, &te).unwrap().0;
    let mut cfg = config("m", dir.path(), Precision::Bits(2));
    cfg.init_from = Some(parent.checkpoint);
    let (tr, te) = data();
    assert!(matches!(train_on(&cfg, &tr, &te), Err(uniq::Error::Checkpoint(_))));
}

#[test]
fn nan_loss_aborts_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("nan", dir.path(), Precision::Bits(2));
    cfg.schedule = ScheduleConfig::cosine(1e30);
    cfg.optimizer = OptimizerKind::sgd();
    let (tr, te) = data();
    match train_on(&cfg, &tr, &te) {
        Err(uniq::Error::Diverged { snapshot, .. }) => assert!(snapshot.contains("act1")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(r) => panic!("no divergence: {:?}", r.0.final_test_acc),
    }
}

#[test]
fn mnist_headers_when_available() {
    let dir = uniq_harness::data::mnist_dir();
    let path = dir.join("train-images-idx3-ubyte");
    if !path.exists() {
        eprintln!("skipping: {} not found", path.display());
        return;
    }
    let (n, rows, cols, _) = uniq_harness::data::read_idx_images(&path).unwrap();
    assert_eq!((n, rows, cols), (60000, 28, 28));
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]), 2051);
}
