//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Training criteria need MNIST (see README).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use uniq::diagnostics::{empirical_sqnr, SteSurrogate};
use uniq::mse::{mse_derivative, quantizer_mse, solve_unit_step, unit_step, InputDistribution};
use uniq::nn::Precision;
use uniq::optim::OptimizerKind;
use uniq::quant::{
    activation_scalar, decode, encode, grad_input, grad_step_activation, grad_step_weight, quantize_weight,
    weight_arg, weight_scalar, Granularity, QuantMode, QuantSpec, StepParam,
};
use uniq::Tensor;
use uniq_harness::ablation::median;
use uniq_harness::data::mnist_dir;
use uniq_harness::{AblationSuite, AblationTable, Arch, DatasetConfig, ExperimentConfig, InitMethod, ScheduleConfig};

const LEVELS: [u32; 4] = [2, 4, 8, 16];
const WEIGHT_STEPS: [f64; 4] = [1.596, 0.996, 0.586, 0.335];
const ACT_STEPS: [f64; 4] = [1.224, 0.651, 0.353, 0.193];
const WEIGHT_SQNR: [f64; 4] = [4.4, 9.3, 14.3, 19.4];
const ACT_SQNR: [f64; 4] = [5.5, 11.6, 17.2, 22.7];
const SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_uniq")
}

fn c1_table1() -> Outcome {
    let start = Instant::now();
    let out = Command::new(bin()).args(["table1", "--json"]).output().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let mut worst_step: f64 = 0.0;
    let mut worst_db: f64 = 0.0;
    let mut seen = 0;
    for row in &rows {
        let n = row["N"].as_u64().unwrap_or(0) as u32;
        let Some(i) = LEVELS.iter().position(|&l| l == n) else { continue };
        let (steps, sqnr) = match row["mode"].as_str() {
            Some("weight") => (WEIGHT_STEPS, WEIGHT_SQNR),
            Some("activation") => (ACT_STEPS, ACT_SQNR),
            _ => continue,
        };
        worst_step = worst_step.max((row["delta_unit"].as_f64().unwrap_or(f64::NAN) - steps[i]).abs());
        worst_db = worst_db.max((row["sqnr_db"].as_f64().unwrap_or(f64::NAN) - sqnr[i]).abs());
        seen += 1;
    }
    check(
        seen == 8 && worst_step <= 0.002 && worst_db <= 0.1 && secs < 60.0,
        format!("{seen}/8 cells, max step error {worst_step:.5}, max SQNR error {worst_db:.3} dB, {secs:.2} s"),
    )
}

fn c2_binary_closed_form() -> Outcome {
    let d = solve_unit_step(QuantMode::Weight, 2).map_err(|e| e.to_string())?;
    let mse = quantizer_mse(d, 2, QuantMode::Weight, &InputDistribution::StdGaussian).map_err(|e| e.to_string())?;
    let want = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    check(
        (d - want).abs() <= 1e-4 && (mse - 0.3634).abs() <= 1e-4,
        format!("delta {d:.6} vs {want:.6}, MSE {mse:.6} vs 0.3634"),
    )
}

fn c3_derivative() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for n in LEVELS {
        let opt = unit_step(QuantMode::Weight, n).map_err(|e| e.to_string())?;
        for scale in [0.25, 0.5, 1.0, 2.0] {
            let d = opt * scale;
            let h = 1e-5 * d;
            let f = |x| quantizer_mse(x, n, QuantMode::Weight, &InputDistribution::StdGaussian).unwrap();
            let fd = (f(d + h) - f(d - h)) / (2.0 * h);
            let a = mse_derivative(d, n, QuantMode::Weight).map_err(|e| e.to_string())?;
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
            points += 1;
        }
    }
    check(points == 16 && worst <= 1e-4, format!("{points} points, max relative error {worst:.2e}"))
}

fn c4_gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let rel = |g: f64, w: f64| (g - w).abs() / w.abs().max(1e-2);
    let (mut checked, mut worst) = (0, 0f64);
    while checked < 10_000 {
        let bits = rng.random_range(1..=8u32);
        let weight = rng.random_bool(0.5);
        let spec = if weight {
            QuantSpec::weight(bits, Granularity::PerLayer).unwrap()
        } else {
            QuantSpec::activation(bits).unwrap()
        };
        let n = spec.levels;
        let d: f64 = 10f64.powf(rng.random_range(-2.0..1.0));
        let x: f64 = rng.random_range(-(d * n as f64)..d * n as f64);
        let u = if weight { weight_arg(x, d, n) } else { x / d };
        let tie = ((u - u.floor()) - 0.5).abs();
        if tie <= 1e-3 || u.abs() <= 1e-3 || (u - (n - 1) as f64).abs() <= 1e-3 {
            continue;
        }
        let s = SteSurrogate::at(x, d, &spec).map_err(|e| e.to_string())?;
        let xt = Tensor::new(&[1], vec![x]).unwrap();
        let step = StepParam::scalar(d).unwrap();
        let gs = if weight { grad_step_weight(&xt, &step, &spec) } else { grad_step_activation(&xt, &step, &spec) };
        let gs = gs.map_err(|e| e.to_string())?.data()[0];
        let gx = grad_input(&xt, &step, &spec).map_err(|e| e.to_string())?.data()[0];
        worst = worst.max(rel(gs, s.d_delta(x, d, 1e-4 * d))).max(rel(gx, s.d_x(x, d, 1e-4 * d)));
        checked += 1;
    }
    check(worst <= 1e-5, format!("{checked} samples, max relative error {worst:.2e}"))
}

fn c5_properties() -> Outcome {
    const CASES: u32 = 10_000;
    let runner = || TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    let tie = |u: f64| ((u - u.floor()) - 0.5).abs();
    let domain = || (1u32..=8, 1e-3f64..10.0, -50.0f64..50.0);
    let mut passed = Vec::new();
    let mut run = |name: &str, r: Result<(), String>| -> Result<(), String> {
        r.map_err(|e| format!("{name}: {e}"))?;
        passed.push(name.to_string());
        Ok(())
    };

    run(
        "symmetry",
        runner()
            .run(&domain(), |(b, d, x)| {
                let n = 1 << b;
                if tie(weight_arg(x, d, n)) > 1e-9 {
                    prop_assert_eq!(weight_scalar(-x, d, n), -weight_scalar(x, d, n));
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;
    run(
        "idempotence",
        runner()
            .run(&domain(), |(b, d, x)| {
                let n = 1 << b;
                let q = weight_scalar(x, d, n);
                prop_assert_eq!(weight_scalar(q, d, n), q);
                let a = activation_scalar(x, d, n);
                prop_assert_eq!(activation_scalar(a, d, n), a);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;
    run(
        "monotonicity",
        runner()
            .run(&(domain(), -50.0f64..50.0), |((b, d, x1), x2)| {
                let n = 1 << b;
                let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
                prop_assert!(weight_scalar(lo, d, n) <= weight_scalar(hi, d, n));
                prop_assert!(activation_scalar(lo, d, n) <= activation_scalar(hi, d, n));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;
    run(
        "level sets",
        runner()
            .run(&(1u32..=4, 1e-3f64..10.0), |(b, d)| {
                let n = 1u32 << b;
                let alpha = d * (n - 1) as f64 / 2.0;
                let sweep = |lo: f64, hi: f64| (0..2048).map(move |i| lo + (i as f64 + 0.5) * (hi - lo) / 2048.0);
                let mut w: Vec<f64> = sweep(-2.0 * alpha - d, 2.0 * alpha + d).map(|x| weight_scalar(x, d, n)).collect();
                w.sort_by(f64::total_cmp);
                w.dedup();
                prop_assert_eq!(w.len(), n as usize);
                prop_assert!(w.iter().all(|&l| l != 0.0));
                let mut a: Vec<f64> = sweep(-d, d * n as f64 + d).map(|x| activation_scalar(x, d, n)).collect();
                a.sort_by(f64::total_cmp);
                a.dedup();
                prop_assert_eq!(a.len(), n as usize);
                prop_assert_eq!(a[0], 0.0);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;
    run(
        "encode/decode",
        runner()
            .run(&(1u32..=8, prop::collection::vec(1e-3f64..10.0, 3), prop::collection::vec(-30.0f64..30.0, 12)), |(b, ds, xs)| {
                let spec = QuantSpec::weight(b, Granularity::PerKernel).unwrap();
                let step = StepParam::new(ds).unwrap();
                let x = Tensor::new(&[3, 4], xs).unwrap();
                let q = quantize_weight(&x, &step, &spec).unwrap();
                let back = decode(&encode(&x, &step, &spec).unwrap()).unwrap();
                prop_assert!(q.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;
    run(
        "scale equivariance",
        runner()
            .run(&(domain(), 1e-2f64..1e2), |((b, d, x), c)| {
                let n = 1 << b;
                if tie(weight_arg(x, d, n)) > 1e-6 && tie(x / d) > 1e-6 {
                    let w = c * weight_scalar(x, d, n);
                    prop_assert!((weight_scalar(c * x, c * d, n) - w).abs() <= 1e-12 * (1.0 + w.abs()));
                    let a = c * activation_scalar(x, d, n);
                    prop_assert!((activation_scalar(c * x, c * d, n) - a).abs() <= 1e-12 * (1.0 + a.abs()));
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;
    Ok(format!("{} properties x {CASES} cases: {}", passed.len(), passed.join(", ")))
}

fn c6_monte_carlo_sqnr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let relu: Vec<f64> = xs.iter().map(|x| x.max(0.0)).collect();
    let mut worst: f64 = 0.0;
    for (mode, data, table) in [(QuantMode::Weight, &xs, WEIGHT_SQNR), (QuantMode::Activation, &relu, ACT_SQNR)] {
        let x = Tensor::new(&[data.len()], data.clone()).unwrap();
        for (i, n) in LEVELS.into_iter().enumerate() {
            let bits = n.trailing_zeros();
            let spec = match mode {
                QuantMode::Weight => QuantSpec::weight(bits, Granularity::PerLayer).unwrap(),
                QuantMode::Activation => QuantSpec::activation(bits).unwrap(),
            };
            let d = unit_step(mode, n).map_err(|e| e.to_string())?;
            let s = empirical_sqnr(&x, &StepParam::scalar(d).unwrap(), &spec).map_err(|e| e.to_string())?;
            worst = worst.max((s - table[i]).abs());
        }
    }
    check(worst <= 0.2, format!("8 cells on 1e6 samples, max deviation {worst:.3} dB"))
}

struct Training {
    fp: AblationTable,
    bits: AblationTable,
    lsq: AblationTable,
    w1_sgd: AblationTable,
    w1_adam: AblationTable,
}

fn suite(name: &str, root: &Path, base: ExperimentConfig) -> AblationSuite {
    let mut base = base;
    base.output_dir = root.to_path_buf();
    AblationSuite {
        name: name.into(),
        base,
        seeds: SEEDS.to_vec(),
        init_methods: vec![],
        bits: vec![],
        optimizers: vec![],
        schedules: vec![],
        init_from: None,
    }
}

fn ckpt_template(root: &Path, suite: &str, cell: usize) -> String {
    root.join(suite).join(format!("{suite}_{cell}_s{{seed}}")).join("model.ckpt").display().to_string()
}

fn run_training(root: &Path) -> Result<Training, String> {
    let cfg = |bits, opt, sched| ExperimentConfig::new("cell", Arch::MlpS, bits, bits, opt, sched);
    let err = |e: uniq::Error| e.to_string();
    let timed = |s: &AblationSuite| {
        let t = Instant::now();
        let r = s.run().map_err(err);
        println!("    suite {} finished in {:.0} s", s.name, t.elapsed().as_secs_f64());
        r
    };

    let mut fp = suite("fp", root, cfg(Precision::FullPrecision, OptimizerKind::sgd(), ScheduleConfig::cosine(0.05)));
    fp.bits = vec![Precision::FullPrecision];
    let fp = timed(&fp)?;

    let mut bits = suite("bits", root, cfg(Precision::Bits(2), OptimizerKind::sgd(), ScheduleConfig::cosine(0.01)));
    bits.bits = vec![Precision::Bits(4), Precision::Bits(2)];
    bits.init_from = Some(ckpt_template(root, "fp", 0));
    let lsq_base = bits.clone();
    let bits_t = timed(&bits)?;

    let mut lsq = lsq_base;
    lsq.name = "lsq".into();
    lsq.bits = vec![Precision::Bits(2)];
    lsq.init_methods = vec![InitMethod::LsqHeuristic];
    let lsq = timed(&lsq)?;

    let w2 = ckpt_template(root, "bits", 1);
    let mut sgd = suite("w1_sgd", root, cfg(Precision::Bits(1), OptimizerKind::sgd(), ScheduleConfig::cosine(0.01)));
    sgd.schedules = vec![
        ScheduleConfig::cosine(0.01),
        ScheduleConfig::cosine(0.005),
        ScheduleConfig::cosine(0.001),
        ScheduleConfig::warmup(0.001, 5, 0.01),
    ];
    sgd.init_from = Some(w2.clone());
    let w1_sgd = timed(&sgd)?;

    let mut adam = suite("w1_adam", root, cfg(Precision::Bits(1), OptimizerKind::adam(), ScheduleConfig::cosine(0.004)));
    adam.schedules = vec![
        ScheduleConfig::cosine(0.004),
        ScheduleConfig::cosine(0.001),
        ScheduleConfig::cosine(0.0005),
        ScheduleConfig::warmup(0.001, 5, 0.004),
    ];
    adam.init_from = Some(w2);
    let w1_adam = timed(&adam)?;

    Ok(Training { fp, bits: bits_t, lsq, w1_sgd, w1_adam })
}

fn row_summary(t: &AblationTable) -> String {
    t.rows
        .iter()
        .map(|r| format!("{}={:.4}", r.schedule.label(), r.median_test_acc))
        .collect::<Vec<_>>()
        .join(" ")
}

fn c7a(t: &Training) -> Outcome {
    let fp = t.fp.rows[0].median_test_acc;
    let w4 = t.bits.rows[0].median_test_acc;
    let w2 = t.bits.rows[1].median_test_acc;
    check(
        fp > 0.95 && w4 >= fp - 0.01 && w2 >= fp - 0.03,
        format!("FP {fp:.4}, W4A4 {w4:.4} (gap {:.2} pts), W2A2 {w2:.4} (gap {:.2} pts)", 100.0 * (fp - w4), 100.0 * (fp - w2)),
    )
}

fn c7b(t: &Training) -> Outcome {
    let ours = t.bits.rows[1].median_test_acc;
    let lsq = t.lsq.rows[0].median_test_acc;
    check(ours >= lsq - 0.002, format!("W2A2 MSE init {ours:.4} vs LSQ heuristic {lsq:.4}"))
}

fn c7c(t: &Training) -> Outcome {
    let split = |tab: &AblationTable| {
        let warm = tab.rows[3].median_test_acc;
        let best_plain = tab.rows[..3].iter().map(|r| r.median_test_acc).fold(f64::MIN, f64::max);
        (warm, best_plain)
    };
    let (sgd_w, sgd_p) = split(&t.w1_sgd);
    let (adam_w, adam_p) = split(&t.w1_adam);
    let best_other = sgd_w.max(sgd_p).max(adam_p);
    check(
        sgd_w > sgd_p && adam_w > adam_p && adam_w > best_other,
        format!("SGD [{}] | Adam [{}]", row_summary(&t.w1_sgd), row_summary(&t.w1_adam)),
    )
}

fn c7d(t: &Training) -> Outcome {
    let inits: Vec<f64> = t.w1_sgd.runs[0].iter().map(|r| r.init_test_acc).collect();
    let m = median(&inits);
    check(m > 0.1, format!("W1A1 accuracy before training {m:.4} (seeds {inits:?}), chance 0.1"))
}

/// Mean activation SQNR during warm-up epochs, SGD warm-up vs SGD at the main rate.
fn warmup_dynamics(t: &Training) -> String {
    let mean_sqnr = |cell: usize| {
        let per_seed: Vec<f64> = t.w1_sgd.runs[cell]
            .iter()
            .map(|r| {
                let v: Vec<f64> = r
                    .dynamics
                    .iter()
                    .filter(|d| d.layer.starts_with("act") && d.epoch <= 5.0 && d.sqnr_db.is_finite())
                    .map(|d| d.sqnr_db)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect();
        median(&per_seed)
    };
    format!("activation SQNR over epochs 0-5: warm-up {:.2} dB, constant-rate 0.01 {:.2} dB", mean_sqnr(3), mean_sqnr(0))
}

fn c8_determinism(root: &Path) -> Outcome {
    let dir = root.join("determinism");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::new(
        "repeat",
        Arch::MlpS,
        Precision::Bits(2),
        Precision::Bits(2),
        OptimizerKind::sgd(),
        ScheduleConfig::cosine(0.01),
    );
    cfg.dataset = DatasetConfig::Mnist { train_limit: Some(6000), test_limit: Some(1000) };
    cfg.epochs = 2;
    cfg.output_dir = dir.clone();
    let path = dir.join("repeat.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let run_dir = cfg.run_dir();
    let digest = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = Command::new(bin()).arg("train").arg("--config").arg(&path).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        let read = |f: &str| std::fs::read(run_dir.join(f)).map_err(|e| e.to_string());
        Ok((Sha256::digest(read("result.csv")?).to_vec(), Sha256::digest(read("model.ckpt")?).to_vec()))
    };
    let a = digest()?;
    let b = digest()?;
    let hex: String = a.1.iter().take(8).map(|b| format!("{b:02x}")).collect();
    check(a == b, format!("two `uniq train` runs, result.csv and model.ckpt identical: {} (ckpt sha256 {hex}..)", a == b))
}

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).expect("create scratch dir");
    let have_mnist = mnist_dir().join("train-images-idx3-ubyte").exists();
    let missing = format!("MNIST not found in {}", mnist_dir().display());

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, o: Outcome| {
        match &o {
            Ok(d) => println!("PASS {id}: {d}"),
            Err(d) => println!("FAIL {id}: {d}"),
        }
        results.push((id, o));
    };
    let start = Instant::now();
    report("1 table1", c1_table1());
    report("2 binary closed form", c2_binary_closed_form());
    report("3 derivative consistency", c3_derivative());
    report("4 gradient oracle", c4_gradient_oracle());
    report("5 quantizer properties", c5_properties());
    report("6 monte-carlo sqnr", c6_monte_carlo_sqnr());
    report("8 determinism", if have_mnist { c8_determinism(&root) } else { Err(missing.clone()) });

    let training = if have_mnist { run_training(&root) } else { Err(missing) };
    match &training {
        Ok(t) => {
            report("7a precision gaps", c7a(t));
            report("7b init ordering", c7b(t));
            report("7c warm-up ordering", c7c(t));
            report("7d chain init", c7d(t));
            println!("INFO {}", warmup_dynamics(t));
        }
        Err(e) => {
            for id in ["7a precision gaps", "7b init ordering", "7c warm-up ordering", "7d chain init"] {
                report(id, Err(e.clone()));
            }
        }
    }
    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("{} criteria, {failed} failed, {:.0} s", results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
