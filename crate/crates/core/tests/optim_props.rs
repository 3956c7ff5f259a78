use proptest::prelude::*;
use uniq::optim::{default_groups, Optimizer, OptimizerKind, ParamKind, ParamStore, Schedule};
use uniq::quant::STEP_EPS;

fn kinds() -> impl Strategy<Value = OptimizerKind> {
    prop_oneof![Just(OptimizerKind::sgd()), Just(OptimizerKind::adam())]
}

fn store(values: &[f64]) -> ParamStore<f64> {
    ParamStore {
        params: vec![
            (ParamKind::Weight, values.to_vec(), vec![0.0; values.len()]),
            (ParamKind::StepSize, values.iter().map(|v| v.abs() + 0.1).collect(), vec![0.0; values.len()]),
        ],
    }
}

/// Runs the optimizer over a fixed gradient trajectory and returns the step-size values.
fn run(kind: OptimizerKind, decay: f64, init: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<f64> {
    let mut opt = Optimizer::new(kind, default_groups(decay).unwrap()).unwrap();
    let mut p = store(init);
    for g in grads {
        p.params[0].2.copy_from_slice(g);
        p.params[1].2.copy_from_slice(g);
        opt.step(&mut p, lr).unwrap();
        assert!(p.params[1].1.iter().all(|&d| d >= STEP_EPS));
    }
    p.params[1].1.clone()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn decay_never_touches_step_sizes(
        kind in kinds(),
        decay in 1e-6f64..1e-2,
        lr in 1e-4f64..1.0,
        init in prop::collection::vec(-2.0f64..2.0, 3),
        grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
    ) {
        let a = run(kind, decay, &init, &grads, lr);
        let b = run(kind, 0.0, &init, &grads, lr);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn warmup_is_constant_then_jumps_then_decays(
        warm_lr in 1e-5f64..1e-2,
        jump in 1.5f64..20.0,
        warm in 1usize..6,
        extra in 2usize..20,
    ) {
        let total = warm + extra;
        let s = Schedule::warmup_then_cosine(warm_lr, warm, warm_lr * jump, total);
        let lrs: Vec<f64> = (0..total).map(|e| s.lr_at(e, 0).unwrap()).collect();
        prop_assert!(lrs[..warm].iter().all(|&l| l == warm_lr));
        prop_assert!(lrs[warm] > warm_lr);
        prop_assert!(lrs[warm..].windows(2).all(|w| w[1] <= w[0]));
    }
}
