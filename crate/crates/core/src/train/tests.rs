use super::*;
use crate::autodiff::finite_difference_check;
use crate::codec::prune_global;
use crate::metrics::{ssim, Plane};
use crate::model::{channel_ladder, ModelConfig, OutputActivation, PositionalEncodingConfig};
use crate::synth::synth_lightfield;
use rand::{Rng, SeedableRng};

fn small_config() -> ModelConfig {
    ModelConfig {
        pe: PositionalEncodingConfig {
            base: 2.0,
            levels: 2,
        },
        mlp_hidden: 8,
        h0: 2,
        w0: 2,
        c0: 4,
        blocks: channel_ladder(4, &[2, 2, 2], 4),
        out_h: 16,
        out_w: 16,
        crop_h: 12,
        crop_w: 14,
        angular_rows: 2,
        angular_cols: 2,
        output_activation: OutputActivation::Sigmoid,
        residual_activation: true,
    }
}

fn setup(seed: u64) -> (Model, LightField) {
    let model = Model::new(small_config(), seed).unwrap();
    let lf = synth_lightfield(seed, 2, 2, 12, 14);
    (model, lf)
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 1e-2,
        finetune_epochs: epochs,
        ..TrainConfig::default()
    }
}

fn loss_of(p: Vec<f64>, g: Vec<f64>, shape: Vec<usize>, alpha: f64) -> f64 {
    let mut tape = Tape::<f64>::new();
    let pv = tape.constant(Tensor::new(shape.clone(), p).unwrap()).unwrap();
    let gv = tape.constant(Tensor::new(shape, g).unwrap()).unwrap();
    let l = loss(&mut tape, pv, gv, alpha).unwrap();
    tape.value(l)[0]
}

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.05..0.95)).collect()
}

#[test]
fn loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = vec![3, 12, 13];
    let x = random_image(&mut rng, 3 * 12 * 13);
    assert!(loss_of(x.clone(), x.clone(), shape.clone(), 0.7).abs() < 1e-9);

    let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
    assert!((loss_of(shifted, x, shape.clone(), 1.0) - 0.1).abs() < 1e-12);

    // constant planes: SSIM = (2·μa·μb + C1) / (μa² + μb² + C1), variances vanish
    let n = 3 * 12 * 13;
    let c1 = 1e-4;
    let s = (2.0 * 0.25 * 0.75 + c1) / (0.25f64 * 0.25 + 0.75 * 0.75 + c1);
    let l = loss_of(vec![0.25; n], vec![0.75; n], shape, 0.0);
    assert!((l - (1.0 - s)).abs() < 1e-12, "{l}");
    assert!((l - 0.39994).abs() < 1e-5);
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![3, 12, 12])).unwrap();
    let b = tape.constant(Tensor::zeros(vec![3, 12, 13])).unwrap();
    assert!(matches!(loss(&mut tape, a, b, 0.5), Err(TensorError::Shape { .. })));
}

#[test]
fn tape_ssim_matches_metric_ssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let (h, w) = (rng.gen_range(11..18), rng.gen_range(11..18));
        let p = random_image(&mut rng, 3 * h * w);
        let g = random_image(&mut rng, 3 * h * w);
        let mut tape = Tape::<f64>::new();
        let pv = tape.constant(Tensor::new(vec![3, h, w], p.clone()).unwrap()).unwrap();
        let gv = tape.constant(Tensor::new(vec![3, h, w], g.clone()).unwrap()).unwrap();
        let s = ssim_map_mean(&mut tape, pv, gv).unwrap();
        let plane = |d: &[f64], c: usize| {
            Plane::new(h, w, d[c * h * w..(c + 1) * h * w].iter().map(|&x| x as f32).collect())
        };
        let oracle: f64 = (0..3)
            .map(|c| ssim(&plane(&p, c), &plane(&g, c)).unwrap())
            .sum::<f64>()
            / 3.0;
        // the metric sees f32-rounded inputs
        assert!((tape.value(s)[0] - oracle).abs() < 1e-6);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w) = (12, 13);
    let n = 3 * h * w;
    for alpha in [0.0, 0.7] {
        let g = random_image(&mut rng, n);
        // per pixel: window tails give gradients near 1e-7, so f64 roundoff bounds the check
        let x = Tensor::new(vec![3, h, w], random_image(&mut rng, n)).unwrap();
        let err = finite_difference_check(
            |t: &mut Tape<f64>, v| {
                let gv = t.constant(Tensor::new(vec![3, h, w], g.clone())?)?;
                loss(t, v, gv, alpha)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "alpha {alpha}: {err}");

        // through a fixed random projection every input sees aggregated gradients
        let k = 6;
        let proj: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let base: Vec<f64> = random_image(&mut rng, n).iter().map(|v| 0.6 * v + 0.2).collect();
        let z = Tensor::new(vec![k], (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let err = finite_difference_check(
            |t: &mut Tape<f64>, v| {
                let wv = t.constant(Tensor::new(vec![n, k], proj.clone())?)?;
                let bv = t.constant(Tensor::new(vec![n], base.clone())?)?;
                let p = t.fc(v, wv, bv)?;
                let p = t.reshape(p, vec![3, h, w])?;
                let gv = t.constant(Tensor::new(vec![3, h, w], g.clone())?)?;
                loss(t, p, gv, alpha)
            },
            &z,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "alpha {alpha}, projected: {err}");
    }
}

#[test]
fn cosine_schedule() {
    assert_eq!(cosine_lr(0, 1000, 5e-4, 0.0), 5e-4);
    assert!(cosine_lr(999, 1000, 5e-4, 0.0).abs() < 1e-20);
    assert!((cosine_lr(50, 101, 5e-4, 0.0) - 2.5e-4).abs() < 1e-18);
    assert_eq!(cosine_lr(0, 1, 3e-3, 0.0), 3e-3);
    assert_eq!(cosine_lr(9, 10, 1e-3, 1e-5), 1e-5);
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let cfg = TrainConfig::default();
    let mut p = vec![vec![0.5f32; 4], vec![1.0; 2]];
    let mut s = AdamState::new(&p);
    let g = vec![vec![1.0f32; 4], vec![1.0; 2]];
    adam_step(&mut p, &g, &mut s, 0.001, &cfg).unwrap();
    for (x, x0) in p.iter().flatten().zip([0.5f32, 0.5, 0.5, 0.5, 1.0, 1.0]) {
        // m̂ = 1, v̂ = 1 → step = lr / (1 + ε)
        let expected = (x0 as f64 - 0.001 / (1.0 + 1e-8)) as f32;
        assert_eq!(*x, expected);
    }
    assert_eq!(s.t, 1);

    let before = p.clone();
    let mut fresh = AdamState::new(&p);
    let zero = vec![vec![0.0f32; 4], vec![0.0; 2]];
    adam_step(&mut p, &zero, &mut fresh, 0.001, &cfg).unwrap();
    assert_eq!(p, before);
    assert_eq!(fresh.t, 1);

    assert_eq!(
        adam_step(&mut p, &[vec![0.0; 4]], &mut fresh, 0.001, &cfg),
        Err(TrainError::ShapeDrift)
    );
}

#[test]
fn adam_is_deterministic() {
    let cfg = TrainConfig::default();
    let run = || {
        let mut p = vec![vec![0.1f32, -0.2, 0.3]];
        let mut s = AdamState::new(&p);
        for k in 0..2 {
            let g = vec![vec![0.5f32 * k as f32, -1.0, 2.0]];
            adam_step(&mut p, &g, &mut s, 0.01, &cfg).unwrap();
        }
        (p, s)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_lr_single_epoch_is_a_no_op() {
    let (m, lf) = setup(1);
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.0,
        ..TrainConfig::default()
    };
    let (trained, log) = train(m.clone(), &lf, &cfg).unwrap();
    assert_eq!(trained.parameters(), m.parameters());
    assert_eq!(log.records.len(), 1);
    assert_eq!(log.records[0].lr, 0.0);
}

#[test]
fn training_is_reproducible_and_logs_schedule() {
    let (m, lf) = setup(2);
    let cfg = quick_cfg(6);
    let (a, la) = train(m.clone(), &lf, &cfg).unwrap();
    let (b, lb) = train(m.clone(), &lf, &cfg).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert!(la.same_trajectory(&lb));
    assert_eq!(la.records.len(), 6);
    for r in &la.records {
        assert_eq!(r.lr, cosine_lr(r.epoch, 6, cfg.lr, cfg.lr_min));
        assert!(r.loss.is_finite() && r.loss >= 0.0);
    }
    assert!(la.records.last().unwrap().loss < la.records[0].loss);

    let csv = la.to_csv();
    assert!(csv.starts_with("epoch,loss,psnr,lr,seconds\n"));
    assert_eq!(csv.lines().count(), 7);

    let batched = TrainConfig { batch: 3, ..cfg.clone() };
    let (_, lb) = train(m, &lf, &batched).unwrap();
    assert_eq!(lb.records.len(), 6);
}

#[test]
fn identity_mask_matches_plain_training() {
    let (m, lf) = setup(3);
    let cfg = quick_cfg(3);
    let keep = PruneMask::keep_all(&m);
    let (a, la) = train(m.clone(), &lf, &cfg).unwrap();
    let (b, lb) = finetune_masked(m, &lf, &keep, &cfg).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert!(la.same_trajectory(&lb));
}

#[test]
fn masked_positions_stay_zero() {
    let (m, lf) = setup(4);
    let cfg = quick_cfg(3);
    let mask = prune_global(&m, 0.8).unwrap();
    let mut checked = 0;
    let (tuned, _) = train_with(m.clone(), &lf, &cfg, cfg.finetune_schedule(), Some(&mask), &mut |_| checked += 1).unwrap();
    assert_eq!(checked, 3);
    let zeros = |model: &Model| -> usize {
        model
            .parameters()
            .iter()
            .zip(&mask.masks)
            .filter_map(|(p, mk)| mk.as_ref().map(|mk| (p, mk)))
            .map(|(p, mk)| p.iter().zip(mk).filter(|(x, &k)| !k && **x == 0.0).count())
            .sum()
    };
    assert_eq!(zeros(&tuned), mask.pruned_count());

    // everything pruned: weights stay zero, biases still move
    let mut all_zero = PruneMask::keep_all(&m);
    for mk in all_zero.masks.iter_mut().flatten() {
        mk.iter_mut().for_each(|k| *k = false);
    }
    let (frozen, _) = finetune_masked(m.clone(), &lf, &all_zero, &cfg).unwrap();
    for ((p, p0), (spec, mk)) in frozen
        .parameters()
        .iter()
        .zip(m.parameters())
        .zip(m.specs().iter().zip(&all_zero.masks))
    {
        if mk.is_some() {
            assert!(p.iter().all(|&x| x == 0.0), "{}", spec.name);
        } else if spec.name == "head.conv.b" {
            assert_ne!(p, p0);
        }
    }
}

#[test]
fn zero_finetune_epochs_returns_input() {
    let (m, lf) = setup(5);
    let cfg = TrainConfig {
        finetune_epochs: 0,
        ..quick_cfg(1)
    };
    let (out, log) = finetune_masked(m.clone(), &lf, &PruneMask::keep_all(&m), &cfg).unwrap();
    assert_eq!(out, m);
    assert!(log.records.is_empty());
}

#[test]
fn divergence_reports_the_epoch() {
    let (m, lf) = setup(6);
    let cfg = TrainConfig {
        epochs: 4,
        lr: 1e30,
        lr_min: 1e30,
        ..TrainConfig::default()
    };
    assert!(matches!(train(m, &lf, &cfg), Err(TrainError::Diverged { .. })));
}

#[test]
fn config_and_field_errors() {
    let (m, _) = setup(0);
    let bad = TrainConfig {
        alpha: 1.5,
        ..TrainConfig::default()
    };
    let lf = synth_lightfield(0, 2, 2, 12, 14);
    assert!(matches!(train(m.clone(), &lf, &bad), Err(TrainError::Config(_))));
    let zero_epochs = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(m.clone(), &lf, &zero_epochs), Err(TrainError::Config(_))));
    let other = synth_lightfield(0, 3, 2, 12, 14);
    assert!(matches!(
        train(m, &other, &TrainConfig::default()),
        Err(TrainError::FieldMismatch(_))
    ));
}

#[test]
fn config_defaults_and_json() {
    let d = TrainConfig::default();
    assert_eq!((d.epochs, d.lr, d.alpha, d.batch), (1000, 5e-4, 0.7, 1));
    assert_eq!((d.beta1, d.beta2, d.eps, d.finetune_epochs), (0.9, 0.999, 1e-8, 200));
    assert_eq!(d.finetune_schedule(), Schedule { epochs: 200, lr: 5e-4 });
    let ft = TrainConfig { finetune_lr: Some(1e-2), ..d };
    assert_eq!(ft.finetune_schedule().lr, 1e-2);
    assert_eq!(ft.train_schedule(), Schedule { epochs: 1000, lr: 5e-4 });
    let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 10}"#).unwrap();
    assert_eq!(partial.epochs, 10);
    assert_eq!(partial.lr, 5e-4);
}

