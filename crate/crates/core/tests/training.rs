use proptest::prelude::*;

use altfreeze::autodiff::{BnMode, Tape};
use altfreeze::model::{build_model, BlockSpec, Model, ModelSpec, StemSpec, SPATIAL_3X3, TEMPORAL_3};
use altfreeze::partition::{partition, ParamGroup};
use altfreeze::synth::{build_training_set, ClipDataset, DatasetSpec};
use altfreeze::trainer::{active_group, cosine_lr, sgd_step, Phase, SgdState, TrainConfig, Trainer};
use altfreeze::{Error, Tensor};

fn toy_spec() -> ModelSpec {
    ModelSpec {
        stem: StemSpec {
            in_channels: 3,
            out_channels: 4,
            spatial_kernel: SPATIAL_3X3,
            temporal_kernel: TEMPORAL_3,
            spatial_stride: 2,
        },
        blocks: vec![BlockSpec::bottleneck(4, 4, 8, 1)],
        head_width: 8,
        input_shape: [3, 4, 8, 8],
        conv_bias: false,
    }
}

fn toy_data() -> ClipDataset {
    build_training_set(&DatasetSpec {
        train_real: 4,
        train_fake: 4,
        clip_dims: [3, 4, 8, 8],
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn toy_config(naive: bool) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        clip_len: 4,
        epochs: 2,
        naive,
        seed: 4,
        ..TrainConfig::default()
    }
}

/// Gradients of the trainer's loss on `batch`, computed on a separate copy of the model.
fn hand_gradients(model: &mut Model<f32>, trainer: &Trainer, data: &ClipDataset, iter: u64) -> Vec<Tensor<f32>> {
    let (clips, labels) = trainer.batch_for(data, iter).unwrap();
    let refs: Vec<&Tensor<f32>> = clips.iter().map(|c| c.tensor()).collect();
    let batch = Tensor::stack(&refs).unwrap();
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &batch, BnMode::Train).unwrap();
    let loss = tape.bce_with_logits(pass.logits, &labels, trainer.config().reduction).unwrap();
    let grads = tape.backward(loss).unwrap();
    (0..model.params().len())
        .map(|i| grads[&altfreeze::autodiff::ParamId(i)].clone())
        .collect()
}

#[test]
fn naive_steps_match_hand_rolled_momentum_sgd() {
    let data = toy_data();
    let config = toy_config(true);
    let total = config.total_iters(data.len());
    let mut shadow: Model<f32> = build_model(&toy_spec(), 1).unwrap();
    let mut trainer = Trainer::new(build_model(&toy_spec(), 1).unwrap(), config).unwrap();
    let mut velocity: Vec<Tensor<f32>> = shadow.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
    for iter in 0..3 {
        let grads = hand_gradients(&mut shadow, &trainer, &data, iter);
        let lr = cosine_lr(iter, total, 0.05).unwrap() as f32;
        for ((p, v), g) in shadow.params_mut().iter_mut().zip(&mut velocity).zip(&grads) {
            for ((theta, v), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = 0.9 * *v + g;
                *theta -= lr * *v;
            }
        }
        let rec = trainer.step(&data).unwrap();
        assert_eq!(rec.phase, Phase::Joint);
        for (a, b) in trainer.model().params().iter().zip(shadow.params()) {
            assert!(a.value.bitwise_eq(&b.value), "iteration {iter}: `{}` differs", a.name);
        }
    }
}

#[test]
fn phase_counts_over_ten_cycles() {
    let data = build_training_set(&DatasetSpec {
        train_real: 11,
        train_fake: 10,
        clip_dims: [3, 4, 8, 8],
        ..DatasetSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        batch_size: 7,
        clip_len: 4,
        epochs: 70,
        i_s: 20,
        i_t: 1,
        fake_aug: false,
        ..TrainConfig::default()
    };
    assert_eq!(config.total_iters(data.len()), 210);
    let mut trainer = Trainer::new(build_model(&toy_spec(), 0).unwrap(), config).unwrap();
    trainer.run(&data, None).unwrap();
    let phases: Vec<String> = trainer
        .log()
        .rows
        .iter()
        .filter_map(|r| match r {
            altfreeze::trainer::LogRow::Step { phase, .. } => Some(phase.to_string()),
            _ => None,
        })
        .collect();
    assert_eq!(phases.len(), 210);
    assert_eq!(phases.iter().filter(|p| *p == "temporal").count(), 200);
    assert_eq!(phases.iter().filter(|p| *p == "spatial").count(), 10);
    assert_eq!(phases[20], "spatial");
    assert_eq!(phases[21], "temporal");
    assert!(matches!(trainer.step(&data), Err(Error::InvalidArgument(_))));
}

#[test]
fn nan_loss_aborts_with_the_iteration() {
    let data = toy_data();
    let mut model: Model<f32> = build_model(&toy_spec(), 2).unwrap();
    let i = model.param_index("head.weight").unwrap();
    model.params_mut()[i].value.data_mut()[0] = f32::NAN;
    let mut trainer = Trainer::new(model, toy_config(false)).unwrap();
    let err = trainer.step(&data).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { iteration: 0, epoch: 0 }), "{err}");
}

#[test]
fn clip_length_must_match_the_model() {
    let config = TrainConfig {
        clip_len: 8,
        ..toy_config(false)
    };
    assert!(Trainer::new(build_model(&toy_spec(), 0).unwrap(), config).is_err());
}

fn width() -> impl Strategy<Value = usize> {
    1usize..6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_is_periodic_with_is_temporal_steps(i_s in 1u64..40, i_t in 1u64..40, start in 0u64..10_000) {
        let period = i_s + i_t;
        let cycle: Vec<Phase> = (start..start + period).map(|c| active_group(c, i_s, i_t)).collect();
        prop_assert_eq!(cycle.iter().filter(|&&p| p == Phase::TemporalUpdate).count() as u64, i_s);
        for (k, &p) in cycle.iter().enumerate() {
            prop_assert_eq!(p, active_group(start + k as u64 + 7 * period, i_s, i_t));
        }
    }

    #[test]
    fn cosine_is_monotone_and_bounded(total in 1u64..5000, lr0 in 0.001f64..1.0) {
        let mut prev = f64::INFINITY;
        for i in (0..=total).step_by((total as usize / 97).max(1)) {
            let lr = cosine_lr(i, total, lr0).unwrap();
            prop_assert!(lr <= prev && (0.0..=lr0).contains(&lr));
            prev = lr;
        }
        prop_assert!(cosine_lr(total + 1, total, lr0).is_err());
    }

    #[test]
    fn partition_covers_random_architectures(
        stem in width(), mid in width(), out in width(), mid2 in width(), out2 in width(), bias in any::<bool>()
    ) {
        let spec = ModelSpec {
            stem: StemSpec {
                in_channels: 3,
                out_channels: stem,
                spatial_kernel: SPATIAL_3X3,
                temporal_kernel: TEMPORAL_3,
                spatial_stride: 1,
            },
            blocks: vec![BlockSpec::bottleneck(stem, mid, out, 2), BlockSpec::bottleneck(out, mid2, out2, 1)],
            head_width: out2,
            input_shape: [3, 2, 4, 4],
            conv_bias: bias,
        };
        let model: Model<f32> = build_model(&spec, 0).unwrap();
        let p = partition(&model).unwrap();
        let total: usize = ParamGroup::ALL.iter().map(|&g| p.count(g)).sum();
        prop_assert_eq!(total, model.num_params());
        let listed = p.spatial.len() + p.temporal.len() + p.shared.len();
        prop_assert_eq!(listed, model.params().len());
        for q in model.named_params() {
            let g = p.group_of(&q.name).unwrap();
            let expect = match q.shape.as_slice() {
                [_, _, kt, 1, 1] if *kt > 1 => ParamGroup::Temporal,
                [_, _, 1, kh, kw] if *kh > 1 || *kw > 1 => ParamGroup::Spatial,
                _ => ParamGroup::Shared,
            };
            prop_assert_eq!(g, expect, "{}", q.name);
        }
    }

    #[test]
    fn sgd_leaves_non_members_untouched(seed in any::<u64>(), mask in 0u32..(1 << 12)) {
        let mut model: Model<f32> = build_model(&toy_spec(), seed).unwrap();
        let n = model.params().len();
        let members: Vec<usize> = (0..n).filter(|i| mask >> (i % 12) & 1 == 1).collect();
        let grads = model
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| (altfreeze::autodiff::ParamId(i), p.value.map(|v| v * 0.5 + 0.25)))
            .collect();
        let mut sgd = SgdState::new(model.params(), 0.9, 0.1);
        for m in &mut sgd.momentum {
            *m = m.map(|_| 0.125);
        }
        let before: Vec<Tensor<f32>> = model.params().iter().map(|p| p.value.clone()).collect();
        let momentum = sgd.momentum.clone();
        sgd_step(model.params_mut(), &grads, &mut sgd, &members).unwrap();
        for i in 0..n {
            let same = model.params()[i].value.bitwise_eq(&before[i]) && sgd.momentum[i].bitwise_eq(&momentum[i]);
            prop_assert_eq!(same, !members.contains(&i), "parameter {}", i);
        }
    }
}
