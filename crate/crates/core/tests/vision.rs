use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woundflow_core::nn::{self, gradcheck};
use woundflow_core::optim::OptimizerConfig;
use woundflow_core::vision::*;
use woundflow_core::{MultiTaskModel64, Tensor64};

fn small() -> BackboneConfig {
    BackboneConfig {
        input_size: [12, 12],
        blocks: vec![BlockSpec::new(6), BlockSpec::new(10)],
        embedding_dim: 10,
        ..BackboneConfig::default()
    }
}

fn random_sample(rng: &mut ChaCha8Rng, i: usize, labels: [Option<usize>; 5]) -> LabeledSample<f64> {
    LabeledSample {
        id: format!("img{i}"),
        input: Tensor64::from_fn(&[3, 12, 12], |_| rng.random_range(0.0..1.0)),
        labels: WoundLabels(labels),
    }
}

fn head_loss(model: &mut MultiTaskModel64, x: &Tensor64, labels: &[[Option<usize>; 5]]) -> (f64, Vec<Option<Tensor64>>) {
    let logits = model.forward_train(x).unwrap();
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (head, z) in model.heads.iter().zip(&logits) {
        let t: Vec<Option<usize>> = labels.iter().map(|l| l[head.task.index()]).collect();
        let (loss, g) = match head.kind {
            HeadKind::Softmax(_) => nn::softmax_cross_entropy(z, &t).unwrap(),
            HeadKind::Sigmoid => nn::binary_cross_entropy_with_logits(z, &t).unwrap(),
        };
        total += loss;
        grads.push(Some(g));
    }
    (total, grads)
}

#[test]
fn whole_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model = MultiTaskModel64::build(
        &LabelSchema::default(),
        &small(),
        &[Task::Stage, Task::JointNecrosisExposed, Task::LigamentBoneNecrosisExposed],
        5,
    )
    .unwrap();
    model.normalization = Normalization {
        mean: vec![0.5; 3],
        std: vec![0.3; 3],
    };
    let labels = [
        [None, None, Some(1), Some(0), Some(1)],
        [None, None, Some(4), Some(1), None],
        [None, None, None, Some(1), Some(0)],
    ];
    let x = Tensor64::from_fn(&[3, 3, 12, 12], |_| rng.random_range(0.0..1.0));

    model.zero_grad();
    let (_, grads) = head_loss(&mut model, &x, &labels);
    model.backward(&grads).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.to_f64_vec()).collect();

    let mut worst: f64 = 0.0;
    for _ in 0..120 {
        let pi = rng.random_range(0..analytic.len());
        let k = rng.random_range(0..analytic[pi].len());
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[pi].value.data_mut()[k] += delta;
            head_loss(&mut m, &x, &labels).0
        };
        let numeric = (eval(gradcheck::STEP) - eval(-gradcheck::STEP)) / (2.0 * gradcheck::STEP);
        worst = worst.max(gradcheck::relative_error(analytic[pi][k], numeric));
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn overfits_eight_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<_> = (0..8)
        .map(|i| random_sample(&mut rng, i, [Some(i % 5), None, None, None, None]))
        .collect();
    let model = MultiTaskModel64::build(&LabelSchema::default(), &small(), &[Task::UlcerType], 11).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 8,
        optimizer: OptimizerConfig {
            learning_rate: 1.0,
            ..OptimizerConfig::default()
        },
        seed: 1,
        patience: None,
    };
    let trained = train(model, &samples, &samples, &config, &LossWeights::uniform()).unwrap();
    let inputs: Vec<&Tensor64> = samples.iter().map(|s| &s.input).collect();
    let probs = trained.model.forward(&Tensor64::stack(&inputs).unwrap()).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let row = probs[&Task::UlcerType].row(i);
        assert_eq!(argmax(row), s.labels.get(Task::UlcerType).unwrap(), "sample {i}");
    }
}

#[test]
fn single_task_training_leaves_other_heads_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<_> = (0..10)
        .map(|i| random_sample(&mut rng, i, [Some(i % 5), Some(i % 6), Some(i % 5), Some(i % 2), Some(0)]))
        .collect();
    let schema = LabelSchema::default();
    let ulcer = MultiTaskModel64::build(&schema, &small(), &[Task::UlcerType], 1).unwrap();
    let location = MultiTaskModel64::build(&schema, &small(), &[Task::Location], 2).unwrap();
    let multi_before = MultiTaskModel64::build(&schema, &small(), &Task::ALL[2..], 3).unwrap();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let a = train(ulcer, &samples[..8], &samples[8..], &config, &LossWeights::uniform()).unwrap();
    let b = train(location, &samples[..8], &samples[8..], &config, &LossWeights::uniform()).unwrap();
    assert_eq!(a.model.tasks(), vec![Task::UlcerType]);
    assert_eq!(b.model.tasks(), vec![Task::Location]);
    // Models share nothing: the multi-task model is untouched by either run.
    let set = Stage1Models::from_models(vec![a.model, b.model, multi_before.clone()]).unwrap();
    let fresh = MultiTaskModel64::build(&schema, &small(), &Task::ALL[2..], 3).unwrap();
    for (p, q) in set.models[2].params().iter().zip(fresh.params()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<_> = (0..6)
        .map(|i| random_sample(&mut rng, i, [Some(i % 5), None, None, None, None]))
        .collect();
    let model = MultiTaskModel64::build(&LabelSchema::default(), &small(), &[Task::UlcerType], 1).unwrap();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let mut trained = train(model, &samples[..4], &samples[4..], &config, &LossWeights::uniform()).unwrap().model;
    trained.quantize_f32();
    let path = dir.path().join("ulcer.wfm");
    save_model(&trained, &path).unwrap();
    let back: MultiTaskModel64 = load_model(&path, &LabelSchema::default()).unwrap();
    let x = Tensor64::stack(&[&samples[0].input, &samples[5].input]).unwrap();
    assert_eq!(trained.forward(&x).unwrap(), back.forward(&x).unwrap());
    let f32_model: MultiTaskModel<f32> = load_model(&path, &LabelSchema::default()).unwrap();
    let p32 = f32_model.forward(&x.cast()).unwrap();
    let p64 = back.forward(&x).unwrap();
    for (a, b) in p32[&Task::UlcerType].data().iter().zip(p64[&Task::UlcerType].data()) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}
