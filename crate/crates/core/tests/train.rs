use biasblend::data::{synthetic, ChannelStats, Dataset, Split, Variant};
use biasblend::model::{build_mixer, build_scnn, build_smlp, extract_prior_fc, Model, ModelSpec, PriorKind};
use biasblend::ops::AdamState;
use biasblend::train::{
    aggregate_sweep, alpha_sweep, evaluate, evaluate_loss, interpolate_weights, pair_specs, read_metrics_csv,
    run_interpolated_training, run_pair, schedule_alpha, test_time_interpolate, train_epoch, write_metrics_csv,
    MetricsRecord, ScheduleSpec, TrainConfig, MLP_NAME, PRIOR_NAME,
};
use biasblend::{Rng, Tensor};
use proptest::prelude::*;

fn desk_data(train_n: usize, test_n: usize) -> (Dataset, Dataset) {
    let train = synthetic(Variant::Cifar10, Split::Train, train_n, 21);
    let test = synthetic(Variant::Cifar10, Split::Test, test_n, 21);
    let stats = ChannelStats::compute(&train);
    (train.normalized(&stats), test.normalized(&stats))
}

fn quick(epochs: usize, schedule: ScheduleSpec, prior: Option<PriorKind>) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 5,
        augment: true,
        schedule,
        prior,
        ..TrainConfig::default()
    }
}

/// Records with the wall-clock column dropped.
fn timeless(records: &[MetricsRecord]) -> Vec<(usize, String, u64, u64, u64)> {
    records
        .iter()
        .map(|r| (r.epoch, r.model.clone(), r.train_loss.to_bits(), r.test_top1.to_bits(), r.alpha.to_bits()))
        .collect()
}

#[test]
fn interpolation_endpoints_are_exact() {
    let mut rng = Rng::new(1);
    let w = Tensor::<f32>::from_fn([7, 5], |_| rng.normal() as f32);
    let p = Tensor::<f32>::from_fn([7, 5], |_| rng.normal() as f32);
    assert_eq!(interpolate_weights(&w, &p, 0.0).unwrap(), w);
    assert_eq!(interpolate_weights(&w, &p, 1.0).unwrap(), p);
    assert!(interpolate_weights(&w, &Tensor::zeros([5, 7]), 0.5).is_err());
}

proptest! {
    #[test]
    fn interpolation_stays_between_operands(
        w in prop::collection::vec(-1e3f32..1e3, 12),
        p in prop::collection::vec(-1e3f32..1e3, 12),
        alpha in 0.0f64..=1.0,
    ) {
        let wt = Tensor::new([3, 4], w.clone()).unwrap();
        let pt = Tensor::new([3, 4], p.clone()).unwrap();
        let out = interpolate_weights(&wt, &pt, alpha).unwrap();
        for ((&o, &a), &b) in out.data().iter().zip(&w).zip(&p) {
            prop_assert!(a.min(b) <= o && o <= a.max(b));
        }
    }

    #[test]
    fn schedule_endpoints(a in 0.0f64..=1.0, k in 1.0f64..6.0, t_max in 1usize..200) {
        prop_assert_eq!(schedule_alpha(&ScheduleSpec::decay(a, 0.0), t_max / 2, t_max).unwrap(), a);
        prop_assert_eq!(schedule_alpha(&ScheduleSpec::decay(a, k), 0, t_max).unwrap(), a);
        prop_assert_eq!(schedule_alpha(&ScheduleSpec::decay(a, k), t_max, t_max).unwrap(), 0.0);
    }
}

#[test]
fn modes_without_training_interpolation_give_zero() {
    assert_eq!(schedule_alpha(&ScheduleSpec::test_time(0.7), 0, 4).unwrap(), 0.0);
    assert_eq!(schedule_alpha(&ScheduleSpec::none(), 2, 4).unwrap(), 0.0);
    assert_eq!(schedule_alpha(&ScheduleSpec::decay(0.5, 1.0), 2, 4).unwrap(), 0.25);
}

fn small_mlp() -> ModelSpec {
    build_smlp(64, 2, 3072, 10).unwrap()
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let (train, _) = desk_data(50, 10);
    let mut model: Model = small_mlp().instantiate(&mut Rng::new(2));
    let before = model.clone();
    let mut opt = AdamState::new(0.0);
    let loss = train_epoch(&mut model, &mut opt, &train, 16, false, &mut Rng::new(3)).unwrap();
    assert_eq!(model, before);
    let eval = evaluate_loss(&model, &train).unwrap();
    assert!((loss - eval).abs() < 1e-5, "{loss} vs {eval}");
}

#[test]
fn single_sample_is_memorized() {
    let (train, _) = desk_data(1, 10);
    let mut model: Model = small_mlp().instantiate(&mut Rng::new(4));
    let mut opt = AdamState::new(1e-3);
    let mut rng = Rng::new(5);
    let losses: Vec<f64> = (0..50)
        .map(|_| train_epoch(&mut model, &mut opt, &train, 1, false, &mut rng).unwrap())
        .collect();
    for w in losses[5..].windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    assert_eq!(evaluate(&model, &train).unwrap(), 100.0);
}

#[test]
fn training_is_deterministic() {
    let (train, test) = desk_data(60, 20);
    let cfg = quick(2, ScheduleSpec::constant(0.5), Some(PriorKind::Cnn));
    let a = run_interpolated_training(&cfg, &train, &test).unwrap();
    let b = run_interpolated_training(&cfg, &train, &test).unwrap();
    assert_eq!(timeless(&a.records), timeless(&b.records));
    assert_eq!(a.mlp, b.mlp);
}

#[test]
fn alpha_zero_matches_uninterpolated_run() {
    let (train, test) = desk_data(60, 20);
    let zero = run_interpolated_training(&quick(3, ScheduleSpec::constant(0.0), Some(PriorKind::Cnn)), &train, &test).unwrap();
    let none = run_interpolated_training(&quick(3, ScheduleSpec::none(), Some(PriorKind::Cnn)), &train, &test).unwrap();
    let alone = run_interpolated_training(&quick(3, ScheduleSpec::none(), None), &train, &test).unwrap();
    assert_eq!(zero.mlp.params(), none.mlp.params());
    assert_eq!(zero.mlp.params(), alone.mlp.params());
    assert_eq!(timeless(&zero.records), timeless(&none.records));
}

#[test]
fn alpha_one_copies_prior_matrices_every_epoch() {
    let (train, test) = desk_data(40, 20);
    for kind in [PriorKind::Cnn, PriorKind::Mixer] {
        let (mlp, prior) = pair_specs(Some(kind), 10).unwrap();
        let mut epochs = 0;
        run_pair(
            &quick(2, ScheduleSpec::constant(1.0), Some(kind)),
            &mlp,
            prior.as_ref(),
            &train,
            &test,
            &mut |report| {
                let fresh = extract_prior_fc(report.prior.unwrap())?;
                for (&i, fc) in report.mlp.interpolable_layers().iter().zip(&fresh) {
                    assert_eq!(report.mlp.layers[i].weight, fc.matrix);
                }
                epochs += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(epochs, 2);
    }
}

#[test]
fn decay_with_k_zero_equals_constant() {
    let (train, test) = desk_data(40, 20);
    let c = run_interpolated_training(&quick(2, ScheduleSpec::constant(0.3), Some(PriorKind::Cnn)), &train, &test).unwrap();
    let d = run_interpolated_training(&quick(2, ScheduleSpec::decay(0.3, 0.0), Some(PriorKind::Cnn)), &train, &test).unwrap();
    assert_eq!(c.mlp, d.mlp);
    assert_eq!(timeless(&c.records), timeless(&d.records));
}

#[test]
fn layer_mask_leaves_unmasked_layers_alone() {
    let (train, test) = desk_data(40, 20);
    let mut schedule = ScheduleSpec::constant(1.0);
    schedule.layer_mask = vec![true, false, false, false, false, false];
    let (mlp, prior) = pair_specs(Some(PriorKind::Cnn), 10).unwrap();
    run_pair(&quick(1, schedule, Some(PriorKind::Cnn)), &mlp, prior.as_ref(), &train, &test, &mut |r| {
        let fc = extract_prior_fc(r.prior.unwrap())?;
        assert_eq!(r.mlp.layers[0].weight, fc[0].matrix);
        assert_ne!(r.mlp.layers[1].weight, fc[1].matrix);
        Ok(())
    })
    .unwrap();
}

#[test]
fn metrics_cover_every_epoch_and_round_trip() {
    let (train, test) = desk_data(40, 20);
    let out = run_interpolated_training(&quick(10, ScheduleSpec::constant(0.5), Some(PriorKind::Cnn)), &train, &test).unwrap();
    for name in [MLP_NAME, PRIOR_NAME] {
        let recs: Vec<_> = out.records.iter().filter(|r| r.model == name).collect();
        assert_eq!(recs.len(), 10);
        assert!(recs.iter().all(|r| r.alpha == 0.5 && (0.0..=100.0).contains(&r.test_top1)));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, &out.records).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,model,train_loss,test_top1,alpha,seconds\n"));
    assert_eq!(read_metrics_csv(&path).unwrap(), out.records);
}

#[test]
fn mismatched_pair_is_rejected_up_front() {
    let (train, test) = desk_data(20, 10);
    let mlp = pair_specs(Some(PriorKind::Cnn), 10).unwrap().0;
    let mixer = build_mixer().unwrap();
    let err = run_pair(&quick(1, ScheduleSpec::constant(0.5), None), &mlp, Some(&mixer), &train, &test, &mut |_| {
        panic!("must fail before training")
    })
    .unwrap_err();
    assert!(err.to_string().contains("prior"));
}

#[test]
fn test_time_blend_endpoints() {
    let (_, test) = desk_data(10, 30);
    let mut rng = Rng::new(7);
    let mlp: Model = pair_specs(Some(PriorKind::Cnn), 10).unwrap().0.instantiate(&mut rng);
    let mut prior: Model = build_scnn().unwrap().instantiate(&mut rng);
    let same = test_time_interpolate(&mlp, &prior, 0.0).unwrap();
    assert_eq!(evaluate(&same, &test).unwrap(), evaluate(&mlp, &test).unwrap());

    prior.zero_biases();
    let mut mlp0 = mlp.clone();
    mlp0.zero_biases();
    let head = mlp0.layers.len() - 1;
    mlp0.layers[head].weight = prior.layers[head].weight.clone();
    let blended = test_time_interpolate(&mlp0, &prior, 1.0).unwrap();
    let x = Tensor::new([30, 3072], test.images().to_vec()).unwrap();
    let d = blended.forward(&x).unwrap().max_abs_diff(&prior.forward(&x).unwrap()).unwrap();
    assert!(d < 1e-4, "{d}");
}

#[test]
fn test_time_mode_records_blend() {
    let (train, test) = desk_data(30, 20);
    let out = run_interpolated_training(&quick(1, ScheduleSpec::test_time(0.5), Some(PriorKind::Cnn)), &train, &test).unwrap();
    let top1 = out.test_time_top1.unwrap();
    assert!((0.0..=100.0).contains(&top1));
    assert_eq!(out.records.last().unwrap().alpha, 0.5);
}

#[test]
fn constant_prediction_scores_ten_percent() {
    let (_, test) = desk_data(10, 200);
    assert_eq!(test.class_counts(), vec![20; 10]);
    let mut m: Model = small_mlp().zeros();
    let head = m.layers.len() - 1;
    m.layers[head].bias.data_mut()[3] = 1.0;
    assert_eq!(evaluate(&m, &test).unwrap(), 10.0);
}

#[test]
fn random_model_is_near_chance() {
    let (_, test) = desk_data(10, 1000);
    for seed in 0..3 {
        let m: Model = small_mlp().instantiate(&mut Rng::new(seed));
        let acc = evaluate(&m, &test).unwrap();
        assert!((0.0..=40.0).contains(&acc), "{acc}");
    }
}

#[test]
fn sweep_rows_and_endpoints() {
    let (train, test) = desk_data(30, 20);
    let base = quick(1, ScheduleSpec::constant(0.0), Some(PriorKind::Cnn));
    let pts = alpha_sweep(&base, &[0.0, 1.0], &[1, 2], &train, &test).unwrap();
    assert_eq!(pts.len(), 4);
    let agg = aggregate_sweep(&pts);
    assert_eq!(agg.len(), 2);
    let mut plain = base.clone();
    plain.prior = None;
    plain.seed = 1;
    let alone = run_interpolated_training(&plain, &train, &test).unwrap();
    assert_eq!(pts[0].top1, alone.final_top1(MLP_NAME).unwrap());
    assert!(alpha_sweep(&base, &[1.5], &[1], &train, &test).is_err());
}

#[test]
fn empty_dataset_is_an_error() {
    let empty = Dataset::new(Variant::Cifar10, Split::Train, Vec::new(), Vec::new()).unwrap();
    let mut m: Model = small_mlp().instantiate(&mut Rng::new(1));
    assert!(train_epoch(&mut m, &mut AdamState::new(1e-3), &empty, 8, false, &mut Rng::new(1)).is_err());
}
