//! Paired training of an MLP and its prior with per-epoch weight
//! interpolation, plus evaluation, sweeps and the budget comparison.

mod metrics;
mod schedule;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{augment, Dataset, Variant, IMAGE_LEN};
use crate::error::{Error, Result};
use crate::model::{
    build_budget_priors, build_budgeted_mlps, build_imlp, build_mixer, build_scnn, build_smlp_for,
    extract_prior_fc, Model, ModelSpec, PriorKind,
};
use crate::ops::adam::AdamState;
use crate::ops::loss::cross_entropy;
use crate::rng::Rng;
use crate::structured::FcEquivalent;
use crate::tensor::Tensor;

pub use metrics::{
    aggregate, mean_std, read_aggregate_csv, read_metrics_csv, write_aggregate_csv, write_metrics_csv,
    Aggregate, MetricsRecord, METRICS_HEADER,
};
pub use schedule::{interpolate_weights, schedule_alpha, ScheduleMode, ScheduleSpec};

const EVAL_BATCH: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dataset: Variant,
    pub augment: bool,
    pub schedule: ScheduleSpec,
    /// `None` trains the MLP alone.
    pub prior: Option<PriorKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
            dataset: Variant::Cifar10,
            augment: true,
            schedule: ScheduleSpec::constant(0.0),
            prior: Some(PriorKind::Cnn),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("lr", format!("{} is not a usable learning rate", self.learning_rate)));
        }
        Ok(())
    }
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(model: &mut Model, opt: &mut AdamState<f32>, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, cache) = model.forward_train(x)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    let grads = model.backward(&cache, &dlogits)?;
    opt.step(&mut model.params_mut(), &grads.as_slices())?;
    Ok(f64::from(loss))
}

/// One shuffled pass over `data`. Every member sees the same batches (and
/// the same augmented pixels). Returns each member's sample-weighted mean
/// loss.
pub fn train_epoch_group(
    members: &mut [(&mut Model, &mut AdamState<f32>)],
    data: &Dataset,
    batch_size: usize,
    augmentation: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let order = rng.permutation(data.len());
    let mut sums = vec![0.0; members.len()];
    for chunk in order.chunks(batch_size) {
        let mut pixels = Vec::with_capacity(chunk.len() * IMAGE_LEN);
        for &i in chunk {
            if augmentation {
                pixels.extend(augment(data.image(i), rng));
            } else {
                pixels.extend_from_slice(data.image(i));
            }
        }
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
        let x = Tensor::new([chunk.len(), IMAGE_LEN], pixels)?;
        for ((model, opt), sum) in members.iter_mut().zip(&mut sums) {
            *sum += train_step(model, opt, &x, &labels)? * chunk.len() as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / data.len() as f64).collect())
}

/// Single-model form of [`train_epoch_group`].
pub fn train_epoch(
    model: &mut Model,
    opt: &mut AdamState<f32>,
    data: &Dataset,
    batch_size: usize,
    augmentation: bool,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(train_epoch_group(&mut [(model, opt)], data, batch_size, augmentation, rng)?[0])
}

/// Arg-max class per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn eval_batches(model: &Model, data: &Dataset, mut each: impl FnMut(&Tensor, &[usize]) -> Result<()>) -> Result<()> {
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let x = Tensor::new([end - start, IMAGE_LEN], data.images()[start * IMAGE_LEN..end * IMAGE_LEN].to_vec())?;
        let logits = model.forward(&x)?;
        each(&logits, &data.labels()[start..end])?;
    }
    Ok(())
}

/// Top-1 accuracy in percent.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    eval_batches(model, data, |logits, labels| {
        correct += argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(())
    })?;
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Mean cross-entropy without augmentation.
pub fn evaluate_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    eval_batches(model, data, |logits, labels| {
        total += f64::from(cross_entropy(logits, labels)?.0) * labels.len() as f64;
        Ok(())
    })?;
    Ok(total / data.len() as f64)
}

/// Checks that the MLP's interpolable layers line up with the prior's.
pub fn check_pair(mlp: &ModelSpec, prior: &ModelSpec) -> Result<()> {
    let a = mlp.interpolable_layers();
    let b = prior.interpolable_layers();
    if a.len() != b.len() {
        return Err(Error::config(
            "prior",
            format!("{} interpolable MLP layers but {} prior layers", a.len(), b.len()),
        ));
    }
    for (&i, &j) in a.iter().zip(&b) {
        let (m, p) = (&mlp.layers[i], &prior.layers[j]);
        if m.in_dim() != p.in_dim() || m.out_dim() != p.out_dim() {
            return Err(Error::config(
                "prior",
                format!(
                    "MLP layer {i} is {}→{} but prior layer {j} is {}→{}",
                    m.in_dim(),
                    m.out_dim(),
                    p.in_dim(),
                    p.out_dim()
                ),
            ));
        }
    }
    Ok(())
}

/// Blends every (masked) interpolable MLP weight toward its prior matrix.
pub fn apply_interpolation(mlp: &mut Model, prior_fc: &[FcEquivalent], alpha: f64, schedule: &ScheduleSpec) -> Result<()> {
    let idx = mlp.interpolable_layers();
    if idx.len() != prior_fc.len() {
        return Err(Error::shape("interpolation pair", &[idx.len()], &[prior_fc.len()]));
    }
    for (j, (&i, fc)) in idx.iter().zip(prior_fc).enumerate() {
        if schedule.masked(j) {
            let w = &mlp.layers[i].weight;
            mlp.layers[i].weight = interpolate_weights(w, &fc.matrix, alpha)?;
        }
    }
    Ok(())
}

/// One-shot blend of separately trained models, for evaluation only.
pub fn test_time_interpolate(mlp: &Model, prior: &Model, alpha_test: f64) -> Result<Model> {
    check_pair(mlp.spec(), prior.spec())?;
    let mut out = mlp.clone();
    if alpha_test == 0.0 {
        return Ok(out);
    }
    let fc = extract_prior_fc(prior)?;
    apply_interpolation(&mut out, &fc, alpha_test, &ScheduleSpec::constant(alpha_test))?;
    Ok(out)
}

/// State visible to a per-epoch observer, after interpolation.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub alpha: f64,
    pub mlp: &'a Model,
    pub prior: Option<&'a Model>,
    /// Matrices used for this epoch's interpolation; empty when none ran.
    pub prior_fc: &'a [FcEquivalent],
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub mlp: Model,
    pub prior: Option<Model>,
    pub records: Vec<MetricsRecord>,
    /// Accuracy of the test-time blend, for that schedule mode.
    pub test_time_top1: Option<f64>,
}

impl RunOutput {
    /// Final-epoch test accuracy of the named model.
    pub fn final_top1(&self, model: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.model == model).map(|r| r.test_top1)
    }
}

pub const MLP_NAME: &str = "mlp";
pub const PRIOR_NAME: &str = "prior";
pub const TEST_TIME_NAME: &str = "test-time";

/// MLP and prior specs for a prior choice, resized to `classes`.
pub fn pair_specs(prior: Option<PriorKind>, classes: usize) -> Result<(ModelSpec, Option<ModelSpec>)> {
    let (mlp, prior) = match prior {
        None => (build_smlp_for(PriorKind::Cnn)?, None),
        Some(kind) => {
            let p = match kind {
                PriorKind::Cnn => build_scnn()?,
                PriorKind::Mixer => build_mixer()?,
            };
            (build_imlp(kind)?, Some(p))
        }
    };
    Ok((mlp.with_classes(classes)?, prior.map(|p| p.with_classes(classes)).transpose()?))
}

/// Trains the pair `epochs` times: both models take the same batches, then
/// the MLP's interpolable weights are blended toward the prior, then both
/// are evaluated on `test`.
pub fn run_pair(
    config: &TrainConfig,
    mlp_spec: &ModelSpec,
    prior_spec: Option<&ModelSpec>,
    train: &Dataset,
    test: &Dataset,
    observer: &mut dyn FnMut(&EpochReport) -> Result<()>,
) -> Result<RunOutput> {
    config.validate()?;
    if let Some(p) = prior_spec {
        check_pair(mlp_spec, p)?;
        config.schedule.validate(p.interpolable_layers().len())?;
    } else if config.schedule.mode == ScheduleMode::TestTimeOnly {
        return Err(Error::config("prior", "test-time interpolation needs a prior"));
    }
    if train.classes() != mlp_spec.classes() {
        return Err(Error::config(
            "dataset",
            format!("{} classes but the model predicts {}", train.classes(), mlp_spec.classes()),
        ));
    }

    let root = Rng::new(config.seed);
    let mut mlp: Model = mlp_spec.instantiate(&mut root.derive("init-mlp"));
    let mut prior: Option<Model> = prior_spec.map(|s| s.instantiate(&mut root.derive("init-prior")));
    let mut data_rng = root.derive("data");
    let lr = config.learning_rate as f32;
    let mut mlp_opt = AdamState::new(lr);
    let mut prior_opt = AdamState::new(lr);
    let interpolating = prior.is_some() && config.schedule.interpolates_during_training();
    let mut records = Vec::with_capacity(2 * config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let losses = match prior.as_mut() {
            Some(p) => train_epoch_group(
                &mut [(&mut mlp, &mut mlp_opt), (p, &mut prior_opt)],
                train,
                config.batch_size,
                config.augment,
                &mut data_rng,
            )?,
            None => train_epoch_group(&mut [(&mut mlp, &mut mlp_opt)], train, config.batch_size, config.augment, &mut data_rng)?,
        };
        let alpha = if interpolating {
            schedule_alpha(&config.schedule, epoch, config.epochs)?
        } else {
            0.0
        };
        let mut fc = Vec::new();
        if let (true, Some(p)) = (alpha > 0.0, prior.as_ref()) {
            fc = extract_prior_fc(p)?;
            apply_interpolation(&mut mlp, &fc, alpha, &config.schedule)?;
        }
        let mlp_top1 = evaluate(&mlp, test)?;
        let prior_top1 = prior.as_ref().map(|p| evaluate(p, test)).transpose()?;
        let seconds = start.elapsed().as_secs_f64();
        records.push(MetricsRecord {
            epoch: epoch + 1,
            model: MLP_NAME.into(),
            train_loss: losses[0],
            test_top1: mlp_top1,
            alpha,
            seconds,
        });
        if let Some(top1) = prior_top1 {
            records.push(MetricsRecord {
                epoch: epoch + 1,
                model: PRIOR_NAME.into(),
                train_loss: losses[1],
                test_top1: top1,
                alpha,
                seconds,
            });
        }
        observer(&EpochReport {
            epoch: epoch + 1,
            alpha,
            mlp: &mlp,
            prior: prior.as_ref(),
            prior_fc: &fc,
        })?;
    }

    let mut test_time_top1 = None;
    if let (ScheduleMode::TestTimeOnly, Some(p)) = (config.schedule.mode, prior.as_ref()) {
        let blended = test_time_interpolate(&mlp, p, config.schedule.alpha_test)?;
        let top1 = evaluate(&blended, test)?;
        test_time_top1 = Some(top1);
        records.push(MetricsRecord {
            epoch: config.epochs,
            model: TEST_TIME_NAME.into(),
            train_loss: f64::NAN,
            test_top1: top1,
            alpha: config.schedule.alpha_test,
            seconds: 0.0,
        });
    }
    Ok(RunOutput {
        mlp,
        prior,
        records,
        test_time_top1,
    })
}

/// [`run_pair`] on the standard pair selected by `config.prior`.
pub fn run_interpolated_training(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<RunOutput> {
    let (mlp, prior) = pair_specs(config.prior, config.dataset.classes())?;
    run_pair(config, &mlp, prior.as_ref(), train, test, &mut |_| Ok(()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    /// Constant interpolation weight α.
    Alpha,
    /// Decay exponent k with the config's `a`.
    DecayK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub top1: f64,
}

/// Config for one sweep point.
pub fn sweep_config(base: &TrainConfig, kind: SweepKind, value: f64, seed: u64) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let mask = base.schedule.layer_mask.clone();
    cfg.schedule = match kind {
        SweepKind::Alpha => ScheduleSpec::constant(value),
        SweepKind::DecayK => ScheduleSpec::decay(base.schedule.a, value),
    };
    cfg.schedule.layer_mask = mask;
    cfg
}

/// Final MLP accuracy for every `(value, seed)`, values outermost.
pub fn sweep(
    base: &TrainConfig,
    kind: SweepKind,
    values: &[f64],
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        for &seed in seeds {
            let run = run_interpolated_training(&sweep_config(base, kind, value, seed), train, test)?;
            out.push(SweepPoint {
                value,
                seed,
                top1: run.final_top1(MLP_NAME).unwrap_or(f64::NAN),
            });
        }
    }
    Ok(out)
}

pub fn alpha_sweep(
    base: &TrainConfig,
    alphas: &[f64],
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<SweepPoint>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::config("alphas", format!("{a} is outside [0, 1]")));
    }
    sweep(base, SweepKind::Alpha, alphas, seeds, train, test)
}

pub fn aggregate_sweep(points: &[SweepPoint]) -> Vec<Aggregate> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.value, p.top1)).collect();
    aggregate(&pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub name: String,
    pub params: usize,
    pub interpolated_params: usize,
    pub baseline_top1: f64,
    pub interpolated_top1: f64,
}

impl BudgetRow {
    pub fn gain(&self) -> f64 {
        self.interpolated_top1 - self.baseline_top1
    }
}

/// Trains each budgeted MLP alone and paired with its CNN prior. Uses the
/// config's interpolation schedule, or a constant 0.5 when it has none.
pub fn budget_compare(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Vec<BudgetRow>> {
    let classes = config.dataset.classes();
    let (mlp1, mlp2) = build_budgeted_mlps()?;
    let (cnn1, cnn2) = build_budget_priors()?;
    let mut base_cfg = config.clone();
    base_cfg.schedule = ScheduleSpec::none();
    let mut interp_cfg = config.clone();
    if !interp_cfg.schedule.interpolates_during_training() {
        interp_cfg.schedule = ScheduleSpec::constant(0.5);
    }
    let mut rows = Vec::new();
    for (name, mlp, cnn) in [("MLP-1", mlp1, cnn1), ("MLP-2", mlp2, cnn2)] {
        let params = mlp.param_count();
        let interpolated_params = mlp.interpolable_param_count();
        let mlp = mlp.with_classes(classes)?;
        let cnn = cnn.with_classes(classes)?;
        let base = run_pair(&base_cfg, &mlp, None, train, test, &mut |_| Ok(()))?;
        let interp = run_pair(&interp_cfg, &mlp, Some(&cnn), train, test, &mut |_| Ok(()))?;
        rows.push(BudgetRow {
            name: name.into(),
            params,
            interpolated_params,
            baseline_top1: base.final_top1(MLP_NAME).unwrap_or(f64::NAN),
            interpolated_top1: interp.final_top1(MLP_NAME).unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}
