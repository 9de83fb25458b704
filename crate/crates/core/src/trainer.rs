//! Training loop, class weighting and evaluation.

use fragroup_tensor::{AdamConfig, AdamState, Graph, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::Example;
use crate::encoder::Mode;
use crate::grouping::{decode_groups, GroupSource, GroupingReport, GroupingTally, MergedGroup, DEFAULT_THRESHOLDS};
use crate::metrics::{ClassificationReport, ConfusionTally};
use crate::model::{Model, ModelConfig};
use crate::proto::Label;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Prototypes per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate is divided by 10 for every epoch after this one.
    pub lr_drop_epoch: usize,
    pub l2_lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 60,
            batch_size: 8,
            lr: adam.lr,
            lr_drop_epoch: 40,
            l2_lambda: adam.l2_lambda,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.lr_drop_epoch > self.epochs {
            return bad(format!("lr_drop_epoch {} exceeds epochs {}", self.lr_drop_epoch, self.epochs));
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return bad(format!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        self.model.validate()
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.lr / 10.0
        } else {
            self.lr
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, l2_lambda: self.l2_lambda }
    }
}

/// `w_c = n_total / (3 · n_c)`.
pub fn compute_class_weights(counts: [u64; 3]) -> Result<[f64; 3]> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        let label = Label::from_index(c).expect("three classes");
        return Err(Error::Data(format!("no `{}` elements to weight", label.as_str())));
    }
    let total: u64 = counts.iter().sum();
    Ok(counts.map(|n| total as f64 / (3.0 * n as f64)))
}

pub fn label_counts(examples: &[Example]) -> Result<[u64; 3]> {
    let mut counts = [0u64; 3];
    for ex in examples {
        for l in ex.labels()? {
            counts[l.index()] += 1;
        }
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_macro_f1: Option<f64>,
    /// Whether this epoch's parameters became the retained checkpoint.
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { op }) => {
            Error::TrainingDiverged { epoch, detail: format!("non-finite value in `{op}`") }
        }
        other => other,
    }
}

/// One optimizer step over `batch`; returns the batch loss.
fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    batch: &[&Example],
    weights: &[f32],
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let g = Graph::new();
    let p = model.params.bind(&g, true);
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for ex in batch.iter().filter(|ex| !ex.is_empty()) {
        let mut mode = Mode { dropout: model.config.encoder.dropout, rng: Some(&mut *rng) };
        logits.push(model.logits(&g, &p, &ex.features, &mut mode)?);
        targets.extend(ex.labels()?.iter().map(|l| l.index()));
    }
    if logits.is_empty() {
        return Ok(None);
    }
    let all = if logits.len() == 1 { logits[0] } else { g.concat_rows(&logits)? };
    let loss = g.cross_entropy(all, &targets, weights)?;
    let value = f64::from(g.value_ref(loss).data()[0]);
    if !value.is_finite() {
        return Err(TensorError::NonFinite { op: "cross_entropy" }.into());
    }
    let mut grads = g.backward(loss)?;
    let vars = p.vars().to_vec();
    let grads: Vec<Option<Tensor<f32>>> = vars.iter().map(|&v| grads.take(v)).collect();
    let refs: Vec<Option<&Tensor<f32>>> = grads.iter().map(Option::as_ref).collect();
    adam.step(model.params.tensors_mut(), &refs)?;
    Ok(Some(value))
}

/// Trains from a fresh initialization. With a non-empty `val` set the
/// parameters of the epoch with the highest validation macro-F1 are kept
/// (earliest on ties); otherwise the final parameters are.
pub fn train(
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let weights = compute_class_weights(label_counts(train)?)?.map(|w| w as f32);
    for ex in val {
        ex.labels()?;
    }

    let mut model = Model::<f32>::new(config.model.clone(), config.seed)?;
    let mut adam = AdamState::new(config.adam(), model.params.tensors());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Model<f32>, CheckpointMeta)> = None;
    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        adam.set_lr(lr);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let step = train_step(&mut model, &mut adam, &batch, &weights, &mut dropout_rng).map_err(diverged(epoch))?;
            if let Some(loss) = step {
                loss_sum += loss;
                steps += 1;
            }
        }
        if steps == 0 {
            return Err(Error::Data("training split has no elements".into()));
        }
        let train_loss = loss_sum / steps as f64;
        let val_macro_f1 = if val.is_empty() { None } else { Some(evaluate_classification(&model, val)?.macro_avg.f1) };
        let improved = match (val_macro_f1, &best) {
            (None, _) => true,
            (Some(f1), Some((prev, _, _))) => f1 > *prev,
            (Some(_), None) => true,
        };
        if improved {
            let meta = CheckpointMeta { epoch, seed: config.seed, train_loss, val_macro_f1: val_macro_f1.unwrap_or(0.0) };
            best = Some((val_macro_f1.unwrap_or(0.0), model.clone(), meta));
        }
        let entry = EpochLog { epoch, lr, train_loss, val_macro_f1, best: improved };
        on_epoch(&entry);
        log.push(entry);
    }
    let (_, model, meta) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { checkpoint: Checkpoint { model, meta }, log })
}

/// Predicted labels and the groups they decode to.
pub fn predict_groups(model: &Model<f32>, ex: &Example) -> Result<(Vec<Label>, Vec<MergedGroup>)> {
    let labels = model.predict(&ex.features)?;
    let groups = decode_groups(&labels, &ex.uuids, GroupSource::Predicted)?;
    Ok((labels, groups))
}

pub fn evaluate_classification(model: &Model<f32>, examples: &[Example]) -> Result<ClassificationReport> {
    if examples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let mut tally = ConfusionTally::default();
    for ex in examples {
        tally.add(ex.labels()?, &model.predict(&ex.features)?)?;
    }
    Ok(tally.report())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: ClassificationReport,
    pub grouping: GroupingReport,
}

/// Element classification and group matching over `examples`, with tiny
/// and overlapping strata.
pub fn evaluate(model: &Model<f32>, examples: &[Example]) -> Result<EvalReport> {
    evaluate_with(examples, |ex| model.predict(&ex.features))
}

/// [`evaluate`] for any source of per-element labels.
pub fn evaluate_with<F>(examples: &[Example], mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&Example) -> Result<Vec<Label>>,
{
    if examples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let mut confusion = ConfusionTally::default();
    let mut grouping = GroupingTally::new(&DEFAULT_THRESHOLDS);
    for ex in examples {
        let labels = predict(ex)?;
        let pred = decode_groups(&labels, &ex.uuids, GroupSource::Predicted)?;
        confusion.add(ex.labels()?, &labels)?;
        grouping.add_prototype(&ex.ground_truth_groups()?, &pred, Some(&ex.strata));
    }
    Ok(EvalReport { classification: confusion.report(), grouping: grouping.report() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weights() {
        assert_eq!(compute_class_weights([5, 5, 5]).unwrap(), [1.0; 3]);
        let w = compute_class_weights([10, 90, 50]).unwrap();
        assert!((w[0] / w[1] - 9.0).abs() < 1e-12);
        assert!(matches!(compute_class_weights([0, 1, 2]), Err(Error::Data(_))));
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig { epochs: 5, lr_drop_epoch: 3, lr: 0.01, ..Default::default() };
        let lrs: Vec<f64> = (1..=5).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs, [0.01, 0.01, 0.01, 0.001, 0.001]);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { epochs: 0, lr_drop_epoch: 0, ..ok.clone() },
            TrainConfig { lr: 0.0, ..ok.clone() },
            TrainConfig { lr_drop_epoch: 61, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
