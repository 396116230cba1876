//! Fine-tuning a single-attribute network from a multi-label model so that
//! hidden activations on source and target data line up under MK-MMD, while a
//! weighted source classification loss keeps the head useful.
//!
//! Layers are addressed by one combined index: trunk layers first, then the
//! layers of the (single) head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{LabeledDomain, TargetView, UnlabeledDomain};
use crate::error::{Error, Result};
use crate::grouping::AttributeGrouping;
use crate::mmd::{median_heuristic_bandwidths, mkmmd_grad, mkmmd_sq, Estimator, KernelFamily};
use crate::multilabel::{
    accuracy, attribute_loss, attribute_loss_grad, divergence, Label, ModelGradients, ModelPass,
    MultiLabelModel,
};
use crate::nn::Matrix;

/// Source loss weight for a source/target pair from the same group.
pub const SAME_GROUP_ALPHA: f64 = 1.0;
/// Source loss weight for a pair from different groups.
pub const CROSS_GROUP_ALPHA: f64 = 0.1;

/// Rows per domain used to fit the kernel bandwidths.
const KERNEL_FIT_ROWS: usize = 400;

/// Everything a transfer run needs besides the starting model.
#[derive(Debug, Clone)]
pub struct TransferTask {
    /// Source samples with a single label column, the source attribute.
    pub source: LabeledDomain,
    /// Index of the source attribute's head in the multi-label model.
    pub source_head: usize,
    pub target: UnlabeledDomain,
    /// Attribute the target labels are scored against. Evaluation only.
    pub target_attribute: String,
    pub mmd_layers: Vec<usize>,
    /// Multiplier of each MMD penalty, parallel to `mmd_layers`.
    pub multipliers: Vec<f64>,
    pub alpha: f64,
    /// Kernel family per MMD layer, parallel to `mmd_layers`.
    pub kernels: Vec<KernelFamily>,
    pub estimator: Estimator,
    /// Leading trunk layers held fixed.
    pub freeze_depth: usize,
}

impl TransferTask {
    /// Resolves layer, multiplier and freezing defaults from `config` and
    /// fits per-layer kernel bandwidths by the median heuristic on the
    /// starting model's activations.
    pub fn build(
        mnet: &MultiLabelModel,
        source: &LabeledDomain,
        source_attribute: &str,
        target: UnlabeledDomain,
        target_attribute: &str,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let source_head = mnet
            .head_index(source_attribute)
            .ok_or_else(|| Error::arg(format!("model has no head for attribute `{source_attribute}`")))?;
        let column = source
            .attribute_index(source_attribute)
            .ok_or_else(|| Error::arg(format!("source data has no attribute `{source_attribute}`")))?;
        let source = source.with_attributes(&[column])?;
        if source.features.cols() != mnet.trunk.input_dim() || target.features.cols() != mnet.trunk.input_dim() {
            return Err(Error::shape(format!(
                "model expects {} features, source has {}, target {}",
                mnet.trunk.input_dim(),
                source.features.cols(),
                target.features.cols()
            )));
        }
        let model = mnet.restrict_to(source_head)?;
        let mmd_layers = match &config.mmd_layers {
            Some(l) => l.clone(),
            None => default_mmd_layers(&model),
        };
        check_layers(&model, &mmd_layers)?;
        let multipliers = match &config.mmd_multipliers {
            Some(m) if m.len() != mmd_layers.len() => {
                return Err(Error::arg(format!(
                    "mmd_multipliers has {} entries for {} mmd_layers",
                    m.len(),
                    mmd_layers.len()
                )))
            }
            Some(m) => m.clone(),
            None => vec![1.0; mmd_layers.len()],
        };
        let freeze_depth = config.effective_freeze_depth();
        if freeze_depth > model.trunk.len() {
            return Err(Error::arg(format!(
                "freeze_depth {freeze_depth} exceeds the {} trunk layers",
                model.trunk.len()
            )));
        }
        let kernels = fit_kernels(
            &model,
            &source.features,
            target.training_view(),
            &mmd_layers,
            &config.kernel_scales,
        )?;
        Ok(Self {
            source,
            source_head,
            target,
            target_attribute: target_attribute.to_string(),
            mmd_layers,
            multipliers,
            alpha: config.alpha,
            kernels,
            estimator: config.estimator,
            freeze_depth,
        })
    }

    /// The starting transfer network: the source head on the shared trunk,
    /// with the trunk prefix frozen.
    pub fn initial_model(&self, mnet: &MultiLabelModel) -> Result<MultiLabelModel> {
        let mut model = mnet.restrict_to(self.source_head)?;
        model.trunk.freeze_prefix(self.freeze_depth)?;
        Ok(model)
    }
}

/// Last trunk layer and the head layers below the logits, at most three in
/// total, counted from the top.
pub fn default_mmd_layers(model: &MultiLabelModel) -> Vec<usize> {
    let trunk = model.trunk.len();
    let head_hidden = model.heads.first().map_or(0, |h| h.net().len().saturating_sub(1));
    let last = trunk + head_hidden;
    (last.saturating_sub(3)..last).collect()
}

fn check_layers(model: &MultiLabelModel, layers: &[usize]) -> Result<()> {
    let depth = combined_depth(model);
    if layers.is_empty() {
        return Err(Error::arg("mmd_layers must not be empty"));
    }
    for (i, &l) in layers.iter().enumerate() {
        if l >= depth {
            return Err(Error::arg(format!("mmd_layers entry {l} out of range; model has {depth} layers")));
        }
        if layers[..i].contains(&l) {
            return Err(Error::arg(format!("mmd_layers lists layer {l} twice")));
        }
    }
    Ok(())
}

fn combined_depth(model: &MultiLabelModel) -> usize {
    model.trunk.len() + model.heads.first().map_or(0, |h| h.net().len())
}

fn single_head(model: &MultiLabelModel) -> Result<()> {
    if model.heads.len() != 1 {
        return Err(Error::arg(format!(
            "transfer needs a single-head model, got {} heads",
            model.heads.len()
        )));
    }
    Ok(())
}

fn activation(pass: &ModelPass, trunk_len: usize, layer: usize) -> &Matrix {
    if layer < trunk_len {
        &pass.trunk.outputs()[layer]
    } else {
        &pass.heads[0].outputs()[layer - trunk_len]
    }
}

/// Post-activation outputs of the listed layers for `features`.
pub fn layer_activations(model: &MultiLabelModel, features: &Matrix, layers: &[usize]) -> Result<Vec<Matrix>> {
    single_head(model)?;
    check_layers(model, layers)?;
    let pass = model.forward(features)?;
    Ok(layers
        .iter()
        .map(|&l| activation(&pass, model.trunk.len(), l).clone())
        .collect())
}

fn evenly_spaced(rows: usize, limit: usize) -> Vec<usize> {
    if rows <= limit {
        (0..rows).collect()
    } else {
        (0..limit).map(|i| i * rows / limit).collect()
    }
}

/// Median-heuristic kernel family per layer, from activations of up to 400
/// evenly spaced rows of each domain. A layer whose pooled activations are all
/// equal gets the scales themselves as bandwidths.
pub fn fit_kernels(
    model: &MultiLabelModel,
    source: &Matrix,
    target: TargetView<'_>,
    layers: &[usize],
    scales: &[f64],
) -> Result<Vec<KernelFamily>> {
    let s = source.select_rows(&evenly_spaced(source.rows(), KERNEL_FIT_ROWS));
    let t = target
        .features
        .select_rows(&evenly_spaced(target.features.rows(), KERNEL_FIT_ROWS));
    let pooled = s.vstack(&t)?;
    layer_activations(model, &pooled, layers)?
        .iter()
        .map(|a| match median_heuristic_bandwidths(a, scales) {
            // a dead layer has no spread; any bandwidth gives zero discrepancy
            Err(Error::DegenerateData(_)) => KernelFamily::uniform(scales.to_vec()),
            other => other,
        })
        .collect()
}

/// Value of the transfer objective on one pair of batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferLoss {
    /// `Σ multiplier_i · mmd_components[i] + alpha · source_softmax`
    pub total: f64,
    pub mmd_components: Vec<f64>,
    pub source_softmax: f64,
}

impl TransferLoss {
    pub fn mmd_sum(&self) -> f64 {
        self.mmd_components.iter().sum()
    }
}

fn check_batches(source: &Matrix, labels: &[Label], target: &Matrix) -> Result<()> {
    if source.rows() == 0 || target.rows() == 0 {
        return Err(Error::arg("transfer batches must be non-empty"));
    }
    if labels.len() != source.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} source rows",
            labels.len(),
            source.rows()
        )));
    }
    Ok(())
}

fn combine(task: &TransferTask, mmd_components: Vec<f64>, source_softmax: f64) -> TransferLoss {
    let mut total = 0.0;
    for (d, m) in mmd_components.iter().zip(&task.multipliers) {
        total += m * d;
    }
    total += task.alpha * source_softmax;
    TransferLoss {
        total,
        mmd_components,
        source_softmax,
    }
}

/// Transfer objective: MK-MMD between source and target activations at each
/// designated layer plus `alpha` times the softmax loss on the source batch.
pub fn transfer_loss(
    model: &MultiLabelModel,
    task: &TransferTask,
    source: &Matrix,
    source_labels: &[Label],
    target: &Matrix,
) -> Result<TransferLoss> {
    single_head(model)?;
    check_batches(source, source_labels, target)?;
    let sp = model.forward(source)?;
    let tp = model.forward(target)?;
    let trunk_len = model.trunk.len();
    let mut components = Vec::with_capacity(task.mmd_layers.len());
    for (&l, k) in task.mmd_layers.iter().zip(&task.kernels) {
        let v = mkmmd_sq(activation(&sp, trunk_len, l), activation(&tp, trunk_len, l), k, task.estimator)?;
        components.push(v.value);
    }
    let ls = attribute_loss(sp.logits(0), source_labels)?;
    Ok(combine(task, components, ls))
}

/// [`transfer_loss`] and its gradient with respect to every model parameter.
/// Both batches contribute through their own backward pass.
pub fn transfer_loss_and_gradients(
    model: &MultiLabelModel,
    task: &TransferTask,
    source: &Matrix,
    source_labels: &[Label],
    target: &Matrix,
) -> Result<(TransferLoss, ModelGradients)> {
    single_head(model)?;
    check_batches(source, source_labels, target)?;
    let sp = model.forward(source)?;
    let tp = model.forward(target)?;
    let trunk_len = model.trunk.len();
    let head_len = model.heads[0].net().len();

    let mut s_inject: Vec<Option<Matrix>> = vec![None; trunk_len + head_len];
    let mut t_inject: Vec<Option<Matrix>> = vec![None; trunk_len + head_len];
    let mut components = Vec::with_capacity(task.mmd_layers.len());
    for ((&l, k), &mult) in task.mmd_layers.iter().zip(&task.kernels).zip(&task.multipliers) {
        let g = mkmmd_grad(activation(&sp, trunk_len, l), activation(&tp, trunk_len, l), k, task.estimator)?;
        components.push(g.value.value);
        let (mut gs, mut gt) = (g.source, g.target);
        gs.scale(mult);
        gt.scale(mult);
        s_inject[l] = Some(gs);
        t_inject[l] = Some(gt);
    }
    let (ls, mut dlogits) = attribute_loss_grad(sp.logits(0), source_labels)?;
    dlogits.scale(task.alpha);
    match &mut s_inject[trunk_len + head_len - 1] {
        Some(g) => g.add_assign(&dlogits)?,
        slot => *slot = Some(dlogits),
    }

    let mut grads = ModelGradients::zeros_like(model);
    for (pass, inject) in [(&sp, s_inject), (&tp, t_inject)] {
        let (head_inject, trunk_inject) = {
            let mut inject = inject;
            let head = inject.split_off(trunk_len);
            (head, inject)
        };
        let head_refs: Vec<Option<&Matrix>> = head_inject.iter().map(Option::as_ref).collect();
        let (hg, dx) = model.heads[0].net().backward_injected(&pass.heads[0], &head_refs)?;
        let mut trunk_inject = trunk_inject;
        match &mut trunk_inject[trunk_len - 1] {
            Some(g) => g.add_assign(&dx)?,
            slot => *slot = Some(dx),
        }
        let trunk_refs: Vec<Option<&Matrix>> = trunk_inject.iter().map(Option::as_ref).collect();
        let (tg, _) = model.trunk.backward_injected(&pass.trunk, &trunk_refs)?;
        grads.trunk.add_assign(&tg)?;
        grads.heads[0].add_assign(&hg)?;
    }
    Ok((combine(task, components, ls), grads))
}

/// Per-epoch transfer metrics. Loss figures are means over the epoch's steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferEpoch {
    pub epoch: usize,
    pub total: f64,
    pub mmd_components: Vec<f64>,
    pub source_softmax: f64,
    /// Target accuracy after the epoch, when evaluation labels exist.
    pub target_accuracy: Option<f64>,
}

impl TransferEpoch {
    pub fn mmd_sum(&self) -> f64 {
        self.mmd_components.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct TnetRun {
    pub model: MultiLabelModel,
    pub epochs: Vec<TransferEpoch>,
}

/// Accuracy of a single-head `model` on the target, against the evaluation
/// labels of `attribute`. `None` when the target carries no such labels.
pub fn target_accuracy(model: &MultiLabelModel, target: &UnlabeledDomain, attribute: &str) -> Result<Option<f64>> {
    single_head(model)?;
    let Some(truth) = target.eval_column(attribute) else {
        return Ok(None);
    };
    let preds = model.predict(&target.features)?;
    Ok(Some(accuracy(&preds.decisions.column(0), &truth)))
}

/// Seeded minibatch SGD on the transfer objective, starting from the source
/// head of `mnet`. Evaluation labels of the target are only consulted after
/// each epoch to report accuracy; the optimization sees a label-free view.
pub fn train_tnet(mnet: &MultiLabelModel, task: &TransferTask, config: &TrainConfig) -> Result<TnetRun> {
    let mut epochs = Vec::with_capacity(config.epochs);
    let model = adapt(mnet, task, task.target.training_view(), config, |epoch, model, loss| {
        epochs.push(TransferEpoch {
            epoch,
            total: loss.total,
            mmd_components: loss.mmd_components,
            source_softmax: loss.source_softmax,
            target_accuracy: target_accuracy(model, &task.target, &task.target_attribute)?,
        });
        Ok(())
    })?;
    Ok(TnetRun { model, epochs })
}

/// Training loop proper. `report` receives the epoch-mean losses after each
/// epoch.
fn adapt<F>(
    mnet: &MultiLabelModel,
    task: &TransferTask,
    target: TargetView<'_>,
    config: &TrainConfig,
    mut report: F,
) -> Result<MultiLabelModel>
where
    F: FnMut(usize, &MultiLabelModel, TransferLoss) -> Result<()>,
{
    config.validate()?;
    let mut model = task.initial_model(mnet)?;
    check_layers(&model, &task.mmd_layers)?;
    if task.kernels.len() != task.mmd_layers.len() || task.multipliers.len() != task.mmd_layers.len() {
        return Err(Error::arg("kernels and multipliers must match mmd_layers"));
    }
    let ns = task.source.len();
    let nt = target.features.rows();
    // the unbiased estimator needs two rows per side
    let min_batch = match task.estimator {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    };
    if ns < min_batch || nt < min_batch {
        return Err(Error::arg("source and target need enough rows for one batch"));
    }
    let labels = task.source.labels.column(0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut source_order: Vec<usize> = (0..ns).collect();
    let mut target_order: Vec<usize> = (0..nt).collect();
    target_order.shuffle(&mut rng);
    let mut target_pos = 0;

    for epoch in 0..config.epochs {
        source_order.shuffle(&mut rng);
        let mut sum = TransferLoss {
            total: 0.0,
            mmd_components: vec![0.0; task.mmd_layers.len()],
            source_softmax: 0.0,
        };
        let mut steps = 0usize;
        for chunk in source_order.chunks(config.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let mut tidx = Vec::with_capacity(chunk.len());
            while tidx.len() < chunk.len() {
                if target_pos == nt {
                    target_order.shuffle(&mut rng);
                    target_pos = 0;
                }
                tidx.push(target_order[target_pos]);
                target_pos += 1;
            }
            let xs = task.source.features.select_rows(chunk);
            let ys: Vec<Label> = chunk.iter().map(|&i| labels[i]).collect();
            let xt = target.features.select_rows(&tidx);
            let (loss, grads) =
                transfer_loss_and_gradients(&model, task, &xs, &ys, &xt).map_err(|e| divergence(epoch, e))?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: "transfer loss is not finite".into(),
                });
            }
            model
                .sgd_step(&grads, config.learning_rate)
                .map_err(|e| divergence(epoch, e))?;
            sum.total += loss.total;
            sum.source_softmax += loss.source_softmax;
            for (a, b) in sum.mmd_components.iter_mut().zip(&loss.mmd_components) {
                *a += b;
            }
            steps += 1;
        }
        let k = steps.max(1) as f64;
        sum.total /= k;
        sum.source_softmax /= k;
        sum.mmd_components.iter_mut().for_each(|v| *v /= k);
        report(epoch, &model, sum)?;
    }
    Ok(model)
}

/// Source head applied to the target without adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectTransfer {
    pub accuracy: f64,
    pub predictions: Vec<Label>,
}

/// Scores the untouched source head of `mnet` on the target features against
/// the evaluation labels of `target_attribute`.
pub fn direct_transfer(
    mnet: &MultiLabelModel,
    source_attribute: &str,
    target: &UnlabeledDomain,
    target_attribute: &str,
) -> Result<DirectTransfer> {
    let head = mnet
        .head_index(source_attribute)
        .ok_or_else(|| Error::arg(format!("model has no head for attribute `{source_attribute}`")))?;
    let model = mnet.restrict_to(head)?;
    let truth = target
        .eval_column(target_attribute)
        .ok_or_else(|| Error::arg(format!("target has no evaluation labels for `{target_attribute}`")))?;
    let predictions = model.predict(&target.features)?.decisions.column(0);
    Ok(DirectTransfer {
        accuracy: accuracy(&predictions, &truth),
        predictions,
    })
}

/// Source loss weight: large when both attributes share a group, small otherwise.
pub fn alpha_policy(grouping: &AttributeGrouping, source: usize, target: usize) -> Result<f64> {
    Ok(if grouping.same_group(source, target)? {
        SAME_GROUP_ALPHA
    } else {
        CROSS_GROUP_ALPHA
    })
}

/// `epoch,total,mmd:<layer>...,source_loss,target_acc` CSV.
pub fn transfer_metrics_csv(epochs: &[TransferEpoch], layers: &[usize]) -> String {
    use std::fmt::Write as _;
    let fmt = crate::nn::format_f64;
    let mut s = String::from("epoch,total");
    for l in layers {
        let _ = write!(s, ",mmd:{l}");
    }
    s.push_str(",source_loss,target_acc\n");
    for e in epochs {
        let _ = write!(s, "{},{}", e.epoch, fmt(e.total));
        for v in &e.mmd_components {
            let _ = write!(s, ",{}", fmt(*v));
        }
        let _ = write!(s, ",{},", fmt(e.source_softmax));
        if let Some(a) = e.target_accuracy {
            let _ = write!(s, "{a:.6}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn tiny_setup(seed: u64) -> (MultiLabelModel, LabeledDomain, UnlabeledDomain, TrainConfig) {
        let spec = SyntheticSpec {
            feature_dim: 6,
            group_sizes: vec![2, 1],
            samples: 40,
            target_samples: 30,
            shift: 1.0,
            rotation_deg: 10.0,
            seed,
            ..SyntheticSpec::default()
        };
        let (src, tgt) = generate(&spec).unwrap();
        let config = TrainConfig {
            seed,
            epochs: 2,
            batch_size: 8,
            trunk_units: vec![6, 5],
            head_units: vec![4, 3],
            ..TrainConfig::default()
        };
        let model = MultiLabelModel::initialize(6, &src.names, vec![1.0; 3], &config).unwrap();
        (model, src, tgt, config)
    }

    #[test]
    fn default_layers_are_last_trunk_and_head_hidden() {
        let (model, ..) = tiny_setup(0);
        let single = model.restrict_to(0).unwrap();
        assert_eq!(default_mmd_layers(&single), vec![1, 2, 3]);
    }

    #[test]
    fn identical_batches_leave_only_source_loss() {
        let (model, src, tgt, config) = tiny_setup(1);
        let task = TransferTask::build(&model, &src, "a0", tgt, "a1", &config).unwrap();
        let tnet = task.initial_model(&model).unwrap();
        let x = src.features.select_rows(&[0, 1, 2, 3, 4]);
        let y: Vec<Label> = (0..5).map(|r| src.labels.get(r, 0)).collect();
        let loss = transfer_loss(&tnet, &task, &x, &y, &x).unwrap();
        assert!(loss.mmd_components.iter().all(|d| d.abs() < 1e-12));
        assert!((loss.total - task.alpha * loss.source_softmax).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_drops_source_loss() {
        let (model, src, tgt, config) = tiny_setup(2);
        let config = TrainConfig { alpha: 0.0, ..config };
        let task = TransferTask::build(&model, &src, "a0", tgt.clone(), "a0", &config).unwrap();
        let tnet = task.initial_model(&model).unwrap();
        let x = src.features.select_rows(&[0, 1, 2, 3]);
        let y: Vec<Label> = (0..4).map(|r| src.labels.get(r, 0)).collect();
        let xt = tgt.features.select_rows(&[5, 6, 7]);
        let loss = transfer_loss(&tnet, &task, &x, &y, &xt).unwrap();
        assert_eq!(loss.total, loss.mmd_components.iter().sum::<f64>());
    }

    #[test]
    fn zero_epochs_returns_the_source_head() {
        let (model, src, tgt, config) = tiny_setup(3);
        let config = TrainConfig { epochs: 0, ..config };
        let task = TransferTask::build(&model, &src, "a1", tgt, "a2", &config).unwrap();
        let run = train_tnet(&model, &task, &config).unwrap();
        assert_eq!(run.model.parameters(), model.restrict_to(1).unwrap().parameters());
        assert!(run.epochs.is_empty());
    }

    #[test]
    fn frozen_prefix_is_untouched_and_runs_repeat() {
        let (model, src, tgt, config) = tiny_setup(4);
        let config = TrainConfig {
            freeze_depth: Some(1),
            ..config
        };
        let task = TransferTask::build(&model, &src, "a0", tgt, "a1", &config).unwrap();
        let a = train_tnet(&model, &task, &config).unwrap();
        let b = train_tnet(&model, &task, &config).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.trunk.layers()[0].weights(), model.trunk.layers()[0].weights());
        assert_ne!(a.model.trunk.layers()[1].weights(), model.trunk.layers()[1].weights());
        assert!(a.epochs[0].target_accuracy.is_some());
    }

    #[test]
    fn bad_layers_are_rejected() {
        let (model, src, tgt, config) = tiny_setup(5);
        let config = TrainConfig {
            mmd_layers: Some(vec![0, 9]),
            ..config
        };
        assert!(TransferTask::build(&model, &src, "a0", tgt, "a1", &config)
            .unwrap_err()
            .is_argument());
    }

    #[test]
    fn alpha_follows_grouping() {
        let g = AttributeGrouping::from_assignment(&[0, 0, 1]).unwrap();
        assert_eq!(alpha_policy(&g, 0, 1).unwrap(), 1.0);
        assert_eq!(alpha_policy(&g, 1, 2).unwrap(), 0.1);
        assert_eq!(alpha_policy(&g, 2, 2).unwrap(), 1.0);
        assert!(alpha_policy(&g, 0, 3).is_err());
    }
}
