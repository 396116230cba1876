//! Shared trunk with one binary softmax head per attribute.
//!
//! Each attribute `i` contributes the mean negative log-likelihood
//! `L_i = -(1/N) Σ_n log p_{n, y_i}` of its two-way softmax, and the model
//! loss is the weighted sum `L = Σ_i λ_i L_i`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::LabeledDomain;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, DenseNetwork, ForwardPass, LayerSpec, Matrix, NetworkGradients};

/// Number of classes per attribute head.
pub const CLASSES: usize = 2;

/// Binary attribute label. Class index 0 is positive, 1 is negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    #[inline]
    pub fn class_index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }

    #[inline]
    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Positive),
            1 => Some(Label::Negative),
            _ => None,
        }
    }

    /// `+1` for positive, `-1` for negative.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    #[inline]
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Samples × attributes matrix of binary labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Label>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Label>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} labels cannot fill a {rows}x{cols} label matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_columns(columns: &[Vec<Label>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::shape("label columns differ in length"));
        }
        let cols = columns.len();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Label {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Label] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Label> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> LabelMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        LabelMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_columns(&self, columns: &[usize]) -> LabelMatrix {
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for r in 0..self.rows {
            data.extend(columns.iter().map(|&c| self.get(r, c)));
        }
        LabelMatrix {
            rows: self.rows,
            cols: columns.len(),
            data,
        }
    }
}

/// Softmax with max subtraction.
pub fn softmax_prob(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty logit vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log softmax(logits)[class]`, stable for large logits.
fn log_prob(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits[class] - lse
}

fn check_head_batch(logits: &Matrix, labels: &[Label]) -> Result<()> {
    if logits.rows() == 0 {
        return Err(Error::arg("attribute loss over an empty batch"));
    }
    if logits.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.cols() != CLASSES {
        return Err(Error::shape(format!("head emits {} logits, expected {CLASSES}", logits.cols())));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    Ok(())
}

/// Mean softmax cross-entropy of one attribute head over a batch.
pub fn attribute_loss(logits: &Matrix, labels: &[Label]) -> Result<f64> {
    check_head_batch(logits, labels)?;
    let n = labels.len() as f64;
    let sum: f64 = logits
        .row_iter()
        .zip(labels)
        .map(|(row, y)| -log_prob(row, y.class_index()))
        .sum();
    Ok(sum / n)
}

/// Loss and its gradient with respect to the logits, `(p - onehot(y)) / N`.
pub fn attribute_loss_grad(logits: &Matrix, labels: &[Label]) -> Result<(f64, Matrix)> {
    let loss = attribute_loss(logits, labels)?;
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), CLASSES);
    for (r, y) in labels.iter().enumerate() {
        let p = softmax_prob(logits.row(r))?;
        let dst = grad.row_mut(r);
        for (c, (g, pc)) in dst.iter_mut().zip(&p).enumerate() {
            let target = if c == y.class_index() { 1.0 } else { 0.0 };
            *g = (pc - target) / n;
        }
    }
    Ok((loss, grad))
}

/// Classifier for a single attribute, ending in two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeHead {
    pub attribute: usize,
    pub name: String,
    net: DenseNetwork,
}

impl AttributeHead {
    pub fn new(attribute: usize, name: impl Into<String>, net: DenseNetwork) -> Result<Self> {
        if net.output_dim() != CLASSES {
            return Err(Error::shape(format!(
                "attribute head must emit {CLASSES} logits, got {}",
                net.output_dim()
            )));
        }
        Ok(Self {
            attribute,
            name: name.into(),
            net,
        })
    }

    pub fn net(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }
}

/// Forward activations of the trunk and every head.
#[derive(Debug, Clone)]
pub struct ModelPass {
    pub trunk: ForwardPass,
    pub heads: Vec<ForwardPass>,
}

impl ModelPass {
    pub fn logits(&self, head: usize) -> &Matrix {
        self.heads[head].output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub trunk: NetworkGradients,
    pub heads: Vec<NetworkGradients>,
}

impl ModelGradients {
    pub fn zeros_like(model: &MultiLabelModel) -> Self {
        Self {
            trunk: NetworkGradients::zeros_like(&model.trunk),
            heads: model
                .heads
                .iter()
                .map(|h| NetworkGradients::zeros_like(h.net()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGradients) -> Result<()> {
        self.trunk.add_assign(&other.trunk)?;
        if self.heads.len() != other.heads.len() {
            return Err(Error::shape("head counts differ"));
        }
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    /// Flattened like [`MultiLabelModel::parameters`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.trunk.to_vec();
        for h in &self.heads {
            v.extend(h.to_vec());
        }
        v
    }
}

/// Trunk plus per-attribute heads and their loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelModel {
    pub trunk: DenseNetwork,
    pub heads: Vec<AttributeHead>,
    loss_weights: Vec<f64>,
}

/// One row of a loss breakdown: attribute index, its weight and its loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeLoss {
    pub attribute: usize,
    pub weight: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_attribute: Vec<AttributeLoss>,
}

impl MultiLabelModel {
    pub fn new(trunk: DenseNetwork, heads: Vec<AttributeHead>, loss_weights: Vec<f64>) -> Result<Self> {
        if heads.len() != loss_weights.len() {
            return Err(Error::shape(format!(
                "{} heads but {} loss weights",
                heads.len(),
                loss_weights.len()
            )));
        }
        if loss_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg("loss weights must be finite and non-negative"));
        }
        for h in &heads {
            if h.net.input_dim() != trunk.output_dim() {
                return Err(Error::shape(format!(
                    "head `{}` expects {} inputs, trunk emits {}",
                    h.name,
                    h.net.input_dim(),
                    trunk.output_dim()
                )));
            }
        }
        Ok(Self {
            trunk,
            heads,
            loss_weights,
        })
    }

    /// Fresh Glorot-initialized model: ReLU trunk of `config.trunk_units`,
    /// heads of ReLU `config.head_units` followed by a 2-logit layer.
    pub fn initialize(
        input_dim: usize,
        attribute_names: &[String],
        loss_weights: Vec<f64>,
        config: &TrainConfig,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trunk_specs: Vec<LayerSpec> = config.trunk_units.iter().map(|&u| LayerSpec::relu(u)).collect();
        let trunk = DenseNetwork::glorot(input_dim, &trunk_specs, &mut rng)?;
        let mut head_specs: Vec<LayerSpec> = config.head_units.iter().map(|&u| LayerSpec::relu(u)).collect();
        head_specs.push(LayerSpec::identity(CLASSES));
        let heads = attribute_names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let net = DenseNetwork::glorot(trunk.output_dim(), &head_specs, &mut rng)?;
                AttributeHead::new(i, name.clone(), net)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(trunk, heads, loss_weights)
    }

    pub fn loss_weights(&self) -> &[f64] {
        &self.loss_weights
    }

    pub fn set_loss_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.heads.len() {
            return Err(Error::shape("loss weight count differs from head count"));
        }
        self.loss_weights = weights;
        Ok(())
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.heads.iter().map(|h| h.name.clone()).collect()
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ModelPass> {
        let trunk = self.trunk.forward(batch)?;
        let heads = self
            .heads
            .iter()
            .map(|h| h.net.forward(trunk.output()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelPass { trunk, heads })
    }

    fn check_labels(&self, labels: &LabelMatrix, rows: usize) -> Result<()> {
        if labels.cols() < self.heads.len() {
            return Err(Error::arg(format!(
                "label matrix has {} columns but the model has {} heads",
                labels.cols(),
                self.heads.len()
            )));
        }
        if labels.rows() != rows {
            return Err(Error::shape(format!("{} label rows for {rows} samples", labels.rows())));
        }
        Ok(())
    }

    /// Weighted multi-label loss with its per-attribute breakdown. Column `c`
    /// of `labels` is the label for head `c`.
    pub fn loss(&self, batch: &Matrix, labels: &LabelMatrix) -> Result<LossBreakdown> {
        self.check_labels(labels, batch.rows())?;
        let pass = self.forward(batch)?;
        self.loss_from_pass(&pass, labels)
    }

    fn loss_from_pass(&self, pass: &ModelPass, labels: &LabelMatrix) -> Result<LossBreakdown> {
        let mut total = 0.0;
        let mut per_attribute = Vec::with_capacity(self.heads.len());
        for (i, w) in self.loss_weights.iter().enumerate() {
            let loss = attribute_loss(pass.logits(i), &labels.column(i))?;
            total += w * loss;
            per_attribute.push(AttributeLoss {
                attribute: self.heads[i].attribute,
                weight: *w,
                loss,
            });
        }
        Ok(LossBreakdown { total, per_attribute })
    }

    /// Loss and gradients of every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &Matrix,
        labels: &LabelMatrix,
    ) -> Result<(LossBreakdown, ModelGradients)> {
        self.check_labels(labels, batch.rows())?;
        let pass = self.forward(batch)?;
        let breakdown = self.loss_from_pass(&pass, labels)?;
        let mut trunk_out_grad = Matrix::zeros(batch.rows(), self.trunk.output_dim());
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let (_, mut dlogits) = attribute_loss_grad(pass.logits(i), &labels.column(i))?;
            dlogits.scale(self.loss_weights[i]);
            let (g, dx) = head.net.backward(&pass.heads[i], &dlogits)?;
            trunk_out_grad.add_assign(&dx)?;
            head_grads.push(g);
        }
        let (trunk_grads, _) = self.trunk.backward(&pass.trunk, &trunk_out_grad)?;
        Ok((
            breakdown,
            ModelGradients {
                trunk: trunk_grads,
                heads: head_grads,
            },
        ))
    }

    pub fn sgd_step(&mut self, grads: &ModelGradients, learning_rate: f64) -> Result<()> {
        if grads.heads.len() != self.heads.len() {
            return Err(Error::shape("head gradient count differs from head count"));
        }
        // validate everything first so a failure leaves the model intact
        let mut probe = self.clone();
        probe.trunk.sgd_step(&grads.trunk, learning_rate)?;
        for (h, g) in probe.heads.iter_mut().zip(&grads.heads) {
            h.net.sgd_step(g, learning_rate)?;
        }
        *self = probe;
        Ok(())
    }

    /// All parameters, trunk first then each head.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.trunk.parameters();
        for h in &self.heads {
            v.extend(h.net.parameters());
        }
        v
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.parameter_count();
        if values.len() != expected {
            return Err(Error::shape(format!("{} values for {expected} parameters", values.len())));
        }
        let mut offset = self.trunk.parameter_count();
        self.trunk.set_parameters(&values[..offset])?;
        for h in &mut self.heads {
            let n = h.net.parameter_count();
            h.net.set_parameters(&values[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.trunk.parameter_count() + self.heads.iter().map(|h| h.net.parameter_count()).sum::<usize>()
    }

    /// Copy of the model keeping only the head for `attribute` (weight 1).
    pub fn restrict_to(&self, attribute: usize) -> Result<MultiLabelModel> {
        let head = self
            .heads
            .get(attribute)
            .ok_or_else(|| Error::arg(format!("no head for attribute index {attribute}")))?;
        MultiLabelModel::new(self.trunk.clone(), vec![head.clone()], vec![1.0])
    }

    /// Per-attribute decisions and class probabilities.
    pub fn predict(&self, batch: &Matrix) -> Result<Predictions> {
        let pass = self.forward(batch)?;
        let mut probabilities = Vec::with_capacity(self.heads.len());
        let mut columns = Vec::with_capacity(self.heads.len());
        for i in 0..self.heads.len() {
            let logits = pass.logits(i);
            let mut probs = Matrix::zeros(logits.rows(), CLASSES);
            let mut decisions = Vec::with_capacity(logits.rows());
            for r in 0..logits.rows() {
                let p = softmax_prob(logits.row(r))?;
                decisions.push(decide(&p));
                probs.row_mut(r).copy_from_slice(&p);
            }
            probabilities.push(probs);
            columns.push(decisions);
        }
        Ok(Predictions {
            decisions: LabelMatrix::from_columns(&columns)?,
            probabilities,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, config_hash: impl Into<String>) -> Checkpoint {
        let mut ckpt = Checkpoint::new(seed, config_hash);
        ckpt.metadata.push(("attributes".into(), self.heads.len().to_string()));
        for (h, w) in self.heads.iter().zip(&self.loss_weights) {
            ckpt.metadata.push((format!("attribute.{}", h.attribute), h.name.clone()));
            ckpt.metadata
                .push((format!("weight.{}", h.attribute), crate::nn::format_f64(*w)));
        }
        ckpt.networks.push(("trunk".into(), self.trunk.clone()));
        for h in &self.heads {
            ckpt.networks.push((format!("head.{}", h.attribute), h.net.clone()));
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let missing = |what: String| Error::parse(0, format!("checkpoint lacks {what}"));
        let count: usize = ckpt
            .meta("attributes")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| missing("`attributes` metadata".into()))?;
        let trunk = ckpt.network("trunk").ok_or_else(|| missing("network `trunk`".into()))?.clone();
        let mut order: Vec<usize> = ckpt
            .metadata
            .iter()
            .filter_map(|(k, _)| k.strip_prefix("attribute.").and_then(|i| i.parse().ok()))
            .collect();
        order.sort_unstable();
        if order.len() != count {
            return Err(missing(format!("{count} attribute entries")));
        }
        let mut heads = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for id in order {
            let name = ckpt.meta(&format!("attribute.{id}")).unwrap_or_default();
            let w: f64 = ckpt
                .meta(&format!("weight.{id}"))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| missing(format!("weight for attribute {id}")))?;
            let net = ckpt
                .network(&format!("head.{id}"))
                .ok_or_else(|| missing(format!("network `head.{id}`")))?
                .clone();
            heads.push(AttributeHead::new(id, name, net)?);
            weights.push(w);
        }
        Self::new(trunk, heads, weights)
    }
}

/// Argmax over the two classes; ties go to the positive class.
#[inline]
pub fn decide(probs: &[f64]) -> Label {
    if probs[Label::Positive.class_index()] >= probs[Label::Negative.class_index()] {
        Label::Positive
    } else {
        Label::Negative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// samples × heads
    pub decisions: LabelMatrix,
    /// One N×2 probability matrix per head.
    pub probabilities: Vec<Matrix>,
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[Label], truth: &[Label]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Per-head accuracy of `model` on `domain`.
pub fn evaluate(model: &MultiLabelModel, domain: &LabeledDomain) -> Result<Vec<f64>> {
    let preds = model.predict(&domain.features)?;
    if domain.labels.cols() < model.heads.len() {
        return Err(Error::arg("dataset lacks label columns for some heads"));
    }
    Ok((0..model.heads.len())
        .map(|i| accuracy(&preds.decisions.column(i), &domain.labels.column(i)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub total_loss: f64,
    /// Training-set accuracy per attribute after the epoch.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MnetRun {
    pub model: MultiLabelModel,
    pub epochs: Vec<EpochMetrics>,
}

/// Seeded minibatch SGD on the weighted multi-label loss.
///
/// Label column `i` of `dataset` trains head `i`. The shuffling stream is
/// derived from `config.seed` and independent of the initialization stream.
pub fn train_mnet(model: MultiLabelModel, dataset: &LabeledDomain, config: &TrainConfig) -> Result<MnetRun> {
    config.validate()?;
    let n = dataset.features.rows();
    if n == 0 {
        return Err(Error::arg("training set is empty"));
    }
    if dataset.labels.cols() < model.heads.len() {
        return Err(Error::arg("dataset lacks label columns for some heads"));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.features.select_rows(chunk);
            let y = dataset.labels.select_rows(chunk);
            let (breakdown, grads) = model
                .loss_and_gradients(&x, &y)
                .map_err(|e| divergence(epoch, e))?;
            if !breakdown.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: "loss is not finite".into(),
                });
            }
            model
                .sgd_step(&grads, config.learning_rate)
                .map_err(|e| divergence(epoch, e))?;
            loss_sum += breakdown.total;
            batches += 1;
        }
        let accuracy = evaluate(&model, dataset).map_err(|e| divergence(epoch, e))?;
        epochs.push(EpochMetrics {
            epoch,
            total_loss: loss_sum / batches as f64,
            accuracy,
        });
    }
    Ok(MnetRun { model, epochs })
}

pub(crate) fn divergence(epoch: usize, e: Error) -> Error {
    if e.is_numerical() {
        Error::Divergence {
            epoch,
            reason: e.to_string(),
        }
    } else {
        e
    }
}

/// `epoch,total_loss,acc:<name>...` CSV.
pub fn metrics_csv(metrics: &[EpochMetrics], names: &[String]) -> String {
    let mut s = String::from("epoch,total_loss");
    for n in names {
        let _ = write!(s, ",acc:{n}");
    }
    s.push('\n');
    for m in metrics {
        let _ = write!(s, "{},{}", m.epoch, crate::nn::format_f64(m.total_loss));
        for a in &m.accuracy {
            let _ = write!(s, ",{a:.6}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax_prob(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_prob(&[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        assert!(matches!(softmax_prob(&[f64::NAN, 0.0]), Err(Error::Numeric(_))));
        let p = softmax_prob(&[1000.0, -1000.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let l = logits(&[[0.3, 0.3], [-2.0, -2.0], [5.0, 5.0]]);
        let labels = [Label::Positive, Label::Negative, Label::Positive];
        let loss = attribute_loss(&l, &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logit_has_tiny_loss() {
        let l = logits(&[[20.0, 0.0]]);
        assert!(attribute_loss(&l, &[Label::Positive]).unwrap() < 1e-8);
    }

    #[test]
    fn empty_batch_is_an_argument_error() {
        let l = Matrix::zeros(0, 2);
        assert!(matches!(attribute_loss(&l, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn decisions_follow_closed_form_and_tie_rule() {
        let p = softmax_prob(&[2.0, 1.0]).unwrap();
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - s).abs() < 1e-12);
        assert_eq!(decide(&p), Label::Positive);
        assert_eq!(decide(&softmax_prob(&[0.0, 0.0]).unwrap()), Label::Positive);
        assert_eq!(decide(&softmax_prob(&[0.0, 1e-9]).unwrap()), Label::Negative);
    }

    #[test]
    fn label_matrix_shapes() {
        assert!(LabelMatrix::new(2, 2, vec![Label::Positive; 3]).is_err());
        let m = LabelMatrix::from_columns(&[
            vec![Label::Positive, Label::Negative],
            vec![Label::Negative, Label::Negative],
        ])
        .unwrap();
        assert_eq!(m.row(0), &[Label::Positive, Label::Negative]);
        assert_eq!(m.select_columns(&[1]).column(0), vec![Label::Negative; 2]);
    }

    #[test]
    fn head_must_emit_two_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNetwork::glorot(3, &[LayerSpec::identity(3)], &mut rng).unwrap();
        assert!(AttributeHead::new(0, "x", net).is_err());
    }
}
