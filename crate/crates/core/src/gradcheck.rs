//! Central finite-difference checks of the hand-written gradients.
//!
//! Coordinates whose ±ε perturbation flips the sign of any ReLU input are
//! skipped: the loss has a kink there and no derivative to compare against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::TrainConfig;
use crate::data::LabeledDomain;
use crate::error::Result;
use crate::mmd::{median_heuristic_bandwidths, mkmmd_grad, mkmmd_sq, Estimator, KernelFamily};
use crate::multilabel::{attribute_loss, attribute_loss_grad, Label, LabelMatrix, ModelPass, MultiLabelModel};
use crate::nn::Matrix;
use crate::transfer::{default_mmd_layers, transfer_loss, transfer_loss_and_gradients, TransferTask};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Outcome of one gradient component over several random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub component: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
    /// Coordinates skipped at activation kinks, over all instances.
    pub skipped: usize,
    pub passed: bool,
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares `analytic` with central differences of `eval` at `x`.
///
/// `eval` returns the loss and an activation pattern; coordinates whose
/// perturbations change the pattern are left out. Returns the relative error
/// over the remaining coordinates and the number skipped.
pub fn compare<F>(mut eval: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<(f64, usize)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<bool>)>,
{
    let (_, base) = eval(x)?;
    let mut probe = x.to_vec();
    let mut kept_a = Vec::with_capacity(x.len());
    let mut kept_n = Vec::with_capacity(x.len());
    let mut skipped = 0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (fp, mp) = eval(&probe)?;
        probe[i] = x[i] - eps;
        let (fm, mm) = eval(&probe)?;
        probe[i] = x[i];
        if mp != base || mm != base {
            skipped += 1;
            continue;
        }
        kept_a.push(analytic[i]);
        kept_n.push((fp - fm) / (2.0 * eps));
    }
    Ok((relative_error(&kept_a, &kept_n), skipped))
}

/// Sign pattern of every pre-activation in a model pass.
pub fn activation_pattern(passes: &[&ModelPass]) -> Vec<bool> {
    let mut v = Vec::new();
    for pass in passes {
        for p in std::iter::once(&pass.trunk).chain(&pass.heads) {
            for z in p.pre_activations() {
                v.extend(z.data().iter().map(|&x| x > 0.0));
            }
        }
    }
    v
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("sized")
}

fn random_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    (0..n).map(|_| Label::from_positive(rng.random_bool(0.5))).collect()
}

/// Small model with random weights and biases.
fn tiny_model(attributes: usize, rng: &mut ChaCha8Rng) -> Result<MultiLabelModel> {
    let config = TrainConfig {
        seed: rng.random(),
        trunk_units: vec![6, 5],
        head_units: vec![4, 3],
        ..TrainConfig::default()
    };
    let names: Vec<String> = (0..attributes).map(|i| format!("a{i}")).collect();
    let weights = (0..attributes).map(|_| rng.random_range(0.1..1.0)).collect();
    let mut model = MultiLabelModel::initialize(4, &names, weights, &config)?;
    let params: Vec<f64> = (0..model.parameter_count())
        .map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    model.set_parameters(&params)?;
    Ok(model)
}

fn summarize(component: &'static str, results: &[(f64, usize)], tolerance: f64) -> GradCheck {
    let max = results.iter().map(|r| r.0).fold(0.0, f64::max);
    GradCheck {
        component,
        instances: results.len(),
        max_relative_error: max,
        skipped: results.iter().map(|r| r.1).sum(),
        passed: max < tolerance,
    }
}

/// Softmax loss with respect to the logits.
pub fn check_softmax_loss(instances: usize, seed: u64, eps: f64) -> Result<Vec<(f64, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let n = rng.random_range(1..=6);
            let logits = normal_matrix(n, 2, &mut rng);
            let labels = random_labels(n, &mut rng);
            let (_, grad) = attribute_loss_grad(&logits, &labels)?;
            compare(
                |x| {
                    let m = Matrix::from_vec(n, 2, x.to_vec())?;
                    Ok((attribute_loss(&m, &labels)?, Vec::new()))
                },
                logits.data(),
                grad.data(),
                eps,
            )
        })
        .collect()
}

/// Weighted multi-label loss with respect to every parameter.
pub fn check_weighted_loss(instances: usize, seed: u64, eps: f64) -> Result<Vec<(f64, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let attrs = rng.random_range(1..=3);
            let n = rng.random_range(2..=6);
            let model = tiny_model(attrs, &mut rng)?;
            let x = normal_matrix(n, 4, &mut rng);
            let cols: Vec<Vec<Label>> = (0..attrs).map(|_| random_labels(n, &mut rng)).collect();
            let y = LabelMatrix::from_columns(&cols)?;
            let (_, grads) = model.loss_and_gradients(&x, &y)?;
            let mut probe = model.clone();
            compare(
                |p| {
                    probe.set_parameters(p)?;
                    let pass = probe.forward(&x)?;
                    Ok((probe.loss(&x, &y)?.total, activation_pattern(&[&pass])))
                },
                &model.parameters(),
                &grads.to_vec(),
                eps,
            )
        })
        .collect()
}

/// MK-MMD estimate with respect to every source and target row, alternating
/// between the biased and unbiased estimators.
pub fn check_mkmmd(instances: usize, seed: u64, eps: f64) -> Result<Vec<(f64, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|k| {
            let estimator = if k % 2 == 0 {
                Estimator::Biased
            } else {
                Estimator::Unbiased
            };
            let (m, n, d) = (rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(1..=4));
            let s = normal_matrix(m, d, &mut rng);
            let mut t = normal_matrix(n, d, &mut rng);
            t.data_mut().iter_mut().for_each(|v| *v += 0.5);
            let kernels = KernelFamily::new(vec![0.5, 1.0, 2.0], vec![0.2, 0.5, 0.3])?;
            let g = mkmmd_grad(&s, &t, &kernels, estimator)?;
            let x: Vec<f64> = s.data().iter().chain(t.data()).copied().collect();
            let analytic: Vec<f64> = g.source.data().iter().chain(g.target.data()).copied().collect();
            compare(
                |v| {
                    let s = Matrix::from_vec(m, d, v[..m * d].to_vec())?;
                    let t = Matrix::from_vec(n, d, v[m * d..].to_vec())?;
                    Ok((mkmmd_sq(&s, &t, &kernels, estimator)?.value, Vec::new()))
                },
                &x,
                &analytic,
                eps,
            )
        })
        .collect()
}

/// Full transfer objective with respect to every parameter of the
/// single-head network.
pub fn check_transfer_loss(instances: usize, seed: u64, eps: f64) -> Result<Vec<(f64, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let model = tiny_model(1, &mut rng)?;
            let (ns, nt) = (rng.random_range(2..=6), rng.random_range(2..=6));
            let xs = normal_matrix(ns, 4, &mut rng);
            let mut xt = normal_matrix(nt, 4, &mut rng);
            xt.data_mut().iter_mut().for_each(|v| *v += 0.7);
            let ys = random_labels(ns, &mut rng);
            let layers = default_mmd_layers(&model);
            let pooled = xs.vstack(&xt)?;
            let pass = model.forward(&pooled)?;
            let trunk_len = model.trunk.len();
            let kernels = layers
                .iter()
                .map(|&l| {
                    let a = if l < trunk_len {
                        &pass.trunk.outputs()[l]
                    } else {
                        &pass.heads[0].outputs()[l - trunk_len]
                    };
                    median_heuristic_bandwidths(a, &[0.5, 1.0, 2.0])
                        .or_else(|_| KernelFamily::uniform(vec![0.5, 1.0, 2.0]))
                })
                .collect::<Result<Vec<_>>>()?;
            let labels = LabelMatrix::from_columns(std::slice::from_ref(&ys))?;
            let task = TransferTask {
                source: LabeledDomain::new(xs.clone(), labels, vec!["a0".into()])?,
                source_head: 0,
                target: crate::data::UnlabeledDomain::new(xt.clone()),
                target_attribute: "a0".into(),
                multipliers: layers.iter().map(|_| rng.random_range(0.5..1.5)).collect(),
                mmd_layers: layers,
                alpha: rng.random_range(0.0..1.0),
                kernels,
                estimator: Estimator::Biased,
                freeze_depth: 0,
            };
            let (_, grads) = transfer_loss_and_gradients(&model, &task, &xs, &ys, &xt)?;
            let mut probe = model.clone();
            compare(
                |p| {
                    probe.set_parameters(p)?;
                    let a = probe.forward(&xs)?;
                    let b = probe.forward(&xt)?;
                    let loss = transfer_loss(&probe, &task, &xs, &ys, &xt)?;
                    Ok((loss.total, activation_pattern(&[&a, &b])))
                },
                &model.parameters(),
                &grads.to_vec(),
                eps,
            )
        })
        .collect()
}

/// Every component, `instances` random instances each.
pub fn run_suite(instances: usize, seed: u64, eps: f64, tolerance: f64) -> Result<Vec<GradCheck>> {
    Ok(vec![
        summarize("softmax-loss", &check_softmax_loss(instances, seed, eps)?, tolerance),
        summarize("weighted-loss", &check_weighted_loss(instances, seed, eps)?, tolerance),
        summarize("mkmmd", &check_mkmmd(instances, seed, eps)?, tolerance),
        summarize("transfer-loss", &check_transfer_loss(instances, seed, eps)?, tolerance),
    ])
}
