mod common;

use common::*;
use grouplift::config::TrainConfig;
use grouplift::data::{generate, split, LabeledDomain, SyntheticSpec, UnlabeledDomain};
use grouplift::grouping::{cluster_attributes, estimate_correlation};
use grouplift::mmd::{median_heuristic_bandwidths, median_pairwise_distance, mkmmd_grad, mkmmd_sq, Estimator, KernelFamily};
use grouplift::multilabel::{
    attribute_loss, evaluate, train_mnet, Label, LabelMatrix, MultiLabelModel,
};
use grouplift::nn::{DenseNetwork, LayerSpec, Matrix};
use grouplift::transfer::{
    default_mmd_layers, direct_transfer, layer_activations, transfer_loss, transfer_loss_and_gradients, TransferTask,
};
use rand::seq::SliceRandom;
use rand::Rng;

const EPS: f64 = 1e-5;

fn random_model(attrs: usize, input: usize, rng: &mut rand_chacha::ChaCha8Rng) -> MultiLabelModel {
    let config = TrainConfig {
        seed: rng.random(),
        trunk_units: vec![rng.random_range(2..=8), rng.random_range(2..=8)],
        head_units: vec![rng.random_range(2..=6), rng.random_range(2..=6)],
        ..TrainConfig::default()
    };
    let names: Vec<String> = (0..attrs).map(|i| format!("x{i}")).collect();
    let weights = (0..attrs).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut model = MultiLabelModel::initialize(input, &names, weights, &config).unwrap();
    let p: Vec<f64> = (0..model.parameter_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    model.set_parameters(&p).unwrap();
    model
}

#[test]
fn forward_matches_scalar_loops() {
    let mut r = rng(1);
    for _ in 0..20 {
        let specs = [LayerSpec::relu(7), LayerSpec::relu(5), LayerSpec::identity(3)];
        let mut net = DenseNetwork::glorot(4, &specs, &mut r).unwrap();
        let p: Vec<f64> = (0..net.parameter_count()).map(|_| r.random_range(-1.0..1.0)).collect();
        net.set_parameters(&p).unwrap();
        let x = normal(6, 4, &mut r);
        let out = net.predict(&x).unwrap();
        for i in 0..6 {
            let expect = forward_loops(&net, x.row(i));
            for (a, b) in out.row(i).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_loss_gradient_matches_differences() {
    let mut r = rng(2);
    for _ in 0..20 {
        let n = r.random_range(1..=6);
        let logits = normal(n, 2, &mut r);
        let y = random_labels(n, &mut r);
        let (_, g) = grouplift::multilabel::attribute_loss_grad(&logits, &y).unwrap();
        let num = finite_differences(
            |v| (attribute_loss(&Matrix::from_vec(n, 2, v.to_vec()).unwrap(), &y).unwrap(), vec![]),
            logits.data(),
            EPS,
        );
        assert!(rel_err(g.data(), &num) < 1e-5);
    }
}

#[test]
fn weighted_loss_gradient_matches_differences() {
    let mut r = rng(3);
    for _ in 0..20 {
        let attrs = r.random_range(1..=4);
        let model = random_model(attrs, 3, &mut r);
        let n = r.random_range(2..=6);
        let x = normal(n, 3, &mut r);
        let cols: Vec<Vec<Label>> = (0..attrs).map(|_| random_labels(n, &mut r)).collect();
        let y = LabelMatrix::from_columns(&cols).unwrap();
        let (_, grads) = model.loss_and_gradients(&x, &y).unwrap();
        let mut probe = model.clone();
        let num = finite_differences(
            |p| {
                probe.set_parameters(p).unwrap();
                let pass = probe.forward(&x).unwrap();
                // loss assembled here from per-head losses and weights
                let mut total = 0.0;
                for (h, w) in probe.loss_weights().iter().enumerate() {
                    total += w * attribute_loss(pass.logits(h), &y.column(h)).unwrap();
                }
                (total, relu_pattern(&[&pass]))
            },
            &model.parameters(),
            EPS,
        );
        assert!(rel_err(&grads.to_vec(), &num) < 1e-5);
    }
}

#[test]
fn mmd_gradient_matches_differences() {
    let mut r = rng(4);
    for k in 0..20 {
        let est = if k % 2 == 0 { Estimator::Biased } else { Estimator::Unbiased };
        let (m, n, d) = (r.random_range(2..=6), r.random_range(2..=6), r.random_range(1..=5));
        let s = normal(m, d, &mut r);
        let t = normal(n, d, &mut r);
        let fam = KernelFamily::new(vec![0.7, 1.5, 3.0], vec![0.3, 0.3, 0.4]).unwrap();
        let g = mkmmd_grad(&s, &t, &fam, est).unwrap();
        let x: Vec<f64> = s.data().iter().chain(t.data()).copied().collect();
        let num = finite_differences(
            |v| {
                let s = Matrix::from_vec(m, d, v[..m * d].to_vec()).unwrap();
                let t = Matrix::from_vec(n, d, v[m * d..].to_vec()).unwrap();
                let val = mmd_double_loop(&s, &t, &[0.7, 1.5, 3.0], &[0.3, 0.3, 0.4], est == Estimator::Unbiased);
                (val, vec![])
            },
            &x,
            EPS,
        );
        let analytic: Vec<f64> = g.source.data().iter().chain(g.target.data()).copied().collect();
        assert!(rel_err(&analytic, &num) < 1e-5);
    }
}

fn tiny_task(model: &MultiLabelModel, xs: &Matrix, ys: &[Label], xt: &Matrix, r: &mut rand_chacha::ChaCha8Rng) -> TransferTask {
    let layers = default_mmd_layers(model);
    let pooled = xs.vstack(xt).unwrap();
    let kernels = layer_activations(model, &pooled, &layers)
        .unwrap()
        .iter()
        .map(|a| median_heuristic_bandwidths(a, &[0.5, 1.0, 2.0]).unwrap_or_else(|_| KernelFamily::uniform(vec![1.0]).unwrap()))
        .collect();
    TransferTask {
        source: LabeledDomain::new(
            xs.clone(),
            LabelMatrix::from_columns(&[ys.to_vec()]).unwrap(),
            vec!["x0".into()],
        )
        .unwrap(),
        source_head: 0,
        target: UnlabeledDomain::new(xt.clone()),
        target_attribute: "x0".into(),
        multipliers: vec![1.0; layers.len()],
        mmd_layers: layers,
        alpha: r.random_range(0.0..2.0),
        kernels,
        estimator: Estimator::Biased,
        freeze_depth: 0,
    }
}

#[test]
fn transfer_gradient_matches_differences() {
    let mut r = rng(5);
    for _ in 0..20 {
        let model = random_model(1, 4, &mut r);
        let (ns, nt) = (r.random_range(2..=6), r.random_range(2..=6));
        let xs = normal(ns, 4, &mut r);
        let xt = normal(nt, 4, &mut r);
        let ys = random_labels(ns, &mut r);
        let task = tiny_task(&model, &xs, &ys, &xt, &mut r);
        let (_, grads) = transfer_loss_and_gradients(&model, &task, &xs, &ys, &xt).unwrap();
        let mut probe = model.clone();
        let num = finite_differences(
            |p| {
                probe.set_parameters(p).unwrap();
                let a = probe.forward(&xs).unwrap();
                let b = probe.forward(&xt).unwrap();
                (transfer_loss(&probe, &task, &xs, &ys, &xt).unwrap().total, relu_pattern(&[&a, &b]))
            },
            &model.parameters(),
            EPS,
        );
        assert!(rel_err(&grads.to_vec(), &num) < 1e-5);
    }
}

#[test]
fn transfer_loss_is_the_sum_of_its_parts() {
    let mut r = rng(6);
    for _ in 0..10 {
        let model = random_model(1, 4, &mut r);
        let xs = normal(5, 4, &mut r);
        let xt = normal(4, 4, &mut r);
        let ys = random_labels(5, &mut r);
        let task = tiny_task(&model, &xs, &ys, &xt, &mut r);
        let loss = transfer_loss(&model, &task, &xs, &ys, &xt).unwrap();
        let acts_s = layer_activations(&model, &xs, &task.mmd_layers).unwrap();
        let acts_t = layer_activations(&model, &xt, &task.mmd_layers).unwrap();
        let mut expect = 0.0;
        for ((a, b), k) in acts_s.iter().zip(&acts_t).zip(&task.kernels) {
            expect += mkmmd_sq(a, b, k, Estimator::Biased).unwrap().value;
        }
        let ls = attribute_loss(model.forward(&xs).unwrap().logits(0), &ys).unwrap();
        expect += task.alpha * ls;
        assert!((loss.total - expect).abs() < 1e-12);
        let parts: f64 = loss.mmd_components.iter().sum::<f64>() + task.alpha * loss.source_softmax;
        assert!((loss.total - parts).abs() < 1e-12);
    }
}

#[test]
fn mmd_matches_double_loop() {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (m, n, d) = (r.random_range(2..=40), r.random_range(2..=40), r.random_range(1..=16));
        let kernels = r.random_range(1..=5);
        let s = normal(m, d, &mut r);
        let mut t = normal(n, d, &mut r);
        t.data_mut().iter_mut().for_each(|v| *v += 0.3);
        let sig: Vec<f64> = (0..kernels).map(|_| r.random_range(0.2..5.0)).collect();
        let raw: Vec<f64> = (0..kernels).map(|_| r.random_range(0.1..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let beta: Vec<f64> = raw.iter().map(|b| b / sum).collect();
        let fam = KernelFamily::new(sig.clone(), beta.clone()).unwrap();
        let unbiased = k % 2 == 1;
        let est = if unbiased { Estimator::Unbiased } else { Estimator::Biased };
        let v = mkmmd_sq(&s, &t, &fam, est).unwrap().value;
        worst = worst.max((v - mmd_double_loop(&s, &t, &sig, &beta, unbiased)).abs());
    }
    assert!(worst < 1e-10, "max abs diff {worst}");
}

#[test]
fn median_matches_sorting() {
    let mut r = rng(8);
    for _ in 0..20 {
        let n = r.random_range(2..=30);
        let x = normal(n, r.random_range(1..=4), &mut r);
        assert!((median_pairwise_distance(&x).unwrap() - median_by_sort(&x)).abs() < 1e-12);
    }
}

#[test]
fn correlation_matches_pearson() {
    let mut r = rng(9);
    for _ in 0..10 {
        let n = 50;
        let cols: Vec<Vec<Label>> = (0..4).map(|_| random_labels(n, &mut r)).collect();
        let labels = LabelMatrix::from_columns(&cols).unwrap();
        let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let c = estimate_correlation(&labels, &names).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((c.get(i, j) - pearson(&cols[i], &cols[j])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn generated_correlations_hit_targets() {
    for seed in 0..3 {
        let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
        let (src, _) = generate(&spec).unwrap();
        let group = spec.planted_assignment();
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                let rho = pearson(&src.labels.column(i), &src.labels.column(j));
                let want = if group[i] == group[j] { spec.rho_in } else { spec.rho_out };
                assert!((rho - want).abs() < 0.1, "seed {seed} pair ({i},{j}) rho {rho} want {want}");
            }
        }
    }
}

#[test]
fn planted_partition_is_recovered() {
    for seed in 0..5 {
        let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
        let (src, _) = generate(&spec).unwrap();
        let corr = estimate_correlation(&src.labels, &src.names).unwrap();
        let g = cluster_attributes(&corr, 3).unwrap();
        assert_eq!(g.assignment(), spec.planted_assignment().as_slice());
    }
}

/// Fraction of label-shuffled splits whose biased MK-MMD² reaches the observed value.
fn resampled_null(s: &Matrix, t: &Matrix, fam: &KernelFamily, draws: usize, seed: u64) -> Vec<f64> {
    let pooled = s.vstack(t).unwrap();
    let mut order: Vec<usize> = (0..pooled.rows()).collect();
    let mut r = rng(seed);
    (0..draws)
        .map(|_| {
            order.shuffle(&mut r);
            let a = pooled.select_rows(&order[..s.rows()]);
            let b = pooled.select_rows(&order[s.rows()..]);
            mkmmd_sq(&a, &b, fam, Estimator::Biased).unwrap().value
        })
        .collect()
}

#[test]
fn unshifted_target_sits_inside_the_null() {
    let spec = SyntheticSpec {
        samples: 500,
        target_samples: 500,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let (src, tgt) = generate(&spec).unwrap();
    let pooled = src.features.vstack(&tgt.features).unwrap();
    let fam = median_heuristic_bandwidths(&pooled, &[0.5, 1.0, 2.0]).unwrap();
    let observed = mkmmd_sq(&src.features, &tgt.features, &fam, Estimator::Biased).unwrap().value;
    let mut null = resampled_null(&src.features, &tgt.features, &fam, 100, 0);
    null.sort_by(f64::total_cmp);
    assert!(observed < null[94], "observed {observed} p95 {}", null[94]);
}

#[test]
fn unbiased_estimate_is_centred_under_the_null() {
    let mut r = rng(10);
    let fam = KernelFamily::uniform(vec![0.5, 1.0, 2.0]).unwrap();
    let vals: Vec<f64> = (0..300)
        .map(|_| {
            let s = normal(15, 3, &mut r);
            let t = normal(15, 3, &mut r);
            mkmmd_sq(&s, &t, &fam, Estimator::Unbiased).unwrap().value
        })
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean} se {}", sd / n.sqrt());
    assert!(vals.iter().any(|v| *v < 0.0));
}

#[test]
fn direct_transfer_baselines() {
    let spec = SyntheticSpec {
        samples: 2000,
        target_samples: 1000,
        seed: 4,
        ..SyntheticSpec::default()
    };
    let (src, tgt) = generate(&spec).unwrap();
    let parts = split(&src, &[0.8, 0.2], 4).unwrap();
    let cfg = TrainConfig {
        seed: 4,
        epochs: 15,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let model = MultiLabelModel::initialize(12, &src.names, vec![1.0 / 6.0; 6], &cfg).unwrap();
    let model = train_mnet(model, &parts[0], &cfg).unwrap().model;
    let test_acc = evaluate(&model, &parts[1]).unwrap()[0];

    // same distribution, same attribute
    let same = direct_transfer(&model, "a0", &tgt, "a0").unwrap();
    assert!((same.accuracy - test_acc).abs() <= 0.03, "{} vs {test_acc}", same.accuracy);

    // labels unrelated to the features
    let mut r = rng(11);
    let noise = LabelMatrix::from_columns(&[random_labels(1000, &mut r)]).unwrap();
    let random = UnlabeledDomain::with_eval_labels(tgt.features.clone(), noise, vec!["noise".into()]).unwrap();
    let chance = direct_transfer(&model, "a0", &random, "noise").unwrap();
    assert!((chance.accuracy - 0.5).abs() <= 0.05, "{}", chance.accuracy);
}
