use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use grouplift::config::TrainConfig;
use grouplift::data::{
    generate, load_csv, save_labeled_csv, save_unlabeled_csv, split, LabeledDomain, UnlabeledDomain,
};
use grouplift::gradcheck::run_suite;
use grouplift::grouping::{
    assign_group_weights, cluster_attributes, estimate_correlation, GroupingFile, LossWeights,
};
use grouplift::mmd::{median_heuristic_bandwidths, mkmmd_sq, KernelFamily};
use grouplift::multilabel::{accuracy, evaluate, metrics_csv, train_mnet, MnetRun, MultiLabelModel};
use grouplift::nn::{Checkpoint, Matrix};
use grouplift::transfer::{
    alpha_policy, direct_transfer, layer_activations, train_tnet, transfer_metrics_csv, TnetRun, TransferTask,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cli::{
    AlphaPolicy, Cli, Command, EvalArgs, GenDataArgs, GradcheckArgs, GroupArgs, MmdArgs, SeedRange, TrainFlags,
    TrainMnetArgs, TransferArgs, WeightScheme,
};
use crate::settings::{apply_data_flags, apply_train_flags, apply_transfer_flags, spec_toml, with_seed, RunConfig};
use crate::{NumericalFailure, UsageError};

pub fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(config, &a),
        Command::Group(a) => group(&a),
        Command::TrainMnet(a) => train_mnet_cmd(config, &a),
        Command::Transfer(a) => transfer(config, &a),
        Command::Mmd(a) => mmd(config, &a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

fn load_labeled(path: &Path) -> Result<LabeledDomain> {
    load_csv(path)
        .and_then(|d| d.into_labeled())
        .with_context(|| format!("reading {}", path.display()))
}

fn load_unlabeled(path: &Path) -> Result<UnlabeledDomain> {
    Ok(load_csv(path)
        .with_context(|| format!("reading {}", path.display()))?
        .into_unlabeled())
}

fn load_model(path: &Path) -> Result<MultiLabelModel> {
    Checkpoint::load(path)
        .and_then(|c| MultiLabelModel::from_checkpoint(&c))
        .with_context(|| format!("reading checkpoint {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit_report(text: &str, path: Option<&Path>) -> Result<()> {
    print!("{text}");
    if let Some(p) = path {
        write_text(p, text)?;
    }
    Ok(())
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn part_names(count: usize) -> Vec<String> {
    match count {
        1 => vec!["all".into()],
        2 => vec!["train".into(), "test".into()],
        3 => vec!["train".into(), "validation".into(), "test".into()],
        n => (0..n).map(|k| format!("part{k}")).collect(),
    }
}

fn gen_data(config: RunConfig, a: &GenDataArgs) -> Result<()> {
    let mut spec = config.data;
    apply_data_flags(&mut spec, a);
    spec.validate()?;
    let (source, target) = generate(&spec)?;
    let parts = match &a.split {
        Some(fractions) => Some(split(&source, fractions, spec.seed).context("invalid --split")?),
        None => None,
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut written = vec![];
    let src_path = a.out_dir.join("source.csv");
    save_labeled_csv(&src_path, &source)?;
    written.push((src_path, source.len()));
    let tgt_path = a.out_dir.join("target.csv");
    save_unlabeled_csv(&tgt_path, &target)?;
    written.push((tgt_path, target.len()));
    if let Some(parts) = parts {
        for (part, name) in parts.iter().zip(part_names(parts.len())) {
            let p = a.out_dir.join(format!("source.{name}.csv"));
            save_labeled_csv(&p, part)?;
            written.push((p, part.len()));
        }
    }
    let spec_path = a.out_dir.join("spec.toml");
    write_text(&spec_path, &spec_toml(&spec)?)?;
    for (p, rows) in written {
        println!("wrote {} ({rows} rows)", p.display());
    }
    println!("wrote {}", spec_path.display());
    println!(
        "features={} attributes={} planted_groups={:?}",
        spec.feature_dim,
        spec.attribute_count(),
        spec.group_sizes
    );
    Ok(())
}

fn group(a: &GroupArgs) -> Result<()> {
    let data = load_labeled(&a.data)?;
    let corr = estimate_correlation(&data.labels, &data.names)?;
    let grouping = cluster_attributes(&corr, a.groups)?;
    let weights = match a.weights {
        WeightScheme::Grouped => assign_group_weights(&grouping),
        WeightScheme::Equal => LossWeights::equal(data.names.len()),
        WeightScheme::Emphasized => {
            let g = a.group.ok_or_else(|| UsageError("--weights emphasized needs --group".into()))?;
            LossWeights::emphasized(&grouping, g, a.high, a.low)?
        }
    };
    let mut report = String::new();
    for (g, members) in grouping.groups().iter().enumerate() {
        let names: Vec<&str> = members.iter().map(|&i| data.names[i].as_str()).collect();
        let _ = writeln!(report, "group {g}: {}", names.join(","));
    }
    for (name, w) in data.names.iter().zip(weights.as_slice()) {
        let _ = writeln!(report, "weight {name}={}", f6(*w));
    }
    let file = GroupingFile {
        names: data.names.clone(),
        grouping,
        weights: Some(weights),
    };
    file.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{report}");
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Seeds to run: the sweep range or the configured seed alone.
fn seeds(cfg: &TrainConfig, flags: &TrainFlags) -> Vec<u64> {
    match flags.sweep {
        Some(SeedRange { first, last }) => (first..=last).collect(),
        None => vec![cfg.seed],
    }
}

/// Runs `job` once per seed on its own thread and returns results in seed order.
fn per_seed<T, F>(seeds: &[u64], job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if seeds.len() == 1 {
        return Ok(vec![job(seeds[0])?]);
    }
    let job = &job;
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || job(seed))).collect();
        handles
            .into_iter()
            .zip(seeds)
            .map(|(h, seed)| {
                h.join()
                    .map_err(|_| anyhow::anyhow!("seed {seed} worker panicked"))?
                    .with_context(|| format!("seed {seed}"))
            })
            .collect()
    })
}

fn output_path(path: &Path, seed: u64, sweep: bool) -> PathBuf {
    if sweep {
        with_seed(path, seed)
    } else {
        path.to_path_buf()
    }
}

fn train_mnet_cmd(config: RunConfig, a: &TrainMnetArgs) -> Result<()> {
    let mut cfg = config.train;
    apply_train_flags(&mut cfg, &a.train);
    cfg.validate()?;
    let data = load_labeled(&a.data)?;
    let test = a.test.as_deref().map(load_labeled).transpose()?;
    let weights = match &a.groups {
        Some(p) => {
            let gf = GroupingFile::load(p, Some(&data.names)).with_context(|| format!("reading {}", p.display()))?;
            gf.weights.unwrap_or_else(|| assign_group_weights(&gf.grouping))
        }
        None => LossWeights::equal(data.names.len()),
    };
    let seeds = seeds(&cfg, &a.train);
    let sweep = a.train.sweep.is_some();
    let runs = per_seed(&seeds, |seed| {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let model = MultiLabelModel::initialize(data.features.cols(), &data.names, weights.as_slice().to_vec(), &cfg)?;
        let run = train_mnet(model, &data, &cfg)?;
        let test_acc = test.as_ref().map(|t| evaluate(&run.model, t)).transpose()?;
        Ok((cfg, run, test_acc))
    })?;

    let mut report = String::new();
    for (cfg, run, test_acc) in &runs {
        let MnetRun { model, epochs } = run;
        let out = output_path(&a.out, cfg.seed, sweep);
        model
            .to_checkpoint(cfg.seed, cfg.hash())
            .save(&out)
            .with_context(|| format!("writing {}", out.display()))?;
        if let Some(m) = &a.metrics {
            write_text(&output_path(m, cfg.seed, sweep), &metrics_csv(epochs, &data.names))?;
        }
        let train_acc = evaluate(model, &data)?;
        let _ = writeln!(report, "seed={}", cfg.seed);
        let _ = writeln!(report, "checkpoint={}", out.display());
        let _ = writeln!(report, "epochs={}", epochs.len());
        if let Some(last) = epochs.last() {
            let _ = writeln!(report, "final_loss={}", f6(last.total_loss));
        }
        let _ = writeln!(report, "attribute,weight,train_acc,test_acc");
        for (i, name) in data.names.iter().enumerate() {
            let t = test_acc.as_ref().map_or(String::new(), |v| f6(v[i]));
            let _ = writeln!(
                report,
                "{name},{},{},{t}",
                f6(model.loss_weights()[i]),
                f6(train_acc[i])
            );
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let t = test_acc.as_ref().map_or(String::new(), |v| f6(mean(v)));
        let _ = writeln!(report, "mean,,{},{t}", f6(mean(&train_acc)));
    }
    emit_report(&report, a.report.as_deref())
}

/// Source loss weight and how it was chosen.
fn resolve_alpha(cfg: &TrainConfig, a: &TransferArgs) -> Result<(f64, &'static str)> {
    match a.alpha_policy {
        Some(AlphaPolicy::Grouped) => {
            let path = a
                .groups
                .as_deref()
                .ok_or_else(|| UsageError("--alpha-policy grouped needs --groups".into()))?;
            let gf = GroupingFile::load(path, None).with_context(|| format!("reading {}", path.display()))?;
            let index = |name: &str| {
                gf.names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| UsageError(format!("attribute `{name}` is not in {}", path.display())))
            };
            let (s, t) = (index(&a.source_attr)?, index(&a.target_attr)?);
            let alpha = alpha_policy(&gf.grouping, s, t)?;
            let rule = if gf.grouping.same_group(s, t)? {
                "same-group"
            } else {
                "cross-group"
            };
            Ok((alpha, rule))
        }
        None if a.alpha.is_some() => Ok((cfg.alpha, "flag")),
        None => Ok((cfg.alpha, "config")),
    }
}

fn transfer(config: RunConfig, a: &TransferArgs) -> Result<()> {
    let mut cfg = config.train;
    apply_transfer_flags(&mut cfg, a);
    let (alpha, rule) = resolve_alpha(&cfg, a)?;
    cfg.alpha = alpha;
    cfg.validate()?;
    let mnet = load_model(&a.model)?;
    let source = load_labeled(&a.source)?;
    let target = load_unlabeled(&a.target)?;
    let direct = if target.eval_column(&a.target_attr).is_some() {
        Some(direct_transfer(&mnet, &a.source_attr, &target, &a.target_attr)?)
    } else {
        None
    };
    let task = TransferTask::build(&mnet, &source, &a.source_attr, target, &a.target_attr, &cfg)?;
    let seeds = seeds(&cfg, &a.train);
    let sweep = a.train.sweep.is_some();
    let runs = per_seed(&seeds, |seed| {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        Ok((seed, train_tnet(&mnet, &task, &cfg)?))
    })?;

    let layers: Vec<String> = task.mmd_layers.iter().map(|l| l.to_string()).collect();
    let mut report = String::new();
    for (seed, run) in &runs {
        let TnetRun { model, epochs } = run;
        if let Some(out) = &a.out {
            let out = output_path(out, *seed, sweep);
            let hash = TrainConfig { seed: *seed, ..cfg.clone() }.hash();
            model
                .to_checkpoint(*seed, hash)
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        if let Some(m) = &a.metrics {
            write_text(&output_path(m, *seed, sweep), &transfer_metrics_csv(epochs, &task.mmd_layers))?;
        }
        if let Some(dir) = &a.dump_embeddings {
            let dir = output_path(dir, *seed, sweep);
            dump_embeddings(&dir, &task, &task.initial_model(&mnet)?, model)?;
        }
        let _ = writeln!(report, "seed={seed}");
        let _ = writeln!(report, "source_attr={}", a.source_attr);
        let _ = writeln!(report, "target_attr={}", a.target_attr);
        let _ = writeln!(report, "alpha={alpha}");
        let _ = writeln!(report, "alpha_rule={rule}");
        let _ = writeln!(report, "freeze_depth={}", task.freeze_depth);
        let _ = writeln!(report, "mmd_layers={}", layers.join(","));
        let _ = writeln!(report, "epochs={}", epochs.len());
        if let (Some(first), Some(last)) = (epochs.first(), epochs.last()) {
            let _ = writeln!(report, "mmd_sum_first_epoch={}", f6(first.mmd_sum()));
            let _ = writeln!(report, "mmd_sum_last_epoch={}", f6(last.mmd_sum()));
            let _ = writeln!(report, "source_loss_last_epoch={}", f6(last.source_softmax));
        }
        let adapted = grouplift::transfer::target_accuracy(model, &task.target, &a.target_attr)?;
        match (&direct, adapted) {
            (Some(d), Some(t)) => {
                let _ = writeln!(report, "direct_accuracy={}", f6(d.accuracy));
                let _ = writeln!(report, "tnet_accuracy={}", f6(t));
                let _ = writeln!(report, "gain={}", f6(t - d.accuracy));
            }
            _ => {
                let _ = writeln!(report, "direct_accuracy=n/a");
                let _ = writeln!(report, "tnet_accuracy=n/a");
            }
        }
    }
    emit_report(&report, a.report.as_deref())
}

fn dump_embeddings(dir: &Path, task: &TransferTask, initial: &MultiLabelModel, adapted: &MultiLabelModel) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (stage, model) in [("initial", initial), ("adapted", adapted)] {
        for (domain, features) in [("source", &task.source.features), ("target", &task.target.features)] {
            let acts = layer_activations(model, features, &task.mmd_layers)?;
            for (layer, act) in task.mmd_layers.iter().zip(acts) {
                let path = dir.join(format!("{stage}_layer{layer}_{domain}.csv"));
                save_unlabeled_csv(&path, &UnlabeledDomain::new(act))?;
            }
        }
    }
    Ok(())
}

fn mmd(config: RunConfig, a: &MmdArgs) -> Result<()> {
    let mut cfg = config.train;
    if let Some(v) = &a.kernel_scales {
        cfg.kernel_scales = v.clone();
    }
    if let Some(v) = a.estimator {
        cfg.estimator = v.into();
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let s = load_csv(&a.source)
        .with_context(|| format!("reading {}", a.source.display()))?
        .features()
        .clone();
    let t = load_csv(&a.target)
        .with_context(|| format!("reading {}", a.target.display()))?
        .features()
        .clone();
    let pooled = s.vstack(&t)?;
    let kernels = median_heuristic_bandwidths(&pooled, &cfg.kernel_scales)?;
    let value = mkmmd_sq(&s, &t, &kernels, cfg.estimator)?;
    let mut report = String::new();
    let _ = writeln!(report, "estimator={}", cfg.estimator.name());
    let _ = writeln!(report, "source_rows={} target_rows={}", s.rows(), t.rows());
    let bw: Vec<String> = kernels.bandwidths().iter().map(|b| f6(*b)).collect();
    let _ = writeln!(report, "bandwidths={}", bw.join(","));
    for (u, v) in value.per_kernel.iter().enumerate() {
        let _ = writeln!(report, "kernel{u}={v:.10e}");
    }
    let _ = writeln!(report, "mmd2={:.10e}", value.value);
    if a.permutations > 0 {
        let p = permutation_p_value(&pooled, s.rows(), &kernels, &cfg, value.value, a.permutations)?;
        let _ = writeln!(report, "permutations={}", a.permutations);
        let _ = writeln!(report, "p_value={}", f6(p));
    }
    emit_report(&report, None)
}

/// Share of label permutations whose statistic reaches `observed`, with the
/// usual +1 correction.
fn permutation_p_value(
    pooled: &Matrix,
    m: usize,
    kernels: &KernelFamily,
    cfg: &TrainConfig,
    observed: f64,
    permutations: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pooled.rows()).collect();
    let mut hits = 0usize;
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let s = pooled.select_rows(&order[..m]);
        let t = pooled.select_rows(&order[m..]);
        if mkmmd_sq(&s, &t, kernels, cfg.estimator)?.value >= observed {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (permutations + 1) as f64)
}

fn eval(a: &EvalArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.models.len() {
        return Err(UsageError(format!("{} --label values for {} --model values", a.labels.len(), a.models.len())).into());
    }
    let data = load_labeled(&a.data)?;
    let labels: Vec<String> = if a.labels.is_empty() {
        a.models
            .iter()
            .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
            .collect()
    } else {
        a.labels.clone()
    };
    // table[attribute][model]
    let mut table = vec![vec![None; a.models.len()]; data.names.len()];
    for (m, path) in a.models.iter().enumerate() {
        let model = load_model(path)?;
        let preds = model.predict(&data.features)?;
        for (h, head) in model.heads.iter().enumerate() {
            if let Some(c) = data.attribute_index(&head.name) {
                table[c][m] = Some(accuracy(&preds.decisions.column(h), &data.labels.column(c)));
            }
        }
    }
    let paired = a.models.len() == 2;
    let mut csv = String::from("attribute");
    for l in &labels {
        let _ = write!(csv, ",{l}");
    }
    if paired {
        let _ = write!(csv, ",delta");
    }
    csv.push('\n');
    let cell = |v: Option<f64>| v.map_or(String::new(), f6);
    let mut sums = vec![0.0; a.models.len()];
    let mut complete = 0usize;
    for (name, row) in data.names.iter().zip(&table) {
        let _ = write!(csv, "{name}");
        for v in row {
            let _ = write!(csv, ",{}", cell(*v));
        }
        if paired {
            let d = row[0].zip(row[1]).map(|(x, y)| y - x);
            let _ = write!(csv, ",{}", cell(d));
        }
        csv.push('\n');
        if row.iter().all(Option::is_some) {
            complete += 1;
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v.unwrap_or(0.0);
            }
        }
    }
    if complete > 0 {
        let means: Vec<f64> = sums.iter().map(|s| s / complete as f64).collect();
        let _ = write!(csv, "mean");
        for m in &means {
            let _ = write!(csv, ",{}", f6(*m));
        }
        if paired {
            let _ = write!(csv, ",{}", f6(means[1] - means[0]));
        }
        csv.push('\n');
    }
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    if a.instances == 0 || a.epsilon.is_nan() || a.epsilon <= 0.0 || a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(UsageError("instances, epsilon and tolerance must be positive".into()).into());
    }
    let checks = run_suite(a.instances, a.seed, a.epsilon, a.tolerance)?;
    println!("component,instances,max_rel_error,skipped,status");
    let mut failed = vec![];
    for c in &checks {
        println!(
            "{},{},{:.3e},{},{}",
            c.component,
            c.instances,
            c.max_relative_error,
            c.skipped,
            if c.passed { "pass" } else { "FAIL" }
        );
        if !c.passed {
            failed.push(c.component);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(NumericalFailure(format!("gradient check failed: {}", failed.join(", "))).into())
    }
}
