//! The experiment runners. Each writes its artifacts below
//! `cfg.out_dir` and returns the result table it also saved there.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::table::{seed_label, ResultTable};
use crate::error::{Error, Result};
use crate::metrics::{auroc, oscr, oscr_curve_csv, EvaluationRecord};
use crate::nn::{
    evaluate, extract_representation, finetune_frozen, load_params_expecting, save_params,
    train_classifier, train_supcon, Layer, ModelParams, TrainConfig,
};
use crate::osr::{
    aggregate_with, read_embeddings, score_batch, write_embeddings, Aggregation, EmbeddingBatch,
    KnnClassifier, ScoreSet, Scorer,
};
use crate::supcon::{curves_to_csv, simulate_gradient_curves, GradientCurve, PairKind};
use crate::synthdata::{generate_outline_set, generate_protocol, LabeledDataset, Protocol, Role, Sample};

pub const PROTOCOLS: [Protocol; 2] = [Protocol::E1, Protocol::E2];
pub const FREEZE_POINTS: [Layer; 3] = [Layer::Conv1, Layer::Linear1, Layer::Linear2];

fn expect_kind(cfg: &ExperimentConfig, kinds: &[ExperimentKind]) -> Result<()> {
    cfg.validate()?;
    if !kinds.contains(&cfg.kind) {
        return Err(Error::InvalidArgument(format!(
            "config kind is {}, expected {}",
            cfg.kind.name(),
            kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(" or ")
        )));
    }
    Ok(())
}

fn seed_pairs(cfg: &ExperimentConfig) -> Vec<(u64, u64)> {
    cfg.data_seeds
        .iter()
        .copied()
        .zip(cfg.model_seeds.iter().copied())
        .collect()
}

/// Where [`run_e1e2`] stores the classifier for one run.
pub fn model_path(out_dir: &Path, protocol: Protocol, data_seed: u64, model_seed: u64) -> PathBuf {
    out_dir
        .join("models")
        .join(format!("{}-{}.params", protocol.name(), seed_label(data_seed, model_seed)))
}

fn classifier_config(cfg: &ExperimentConfig, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs,
        batch_size: cfg.batch_size,
        ..TrainConfig::classifier(seed)
    }
}

/// Test samples in a fixed order: inliers, then outliers.
fn test_samples(ds: &LabeledDataset) -> Vec<&Sample> {
    ds.split(Role::TestInlier).chain(ds.split(Role::TestOutlier)).collect()
}

/// AUROC with inliers (label ≥ 0) as positives.
pub fn auroc_by_label(scores: &ScoreSet, labels: &[i64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (mut inl, mut out) = (Vec::new(), Vec::new());
    for (&s, &l) in scores.scores.iter().zip(labels) {
        if l < 0 {
            out.push(s)
        } else {
            inl.push(s)
        }
    }
    auroc(&inl, &out)
}

struct E1e2Run {
    seed: String,
    cells: Vec<(Protocol, &'static str, f64)>,
}

fn e1e2_one(cfg: &ExperimentConfig, data_seed: u64, model_seed: u64) -> Result<E1e2Run> {
    let mut cells = Vec::new();
    for protocol in PROTOCOLS {
        let ds = generate_protocol(protocol, data_seed);
        let report = train_classifier(&ds, &classifier_config(cfg, cfg.epochs, model_seed))?;
        let path = model_path(&cfg.out_dir, protocol, data_seed, model_seed);
        ensure_parent(&path)?;
        save_params(&report.params, &path)?;
        let accuracy = report.test.as_ref().map(|e| e.accuracy).unwrap_or(0.0);

        let train: Vec<&Sample> = ds.split(Role::Train).collect();
        let test = test_samples(&ds);
        let prov = format!("{protocol} data_seed={data_seed} model_seed={model_seed}");
        let logits = extract_representation(&report.params, &test, Layer::Linear3, &prov)?;
        let train_rep = extract_representation(&report.params, &train, Layer::Linear2, &prov)?;
        let test_rep = extract_representation(&report.params, &test, Layer::Linear2, &prov)?;
        let labels = test_rep.labels().to_vec();

        cells.push((protocol, "accuracy", accuracy));
        cells.push((
            protocol,
            "auroc_msp",
            auroc_by_label(&score_batch(Scorer::Msp, None, &logits)?, &labels)?,
        ));
        cells.push((
            protocol,
            "auroc_mdist",
            auroc_by_label(&score_batch(Scorer::Mahalanobis, Some(&train_rep), &test_rep)?, &labels)?,
        ));
        cells.push((
            protocol,
            "auroc_norm",
            auroc_by_label(&score_batch(Scorer::Norm, None, &test_rep)?, &labels)?,
        ));
    }
    Ok(E1e2Run {
        seed: seed_label(data_seed, model_seed),
        cells,
    })
}

/// Trains E1 and E2 classifiers per seed pair and reports inlier accuracy
/// and AUROC for the MSP, Mahalanobis and norm scores. Models are saved for
/// [`run_finetune`].
pub fn run_e1e2(cfg: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(cfg, &[ExperimentKind::E1e2, ExperimentKind::ToyOsr])?;
    let runs = seed_pairs(cfg)
        .into_par_iter()
        .map(|(d, m)| e1e2_one(cfg, d, m))
        .collect::<Result<Vec<_>>>()?;
    let mut table = ResultTable::new(cfg.hash(), cfg.kind.name());
    for run in &runs {
        for &(protocol, metric, value) in &run.cells {
            table.push(&run.seed, protocol.name(), metric, value)?;
        }
    }
    table.add_medians();
    table.write(&cfg.out_dir, &cfg.canonical())?;
    Ok(table)
}

fn finetune_one(cfg: &ExperimentConfig, data_seed: u64, model_seed: u64) -> Result<Vec<(String, &'static str, f64)>> {
    let mut cells = Vec::new();
    for protocol in PROTOCOLS {
        let path = model_path(&cfg.out_dir, protocol, data_seed, model_seed);
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "missing model {}; run the e1e2 experiment with the same out_dir first",
                path.display()
            )));
        }
        let ds = generate_outline_set(protocol, data_seed);
        let params: ModelParams<f32> = load_params_expecting(&path, ds.num_known())?;
        let untouched = evaluate(&params, &ds, Role::TestInlier)?;
        cells.push((format!("{protocol}/none"), "shape_accuracy", untouched.shape_accuracy));
        for freeze in FREEZE_POINTS {
            let tc = classifier_config(cfg, cfg.finetune_epochs, model_seed);
            let report = finetune_frozen(&params, freeze, &ds, &tc)?;
            let test = report.test.expect("finetune evaluates the test split");
            let condition = format!("{protocol}/{freeze}");
            cells.push((condition.clone(), "shape_accuracy", test.shape_accuracy));
            cells.push((condition, "accuracy", test.accuracy));
        }
    }
    Ok(cells)
}

/// Finetunes the saved E1/E2 classifiers on outline shapes with the layers
/// up to each freeze point frozen. The `<protocol>/none` rows evaluate the
/// models on outlines without finetuning.
pub fn run_finetune(cfg: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(cfg, &[ExperimentKind::Finetune])?;
    let pairs = seed_pairs(cfg);
    let runs = pairs
        .par_iter()
        .map(|&(d, m)| finetune_one(cfg, d, m))
        .collect::<Result<Vec<_>>>()?;
    let mut table = ResultTable::new(cfg.hash(), cfg.kind.name());
    for (&(d, m), cells) in pairs.iter().zip(&runs) {
        for (condition, metric, value) in cells {
            table.push(&seed_label(d, m), condition, metric, *value)?;
        }
    }
    table.add_medians();
    table.write(&cfg.out_dir, &cfg.canonical())?;
    Ok(table)
}

/// Name of one ensemble member.
pub fn member_name(tau: f64) -> String {
    format!("t{tau}")
}

/// Every subset of `0..n` with at least `min` members, smaller subsets
/// first, each in increasing order.
pub fn subsets(n: usize, min: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect::<Vec<_>>())
        .filter(|s| s.len() >= min)
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn pick(batches: &[EmbeddingBatch], idx: &[usize]) -> Vec<EmbeddingBatch> {
    idx.iter().map(|&i| batches[i].clone()).collect()
}

/// Scores single members and every multi-member combination under each
/// aggregation strategy, then runs kNN and OSCR on all members together.
/// Returns `(condition, metric, value)` cells plus the OSCR curve CSV.
fn score_members(
    names: &[String],
    train: &[EmbeddingBatch],
    test: &[EmbeddingBatch],
    cfg: &ExperimentConfig,
) -> Result<(Vec<(String, String, f64)>, Option<String>)> {
    let scorer = cfg.scorer;
    let metric = format!("auroc_{scorer}");
    let labels = test[0].labels().to_vec();
    EmbeddingBatch::check_aligned(test)?;
    let mut cells = Vec::new();

    let mut singles = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let scores = score_batch(scorer, train.get(k), &test[k])?;
        let a = auroc_by_label(&scores, &labels)?;
        singles.push(a);
        cells.push((name.clone(), metric.clone(), a));
    }
    cells.push((
        "single-mean".into(),
        metric.clone(),
        singles.iter().sum::<f64>() / singles.len() as f64,
    ));

    for subset in subsets(names.len(), 2) {
        let label = subset.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join("+");
        let tr = if train.is_empty() { Vec::new() } else { pick(train, &subset) };
        let te = pick(test, &subset);
        for strategy in Aggregation::ALL {
            let scores = aggregate_with(&tr, &te, strategy, scorer, cfg.zscore)?;
            cells.push((format!("{label}/{strategy}"), metric.clone(), auroc_by_label(&scores, &labels)?));
        }
    }

    let mut curve = None;
    if !train.is_empty() {
        let all: Vec<usize> = (0..names.len()).collect();
        let train_cat = EmbeddingBatch::concat(&pick(train, &all))?;
        let test_cat = EmbeddingBatch::concat(test)?;
        let knn = KnnClassifier::new(&train_cat, cfg.knn_k)?;
        let predicted = knn.classify_batch(&test_cat)?;
        let inliers: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
        let correct = inliers.iter().filter(|&&i| predicted[i] == labels[i]).count();
        cells.push(("all".into(), "knn_accuracy".into(), correct as f64 / inliers.len() as f64));

        let scores = aggregate_with(train, test, cfg.aggregation, scorer, cfg.zscore)?;
        let records: Vec<EvaluationRecord> = labels
            .iter()
            .zip(&predicted)
            .zip(&scores.scores)
            .map(|((&l, &p), &s)| {
                if l < 0 {
                    EvaluationRecord::outlier(s)
                } else {
                    EvaluationRecord::inlier(l, p, s)
                }
            })
            .collect();
        let (area, points) = oscr(&records)?;
        cells.push((format!("all/{}", cfg.aggregation), "oscr".into(), area));
        curve = Some(oscr_curve_csv(&points));
    }
    Ok((cells, curve))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct EnsembleRun {
    seed: String,
    cells: Vec<(String, String, f64)>,
    curve: Option<String>,
}

fn ensemble_one(cfg: &ExperimentConfig, data_seed: u64, model_seed: u64) -> Result<EnsembleRun> {
    let ds = generate_protocol(Protocol::E2, data_seed);
    let train_s: Vec<&Sample> = ds.split(Role::Train).collect();
    let test_s = test_samples(&ds);
    let seed = seed_label(data_seed, model_seed);
    let emb_dir = cfg.out_dir.join("ensemble").join("embeddings");
    std::fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;

    let members = cfg
        .temperatures
        .par_iter()
        .map(|&tau| {
            let tc = TrainConfig {
                learning_rate: cfg.learning_rate,
                epochs: cfg.supcon_epochs,
                batch_size: cfg.batch_size,
                ..TrainConfig::supcon(tau, model_seed)
            };
            let report = train_supcon(&ds, &tc)?;
            let prov = format!("E2 supcon tau={tau} data_seed={data_seed} model_seed={model_seed}");
            let train = extract_representation(&report.params, &train_s, Layer::Linear2, &prov)?;
            let test = extract_representation(&report.params, &test_s, Layer::Linear2, &prov)?;
            let stem = format!("{seed}-{}", member_name(tau));
            write_embeddings(&train, &emb_dir.join(format!("{stem}-train.emb")))?;
            write_embeddings(&test, &emb_dir.join(format!("{stem}-test.emb")))?;
            Ok((train, test))
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, test): (Vec<_>, Vec<_>) = members.into_iter().unzip();
    let names: Vec<String> = cfg.temperatures.iter().map(|&t| member_name(t)).collect();
    let (cells, curve) = score_members(&names, &train, &test, cfg)?;
    Ok(EnsembleRun { seed, cells, curve })
}

/// Trains one SupCon model per temperature on E2 and compares single-model
/// scores against every aggregated combination.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(cfg, &[ExperimentKind::Ensemble])?;
    if cfg.scorer == Scorer::Msp {
        return Err(Error::InvalidArgument(
            "the msp scorer needs logits, which SupCon models do not train".into(),
        ));
    }
    let runs = seed_pairs(cfg)
        .into_par_iter()
        .map(|(d, m)| ensemble_one(cfg, d, m))
        .collect::<Result<Vec<_>>>()?;
    let mut table = ResultTable::new(cfg.hash(), cfg.kind.name());
    for run in &runs {
        for (condition, metric, value) in &run.cells {
            table.push(&run.seed, condition, metric, *value)?;
        }
        if let Some(curve) = &run.curve {
            write_text(
                &cfg.out_dir.join("ensemble").join(format!("oscr-{}.csv", run.seed)),
                curve,
            )?;
        }
    }
    table.add_medians();
    table.write(&cfg.out_dir, &cfg.canonical())?;
    Ok(table)
}

/// Scores externally produced embedding files. `test_emb[k]` and the
/// optional `train_emb[k]` come from the same model.
pub fn run_score_external(cfg: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(cfg, &[ExperimentKind::ScoreExternal])?;
    let read_all = |paths: &[PathBuf]| paths.iter().map(|p| read_embeddings(p)).collect::<Result<Vec<_>>>();
    let test = read_all(&cfg.test_emb)?;
    let train = read_all(&cfg.train_emb)?;
    for (k, t) in train.iter().enumerate() {
        if t.dim() != test[k].dim() {
            return Err(Error::Shape(format!(
                "model {}: train width {} but test width {}",
                k + 1,
                t.dim(),
                test[k].dim()
            )));
        }
    }
    let names: Vec<String> = (1..=test.len()).map(|k| format!("model{k}")).collect();
    let (cells, curve) = score_members(&names, &train, &test, cfg)?;
    let mut table = ResultTable::new(cfg.hash(), cfg.kind.name());
    for (condition, metric, value) in &cells {
        table.push("external", condition, metric, *value)?;
    }
    if let Some(curve) = curve {
        write_text(&cfg.out_dir.join("score-external-oscr.csv"), &curve)?;
    }
    table.write(&cfg.out_dir, &cfg.canonical())?;
    Ok(table)
}

fn kind_name(kind: PairKind) -> &'static str {
    match kind {
        PairKind::Positive => "positive",
        PairKind::Negative => "negative",
    }
}

/// File name of one curve's CSV.
pub fn curve_file_name(curve: &GradientCurve) -> String {
    format!("{}-tau{}.csv", kind_name(curve.kind), curve.tau)
}

fn gnuplot_script(curves: &[GradientCurve]) -> String {
    let mut out = String::from(
        "set datafile separator ','\nset key top left\nset terminal pngcairo size 1200,480\n\
         set output 'gradients.png'\nset multiplot layout 1,2\n",
    );
    for (kind, axis) in [(PairKind::Positive, "s_ip"), (PairKind::Negative, "s_in")] {
        writeln!(out, "set title '{} pairs'\nset xlabel '{axis}'\nset ylabel 'dL/d{axis}'", kind_name(kind)).unwrap();
        let plots: Vec<String> = curves
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| format!("'{}' using 1:2 skip 1 with lines title 'tau={}'", curve_file_name(c), c.tau))
            .collect();
        writeln!(out, "plot {}", plots.join(", \\\n     ")).unwrap();
    }
    out.push_str("unset multiplot\n");
    out
}

/// Writes the gradient curves as one combined CSV, one CSV per curve and a
/// gnuplot script, all under `out_dir/simulate`.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<(Vec<GradientCurve>, Vec<PathBuf>)> {
    expect_kind(cfg, &[ExperimentKind::Simulate])?;
    let curves = simulate_gradient_curves(
        &cfg.temperatures,
        cfg.sip_range,
        cfg.sin_range,
        &cfg.population,
        cfg.grid_points,
    )?;
    let dir = cfg.out_dir.join("simulate");
    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_text(&path, &text)?;
        files.push(path);
        Ok(())
    };
    emit("curves.csv".into(), curves_to_csv(&curves))?;
    for c in &curves {
        let mut text = String::from("s,grad\n");
        for (s, g) in c.s.iter().zip(&c.grad) {
            writeln!(text, "{s},{g:e}").unwrap();
        }
        emit(curve_file_name(c), text)?;
    }
    emit("plot.gp".into(), gnuplot_script(&curves))?;
    emit("config.txt".into(), format!("config_hash = {}\n{}", cfg.hash(), cfg.canonical()))?;
    Ok((curves, files))
}
