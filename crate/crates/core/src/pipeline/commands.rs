use rayon::prelude::*;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

use super::artifacts::{csv, Session};
use super::config::{RunConfig, Task};
use crate::contrib::{batch_contributions, Execution, TargetKind, TargetSpec};
use crate::error::{invalid, CodecError, Result};
use crate::inputmap::{contribution_map, render_mask, to_pgm, ContributionMap, RenderOptions};
use crate::metrics::{foev, mean_row_hoyer, pos_neg_correlation, ChannelContributionMatrix, SignMode};
use crate::modes::{
    adjusted_rand_index, class_correlations, class_masks, cluster_cells, column_correlations, max_class_corr_stats,
    mode_firing_correlation, CorrelationMatrix,
};
use crate::perturb::{sweep, SweepData};
use crate::sae::{r_squared, train_sae, ModeLoadings, SaeModel};
use crate::tensor::Tensor;
use crate::zoo::format::{dataset_from_envelope, dataset_to_envelope, model_from_envelope, model_to_envelope, Envelope};
use crate::nn::ModelSpec;
use crate::zoo::{accuracy, build_retina_model, build_toy_cnn, generate_dataset, train, Dataset, DatasetKind};

pub const MODEL_FILE: &str = "model.cdec";
pub const DATASET_FILE: &str = "dataset.cdec";

/// Paths written by a command and a few headline numbers.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
}

impl Outcome {
    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }
}

fn stem(cfg: &RunConfig) -> String {
    format!("{}-{}", cfg.contrib.tap, cfg.contrib.algorithm.id())
}

fn sign_id(s: SignMode) -> &'static str {
    match s {
        SignMode::Net => "net",
        SignMode::Positive => "pos",
        SignMode::Negative => "neg",
        SignMode::ConcatPosNeg => "concat",
    }
}

pub fn contrib_file(cfg: &RunConfig, sign: SignMode) -> String {
    format!("contrib-{}-{}.cdec", stem(cfg), sign_id(sign))
}

pub fn activation_file(cfg: &RunConfig) -> String {
    format!("act-{}.cdec", cfg.contrib.tap)
}

pub fn sae_file(cfg: &RunConfig) -> String {
    format!("sae-{}.cdec", stem(cfg))
}

pub fn loadings_file(cfg: &RunConfig) -> String {
    format!("loadings-{}.cdec", stem(cfg))
}

pub fn ccm_file(cfg: &RunConfig) -> String {
    format!("ccm-{}.cdec", stem(cfg))
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn loadings_to_envelope(l: &ModeLoadings, r2: f64) -> Envelope {
    let mut env = Envelope::new("loadings");
    let h = env.header.as_object_mut().expect("object");
    h.insert("threshold".into(), json!(l.threshold));
    h.insert("r_squared".into(), json!(r2));
    env.push("values", l.values.clone());
    env
}

pub fn loadings_from_envelope(env: &Envelope) -> Result<ModeLoadings> {
    env.check_kind("loadings")?;
    let threshold = env.header.get("threshold").and_then(|v| v.as_f64()).ok_or_else(|| CodecError::Format("missing threshold".into()))?;
    let values = env.block("values")?.clone();
    if values.ndim() != 2 {
        return Err(CodecError::Format("loadings must be a matrix".into()));
    }
    Ok(ModeLoadings { values, threshold })
}

/// Degenerate entries are stored as NaN.
pub fn correlation_to_envelope(c: &CorrelationMatrix, rows: &str, cols: &str) -> Envelope {
    let mut env = Envelope::new("correlation");
    let h = env.header.as_object_mut().expect("object");
    h.insert("rows".into(), json!(rows));
    h.insert("cols".into(), json!(cols));
    env.push("values", c.to_dense(f64::NAN));
    env
}

pub fn correlation_from_envelope(env: &Envelope) -> Result<CorrelationMatrix> {
    env.check_kind("correlation")?;
    let t = env.block("values")?;
    let &[rows, cols] = t.shape() else {
        return Err(CodecError::Format("correlation block must be a matrix".into()));
    };
    Ok(CorrelationMatrix {
        rows,
        cols,
        values: t.data().iter().map(|&v| (!v.is_nan()).then_some(v)).collect(),
    })
}

fn read_model(s: &mut Session) -> Result<ModelSpec> {
    model_from_envelope(&s.read(MODEL_FILE)?)
}

fn read_dataset(s: &mut Session) -> Result<Dataset> {
    dataset_from_envelope(&s.read(DATASET_FILE)?)
}

fn read_matrix(s: &mut Session, name: &str) -> Result<ChannelContributionMatrix> {
    ChannelContributionMatrix::from_envelope(&s.read(name)?)
}

fn rates_matrix(rates: &[Tensor]) -> Result<Tensor> {
    let d = rates.first().map(Tensor::len).ok_or_else(|| invalid("no rates"))?;
    Tensor::new(vec![rates.len(), d], rates.iter().flat_map(|r| r.data().iter().copied()).collect())
}

/// Builds the dataset and model for the configured task and trains it.
pub fn train_toy(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "train-toy", &cfg.hash(), cfg.effective_seed())?;
    let expected = match cfg.task {
        Task::Shapes => DatasetKind::SyntheticShapesClassification,
        Task::Retina => DatasetKind::SyntheticStimulusRegression,
    };
    if cfg.dataset.kind != expected {
        return Err(CodecError::Config(format!("task {:?} needs a {expected:?} dataset", cfg.task)));
    }
    let data = generate_dataset(&cfg.dataset)?;
    let model = match cfg.task {
        Task::Shapes => {
            let mut m = cfg.toy_cnn.clone();
            m.input_shape = cfg.dataset.input_shape.clone();
            m.n_classes = cfg.dataset.n_outputs;
            build_toy_cnn(&m)?
        }
        Task::Retina => {
            let mut r = cfg.retina.clone();
            r.input_shape = cfg.dataset.input_shape.clone();
            r.n_cells = cfg.dataset.n_outputs;
            build_retina_model(&r)?
        }
    };
    let (model, report) = train(&model, &data, &cfg.train)?;
    let mut out = Outcome::default();
    out.note("final_loss", report.loss_history.last().copied().unwrap_or(f64::NAN));
    if let Some(labels) = data.labels() {
        out.note("train_accuracy", accuracy(&model, &data.inputs, labels)?);
    }
    s.write(MODEL_FILE, model_to_envelope(&model))?;
    s.write(DATASET_FILE, dataset_to_envelope(&data)?)?;
    let rows = report.loss_history.iter().enumerate().map(|(i, l)| vec![i.to_string(), f(*l)]);
    s.write_text("train_loss.csv", &csv(&["epoch", "loss"], rows))?;
    out.outputs = s.finish()?;
    Ok(out)
}

fn resolve_target(model: &ModelSpec, data: &Dataset, target: &TargetSpec) -> Result<TargetSpec> {
    match &target.kind {
        TargetKind::Surprisal { mean, .. } if mean.is_empty() => {
            let outputs = data
                .inputs
                .par_iter()
                .map(|x| model.forward(x).map(|t| t.output().clone()))
                .collect::<Result<Vec<_>>>()?;
            let mut t = TargetSpec::estimate_surprisal(&outputs)?;
            t.softmax_first = target.softmax_first;
            Ok(t)
        }
        _ => Ok(target.clone()),
    }
}

/// Contribution matrices (net, positive, negative) and the activation
/// matrix at the configured tap.
pub fn contrib(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "contrib", &cfg.hash(), cfg.effective_seed())?;
    let model = read_model(&mut s)?;
    let data = read_dataset(&mut s)?;
    let tap = &cfg.contrib.tap;
    let target = resolve_target(&model, &data, &cfg.contrib.target)?;
    let cts = batch_contributions(&model, &data.inputs, tap, &target, &cfg.contrib.method(), Execution::Parallel)?;
    let mut out = Outcome::default();
    for sign in [SignMode::Net, SignMode::Positive, SignMode::Negative] {
        let m = ChannelContributionMatrix::from_contributions(&cts, sign)?;
        s.write(&contrib_file(cfg, sign), m.to_envelope())?;
    }
    let acts = data
        .inputs
        .par_iter()
        .map(|x| {
            let t = model.forward(x)?;
            t.activation(tap).cloned().ok_or_else(|| CodecError::UnknownTap(tap.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let am = ChannelContributionMatrix::from_activations(tap, &acts, SignMode::Net)?;
    s.write(&activation_file(cfg), am.to_envelope())?;
    out.note("inputs", cts.len());
    out.note("channels", am.n_columns());
    out.outputs = s.finish()?;
    Ok(out)
}

fn hoyer_or_nan(m: &Tensor) -> (f64, usize) {
    match mean_row_hoyer(m) {
        Ok(v) => v,
        Err(_) => (f64::NAN, m.shape()[0]),
    }
}

/// Sparsity, positive/negative correlation and explained-variance tables.
pub fn stats(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "stats", &cfg.hash(), cfg.effective_seed())?;
    let net = read_matrix(&mut s, &contrib_file(cfg, SignMode::Net))?;
    let pos = read_matrix(&mut s, &contrib_file(cfg, SignMode::Positive))?;
    let neg = read_matrix(&mut s, &contrib_file(cfg, SignMode::Negative))?;
    let act = read_matrix(&mut s, &activation_file(cfg))?;
    let mut rows = Vec::new();
    let mut out = Outcome::default();
    for (name, m) in [("activation", &act), ("contrib_net", &net), ("contrib_pos", &pos), ("contrib_neg", &neg)] {
        let (h, skipped) = hoyer_or_nan(&m.values);
        rows.push(vec![format!("hoyer_{name}"), f(h)]);
        rows.push(vec![format!("hoyer_{name}_skipped"), skipped.to_string()]);
        out.note(&format!("hoyer_{name}"), h);
    }
    let r = pos_neg_correlation(&pos.values, &neg.values).unwrap_or(f64::NAN);
    rows.push(vec!["pos_neg_correlation".into(), f(r)]);
    out.note("pos_neg_correlation", r);
    let spec_pos = foev(&pos.values).ok();
    let spec_act = foev(&act.values).ok();
    for (name, sp) in [("contrib_pos", &spec_pos), ("activation", &spec_act)] {
        let n95 = sp.as_ref().map_or(f64::NAN, |r| r.n_components_95 as f64);
        rows.push(vec![format!("n95_{name}"), f(n95)]);
        out.note(&format!("n95_{name}"), n95);
    }
    let stem = stem(cfg);
    s.write_text(&format!("stats-{stem}.csv"), &csv(&["metric", "value"], rows))?;
    let d = pos.n_columns();
    let frac = |sp: &Option<crate::metrics::SpectrumReport>, i: usize| sp.as_ref().map_or(f64::NAN, |r| r.fractions[i]);
    let spectrum = (0..d).map(|i| vec![(i + 1).to_string(), f(frac(&spec_pos, i)), f(frac(&spec_act, i))]);
    s.write_text(
        &format!("spectrum-{stem}.csv"),
        &csv(&["component", "contrib_pos_fraction", "activation_fraction"], spectrum),
    )?;
    out.outputs = s.finish()?;
    Ok(out)
}

/// Trains the sparse autoencoder on the configured contribution matrix.
pub fn sae(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "sae", &cfg.hash(), cfg.effective_seed())?;
    let m = read_matrix(&mut s, &contrib_file(cfg, cfg.contrib.sae_input))?;
    let model = train_sae(&m.values, &cfg.sae)?;
    let loadings = model.loadings_for(&m.values)?;
    let r2 = r_squared(&m.values, &model)?;
    let active = loadings.values.data().iter().filter(|&&v| v > 0.0).count() as f64 / loadings.n_inputs() as f64;
    s.write(&sae_file(cfg), model.to_envelope())?;
    s.write(&loadings_file(cfg), loadings_to_envelope(&loadings, r2))?;
    let rows = model
        .log
        .iter()
        .enumerate()
        .map(|(i, e)| vec![i.to_string(), f(e.loss), f(e.r_squared), f(e.active)]);
    s.write_text(&format!("sae_log-{}.csv", stem(cfg)), &csv(&["epoch", "loss", "r_squared", "active_modes"], rows))?;
    let mut out = Outcome::default();
    out.note("r_squared", r2);
    out.note("modes", model.n_modes());
    out.note("mean_active_modes", active);
    out.outputs = s.finish()?;
    Ok(out)
}

/// Per-row maxima; the mean is NaN when every row is degenerate.
fn max_corr_rows(c: &CorrelationMatrix, threshold: f64) -> Result<(Vec<Vec<String>>, f64, usize)> {
    let st = match max_class_corr_stats(c, threshold) {
        Err(CodecError::Degenerate(_)) => {
            let rows = (0..c.rows).map(|i| vec![i.to_string(), "degenerate".into()]).collect();
            return Ok((rows, f64::NAN, 0));
        }
        r => r?,
    };
    let rows = st
        .max_abs
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), v.map_or("degenerate".into(), f)])
        .collect();
    Ok((rows, st.mean, st.n_above))
}

/// Class correlations of modes and of raw channels (classification), or
/// mode/firing correlations and cell clusters (regression).
pub fn correlate(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "correlate", &cfg.hash(), cfg.effective_seed())?;
    let loadings = loadings_from_envelope(&s.read(&loadings_file(cfg))?)?;
    let data = read_dataset(&mut s)?;
    let stem = stem(cfg);
    let mut out = Outcome::default();
    if let Some(labels) = data.labels() {
        let masks = class_masks(labels, data.spec.n_outputs)?;
        let ccm = class_correlations(&loadings.values, &masks)?;
        let matrix = read_matrix(&mut s, &contrib_file(cfg, cfg.contrib.sae_input))?;
        let chan = column_correlations(&matrix.values, &masks)?;
        s.write(&ccm_file(cfg), correlation_to_envelope(&ccm, "mode", "class"))?;
        s.write_text(&format!("class_corr-{stem}.csv"), &ccm.to_csv("mode", "class"))?;
        s.write_text(&format!("channel_class_corr-{stem}.csv"), &chan.to_csv("channel", "class"))?;
        let (rows, mean, above) = max_corr_rows(&ccm, cfg.correlate.threshold)?;
        s.write_text(&format!("max_class_corr-{stem}.csv"), &csv(&["mode", "max_abs_r"], rows))?;
        let (crows, cmean, _) = max_corr_rows(&chan, cfg.correlate.threshold)?;
        s.write_text(&format!("channel_max_class_corr-{stem}.csv"), &csv(&["channel", "max_abs_r"], crows))?;
        out.note("mode_max_corr_mean", mean);
        out.note("channel_max_corr_mean", cmean);
        out.note("modes_above_threshold", above);
    } else {
        let rates = rates_matrix(data.rates().expect("regression dataset"))?;
        let fc = mode_firing_correlation(&loadings.values, &rates)?;
        s.write(&ccm_file(cfg), correlation_to_envelope(&fc, "cell", "mode"))?;
        s.write_text(&format!("firing_corr-{stem}.csv"), &fc.to_csv("cell", "mode"))?;
        let best = fc.values.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        out.note("max_abs_mode_firing_corr", best);
        let n_cells = fc.rows;
        let ks: Vec<usize> = cfg.correlate.k_candidates.iter().copied().filter(|&k| k >= 2 && k < n_cells.max(3)).collect();
        match cluster_cells(&fc.to_dense(0.0), &ks, cfg.perturb.seed) {
            Ok(report) => {
                let rows = report.assignments.iter().enumerate().map(|(c, a)| vec![c.to_string(), a.to_string()]);
                s.write_text(&format!("cell_clusters-{stem}.csv"), &csv(&["cell", "cluster"], rows))?;
                let sil = report.silhouettes.iter().map(|(k, v)| vec![k.to_string(), f(*v)]);
                s.write_text(&format!("silhouette-{stem}.csv"), &csv(&["k", "silhouette"], sil))?;
                out.note("clusters", report.k);
                if let Some(gt) = &data.ground_truth {
                    out.note("cluster_ari", adjusted_rand_index(&report.assignments, &gt.cell_types)?);
                }
            }
            Err(CodecError::Degenerate(msg)) => out.note("clusters", format!("degenerate ({msg})")),
            Err(e) => return Err(e),
        }
    }
    out.outputs = s.finish()?;
    Ok(out)
}

/// Ablation/preservation sweeps ranked by the most class-correlated mode.
pub fn perturb(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "perturb", &cfg.hash(), cfg.effective_seed())?;
    let model = read_model(&mut s)?;
    let data = read_dataset(&mut s)?;
    let sae = SaeModel::from_envelope(&s.read(&sae_file(cfg))?)?;
    let ccm = correlation_from_envelope(&s.read(&ccm_file(cfg))?)?;
    let labels = data.labels().ok_or_else(|| invalid("perturbation sweeps need a labelled dataset"))?;
    let sweep_data = SweepData {
        model: &model,
        inputs: &data.inputs,
        labels,
    };
    let classes: Vec<usize> = match cfg.perturb.class {
        Some(c) => vec![c],
        None => (0..ccm.cols).collect(),
    };
    let p = &cfg.perturb;
    let mut curve = Vec::new();
    let mut summary = Vec::new();
    let mut out = Outcome::default();
    let mut specs = Vec::new();
    for &class in &classes {
        match sweep(&sweep_data, &cfg.contrib.tap, &sae, &ccm, class, &p.fractions, p.kind, p.n_top_modes, p.seed) {
            Ok(r) => {
                for i in 0..r.fractions.len() {
                    curve.push(vec![
                        class.to_string(),
                        r.off_target_class.to_string(),
                        f(r.fractions[i]),
                        f(r.target_ratios[i]),
                        f(r.off_target_ratios[i]),
                    ]);
                }
                specs.push(r.specificity);
                summary.push(vec![
                    class.to_string(),
                    r.off_target_class.to_string(),
                    f(r.auc_target),
                    f(r.auc_off_target),
                    f(r.specificity),
                    r.improved.to_string(),
                ]);
            }
            Err(CodecError::Degenerate(msg)) => {
                log::warn!("class {class} skipped: {msg}");
                summary.push(vec![class.to_string(), "degenerate".into(), String::new(), String::new(), String::new(), String::new()]);
            }
            Err(e) => return Err(e),
        }
    }
    let kind = match p.kind {
        crate::perturb::PerturbKind::Ablate => "ablate",
        crate::perturb::PerturbKind::Preserve => "preserve",
    };
    let stem = format!("{}-{kind}", stem(cfg));
    s.write_text(
        &format!("perturb-{stem}.csv"),
        &csv(&["class", "off_target_class", "fraction", "target_ratio", "off_target_ratio"], curve),
    )?;
    s.write_text(
        &format!("perturb_summary-{stem}.csv"),
        &csv(&["class", "off_target_class", "auc_target", "auc_off_target", "specificity", "improved"], summary),
    )?;
    if !specs.is_empty() {
        out.note("mean_specificity", specs.iter().sum::<f64>() / specs.len() as f64);
    }
    out.note("classes", classes.len());
    out.outputs = s.finish()?;
    Ok(out)
}

/// Channels of a mode: dictionary weights at or above `fraction` of the
/// column maximum.
pub fn mode_channels(sae: &SaeModel, mode: usize, fraction: f64) -> Result<Vec<usize>> {
    if mode >= sae.n_modes() {
        return Err(invalid(format!("mode {mode} out of range for {} modes", sae.n_modes())));
    }
    let col = sae.mode(mode);
    let max = col.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..col.len()).filter(|&c| col[c] >= fraction * max).collect())
}

fn map_envelope(map: &ContributionMap, mask: &Tensor, masked: &Tensor, degenerate: bool, index: usize) -> Envelope {
    let mut env = Envelope::new("contribution-map");
    let h = env.header.as_object_mut().expect("object");
    h.insert("tap".into(), json!(map.tap));
    h.insert("channels".into(), json!(map.channels));
    h.insert("algorithm".into(), json!(map.algorithm));
    h.insert("sign".into(), json!(map.sign));
    h.insert("steps".into(), json!(map.steps));
    h.insert("input_index".into(), json!(index));
    h.insert("degenerate_mask".into(), json!(degenerate));
    env.push("values", map.values.clone());
    env.push("mask", mask.clone());
    env.push("masked_image", masked.clone());
    env
}

/// Input-space map of one input for a mode or channel set, plus its mask.
pub fn inputmap(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let mut s = Session::new(dir, "inputmap", &cfg.hash(), cfg.effective_seed())?;
    let model = read_model(&mut s)?;
    let data = read_dataset(&mut s)?;
    let im = &cfg.inputmap;
    let tap = &cfg.contrib.tap;
    let x = data
        .inputs
        .get(im.index)
        .ok_or_else(|| invalid(format!("input index {} out of range for {} inputs", im.index, data.len())))?;
    let (channels, selection) = if let Some(mode) = im.mode {
        let sae = SaeModel::from_envelope(&s.read(&sae_file(cfg))?)?;
        (mode_channels(&sae, mode, im.mode_channel_fraction)?, format!("mode{mode}"))
    } else if let Some(ch) = &im.channels {
        (ch.clone(), format!("ch{}", ch.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("_")))
    } else {
        ((0..model.tap_channels(tap)?).collect(), "all".to_string())
    };
    let mut target = resolve_target(&model, &data, &cfg.contrib.target)?;
    target.softmax_first = im.softmax;
    let baseline = cfg.contrib.baseline.spec();
    let map = contribution_map(im.algorithm, &model, x, tap, &channels, &target, &baseline, im.steps)?;
    let rendered = render_mask(
        &map,
        x,
        &RenderOptions {
            net: im.net,
            ..RenderOptions::default()
        },
    )?;
    let name = format!("map-{tap}-{}-i{}-{selection}", im.algorithm.id(), im.index);
    s.write(
        &format!("{name}.cdec"),
        map_envelope(&map, &rendered.mask, &rendered.image, rendered.degenerate, im.index),
    )?;
    s.write_bytes(&format!("{name}-mask.pgm"), &to_pgm(&rendered.mask)?)?;
    s.write_bytes(&format!("{name}-masked.pgm"), &to_pgm(&rendered.image)?)?;
    let mut out = Outcome::default();
    out.note("channels", channels.len());
    out.note("map_total", map.total());
    out.note("degenerate_mask", rendered.degenerate);
    out.outputs = s.finish()?;
    Ok(out)
}

/// Copies every CSV table of the run into `report/` and indexes them with
/// their schema, row count and producing command.
pub fn report(dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    if !dir.is_dir() {
        return Err(CodecError::MissingArtifact(dir.display().to_string()));
    }
    let mut producers = std::collections::BTreeMap::new();
    let mut tables = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.ends_with(".manifest.json") {
            let side: super::artifacts::ManifestSidecar = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| CodecError::Format(format!("{name}: {e}")))?;
            for o in side.manifest.outputs {
                producers.insert(o, side.manifest.command.clone());
            }
        } else if name.ends_with(".csv") {
            tables.push(name);
        }
    }
    tables.sort();
    if tables.is_empty() {
        return Err(CodecError::MissingArtifact(format!("{}: no tables to report", dir.display())));
    }
    let mut s = Session::new(dir, "report", &cfg.hash(), cfg.effective_seed())?;
    let mut index = Vec::new();
    for name in &tables {
        let text = fs::read_to_string(dir.join(name))?;
        let schema = text.lines().next().and_then(|l| l.strip_prefix("# schema: ")).unwrap_or("").to_string();
        let rows = text.lines().skip(1).filter(|l| !l.is_empty()).count();
        s.write_text(&format!("report/{name}"), &text)?;
        index.push(vec![
            name.clone(),
            producers.get(name).cloned().unwrap_or_default(),
            rows.to_string(),
            format!("\"{schema}\""),
        ]);
    }
    s.write_text("report/index.csv", &csv(&["table", "command", "rows", "schema"], index))?;
    let mut out = Outcome::default();
    out.note("tables", tables.len());
    out.outputs = s.finish()?;
    Ok(out)
}
