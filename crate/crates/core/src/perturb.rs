//! Channel ablation and preservation experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CodecError, Result};
use crate::modes::{aggregate_class_modes, top_mode_for_class, CorrelationMatrix};
use crate::nn::{ChannelMask, ModelSpec};
use crate::sae::SaeModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    /// Zero the selected channels.
    Ablate,
    /// Zero every channel except the selected ones.
    Preserve,
}

impl std::str::FromStr for PerturbKind {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablate" => Ok(PerturbKind::Ablate),
            "preserve" => Ok(PerturbKind::Preserve),
            other => Err(invalid(format!("unknown perturbation kind `{other}`"))),
        }
    }
}

/// Indices of the `⌈fraction·d⌉` largest entries of `ranking`, lowest index first on ties.
pub fn top_channels(ranking: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let d = ranking.len();
    let count = ((fraction * d as f64).ceil() as usize).min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| ranking[b].total_cmp(&ranking[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    Ok(order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub tap: String,
    pub ranking: Vec<f64>,
    pub fraction: f64,
    pub kind: PerturbKind,
    pub target_class: usize,
    pub off_target_class: usize,
}

impl PerturbationPlan {
    pub fn channels(&self) -> Result<Vec<usize>> {
        top_channels(&self.ranking, self.fraction)
    }
}

/// A model whose forward pass applies a fixed channel mask at one tap.
#[derive(Clone, Debug)]
pub struct PerturbedModel<'a> {
    pub model: &'a ModelSpec,
    pub mask: ChannelMask,
}

impl PerturbedModel<'_> {
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.model.forward_masked(input, &self.mask)?.output().clone())
    }
}

pub fn perturbation_mask(tap: &str, n_channels: usize, channels: &[usize], kind: PerturbKind) -> Result<ChannelMask> {
    let selected = ChannelMask::from_channels(tap, n_channels, channels)?;
    Ok(match kind {
        PerturbKind::Ablate => selected.complement(),
        PerturbKind::Preserve => selected,
    })
}

pub fn apply_perturbation<'a>(model: &'a ModelSpec, plan: &PerturbationPlan) -> Result<PerturbedModel<'a>> {
    let d = model.tap_channels(&plan.tap)?;
    if plan.ranking.len() != d {
        return Err(invalid(format!("ranking has {} entries, tap `{}` has {d} channels", plan.ranking.len(), plan.tap)));
    }
    Ok(PerturbedModel {
        model,
        mask: perturbation_mask(&plan.tap, d, &plan.channels()?, plan.kind)?,
    })
}

/// Top-1 accuracy on the samples labelled `class`, optionally under a mask.
pub fn class_accuracy(model: &ModelSpec, mask: Option<&ChannelMask>, inputs: &[Tensor], labels: &[usize], class: usize) -> Result<f64> {
    if inputs.len() != labels.len() {
        return Err(invalid("one label per input is required"));
    }
    let mut n = 0usize;
    let mut hits = 0usize;
    for (x, &l) in inputs.iter().zip(labels) {
        if l != class {
            continue;
        }
        n += 1;
        let out = match mask {
            Some(m) => model.forward_masked(x, m)?,
            None => model.forward(x)?,
        };
        if out.output().argmax() == class {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(invalid(format!("class {class} has no samples")));
    }
    Ok(hits as f64 / n as f64)
}

/// Perturbed accuracy divided by original accuracy on one class.
pub fn accuracy_ratio(model: &ModelSpec, perturbed: &PerturbedModel<'_>, inputs: &[Tensor], labels: &[usize], class: usize) -> Result<f64> {
    let base = class_accuracy(model, None, inputs, labels, class)?;
    if base == 0.0 {
        return Err(CodecError::Degenerate(format!("original accuracy on class {class} is zero")));
    }
    Ok(class_accuracy(perturbed.model, Some(&perturbed.mask), inputs, labels, class)? / base)
}

/// A uniformly drawn class other than `target`.
pub fn pick_off_target(n_classes: usize, target: usize, seed: u64) -> Result<usize> {
    if n_classes < 2 || target >= n_classes {
        return Err(invalid(format!("no off-target class for target {target} among {n_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(0..n_classes - 1);
    Ok(if r >= target { r + 1 } else { r })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub tap: String,
    pub kind: PerturbKind,
    pub target_class: usize,
    pub off_target_class: usize,
    pub fractions: Vec<f64>,
    pub target_ratios: Vec<f64>,
    pub off_target_ratios: Vec<f64>,
    pub auc_target: f64,
    pub auc_off_target: f64,
    /// Ablation: `(AUC_off − AUC_target)/AUC_off`. Preservation:
    /// `(AUC_target − AUC_off)/AUC_target`.
    pub specificity: f64,
    /// Some ratio exceeded 1.
    pub improved: bool,
}

impl PerturbationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema: fraction,target_ratio,off_target_ratio\n");
        for i in 0..self.fractions.len() {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e}\n",
                self.fractions[i], self.target_ratios[i], self.off_target_ratios[i]
            ));
        }
        s
    }
}

/// Trapezoidal area under `ys` over `xs`, divided by the covered span of `xs`.
/// A single point returns its value.
pub fn normalized_auc(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() == 1 {
        return ys[0];
    }
    let area: f64 = xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum();
    area / (xs[xs.len() - 1] - xs[0])
}

pub struct SweepData<'a> {
    pub model: &'a ModelSpec,
    pub inputs: &'a [Tensor],
    pub labels: &'a [usize],
}

/// Ratio curves for the channels ranked by `ranking` at each fraction.
pub fn sweep_ranking(
    data: &SweepData<'_>,
    tap: &str,
    ranking: &[f64],
    target_class: usize,
    off_target_class: usize,
    fractions: &[f64],
    kind: PerturbKind,
) -> Result<PerturbationReport> {
    if fractions.is_empty() || fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("fractions must be non-empty and strictly ascending"));
    }
    if target_class == off_target_class {
        return Err(invalid("off-target class must differ from the target class"));
    }
    let model = data.model;
    let base_t = class_accuracy(model, None, data.inputs, data.labels, target_class)?;
    let base_o = class_accuracy(model, None, data.inputs, data.labels, off_target_class)?;
    if base_t == 0.0 || base_o == 0.0 {
        return Err(CodecError::Degenerate("original accuracy is zero on the target or off-target class".into()));
    }
    let mut target_ratios = Vec::with_capacity(fractions.len());
    let mut off_target_ratios = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let plan = PerturbationPlan {
            tap: tap.to_string(),
            ranking: ranking.to_vec(),
            fraction,
            kind,
            target_class,
            off_target_class,
        };
        let p = apply_perturbation(model, &plan)?;
        target_ratios.push(class_accuracy(model, Some(&p.mask), data.inputs, data.labels, target_class)? / base_t);
        off_target_ratios.push(class_accuracy(model, Some(&p.mask), data.inputs, data.labels, off_target_class)? / base_o);
    }
    let auc_target = normalized_auc(fractions, &target_ratios);
    let auc_off_target = normalized_auc(fractions, &off_target_ratios);
    let specificity = match kind {
        PerturbKind::Ablate if auc_off_target > 0.0 => (auc_off_target - auc_target) / auc_off_target,
        PerturbKind::Preserve if auc_target > 0.0 => (auc_target - auc_off_target) / auc_target,
        _ => 0.0,
    };
    let improved = target_ratios.iter().chain(&off_target_ratios).any(|&r| r > 1.0);
    Ok(PerturbationReport {
        tap: tap.to_string(),
        kind,
        target_class,
        off_target_class,
        fractions: fractions.to_vec(),
        target_ratios,
        off_target_ratios,
        auc_target,
        auc_off_target,
        specificity,
        improved,
    })
}

/// Sweep over the dictionary column most correlated with `class`, or the
/// union ranking of the top `n_top_modes` columns.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    data: &SweepData<'_>,
    tap: &str,
    sae: &SaeModel,
    ccm: &CorrelationMatrix,
    class: usize,
    fractions: &[f64],
    kind: PerturbKind,
    n_top_modes: usize,
    seed: u64,
) -> Result<PerturbationReport> {
    let ranking = mode_ranking(sae, ccm, class, n_top_modes)?;
    let off = pick_off_target(ccm.cols, class, seed)?;
    sweep_ranking(data, tap, &ranking, class, off, fractions, kind)
}

/// Sum of the `n_top_modes` most class-correlated dictionary columns.
pub fn mode_ranking(sae: &SaeModel, ccm: &CorrelationMatrix, class: usize, n_top_modes: usize) -> Result<Vec<f64>> {
    let first = top_mode_for_class(ccm, class)?;
    let mut modes = vec![first];
    if n_top_modes > 1 {
        let mut rest: Vec<(usize, f64)> = (0..ccm.rows)
            .filter(|&m| m != first)
            .filter_map(|m| ccm.get(m, class).map(|r| (m, r)))
            .collect();
        rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        modes.extend(rest.iter().take(n_top_modes - 1).map(|(m, _)| *m));
    }
    let mut ranking = vec![0.0; sae.input_dim()];
    for m in modes {
        for (r, v) in ranking.iter_mut().zip(sae.mode(m)) {
            *r += v;
        }
    }
    Ok(ranking)
}

/// Sweep over the aggregate of all modes correlating with a group mask
/// (column `group` of `ccm`) above `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn aggregated_mode_perturbation(
    data: &SweepData<'_>,
    tap: &str,
    sae: &SaeModel,
    ccm: &CorrelationMatrix,
    group: usize,
    group_labels: &[usize],
    fractions: &[f64],
    kind: PerturbKind,
    threshold: f64,
    seed: u64,
) -> Result<PerturbationReport> {
    let ranking = aggregate_class_modes(ccm, &sae.dictionary(), group, threshold)?;
    let off = pick_off_target(ccm.cols, group, seed)?;
    let grouped = SweepData {
        model: data.model,
        inputs: data.inputs,
        labels: group_labels,
    };
    sweep_ranking(&grouped, tap, &ranking, group, off, fractions, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_channel_selection() {
        assert_eq!(top_channels(&[0.1, 0.5, 0.5, 0.2], 0.5).unwrap(), vec![1, 2]);
        assert_eq!(top_channels(&[0.1, 0.5, 0.5, 0.2], 0.25).unwrap(), vec![1]);
        assert_eq!(top_channels(&[0.0; 10], 0.1).unwrap(), vec![0]);
        assert_eq!(top_channels(&[1.0; 3], 1.0).unwrap().len(), 3);
        assert!(top_channels(&[1.0], 0.0).is_err());
        assert!(top_channels(&[1.0], 1.5).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(normalized_auc(&[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0]), 1.0);
        assert!((normalized_auc(&[0.0, 1.0], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(normalized_auc(&[1.0], &[0.25]), 0.25);
    }

    #[test]
    fn off_target_differs() {
        for seed in 0..20 {
            for t in 0..4 {
                let o = pick_off_target(4, t, seed).unwrap();
                assert!(o != t && o < 4);
            }
        }
        assert!(pick_off_target(1, 0, 0).is_err());
    }
}
