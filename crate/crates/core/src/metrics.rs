//! Per-channel aggregation and layerwise statistics.
//!
//! Matrices are [`Tensor`]s of rank 2 with one row per input.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::contrib::{Algorithm, ContributionTensor, TargetSpec};
use crate::error::{invalid, CodecError, Result};
use crate::tensor::Tensor;
use crate::zoo::format::Envelope;

/// Sum `t` over `axes`, keeping the remaining axes in order.
///
/// Axis 0 is the channel axis and may not be reduced.
pub fn channel_sum(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    reduce(t, axes, |v| v)
}

/// Reduce over every axis except the channel axis.
pub fn spatial_sum(t: &Tensor) -> Tensor {
    let axes: Vec<usize> = (1..t.ndim()).collect();
    channel_sum(t, &axes).expect("spatial axes are valid")
}

/// Positive and negative parts, split per location before summation.
pub fn ei_split_sum(t: &Tensor, axes: &[usize]) -> Result<(Tensor, Tensor)> {
    Ok((reduce(t, axes, |v| v.max(0.0))?, reduce(t, axes, |v| v.min(0.0))?))
}

fn reduce(t: &Tensor, axes: &[usize], f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let nd = t.ndim();
    let mut reduced = vec![false; nd];
    for &a in axes {
        if a == 0 {
            return Err(invalid("axis 0 is the channel axis and cannot be reduced"));
        }
        if a >= nd {
            return Err(invalid(format!("axis {a} out of range for rank {nd}")));
        }
        reduced[a] = true;
    }
    let shape = t.shape();
    let out_shape: Vec<usize> = (0..nd).filter(|&a| !reduced[a]).map(|a| shape[a]).collect();
    let mut out = vec![0.0; out_shape.iter().product()];
    // out_stride[a] is the output stride of input axis a (0 when reduced)
    let mut out_stride = vec![0usize; nd];
    let mut s = 1;
    for a in (0..nd).rev() {
        if !reduced[a] {
            out_stride[a] = s;
            s *= shape[a];
        }
    }
    let mut idx = vec![0usize; nd];
    for &v in t.data() {
        let o: usize = idx.iter().zip(&out_stride).map(|(i, s)| i * s).sum();
        out[o] += f(v);
        for a in (0..nd).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

/// Normalized L1/L2 sparsity of `|v|`: 0 for a constant vector, 1 for one-hot.
pub fn hoyer_sparsity(v: &[f64]) -> Result<f64> {
    let n = v.len();
    if n < 2 {
        return Err(invalid("hoyer sparsity needs at least two entries"));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 || !l2.is_finite() {
        return Err(CodecError::Degenerate("all-zero vector has no sparsity".into()));
    }
    let rn = (n as f64).sqrt();
    Ok(((rn - l1 / l2) / (rn - 1.0)).clamp(0.0, 1.0))
}

/// Mean Hoyer sparsity over the rows of `m`, skipping all-zero rows.
///
/// Returns the mean and the number of rows skipped.
pub fn mean_row_hoyer(m: &Tensor) -> Result<(f64, usize)> {
    let (n, d) = dims(m)?;
    let mut sum = 0.0;
    let mut used = 0;
    for r in 0..n {
        match hoyer_sparsity(&m.data()[r * d..(r + 1) * d]) {
            Ok(h) => {
                sum += h;
                used += 1;
            }
            Err(CodecError::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(CodecError::Degenerate("every row is all-zero".into()));
    }
    if used < n {
        log::warn!("{} of {n} rows are all-zero and were excluded", n - used);
    }
    Ok((sum / used as f64, n - used))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid(format!("pearson needs two equal-length vectors of ≥ 2 entries, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CodecError::Degenerate("zero-variance vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn dims(m: &Tensor) -> Result<(usize, usize)> {
    match *m.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(invalid(format!("expected a matrix, got shape {:?}", m.shape()))),
    }
}

fn column_means(m: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = dims(m)?;
    let mut out = vec![0.0; d];
    for row in m.data().chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// Pearson r across channels between the mean positive sum and the mean
/// magnitude of the negative sum.
pub fn pos_neg_correlation(pos: &Tensor, neg: &Tensor) -> Result<f64> {
    if pos.shape() != neg.shape() {
        return Err(invalid(format!("shape mismatch {:?} vs {:?}", pos.shape(), neg.shape())));
    }
    let p = column_means(pos)?;
    let q: Vec<f64> = column_means(neg)?.iter().map(|v| v.abs()).collect();
    pearson(&p, &q)
}

/// Per-class mean rows. Classes with no rows are omitted; the returned
/// vector lists the class of each output row.
pub fn class_average(m: &Tensor, labels: &[usize], n_classes: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, d) = dims(m)?;
    if labels.len() != n {
        return Err(invalid(format!("{} labels for {n} rows", labels.len())));
    }
    let mut sums = vec![0.0; n_classes * d];
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in m.data().chunks_exact(d).zip(labels) {
        if c >= n_classes {
            return Err(invalid(format!("label {c} out of range for {n_classes} classes")));
        }
        counts[c] += 1;
        for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut data = Vec::new();
    let mut present = Vec::new();
    for c in 0..n_classes {
        if counts[c] == 0 {
            log::warn!("class {c} has no samples and is excluded from the class average");
            continue;
        }
        present.push(c);
        data.extend(sums[c * d..(c + 1) * d].iter().map(|s| s / counts[c] as f64));
    }
    if present.is_empty() {
        return Err(CodecError::Degenerate("no class has samples".into()));
    }
    Ok((Tensor::new(vec![present.len(), d], data)?, present))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Explained-variance fractions, descending.
    pub fractions: Vec<f64>,
    pub n_components_95: usize,
}

/// PCA spectrum of the mean-centered rows of `m`.
pub fn foev(m: &Tensor) -> Result<SpectrumReport> {
    let (n, d) = dims(m)?;
    if n < 2 {
        return Err(invalid("foev needs at least two rows"));
    }
    let mean = column_means(m)?;
    let centered = DMatrix::from_fn(n, d, |r, c| m.data()[r * d + c] - mean[c]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = vals.iter().sum();
    // variance at rounding level of the raw magnitudes counts as rank 0
    let raw = m.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(total > 1e-24 * raw) {
        return Err(CodecError::Degenerate("rank-0 matrix has no spectrum".into()));
    }
    let fractions: Vec<f64> = vals.iter().map(|v| v / total).collect();
    let mut cum = 0.0;
    let mut n95 = fractions.len();
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        if cum >= 0.95 - 1e-12 {
            n95 = i + 1;
            break;
        }
    }
    Ok(SpectrumReport {
        fractions,
        n_components_95: n95,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    #[default]
    Net,
    Positive,
    Negative,
    /// Positive columns followed by negative columns.
    ConcatPosNeg,
}

impl std::str::FromStr for SignMode {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "net" => Ok(SignMode::Net),
            "positive" | "pos" => Ok(SignMode::Positive),
            "negative" | "neg" => Ok(SignMode::Negative),
            "concat-pos-neg" | "concat" => Ok(SignMode::ConcatPosNeg),
            other => Err(invalid(format!("unknown sign mode `{other}`"))),
        }
    }
}

/// Inputs × channels matrix of spatially summed values.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelContributionMatrix {
    pub tap: String,
    /// `None` for activation matrices.
    pub algorithm: Option<Algorithm>,
    pub target: Option<TargetSpec>,
    pub sign_mode: SignMode,
    pub values: Tensor,
}

fn sign_row(t: &Tensor, mode: SignMode) -> Vec<f64> {
    let axes: Vec<usize> = (1..t.ndim()).collect();
    let (pos, neg) = ei_split_sum(t, &axes).expect("spatial axes are valid");
    match mode {
        SignMode::Net => pos.add(&neg).into_data(),
        SignMode::Positive => pos.into_data(),
        SignMode::Negative => neg.into_data(),
        SignMode::ConcatPosNeg => pos.data().iter().chain(neg.data()).copied().collect(),
    }
}

fn stack_rows(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    let d = rows.first().map(Vec::len).ok_or_else(|| invalid("no rows"))?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(invalid("rows differ in length"));
    }
    Tensor::new(vec![n, d], rows.concat())
}

impl ChannelContributionMatrix {
    pub fn from_contributions(cts: &[ContributionTensor], mode: SignMode) -> Result<Self> {
        let first = cts.first().ok_or_else(|| invalid("no contribution tensors"))?;
        if let Some(bad) = cts.iter().find(|c| c.tap != first.tap || c.algorithm != first.algorithm) {
            return Err(invalid(format!("mixed taps/algorithms: {} vs {}", first.tap, bad.tap)));
        }
        Ok(ChannelContributionMatrix {
            tap: first.tap.clone(),
            algorithm: Some(first.algorithm),
            target: Some(first.target.clone()),
            sign_mode: mode,
            values: stack_rows(cts.iter().map(|c| sign_row(&c.values, mode)).collect())?,
        })
    }

    /// Spatially summed activations at `tap`.
    pub fn from_activations(tap: &str, acts: &[Tensor], mode: SignMode) -> Result<Self> {
        Ok(ChannelContributionMatrix {
            tap: tap.to_string(),
            algorithm: None,
            target: None,
            sign_mode: mode,
            values: stack_rows(acts.iter().map(|a| sign_row(a, mode)).collect())?,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_columns(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_columns();
        &self.values.data()[i * d..(i + 1) * d]
    }

    pub fn to_envelope(&self) -> Envelope {
        let mut env = Envelope::new("channel-matrix");
        let h = env.header.as_object_mut().expect("object");
        h.insert("tap".into(), json!(self.tap));
        h.insert("algorithm".into(), json!(self.algorithm));
        h.insert("target".into(), json!(self.target));
        h.insert("sign_mode".into(), json!(self.sign_mode));
        env.push("values", self.values.clone());
        env
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        let h = &env.header;
        let field = |k: &str| h.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let values = env.block("values")?.clone();
        dims(&values).map_err(|_| CodecError::Format("values block is not a matrix".into()))?;
        Ok(ChannelContributionMatrix {
            tap: serde_json::from_value(field("tap"))?,
            algorithm: serde_json::from_value(field("algorithm"))?,
            target: serde_json::from_value(field("target"))?,
            sign_mode: serde_json::from_value(field("sign_mode"))?,
            values,
        })
    }
}
