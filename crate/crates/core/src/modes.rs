//! Relating modes to class labels and to model outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CodecError, Result};
use crate::metrics::pearson;
use crate::nn::ModelSpec;
use crate::tensor::Tensor;

/// Row × column Pearson correlations; `None` marks a zero-variance pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Option<f64>] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Dense copy with degenerate entries replaced by `fill`.
    pub fn to_dense(&self, fill: f64) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.values.iter().map(|v| v.unwrap_or(fill)).collect()).expect("shape")
    }

    pub fn n_degenerate(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// CSV with one line per row; degenerate entries are written as `degenerate`.
    pub fn to_csv(&self, row_name: &str, col_name: &str) -> String {
        let mut s = format!("# schema: {row_name},{col_name}_0..{col_name}_{} (pearson r)\n", self.cols.saturating_sub(1));
        for r in 0..self.rows {
            s.push_str(&r.to_string());
            for v in self.row(r) {
                match v {
                    Some(x) => s.push_str(&format!(",{x:.17e}")),
                    None => s.push_str(",degenerate"),
                }
            }
            s.push('\n');
        }
        s
    }
}

fn columns(m: &Tensor) -> Result<Vec<Vec<f64>>> {
    let [n, d] = *m.shape() else {
        return Err(invalid(format!("expected a matrix, got shape {:?}", m.shape())));
    };
    Ok((0..d).map(|j| (0..n).map(|i| m.data()[i * d + j]).collect()).collect())
}

/// Pearson r between every column of `a` (rows of the result) and every
/// column of `b`.
pub fn column_correlations(a: &Tensor, b: &Tensor) -> Result<CorrelationMatrix> {
    if a.shape().first() != b.shape().first() {
        return Err(invalid(format!("row counts differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ca, cb) = (columns(a)?, columns(b)?);
    let mut values = Vec::with_capacity(ca.len() * cb.len());
    for x in &ca {
        for y in &cb {
            values.push(match pearson(x, y) {
                Ok(r) => Some(r),
                Err(CodecError::Degenerate(_)) => None,
                Err(e) => return Err(e),
            });
        }
    }
    Ok(CorrelationMatrix {
        rows: ca.len(),
        cols: cb.len(),
        values,
    })
}

/// `n × C` binary indicator matrix.
pub fn class_masks(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= n_classes {
            return Err(invalid(format!("label {c} out of range for {n_classes} classes")));
        }
        data[i * n_classes + c] = 1.0;
    }
    Tensor::new(vec![labels.len(), n_classes], data)
}

/// Masks over groups of classes; column `g` marks rows whose label is in `groups[g]`.
pub fn group_masks(labels: &[usize], groups: &[Vec<usize>]) -> Result<Tensor> {
    if groups.is_empty() {
        return Err(invalid("no groups"));
    }
    let g = groups.len();
    let mut data = vec![0.0; labels.len() * g];
    for (i, l) in labels.iter().enumerate() {
        for (j, members) in groups.iter().enumerate() {
            if members.contains(l) {
                data[i * g + j] = 1.0;
            }
        }
    }
    Tensor::new(vec![labels.len(), g], data)
}

/// `k × C` correlations between loading columns and class masks.
pub fn class_correlations(loadings: &Tensor, masks: &Tensor) -> Result<CorrelationMatrix> {
    column_correlations(loadings, masks)
}

/// Mode with the highest correlation to `class`; ties go to the lower index.
pub fn top_mode_for_class(ccm: &CorrelationMatrix, class: usize) -> Result<usize> {
    if class >= ccm.cols {
        return Err(invalid(format!("class {class} out of range for {} classes", ccm.cols)));
    }
    let mut best: Option<(usize, f64)> = None;
    for m in 0..ccm.rows {
        if let Some(r) = ccm.get(m, class) {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((m, r));
            }
        }
    }
    best.map(|(m, _)| m)
        .ok_or_else(|| CodecError::Degenerate(format!("no mode has a defined correlation with class {class}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxCorrStats {
    /// Per row, the maximum |r| over columns; `None` if every entry is degenerate.
    pub max_abs: Vec<Option<f64>>,
    /// Mean over rows with a defined maximum.
    pub mean: f64,
    pub n_above: usize,
    pub threshold: f64,
    /// Ten equal bins over [0, 1].
    pub histogram: [usize; 10],
}

pub fn max_class_corr_stats(ccm: &CorrelationMatrix, threshold: f64) -> Result<MaxCorrStats> {
    if ccm.rows == 0 || ccm.cols == 0 {
        return Err(invalid("empty correlation matrix"));
    }
    let max_abs: Vec<Option<f64>> = (0..ccm.rows)
        .map(|r| ccm.row(r).iter().flatten().map(|v| v.abs()).reduce(f64::max))
        .collect();
    let defined: Vec<f64> = max_abs.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(CodecError::Degenerate("every row is degenerate".into()));
    }
    let mut histogram = [0usize; 10];
    for v in &defined {
        histogram[((v * 10.0) as usize).min(9)] += 1;
    }
    Ok(MaxCorrStats {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        n_above: defined.iter().filter(|&&v| v > threshold).count(),
        max_abs,
        threshold,
        histogram,
    })
}

/// Sum of the dictionary columns whose correlation with `class` exceeds
/// `threshold`, or the top-correlated column if none does.
pub fn aggregate_class_modes(ccm: &CorrelationMatrix, dictionary: &Tensor, class: usize, threshold: f64) -> Result<Vec<f64>> {
    let [d, k] = *dictionary.shape() else {
        return Err(invalid("dictionary must be a d × k matrix"));
    };
    if k != ccm.rows {
        return Err(invalid(format!("dictionary has {k} modes, correlations cover {}", ccm.rows)));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let top = top_mode_for_class(ccm, class)?;
    let mut chosen: Vec<usize> = (0..k).filter(|&m| ccm.get(m, class).is_some_and(|r| r > threshold)).collect();
    if chosen.is_empty() {
        chosen.push(top);
    }
    let mut out = vec![0.0; d];
    for m in chosen {
        for (i, o) in out.iter_mut().enumerate() {
            *o += dictionary.data()[i * k + m];
        }
    }
    Ok(out)
}

/// `cells × modes` correlations between output rates and mode loadings.
pub fn mode_firing_correlation(loadings: &Tensor, rates: &Tensor) -> Result<CorrelationMatrix> {
    column_correlations(rates, loadings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub assignments: Vec<usize>,
    pub k: usize,
    /// `(k, mean silhouette)` per candidate.
    pub silhouettes: Vec<(usize, f64)>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn points(m: &Tensor) -> Result<Vec<&[f64]>> {
    let [n, d] = *m.shape() else {
        return Err(invalid(format!("expected a matrix, got shape {:?}", m.shape())));
    };
    Ok((0..n).map(|i| &m.data()[i * d..(i + 1) * d]).collect())
}

/// Lloyd's k-means with k-means++ seeding; keeps the lowest-inertia run.
pub fn kmeans(m: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    let pts = points(m)?;
    let n = pts.len();
    if k == 0 || k > n {
        return Err(invalid(format!("k = {k} is invalid for {n} points")));
    }
    let d = m.shape()[1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers: Vec<Vec<f64>> = vec![pts[rng.random_range(0..n)].to_vec()];
        while centers.len() < k {
            let w: Vec<f64> = pts
                .iter()
                .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = w.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random_range(0.0..total);
                let mut idx = n - 1;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        idx = i;
                        break;
                    }
                    u -= wi;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centers.push(pts[next].to_vec());
        }
        let mut assign = vec![usize::MAX; n];
        for _ in 0..300 {
            let mut changed = false;
            for (i, p) in pts.iter().enumerate() {
                let mut bj = 0;
                let mut bd = f64::INFINITY;
                for (j, c) in centers.iter().enumerate() {
                    let dist = sq_dist(p, c);
                    if dist < bd {
                        bd = dist;
                        bj = j;
                    }
                }
                if assign[i] != bj {
                    assign[i] = bj;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in pts.iter().zip(&assign) {
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                    *s += v;
                }
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                }
            }
        }
        let inertia: f64 = pts.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((assign, inertia));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette with Euclidean distance; singleton clusters score 0.
pub fn silhouette(m: &Tensor, labels: &[usize]) -> Result<f64> {
    let pts = points(m)?;
    let n = pts.len();
    if labels.len() != n {
        return Err(invalid("one label per point is required"));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(CodecError::Degenerate("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += sq_dist(pts[i], pts[j]).sqrt();
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        total += s;
    }
    Ok(total / n as f64)
}

pub const KMEANS_RESTARTS: usize = 16;

/// Cluster the rows of `m` for every candidate `k` and keep the one with the
/// highest mean silhouette (lowest `k` on ties).
pub fn cluster_cells(m: &Tensor, k_candidates: &[usize], seed: u64) -> Result<ClusterReport> {
    let pts = points(m)?;
    let n = pts.len();
    if n < 2 {
        return Err(invalid("clustering needs at least two cells"));
    }
    if pts.iter().all(|p| *p == pts[0]) {
        return Err(CodecError::Degenerate("every row is identical".into()));
    }
    if k_candidates.is_empty() || k_candidates.iter().any(|&k| k < 2 || k >= n.max(3)) {
        return Err(invalid(format!("k candidates {k_candidates:?} must lie in [2, {}]", n.max(3) - 1)));
    }
    let mut best: Option<ClusterReport> = None;
    let mut silhouettes = Vec::new();
    for &k in k_candidates {
        let (assign, inertia) = kmeans(m, k, KMEANS_RESTARTS, seed)?;
        let s = silhouette(m, &assign).unwrap_or(-1.0);
        silhouettes.push((k, s));
        if best.as_ref().is_none_or(|b| s > b.silhouettes.last().map_or(f64::NEG_INFINITY, |x| x.1)) {
            best = Some(ClusterReport {
                assignments: assign,
                k,
                silhouettes: vec![(k, s)],
                inertia,
            });
        }
    }
    let mut report = best.expect("non-empty candidates");
    report.silhouettes = silhouettes;
    Ok(report)
}

/// Adjusted Rand index between two partitions.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid("partitions must be non-empty and equally long"));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let sum_ij: f64 = table.iter().map(|&v| c2(v)).sum();
    let sum_a: f64 = (0..ka).map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_a * sum_b / total.max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(if sum_ij == expected { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max - expected))
}

/// Gradient of output `cell` with respect to the stimulus at `time_index`.
pub fn instantaneous_rf(model: &ModelSpec, stimuli: &[Tensor], cell: usize, time_index: usize) -> Result<Tensor> {
    let n = model.n_outputs();
    if cell >= n {
        return Err(invalid(format!("cell {cell} out of range for {n} outputs")));
    }
    let stimulus = stimuli
        .get(time_index)
        .ok_or_else(|| invalid(format!("time index {time_index} out of range for {} stimuli", stimuli.len())))?;
    let seed = Tensor::one_hot(n, cell).reshape(model.output_shape())?;
    model.grad_wrt_input(stimulus, &seed, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEvent {
    pub time: usize,
    pub modes: Vec<usize>,
    pub cell: usize,
}

/// Times where at most `max_active` modes have nonzero loading while a cell's
/// rate exceeds `min_rate`; one event per qualifying cell.
pub fn sparse_mode_events(loadings: &Tensor, rates: &Tensor, max_active: usize, min_rate: f64) -> Result<Vec<ModeEvent>> {
    let (&[n, k], &[nr, cells]) = (loadings.shape(), rates.shape()) else {
        return Err(invalid("loadings and rates must be matrices"));
    };
    if n != nr {
        return Err(invalid(format!("{n} loading rows vs {nr} rate rows")));
    }
    let mut events = Vec::new();
    for t in 0..n {
        let modes: Vec<usize> = (0..k).filter(|&j| loadings.data()[t * k + j] > 0.0).collect();
        if modes.is_empty() || modes.len() > max_active {
            continue;
        }
        for cell in 0..cells {
            if rates.data()[t * cells + cell] > min_rate {
                events.push(ModeEvent {
                    time: t,
                    modes: modes.clone(),
                    cell,
                });
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn mat(n: usize, d: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(vec![n, d], v).unwrap()
    }

    #[test]
    fn correlation_with_self_and_complement() {
        let labels = [0, 1, 1, 0, 2, 2, 0, 1];
        let masks = class_masks(&labels, 3).unwrap();
        let ccm = class_correlations(&masks, &masks).unwrap();
        for c in 0..3 {
            assert!((ccm.get(c, c).unwrap() - 1.0).abs() < 1e-12);
        }
        let comp = masks.map(|v| 1.0 - v);
        let flipped = class_correlations(&masks, &comp).unwrap();
        for i in 0..9 {
            assert!((flipped.values[i].unwrap() + ccm.values[i].unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_loading_is_degenerate() {
        let masks = class_masks(&[0, 1, 0, 1], 2).unwrap();
        let loadings = mat(4, 2, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let ccm = class_correlations(&loadings, &masks).unwrap();
        assert_eq!(ccm.get(0, 0), None);
        assert_eq!(top_mode_for_class(&ccm, 0).unwrap(), 1);
        assert!(ccm.to_csv("mode", "class").contains("degenerate"));
    }

    #[test]
    fn argmax_and_stats() {
        let ccm = CorrelationMatrix {
            rows: 2,
            cols: 2,
            values: vec![Some(0.1), Some(-0.5), Some(0.3), Some(0.3)],
        };
        assert_eq!(top_mode_for_class(&ccm, 0).unwrap(), 1);
        assert_eq!(top_mode_for_class(&ccm, 1).unwrap(), 1);
        let single = CorrelationMatrix {
            rows: 1,
            cols: 1,
            values: vec![Some(-0.2)],
        };
        assert_eq!(top_mode_for_class(&single, 0).unwrap(), 0);
        let s = max_class_corr_stats(&ccm, 0.2).unwrap();
        assert_eq!(s.max_abs, vec![Some(0.5), Some(0.3)]);
        assert_eq!(s.n_above, 2);
        assert!((s.mean - 0.4).abs() < 1e-12);
    }

    #[test]
    fn aggregation_rules() {
        let dict = mat(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ccm = CorrelationMatrix {
            rows: 3,
            cols: 1,
            values: vec![Some(0.5), Some(0.1), Some(0.15)],
        };
        assert_eq!(aggregate_class_modes(&ccm, &dict, 0, 0.2).unwrap(), vec![1.0, 4.0]);
        assert_eq!(aggregate_class_modes(&ccm, &dict, 0, 0.6).unwrap(), vec![1.0, 4.0]);
        assert_eq!(aggregate_class_modes(&ccm, &dict, 0, 0.12).unwrap(), vec![4.0, 10.0]);
    }

    #[test]
    fn firing_correlation_identity_and_negation() {
        let l = mat(5, 1, vec![0.0, 1.0, 0.9, 0.0, 0.95]);
        let r = mat(5, 2, vec![0.0, 1.0, 1.0, 2.0, 0.9, 0.5, 0.0, 0.1, 0.95, 3.0]);
        let c = mode_firing_correlation(&l, &r).unwrap();
        assert_eq!((c.rows, c.cols), (2, 1));
        assert!((c.get(0, 0).unwrap() - 1.0).abs() < 1e-12);
        let neg = mode_firing_correlation(&l, &r.scale(-1.0)).unwrap();
        assert!((neg.get(1, 0).unwrap() + c.get(1, 0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            truth.push(c);
            let centre = if c == 0 { -1.0 } else { 1.0 };
            for _ in 0..3 {
                data.push(centre + noise.sample(&mut rng));
            }
        }
        let m = mat(40, 3, data);
        let report = cluster_cells(&m, &[2, 3, 4, 5], 0).unwrap();
        assert_eq!(report.k, 2);
        assert_eq!(adjusted_rand_index(&report.assignments, &truth).unwrap(), 1.0);
        let best = report.silhouettes.iter().find(|s| s.0 == 2).unwrap().1;
        assert!(report.silhouettes.iter().all(|s| s.1 <= best));
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(v < 0.0);
    }

    #[test]
    fn events_filter() {
        let l = mat(3, 2, vec![0.0, 0.0, 0.95, 0.0, 0.92, 0.91]);
        let r = mat(3, 1, vec![5.0, 5.0, 5.0]);
        assert_eq!(sparse_mode_events(&l, &r, 1, 1.0).unwrap().len(), 1);
        assert_eq!(sparse_mode_events(&l, &r, 2, 1.0).unwrap().len(), 2);
        assert!(sparse_mode_events(&l.scale(0.0), &r, 2, 1.0).unwrap().is_empty());
    }
}
