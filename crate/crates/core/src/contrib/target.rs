//! Scalar contribution targets over model outputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    Top1Logit,
    TopkLogitSum { k: usize },
    /// Entropy of the softmax distribution over the outputs (always taken on
    /// the softmax, independent of `softmax_first`).
    Entropy,
    /// Top-1 minus top-2 output.
    Contrastive,
    SingleOutput { index: usize },
    /// Mahalanobis distance `(y-μ)ᵀ Σ⁻¹ (y-μ)`; `covariance` is row-major n×n.
    Surprisal { mean: Vec<f64>, covariance: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub kind: TargetKind,
    #[serde(default)]
    pub softmax_first: bool,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::top1()
    }
}

impl TargetSpec {
    pub fn top1() -> Self {
        TargetSpec {
            kind: TargetKind::Top1Logit,
            softmax_first: false,
        }
    }

    pub fn new(kind: TargetKind) -> Self {
        TargetSpec {
            kind,
            softmax_first: false,
        }
    }

    pub fn with_softmax(mut self) -> Self {
        self.softmax_first = true;
        self
    }

    pub fn surprisal(mean: &Tensor, covariance: &Tensor) -> Result<Self> {
        let n = mean.len();
        if covariance.len() != n * n {
            return Err(CodecError::Target(format!(
                "covariance has {} entries, expected {}",
                covariance.len(),
                n * n
            )));
        }
        let spec = TargetSpec::new(TargetKind::Surprisal {
            mean: mean.data().to_vec(),
            covariance: covariance.data().to_vec(),
        });
        // validates symmetry and positive-definiteness
        spec.resolve(mean)?;
        Ok(spec)
    }

    /// Estimates μ and Σ from a set of output vectors and returns the
    /// surprisal target. A ridge of `1e-6 · trace(Σ) / n` is added to the
    /// diagonal.
    pub fn estimate_surprisal(outputs: &[Tensor]) -> Result<Self> {
        if outputs.len() < 2 {
            return Err(CodecError::Target("need at least two outputs to estimate Σ".into()));
        }
        let n = outputs[0].len();
        let count = outputs.len() as f64;
        let mut mean = vec![0.0; n];
        for o in outputs {
            for (m, v) in mean.iter_mut().zip(o.data()) {
                *m += v / count;
            }
        }
        let mut cov = vec![0.0; n * n];
        for o in outputs {
            let d: Vec<f64> = o.data().iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..n {
                for j in 0..n {
                    cov[i * n + j] += d[i] * d[j] / (count - 1.0);
                }
            }
        }
        let trace: f64 = (0..n).map(|i| cov[i * n + i]).sum();
        let ridge = 1e-6 * trace / n as f64;
        for i in 0..n {
            cov[i * n + i] += ridge;
        }
        TargetSpec::surprisal(&Tensor::from_vec(mean), &Tensor::new(vec![n, n], cov)?)
    }

    /// Fixes any input-dependent choices (which logits are top-k) at the
    /// given outputs. The resolved target is a smooth function of the outputs.
    pub fn resolve(&self, outputs: &Tensor) -> Result<ResolvedTarget> {
        if outputs.ndim() != 1 {
            return Err(CodecError::Target(format!(
                "outputs must be a vector, got shape {:?}",
                outputs.shape()
            )));
        }
        let n = outputs.len();
        let ranked = || {
            let mut idx: Vec<usize> = (0..n).collect();
            // stable sort keeps lowest index first among ties
            idx.sort_by(|&a, &b| outputs.data()[b].total_cmp(&outputs.data()[a]));
            idx
        };
        let form = match &self.kind {
            TargetKind::Top1Logit => Form::Linear(vec![(outputs.argmax(), 1.0)]),
            TargetKind::TopkLogitSum { k } => {
                if *k == 0 || *k > n {
                    return Err(CodecError::Target(format!("top-k needs 1 <= k <= {n}, got {k}")));
                }
                Form::Linear(ranked().into_iter().take(*k).map(|i| (i, 1.0)).collect())
            }
            TargetKind::Contrastive => {
                if n < 2 {
                    return Err(CodecError::Target("contrastive target needs two outputs".into()));
                }
                let r = ranked();
                Form::Linear(vec![(r[0], 1.0), (r[1], -1.0)])
            }
            TargetKind::SingleOutput { index } => {
                if *index >= n {
                    return Err(CodecError::Target(format!("output index {index} out of range {n}")));
                }
                Form::Linear(vec![(*index, 1.0)])
            }
            TargetKind::Entropy => Form::Entropy,
            TargetKind::Surprisal { mean, covariance } => {
                if mean.len() != n || covariance.len() != n * n {
                    return Err(CodecError::Target(format!(
                        "surprisal parameters sized for {} outputs, model has {n}",
                        mean.len()
                    )));
                }
                let sigma = DMatrix::from_row_slice(n, n, covariance);
                let asym = (&sigma - sigma.transpose()).abs().max();
                if asym > 1e-12 * sigma.abs().max().max(1.0) {
                    return Err(CodecError::Target("covariance is not symmetric".into()));
                }
                let chol = sigma
                    .cholesky()
                    .ok_or_else(|| CodecError::Target("covariance is not positive-definite".into()))?;
                Form::Surprisal {
                    mean: DVector::from_column_slice(mean),
                    precision: chol.inverse(),
                }
            }
        };
        Ok(ResolvedTarget {
            form,
            softmax_first: self.softmax_first && !matches!(self.kind, TargetKind::Entropy),
        })
    }
}

#[derive(Clone, Debug)]
enum Form {
    Linear(Vec<(usize, f64)>),
    Entropy,
    Surprisal {
        mean: DVector<f64>,
        precision: DMatrix<f64>,
    },
}

/// A target with its input-dependent choices fixed; differentiable in the outputs.
#[derive(Clone, Debug)]
pub struct ResolvedTarget {
    form: Form,
    softmax_first: bool,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl ResolvedTarget {
    pub fn value(&self, outputs: &Tensor) -> f64 {
        self.value_and_seed(outputs).0
    }

    /// Target value and its gradient with respect to the outputs.
    pub fn value_and_seed(&self, outputs: &Tensor) -> (f64, Tensor) {
        let z = outputs.data();
        if self.softmax_first {
            let p: Vec<f64> = log_softmax(z).into_iter().map(f64::exp).collect();
            let (v, gp) = self.eval_form(&p);
            let pg: f64 = p.iter().zip(&gp).map(|(a, b)| a * b).sum();
            let seed = p.iter().zip(&gp).map(|(pi, gi)| pi * (gi - pg)).collect();
            (v, Tensor::from_vec(seed))
        } else {
            let (v, g) = self.eval_form(z);
            (v, Tensor::from_vec(g))
        }
    }

    fn eval_form(&self, z: &[f64]) -> (f64, Vec<f64>) {
        match &self.form {
            Form::Linear(terms) => {
                let mut g = vec![0.0; z.len()];
                let mut v = 0.0;
                for &(i, s) in terms {
                    v += s * z[i];
                    g[i] += s;
                }
                (v, g)
            }
            Form::Entropy => {
                let lp = log_softmax(z);
                let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                let h: f64 = -p.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>();
                let g = p.iter().zip(&lp).map(|(pi, lpi)| -pi * (lpi + h)).collect();
                (h, g)
            }
            Form::Surprisal { mean, precision } => {
                let d = DVector::from_column_slice(z) - mean;
                let pd = precision * &d;
                (d.dot(&pd), (pd * 2.0).iter().copied().collect())
            }
        }
    }
}

/// Target value and backward seed for a vector of outputs.
pub fn eval_target(outputs: &Tensor, target: &TargetSpec) -> Result<(f64, Tensor)> {
    Ok(target.resolve(outputs)?.value_and_seed(outputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_seed(target: &TargetSpec, z: &Tensor) -> Vec<f64> {
        let r = target.resolve(z).unwrap();
        let h = 1e-6;
        (0..z.len())
            .map(|i| {
                let mut up = z.clone();
                up.data_mut()[i] += h;
                let mut dn = z.clone();
                dn.data_mut()[i] -= h;
                (r.value(&up) - r.value(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn top1_picks_argmax() {
        let (v, s) = eval_target(&Tensor::from_vec(vec![1.0, 3.0, 2.0]), &TargetSpec::top1()).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(s.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn top1_ties_break_low() {
        let (_, s) = eval_target(&Tensor::from_vec(vec![2.0, 2.0]), &TargetSpec::top1()).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn uniform_entropy_is_ln_n() {
        let (v, s) = eval_target(&Tensor::from_vec(vec![0.7; 4]), &TargetSpec::new(TargetKind::Entropy)).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        assert!(s.max_abs() < 1e-15);
    }

    #[test]
    fn surprisal_identity_covariance() {
        let t = TargetSpec::surprisal(&Tensor::zeros(&[2]), &Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let (v, s) = eval_target(&Tensor::from_vec(vec![3.0, 4.0]), &t).unwrap();
        assert!((v - 25.0).abs() < 1e-12);
        assert!((s.data()[0] - 6.0).abs() < 1e-12 && (s.data()[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let z = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(eval_target(&z, &TargetSpec::new(TargetKind::TopkLogitSum { k: 3 })).is_err());
        assert!(eval_target(&z, &TargetSpec::new(TargetKind::TopkLogitSum { k: 0 })).is_err());
        let not_pd = Tensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(TargetSpec::surprisal(&Tensor::zeros(&[2]), &not_pd).is_err());
        let asym = Tensor::new(vec![2, 2], vec![2.0, 0.5, 0.0, 2.0]).unwrap();
        assert!(TargetSpec::surprisal(&Tensor::zeros(&[2]), &asym).is_err());
        assert!(eval_target(&Tensor::zeros(&[2, 1]), &TargetSpec::top1()).is_err());
    }

    #[test]
    fn contrastive_and_topk_values() {
        let z = Tensor::from_vec(vec![0.5, 4.0, -1.0, 2.5]);
        let (v, s) = eval_target(&z, &TargetSpec::new(TargetKind::Contrastive)).unwrap();
        assert_eq!(v, 1.5);
        assert_eq!(s.data(), &[0.0, 1.0, 0.0, -1.0]);
        let (v, _) = eval_target(&z, &TargetSpec::new(TargetKind::TopkLogitSum { k: 2 })).unwrap();
        assert_eq!(v, 6.5);
    }

    #[test]
    fn seeds_match_finite_differences() {
        let z = Tensor::from_vec(vec![0.3, -1.2, 2.1, 0.8, -0.4]);
        let cov = Tensor::new(
            vec![5, 5],
            (0..25)
                .map(|i| {
                    let (r, c) = (i / 5, i % 5);
                    if r == c { 2.0 } else { 0.3 / (1.0 + (r as f64 - c as f64).abs()) }
                })
                .collect(),
        )
        .unwrap();
        let targets = vec![
            TargetSpec::top1(),
            TargetSpec::top1().with_softmax(),
            TargetSpec::new(TargetKind::TopkLogitSum { k: 3 }),
            TargetSpec::new(TargetKind::TopkLogitSum { k: 2 }).with_softmax(),
            TargetSpec::new(TargetKind::Entropy),
            TargetSpec::new(TargetKind::Contrastive),
            TargetSpec::new(TargetKind::SingleOutput { index: 4 }),
            TargetSpec::surprisal(&Tensor::from_vec(vec![0.1; 5]), &cov).unwrap(),
        ];
        for t in &targets {
            let (_, seed) = eval_target(&z, t).unwrap();
            let fd = fd_seed(t, &z);
            for (a, b) in seed.data().iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{t:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn estimated_surprisal_is_pd() {
        let outs: Vec<Tensor> = (0..10).map(|i| Tensor::from_vec(vec![i as f64, 2.0 * i as f64])).collect();
        // perfectly collinear outputs are rescued by the ridge
        assert!(TargetSpec::estimate_surprisal(&outs).is_ok());
    }
}
