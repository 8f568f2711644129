use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::error::{invalid, CodecError, Result};
use crate::nn::{ModelSpec, ParamGrads};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            lr: 3e-3,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            seed: 17,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr >= 0.0) || self.batch_size == 0 {
            return Err(invalid(format!("invalid train config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Per-sample loss and its gradient with respect to the outputs.
fn loss_and_seed(output: &Tensor, targets: &Targets, i: usize) -> (f64, Tensor) {
    match targets {
        Targets::Labels(labels) => {
            let z = output.data();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let label = labels[i];
            let seed = z
                .iter()
                .enumerate()
                .map(|(k, v)| (v - lse).exp() - if k == label { 1.0 } else { 0.0 })
                .collect();
            (lse - z[label], Tensor::from_vec(seed))
        }
        Targets::Rates(rates) => {
            let n = output.len() as f64;
            let d = output.sub(&rates[i]);
            (d.dot(&d) / n, d.scale(2.0 / n))
        }
    }
}

fn check_shapes(model: &ModelSpec, dataset: &Dataset) -> Result<()> {
    let first = dataset.inputs.first().ok_or_else(|| invalid("empty dataset"))?;
    if first.shape() != model.input_shape() {
        return Err(CodecError::Shape {
            layer: 0,
            expected: model.input_shape().to_vec(),
            got: first.shape().to_vec(),
        });
    }
    let n_out = model.n_outputs();
    let ok = match &dataset.targets {
        Targets::Labels(l) => l.iter().all(|&c| c < n_out),
        Targets::Rates(r) => r.iter().all(|t| t.len() == n_out),
    };
    if !ok {
        return Err(invalid("dataset targets do not match the model output"));
    }
    Ok(())
}

struct Adam {
    m: Vec<(Tensor, Tensor)>,
    v: Vec<(Tensor, Tensor)>,
    t: i32,
}

/// Minibatch training. Per-sample gradients may be computed in parallel but
/// are always summed in sample order, so results do not depend on the pool.
pub fn train(model: &ModelSpec, dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelSpec, TrainReport)> {
    cfg.validate()?;
    check_shapes(model, dataset)?;
    let mut model = model.clone();
    let mut rng = super::rng(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = Adam {
        m: Vec::new(),
        v: Vec::new(),
        t: 0,
    };
    for l in model.layers() {
        if let Some((w, b)) = l.params() {
            adam.m.push((Tensor::zeros(w.shape()), Tensor::zeros(b.shape())));
            adam.v.push((Tensor::zeros(w.shape()), Tensor::zeros(b.shape())));
        }
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<Result<(f64, ParamGrads)>> = batch
                .par_iter()
                .map(|&i| {
                    let trace = model.forward(&dataset.inputs[i])?;
                    let (loss, seed) = loss_and_seed(trace.output(), &dataset.targets, i);
                    Ok((loss, model.param_gradient(&trace, &seed)?))
                })
                .collect();
            let mut grads = ParamGrads::zeros_like(&model);
            let mut batch_loss = 0.0;
            for r in per_sample {
                let (loss, g) = r.map_err(|_| CodecError::Diverged { epoch })?;
                batch_loss += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(CodecError::Diverged { epoch });
            }
            epoch_loss += batch_loss;
            step(&mut model, &grads, cfg, &mut adam);
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(CodecError::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok((model, TrainReport { loss_history: history }))
}

fn step(model: &mut ModelSpec, grads: &ParamGrads, cfg: &TrainConfig, adam: &mut Adam) {
    let lr = cfg.lr;
    adam.t += 1;
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let c1 = 1.0 - b1.powi(adam.t);
    let c2 = 1.0 - b2.powi(adam.t);
    let mut slot = 0;
    model.update_params(|i, w, b| {
        let (gw, gb) = grads.layer(i).expect("parameterized layer");
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                w.axpy(-lr, gw);
                b.axpy(-lr, gb);
            }
            OptimizerKind::Adam => {
                let (mw, mb) = &mut adam.m[slot];
                let (vw, vb) = &mut adam.v[slot];
                for (p, g, m, v) in [(w, gw, mw, vw), (b, gb, mb, vb)] {
                    let pd = p.data_mut();
                    for k in 0..pd.len() {
                        let gk = g.data()[k];
                        let mk = &mut m.data_mut()[k];
                        *mk = b1 * *mk + (1.0 - b1) * gk;
                        let mk = *mk;
                        let vk = &mut v.data_mut()[k];
                        *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                        let vk = *vk;
                        pd[k] -= lr * (mk / c1) / ((vk / c2).sqrt() + eps);
                    }
                }
            }
        }
        slot += 1;
    });
}

/// Fraction of samples whose argmax output equals the label.
pub fn accuracy(model: &ModelSpec, inputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(invalid("accuracy over an empty set"));
    }
    let mut correct = 0usize;
    for (x, &l) in inputs.iter().zip(labels) {
        if model.forward(x)?.output().argmax() == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::zoo::{DatasetKind, DatasetSpec};

    fn linear_problem() -> (ModelSpec, Dataset) {
        let model = ModelSpec::new(
            vec![1, 1, 2],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    weight: Tensor::new(vec![1, 2], vec![0.5, -0.25]).unwrap(),
                    bias: Tensor::from_vec(vec![0.1]),
                },
            ],
            vec![],
        )
        .unwrap();
        let inputs = vec![
            Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap(),
            Tensor::new(vec![1, 1, 2], vec![-1.0, 0.5]).unwrap(),
        ];
        let data = Dataset {
            spec: DatasetSpec {
                kind: DatasetKind::SyntheticStimulusRegression,
                n_samples: 2,
                input_shape: vec![1, 1, 2],
                n_outputs: 1,
                seed: 0,
                noise: 0.0,
            },
            inputs,
            targets: Targets::Rates(vec![Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![0.0])]),
            ground_truth: None,
        };
        (model, data)
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let (model, data) = linear_problem();
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = TrainConfig {
                epochs: 3,
                lr: 0.0,
                batch_size: 1,
                optimizer,
                seed: 1,
            };
            let (trained, _) = train(&model, &data, &cfg).unwrap();
            assert_eq!(trained, model);
        }
    }

    #[test]
    fn one_sgd_step_matches_closed_form() {
        let (model, data) = linear_problem();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.1,
            batch_size: 2,
            optimizer: OptimizerKind::Sgd,
            seed: 1,
        };
        let (trained, _) = train(&model, &data, &cfg).unwrap();
        // residuals r = w·x + b - t: (0.5 - 0.5 + 0.1 - 1, -0.5 - 0.125 + 0.1 - 0)
        let r = [0.1 - 1.0, -0.525];
        let xs = [[1.0, 2.0], [-1.0, 0.5]];
        // dL/dw = (1/B) Σ 2 r x ; dL/db = (1/B) Σ 2 r
        let gw0 = (2.0 * r[0] * xs[0][0] + 2.0 * r[1] * xs[1][0]) / 2.0;
        let gw1 = (2.0 * r[0] * xs[0][1] + 2.0 * r[1] * xs[1][1]) / 2.0;
        let gb = (2.0 * r[0] + 2.0 * r[1]) / 2.0;
        let (w, b) = trained.layers()[1].params().unwrap();
        assert!((w.data()[0] - (0.5 - 0.1 * gw0)).abs() < 1e-14);
        assert!((w.data()[1] - (-0.25 - 0.1 * gw1)).abs() < 1e-14);
        assert!((b.data()[0] - (0.1 - 0.1 * gb)).abs() < 1e-14);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (model, data) = linear_problem();
        let cfg = TrainConfig {
            epochs: 50,
            lr: 1e3,
            batch_size: 2,
            optimizer: OptimizerKind::Sgd,
            seed: 1,
        };
        match train(&model, &data, &cfg) {
            Err(CodecError::Diverged { epoch }) => assert!(epoch > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (model, data) = linear_problem();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train(&model, &data, &cfg).is_err());
    }
}
