use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{LayerSpec, ModelSpec, Tap};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCnnConfig {
    pub input_shape: Vec<usize>,
    pub n_classes: usize,
    pub depth: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for ToyCnnConfig {
    fn default() -> Self {
        ToyCnnConfig {
            input_shape: vec![1, 16, 16],
            n_classes: 6,
            depth: 2,
            channels: vec![8, 24],
            seed: 11,
        }
    }
}

fn he_conv(rng: &mut impl Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..c_out * c_in * k * k).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![c_out, c_in, k, k], data).expect("shape")
}

fn he_dense(rng: &mut impl Rng, n_out: usize, n_in: usize, gain: f64) -> Tensor {
    let std = (gain / n_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..n_out * n_in).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![n_out, n_in], data).expect("shape")
}

/// Conv/ReLU stack (first conv stride 1, later ones stride 2), one residual
/// block, global average pooling and a dense logit head.
///
/// Taps: `conv1..conv{depth}`, `res_inner`, `res_out` (the last one is the
/// sole path into the head).
pub fn build_toy_cnn(cfg: &ToyCnnConfig) -> Result<ModelSpec> {
    if cfg.channels.len() != cfg.depth {
        return Err(invalid(format!(
            "channel list has {} entries for depth {}",
            cfg.channels.len(),
            cfg.depth
        )));
    }
    if cfg.depth < 1 || cfg.input_shape.len() != 3 || cfg.n_classes < 2 {
        return Err(invalid("toy CNN needs depth >= 1, a [C,H,W] input and >= 2 classes"));
    }
    let mut rng = super::rng(cfg.seed);
    let mut layers = Vec::new();
    let mut taps = Vec::new();
    let mut c_in = cfg.input_shape[0];
    let (mut h, mut w) = (cfg.input_shape[1], cfg.input_shape[2]);
    for (i, &c) in cfg.channels.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        layers.push(LayerSpec::Conv2d {
            weight: he_conv(&mut rng, c, c_in, 3),
            bias: Tensor::zeros(&[c]),
            stride,
            padding: 1,
        });
        layers.push(LayerSpec::Relu);
        taps.push(Tap {
            name: format!("conv{}", i + 1),
            layer: layers.len() - 1,
        });
        c_in = c;
        h = (h + 2 - 3) / stride + 1;
        w = (w + 2 - 3) / stride + 1;
    }
    // node index of the block input is the number of layers so far
    let block_input = layers.len();
    let c = c_in;
    layers.push(LayerSpec::Conv2d {
        weight: he_conv(&mut rng, c, c, 3),
        bias: Tensor::zeros(&[c]),
        stride: 1,
        padding: 1,
    });
    layers.push(LayerSpec::Relu);
    taps.push(Tap {
        name: "res_inner".into(),
        layer: layers.len() - 1,
    });
    layers.push(LayerSpec::Conv2d {
        weight: he_conv(&mut rng, c, c, 3).scale(0.5),
        bias: Tensor::zeros(&[c]),
        stride: 1,
        padding: 1,
    });
    layers.push(LayerSpec::ResidualAdd { source: block_input });
    layers.push(LayerSpec::Relu);
    taps.push(Tap {
        name: "res_out".into(),
        layer: layers.len() - 1,
    });
    layers.push(LayerSpec::AvgPool {
        kernel: h.min(w),
        stride: h.min(w),
    });
    layers.push(LayerSpec::Flatten);
    let pooled = c * (h / h.min(w)) * (w / h.min(w));
    layers.push(LayerSpec::Dense {
        weight: he_dense(&mut rng, cfg.n_classes, pooled, 1.0),
        bias: Tensor::zeros(&[cfg.n_classes]),
    });
    ModelSpec::new(cfg.input_shape.clone(), layers, taps)
}

/// Closed-form parameter count of [`build_toy_cnn`] for square inputs.
pub fn toy_cnn_param_count(cfg: &ToyCnnConfig) -> usize {
    let mut total = 0;
    let mut c_in = cfg.input_shape[0];
    for &c in &cfg.channels {
        total += c * c_in * 9 + c;
        c_in = c;
    }
    total += 2 * (c_in * c_in * 9 + c_in);
    total + c_in * cfg.n_classes + cfg.n_classes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetinaConfig {
    /// `[frames, H, W]` stimulus clip.
    pub input_shape: Vec<usize>,
    pub n_cells: usize,
    pub channels: usize,
    pub kernel1: usize,
    pub kernel2: usize,
    pub seed: u64,
}

impl Default for RetinaConfig {
    fn default() -> Self {
        RetinaConfig {
            input_shape: vec![4, 12, 12],
            n_cells: 8,
            channels: 8,
            kernel1: 5,
            kernel2: 3,
            seed: 5,
        }
    }
}

/// Three-layer retina-style regressor: two conv/ReLU layers with `channels`
/// cell types each, then a dense readout with softplus rates.
/// Taps: `layer1`, `layer2`.
pub fn build_retina_model(cfg: &RetinaConfig) -> Result<ModelSpec> {
    if !(4..=17).contains(&cfg.n_cells) {
        log::warn!("retina model with {} cells is outside the usual 4-17 range", cfg.n_cells);
    }
    if cfg.n_cells == 0 || cfg.input_shape.len() != 3 {
        return Err(invalid("retina model needs >= 1 cell and a [T,H,W] stimulus"));
    }
    let mut rng = super::rng(cfg.seed);
    let (t, h, w) = (cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]);
    if h < cfg.kernel1 + cfg.kernel2 - 1 || w < cfg.kernel1 + cfg.kernel2 - 1 {
        return Err(invalid("stimulus too small for the retina kernels"));
    }
    let (h2, w2) = (h - cfg.kernel1 - cfg.kernel2 + 2, w - cfg.kernel1 - cfg.kernel2 + 2);
    let c = cfg.channels;
    let layers = vec![
        LayerSpec::Conv2d {
            weight: he_conv(&mut rng, c, t, cfg.kernel1),
            bias: Tensor::full(&[c], 0.05),
            stride: 1,
            padding: 0,
        },
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            weight: he_conv(&mut rng, c, c, cfg.kernel2),
            bias: Tensor::full(&[c], 0.05),
            stride: 1,
            padding: 0,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            weight: he_dense(&mut rng, cfg.n_cells, c * h2 * w2, 0.5),
            bias: Tensor::zeros(&[cfg.n_cells]),
        },
        LayerSpec::Softplus,
    ];
    let taps = vec![
        Tap {
            name: "layer1".into(),
            layer: 1,
        },
        Tap {
            name: "layer2".into(),
            layer: 3,
        },
    ];
    ModelSpec::new(cfg.input_shape.clone(), layers, taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_configs_forward_and_count() {
        for (depth, channels) in [(1, vec![6]), (2, vec![8, 16]), (3, vec![4, 8, 12])] {
            let cfg = ToyCnnConfig {
                depth,
                channels,
                ..Default::default()
            };
            let m = build_toy_cnn(&cfg).unwrap();
            assert_eq!(m.n_params(), toy_cnn_param_count(&cfg));
            let trace = m.forward(&Tensor::full(&cfg.input_shape, 0.3)).unwrap();
            assert_eq!(trace.output().shape(), &[cfg.n_classes]);
            assert_eq!(m.taps().len(), depth + 2);
        }
    }

    #[test]
    fn toy_rejects_channel_mismatch() {
        let cfg = ToyCnnConfig {
            depth: 3,
            ..Default::default()
        };
        assert!(build_toy_cnn(&cfg).is_err());
    }

    #[test]
    fn retina_outputs_nonnegative() {
        let m = build_retina_model(&RetinaConfig::default()).unwrap();
        assert_eq!(m.output_shape(), &[8]);
        let mut rng = crate::zoo::rng(3);
        let x = Tensor::new(vec![4, 12, 12], (0..576).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = m.forward(&x).unwrap();
        assert!(y.output().data().iter().all(|&v| v >= 0.0));
        assert_eq!(y.activation("layer1").unwrap().shape(), &[8, 8, 8]);
        assert_eq!(y.activation("layer2").unwrap().shape(), &[8, 6, 6]);
    }

    #[test]
    fn retina_out_of_range_cells_still_builds() {
        let cfg = RetinaConfig {
            n_cells: 2,
            ..Default::default()
        };
        assert!(build_retina_model(&cfg).is_ok());
    }
}
