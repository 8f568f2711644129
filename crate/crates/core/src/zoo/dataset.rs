use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{LayerSpec, ModelSpec, Tap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    SyntheticShapesClassification,
    SyntheticStimulusRegression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub input_shape: Vec<usize>,
    /// Number of classes (classification) or cells (regression).
    pub n_outputs: usize,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.15
}

impl DatasetSpec {
    pub fn shapes(n_samples: usize, n_classes: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::SyntheticShapesClassification,
            n_samples,
            input_shape: vec![1, 16, 16],
            n_outputs: n_classes,
            seed,
            noise: default_noise(),
        }
    }

    pub fn stimulus(n_samples: usize, n_cells: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::SyntheticStimulusRegression,
            n_samples,
            input_shape: vec![4, 12, 12],
            n_outputs: n_cells,
            seed,
            noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// One rate vector per sample.
    Rates(Vec<Tensor>),
}

/// The hidden generator behind a regression dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub model: ModelSpec,
    /// Noise-free rates per sample.
    pub clean_rates: Vec<Tensor>,
    /// Planted cell type per cell (0 = ON, 1 = OFF).
    pub cell_types: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub inputs: Vec<Tensor>,
    pub targets: Targets,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Rates(_) => None,
        }
    }

    pub fn rates(&self) -> Option<&[Tensor]> {
        match &self.targets {
            Targets::Rates(r) => Some(r),
            Targets::Labels(_) => None,
        }
    }

    /// Indices of samples with the given label, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels()
            .map(|l| (0..l.len()).filter(|&i| l[i] == class).collect())
            .unwrap_or_default()
    }

    /// Same dataset with samples reordered by `perm` (new i ← old perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(perm.iter().map(|&i| l[i]).collect()),
            Targets::Rates(r) => Targets::Rates(perm.iter().map(|&i| r[i].clone()).collect()),
        };
        let ground_truth = self.ground_truth.as_ref().map(|g| GroundTruth {
            model: g.model.clone(),
            clean_rates: perm.iter().map(|&i| g.clean_rates[i].clone()).collect(),
            cell_types: g.cell_types.clone(),
        });
        Dataset {
            spec: self.spec.clone(),
            inputs: perm.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets,
            ground_truth,
        }
    }
}

/// Independent stream per sample so generation can be split across workers.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64 + 1);
    r
}

pub const MAX_SHAPE_CLASSES: usize = 8;

fn draw_pattern(class: usize, h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut img = vec![0.0; h * w];
    let set = |y: i64, x: i64, v: f64, img: &mut [f64]| {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            img[y as usize * w + x as usize] = v;
        }
    };
    let (hi, wi) = (h as i64, w as i64);
    let cy = rng.random_range(hi / 4..=3 * hi / 4);
    let cx = rng.random_range(wi / 4..=3 * wi / 4);
    let r = rng.random_range(3..=(hi.min(wi) / 4).max(3));
    match class {
        // horizontal bar
        0 => {
            for x in cx - 2 * r..=cx + 2 * r {
                set(cy, x, 1.0, &mut img);
                set(cy + 1, x, 1.0, &mut img);
            }
        }
        // vertical bar
        1 => {
            for y in cy - 2 * r..=cy + 2 * r {
                set(y, cx, 1.0, &mut img);
                set(y, cx + 1, 1.0, &mut img);
            }
        }
        // diagonal
        2 => {
            for d in -2 * r..=2 * r {
                set(cy + d, cx + d, 1.0, &mut img);
                set(cy + d, cx + d + 1, 1.0, &mut img);
            }
        }
        // square outline
        3 => {
            for d in -r..=r {
                set(cy - r, cx + d, 1.0, &mut img);
                set(cy + r, cx + d, 1.0, &mut img);
                set(cy + d, cx - r, 1.0, &mut img);
                set(cy + d, cx + r, 1.0, &mut img);
            }
        }
        // filled disc
        4 => {
            for y in -r..=r {
                for x in -r..=r {
                    if y * y + x * x <= r * r {
                        set(cy + y, cx + x, 1.0, &mut img);
                    }
                }
            }
        }
        // plus
        5 => {
            for d in -r..=r {
                set(cy, cx + d, 1.0, &mut img);
                set(cy + d, cx, 1.0, &mut img);
            }
        }
        // checkerboard patch
        6 => {
            for y in -r..=r {
                for x in -r..=r {
                    if (y + x).rem_euclid(2) == 0 {
                        set(cy + y, cx + x, 1.0, &mut img);
                    }
                }
            }
        }
        // anti-diagonal
        _ => {
            for d in -2 * r..=2 * r {
                set(cy + d, cx - d, 1.0, &mut img);
                set(cy + d, cx - d + 1, 1.0, &mut img);
            }
        }
    }
    img
}

fn shapes_sample(spec: &DatasetSpec, class: usize, index: usize) -> Tensor {
    let mut rng = sample_rng(spec.seed, index);
    let (c, h, w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
    let pattern = draw_pattern(class, h, w, &mut rng);
    let amp = rng.random_range(0.8..1.2);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("noise std");
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let gain = if c == 1 { 1.0 } else { rng.random_range(0.5..1.0) };
        for p in &pattern {
            data.push(amp * gain * p + noise.sample(&mut rng));
        }
    }
    Tensor::new(spec.input_shape.clone(), data).expect("shape")
}

fn gaussian(dy: f64, dx: f64, sigma: f64) -> f64 {
    (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
}

/// ON/OFF center-surround front end followed by a one-hot readout per cell.
fn ground_truth_model(spec: &DatasetSpec) -> Result<(ModelSpec, Vec<usize>)> {
    let (t, h, w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
    let k = 5usize;
    let temporal: Vec<f64> = (0..t).map(|i| 0.3 + 0.7 * (i + 1) as f64 / t as f64).collect();
    let mut wconv = vec![0.0; 2 * t * k * k];
    for ty in 0..2 {
        let polarity = if ty == 0 { 1.0 } else { -1.0 };
        for f in 0..t {
            for ky in 0..k {
                for kx in 0..k {
                    let (dy, dx) = (ky as f64 - 2.0, kx as f64 - 2.0);
                    let dog = gaussian(dy, dx, 0.8) - 0.35 * gaussian(dy, dx, 2.0);
                    wconv[((ty * t + f) * k + ky) * k + kx] = polarity * temporal[f] * dog;
                }
            }
        }
    }
    let mut rng = sample_rng(spec.seed ^ 0x9e37_79b9, 0);
    let n = spec.n_outputs;
    let cell_types: Vec<usize> = (0..n).map(|c| c % 2).collect();
    let mut wdense = vec![0.0; n * 2 * h * w];
    // each cell pools a Gaussian field around a jittered centre; fields
    // overlap within the central patch, as in a patch recording
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for (c, &ty) in cell_types.iter().enumerate() {
        let y0 = cy + rng.random_range(-1.5..1.5);
        let x0 = cx + rng.random_range(-1.5..1.5);
        let field: Vec<f64> = (0..h * w)
            .map(|p| gaussian((p / w) as f64 - y0, (p % w) as f64 - x0, 1.5))
            .collect();
        let total: f64 = field.iter().sum();
        for (p, v) in field.iter().enumerate() {
            wdense[c * 2 * h * w + ty * h * w + p] = 4.0 * v / total;
        }
    }
    let layers = vec![
        LayerSpec::Conv2d {
            weight: Tensor::new(vec![2, t, k, k], wconv)?,
            bias: Tensor::full(&[2], -0.1),
            stride: 1,
            padding: 2,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            weight: Tensor::new(vec![n, 2 * h * w], wdense)?,
            bias: Tensor::full(&[n], 0.05),
        },
        LayerSpec::Relu,
    ];
    let model = ModelSpec::new(spec.input_shape.clone(), layers, vec![Tap { name: "types".into(), layer: 1 }])?;
    Ok((model, cell_types))
}

fn stimulus_sample(spec: &DatasetSpec, index: usize) -> Tensor {
    let mut rng = sample_rng(spec.seed, index);
    let (t, h, w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
    // 2x2 block noise gives the stimulus some spatial correlation
    let (bh, bw) = (h.div_ceil(2), w.div_ceil(2));
    let mut data = Vec::with_capacity(t * h * w);
    for _ in 0..t {
        let coarse: Vec<f64> = (0..bh * bw).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for y in 0..h {
            for x in 0..w {
                data.push(coarse[(y / 2) * bw + x / 2]);
            }
        }
    }
    Tensor::new(spec.input_shape.clone(), data).expect("shape")
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_samples == 0 || spec.n_outputs == 0 || spec.input_shape.len() != 3 || spec.input_shape.contains(&0) {
        return Err(invalid(format!("invalid dataset spec {spec:?}")));
    }
    match spec.kind {
        DatasetKind::SyntheticShapesClassification => {
            if spec.n_outputs < 2 || spec.n_outputs > MAX_SHAPE_CLASSES {
                return Err(invalid(format!(
                    "shape dataset supports 2..={MAX_SHAPE_CLASSES} classes, got {}",
                    spec.n_outputs
                )));
            }
            if spec.input_shape[1] < 8 || spec.input_shape[2] < 8 {
                return Err(invalid("shape images must be at least 8x8"));
            }
            let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_outputs).collect();
            labels.shuffle(&mut sample_rng(spec.seed, usize::MAX - 1));
            let inputs = labels
                .iter()
                .enumerate()
                .map(|(i, &c)| shapes_sample(spec, c, i))
                .collect();
            Ok(Dataset {
                spec: spec.clone(),
                inputs,
                targets: Targets::Labels(labels),
                ground_truth: None,
            })
        }
        DatasetKind::SyntheticStimulusRegression => {
            if spec.input_shape[1] < 6 || spec.input_shape[2] < 6 {
                return Err(invalid("stimulus frames must be at least 6x6"));
            }
            let (model, cell_types) = ground_truth_model(spec)?;
            let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("noise std");
            let mut noise_rng = sample_rng(spec.seed, usize::MAX - 2);
            let mut inputs = Vec::with_capacity(spec.n_samples);
            let mut clean = Vec::with_capacity(spec.n_samples);
            let mut noisy = Vec::with_capacity(spec.n_samples);
            for i in 0..spec.n_samples {
                let x = stimulus_sample(spec, i);
                let y = model.forward(&x)?.output().clone();
                let data = y.data().iter().map(|v| (v + noise.sample(&mut noise_rng)).max(0.0)).collect();
                noisy.push(Tensor::new(y.shape().to_vec(), data)?);
                clean.push(y);
                inputs.push(x);
            }
            Ok(Dataset {
                spec: spec.clone(),
                inputs,
                targets: Targets::Rates(noisy),
                ground_truth: Some(GroundTruth {
                    model,
                    clean_rates: clean,
                    cell_types,
                }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&DatasetSpec::shapes(40, 6, 7)).unwrap();
        let b = generate_dataset(&DatasetSpec::shapes(40, 6, 7)).unwrap();
        assert_eq!(a, b);
        assert!(a.inputs.iter().zip(&b.inputs).all(|(x, y)| x.bit_eq(y)));
        let c = generate_dataset(&DatasetSpec::shapes(40, 6, 8)).unwrap();
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn labels_balanced() {
        for n in [37, 60, 101] {
            let d = generate_dataset(&DatasetSpec::shapes(n, 6, 1)).unwrap();
            let counts: Vec<usize> = (0..6).map(|c| d.class_indices(c).len()).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn regression_targets_nonnegative() {
        let d = generate_dataset(&DatasetSpec::stimulus(200, 8, 3)).unwrap();
        let rates = d.rates().unwrap();
        assert!(rates.iter().all(|r| r.data().iter().all(|&v| v >= 0.0)));
        let gt = d.ground_truth.as_ref().unwrap();
        assert!(gt.clean_rates.iter().all(|r| r.data().iter().all(|&v| v >= 0.0)));
        // every cell should fire for some stimuli
        for c in 0..8 {
            assert!(gt.clean_rates.iter().any(|r| r.data()[c] > 0.2), "cell {c} silent");
        }
    }

    #[test]
    fn rejects_unsupported() {
        assert!(generate_dataset(&DatasetSpec::shapes(10, 9, 0)).is_err());
        assert!(generate_dataset(&DatasetSpec::shapes(0, 4, 0)).is_err());
    }
}
