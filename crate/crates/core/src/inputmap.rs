//! Input-space decompositions of channel and mode contributions, and the
//! rendered contribution masks used for inspection.

use serde::{Deserialize, Serialize};

use crate::contrib::{path_point, BaselineSpec, ResolvedTarget, TargetSpec};
use crate::error::{invalid, CodecError, Result};
use crate::nn::{ActivationTrace, ChannelMask, ModelSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapAlgorithm {
    #[serde(rename = "inputgrad", alias = "input-grad")]
    InputGrad,
    #[serde(rename = "actgrad-decomp", alias = "act-grad-decomp")]
    ActGradDecomp,
    HigDecomp,
}

impl MapAlgorithm {
    pub fn id(&self) -> &'static str {
        match self {
            MapAlgorithm::InputGrad => "inputgrad",
            MapAlgorithm::ActGradDecomp => "actgrad-decomp",
            MapAlgorithm::HigDecomp => "hig-decomp",
        }
    }
}

impl std::str::FromStr for MapAlgorithm {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inputgrad" | "input-grad" => Ok(MapAlgorithm::InputGrad),
            "actgrad-decomp" | "actgrad" => Ok(MapAlgorithm::ActGradDecomp),
            "hig-decomp" | "hig" => Ok(MapAlgorithm::HigDecomp),
            other => Err(invalid(format!("unknown map algorithm `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapSign {
    Net,
    Positive,
}

/// Per-pixel contributions of a channel set at one tap.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMap {
    pub tap: String,
    pub channels: Vec<usize>,
    pub algorithm: MapAlgorithm,
    pub sign: MapSign,
    /// Input-shaped.
    pub values: Tensor,
    pub steps: usize,
}

impl ContributionMap {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    pub fn positive_part(&self) -> ContributionMap {
        ContributionMap {
            values: self.values.map(|v| v.max(0.0)),
            sign: MapSign::Positive,
            ..self.clone()
        }
    }
}

fn mask_for(model: &ModelSpec, tap: &str, channels: &[usize]) -> Result<ChannelMask> {
    ChannelMask::from_channels(tap, model.tap_channels(tap)?, channels)
}

fn zero_unselected(t: &mut Tensor, mask: &ChannelMask) {
    let stride = t.channel_stride();
    for (c, chunk) in t.data_mut().chunks_mut(stride).enumerate() {
        if !mask.keep[c] {
            chunk.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn resolve(model: &ModelSpec, input: &Tensor, target: &TargetSpec) -> Result<(ActivationTrace, ResolvedTarget)> {
    let trace = model.forward(input)?;
    let resolved = target.resolve(trace.output())?;
    Ok((trace, resolved))
}

fn input_baseline(model: &ModelSpec, baseline: &BaselineSpec) -> Result<Tensor> {
    baseline
        .input_point(model)?
        .ok_or_else(|| invalid(format!("input maps need an input-space baseline, not {}", baseline.id())))
}

/// Input gradient of the target restricted to backward paths through the
/// selected channels: `Σ_{c∈m} Σ_p ∂y/∂h_{c,p} · ∂h_{c,p}/∂x`.
pub fn mode_sensitivity(model: &ModelSpec, input: &Tensor, tap: &str, channels: &[usize], target: &TargetSpec) -> Result<Tensor> {
    let mask = mask_for(model, tap, channels)?;
    let (trace, resolved) = resolve(model, input, target)?;
    let (_, seed) = resolved.value_and_seed(trace.output());
    model.input_gradient(&trace, &seed, Some(&mask))
}

/// `C = A ⊙ (x - x')`; its pixel-sum equals the selected channels' hidden
/// InputGrad contributions exactly.
pub fn inputgrad_map(
    model: &ModelSpec,
    input: &Tensor,
    tap: &str,
    channels: &[usize],
    target: &TargetSpec,
    baseline: &BaselineSpec,
) -> Result<ContributionMap> {
    let x0 = input_baseline(model, baseline)?;
    let a = mode_sensitivity(model, input, tap, channels, target)?;
    Ok(ContributionMap {
        tap: tap.to_string(),
        channels: channels.to_vec(),
        algorithm: MapAlgorithm::InputGrad,
        sign: MapSign::Net,
        values: a.mul(&input.sub(&x0)),
        steps: 1,
    })
}

/// ActGrad written as an input-space integral: the output gradient at the
/// tap is frozen at `x` while `∂h/∂x` is integrated along the straight path.
/// The pixel-sum converges to ActGrad with the hidden baseline `h(x')`.
pub fn actgrad_decomp_map(
    model: &ModelSpec,
    input: &Tensor,
    tap: &str,
    channels: &[usize],
    target: &TargetSpec,
    baseline: &BaselineSpec,
    steps: usize,
) -> Result<ContributionMap> {
    if steps == 0 {
        return Err(invalid("actgrad_decomp_map needs at least one step"));
    }
    let x0 = input_baseline(model, baseline)?;
    let mask = mask_for(model, tap, channels)?;
    let (trace, resolved) = resolve(model, input, target)?;
    let (_, seed) = resolved.value_and_seed(trace.output());
    let mut g = model.tap_gradient(&trace, tap, &seed)?;
    zero_unselected(&mut g, &mask);
    let mut acc = Tensor::zeros(input.shape());
    for k in 1..=steps {
        let tk = model.forward(&path_point(&x0, input, k, steps))?;
        acc.add_assign(&model.vjp_from_tap(&tk, tap, &g)?);
    }
    Ok(ContributionMap {
        tap: tap.to_string(),
        channels: channels.to_vec(),
        algorithm: MapAlgorithm::ActGradDecomp,
        sign: MapSign::Net,
        values: acc.scale(1.0 / steps as f64).mul(&input.sub(&x0)),
        steps,
    })
}

/// Input-space hidden IG: `(x - x') ⊙ (1/m) Σ_k J_h(x_k)ᵀ [∂y/∂h(x_k)]_m`.
/// Summed over all channels it is input IG; summed over pixels it is hidden
/// IG with the tangent rule, both at the same step count.
pub fn hig_decomp_map(
    model: &ModelSpec,
    input: &Tensor,
    tap: &str,
    channels: &[usize],
    target: &TargetSpec,
    baseline: &BaselineSpec,
    steps: usize,
) -> Result<ContributionMap> {
    if steps == 0 {
        return Err(invalid("hig_decomp_map needs at least one step"));
    }
    let x0 = input_baseline(model, baseline)?;
    let mask = mask_for(model, tap, channels)?;
    let (_, resolved) = resolve(model, input, target)?;
    let mut acc = Tensor::zeros(input.shape());
    for k in 1..=steps {
        let tk = model.forward(&path_point(&x0, input, k, steps))?;
        let (_, seed) = resolved.value_and_seed(tk.output());
        acc.add_assign(&model.input_gradient(&tk, &seed, Some(&mask))?);
    }
    Ok(ContributionMap {
        tap: tap.to_string(),
        channels: channels.to_vec(),
        algorithm: MapAlgorithm::HigDecomp,
        sign: MapSign::Net,
        values: acc.scale(1.0 / steps as f64).mul(&input.sub(&x0)),
        steps,
    })
}

pub fn contribution_map(
    algorithm: MapAlgorithm,
    model: &ModelSpec,
    input: &Tensor,
    tap: &str,
    channels: &[usize],
    target: &TargetSpec,
    baseline: &BaselineSpec,
    steps: usize,
) -> Result<ContributionMap> {
    match algorithm {
        MapAlgorithm::InputGrad => inputgrad_map(model, input, tap, channels, target, baseline),
        MapAlgorithm::ActGradDecomp => actgrad_decomp_map(model, input, tap, channels, target, baseline, steps),
        MapAlgorithm::HigDecomp => hig_decomp_map(model, input, tap, channels, target, baseline, steps),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Render the net map instead of its positive part.
    pub net: bool,
    pub kernel: usize,
    pub contrast: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            net: false,
            kernel: 4,
            contrast: 7.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedMask {
    /// `[H, W]` in `[0, 1]`.
    pub mask: Tensor,
    /// The standardized image times the mask, image-shaped.
    pub image: Tensor,
    /// The filtered map was constant; the mask is all ones.
    pub degenerate: bool,
}

fn spatial_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        ref s => Err(invalid(format!("{what} must be [C,H,W] or [H,W], got {s:?}"))),
    }
}

/// Median over a `k×k` window whose top-left corner is the output pixel,
/// with edge replication. Even windows take the mean of the two middle values.
pub fn median_filter(plane: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let mut window = Vec::with_capacity(k * k);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            window.clear();
            for dr in 0..k {
                let rr = (r + dr).min(h - 1);
                for dc in 0..k {
                    window.push(plane[rr * w + (c + dc).min(w - 1)]);
                }
            }
            window.sort_by(f64::total_cmp);
            let n = window.len();
            out.push(if n % 2 == 1 {
                window[n / 2]
            } else {
                0.5 * (window[n / 2 - 1] + window[n / 2])
            });
        }
    }
    out
}

/// Channel-average, median filter, min-max normalization, contrast and clip,
/// then multiplication with the standardized image.
pub fn render_mask(map: &ContributionMap, image: &Tensor, opts: &RenderOptions) -> Result<RenderedMask> {
    let (mc, h, w) = spatial_dims(&map.values, "map")?;
    let (ic, ih, iw) = spatial_dims(image, "image")?;
    if (h, w) != (ih, iw) {
        return Err(invalid(format!("map is {h}x{w} but the image is {ih}x{iw}")));
    }
    if opts.kernel == 0 || !opts.contrast.is_finite() || opts.contrast <= 0.0 {
        return Err(invalid("render needs a positive kernel and contrast"));
    }
    let hw = h * w;
    let mut avg = vec![0.0; hw];
    for chunk in map.values.data().chunks_exact(hw) {
        for (a, &v) in avg.iter_mut().zip(chunk) {
            *a += if opts.net { v } else { v.max(0.0) } / mc as f64;
        }
    }
    let filtered = median_filter(&avg, h, w, opts.kernel);
    let lo = filtered.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = filtered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(hi - lo > 0.0);
    let mask: Vec<f64> = if degenerate {
        vec![1.0; hw]
    } else {
        filtered
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * opts.contrast).clamp(0.0, 1.0))
            .collect()
    };
    let n = image.len() as f64;
    let mean = image.sum() / n;
    let var = image.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let mut out = image.map(|v| (v - mean) / std);
    for chunk in out.data_mut().chunks_exact_mut(hw) {
        for (v, m) in chunk.iter_mut().zip(&mask) {
            *v *= m;
        }
    }
    debug_assert_eq!(out.len(), ic * hw);
    Ok(RenderedMask {
        mask: Tensor::new(vec![h, w], mask)?,
        image: out,
        degenerate,
    })
}

/// Binary 8-bit grayscale PNM (P5) of a `[H,W]` or `[C,H,W]` tensor; channels
/// are averaged and the result is min-max scaled to 0..=255.
pub fn to_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = spatial_dims(t, "image")?;
    let hw = h * w;
    let mut plane = vec![0.0; hw];
    for chunk in t.data().chunks_exact(hw) {
        for (p, &v) in plane.iter_mut().zip(chunk) {
            *p += v / c as f64;
        }
    }
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|v| (((v - lo) / span) * 255.0).round() as u8));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrib::{hidden_ig_with_rule, hinput_grad, ig_input, RiemannRule};
    use crate::contrib::actgrad;
    use crate::nn::{LayerSpec, Tap};
    use crate::zoo::{build_toy_cnn, ToyCnnConfig};
    use rand::{Rng, SeedableRng};

    fn toy() -> (ModelSpec, Tensor) {
        let model = build_toy_cnn(&ToyCnnConfig {
            input_shape: vec![2, 6, 6],
            n_classes: 3,
            depth: 2,
            channels: vec![3, 4],
            seed: 4,
        })
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::new(vec![2, 6, 6], (0..72).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (model, x)
    }

    fn linear() -> (ModelSpec, Tensor) {
        let w1 = Tensor::new(vec![3, 4], vec![1.0, -2.0, 0.5, 0.0, 0.3, 0.1, -1.0, 2.0, -0.7, 0.4, 0.2, 1.5]).unwrap();
        let w2 = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.0, 0.3, -0.2]).unwrap();
        let model = ModelSpec::new(
            vec![4],
            vec![
                LayerSpec::Dense {
                    weight: w1,
                    bias: Tensor::from_vec(vec![0.1, -0.2, 0.3]),
                },
                LayerSpec::Dense {
                    weight: w2,
                    bias: Tensor::from_vec(vec![0.0, 0.5]),
                },
            ],
            vec![Tap {
                name: "h".into(),
                layer: 0,
            }],
        )
        .unwrap();
        (model, Tensor::from_vec(vec![0.4, -1.2, 0.8, 2.0]))
    }

    #[test]
    fn sensitivity_all_and_empty() {
        let (model, x) = toy();
        let t = TargetSpec::top1();
        let (trace, r) = resolve(&model, &x, &t).unwrap();
        let (_, seed) = r.value_and_seed(trace.output());
        let full = model.input_gradient(&trace, &seed, None).unwrap();
        let all = mode_sensitivity(&model, &x, "res_out", &[0, 1, 2, 3], &t).unwrap();
        assert!(all.sub(&full).max_abs() < 1e-12);
        let none = mode_sensitivity(&model, &x, "res_out", &[], &t).unwrap();
        assert_eq!(none.max_abs(), 0.0);
    }

    #[test]
    fn sensitivity_matches_dense_jacobian() {
        let (model, x) = toy();
        let t = TargetSpec::top1();
        let tap = "conv2";
        let chans = [1, 3];
        let (trace, r) = resolve(&model, &x, &t).unwrap();
        let (_, seed) = r.value_and_seed(trace.output());
        let g = model.tap_gradient(&trace, tap, &seed).unwrap();
        let stride = g.channel_stride();
        let mut expected = vec![0.0; x.len()];
        for i in 0..x.len() {
            let col = model.jvp_at_tap(&trace, tap, &Tensor::new(x.shape().to_vec(), {
                let mut e = vec![0.0; x.len()];
                e[i] = 1.0;
                e
            }).unwrap()).unwrap();
            for &c in &chans {
                let r = c * stride..(c + 1) * stride;
                expected[i] += g.data()[r.clone()].iter().zip(&col.data()[r]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let got = mode_sensitivity(&model, &x, tap, &chans, &t).unwrap();
        for (a, b) in got.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn inputgrad_map_is_complete() {
        let (model, x) = toy();
        let t = TargetSpec::top1();
        let hig = hinput_grad(&model, &x, "res_out", &t, &BaselineSpec::ZeroInput).unwrap();
        let chans = [0, 2];
        let map = inputgrad_map(&model, &x, "res_out", &chans, &t, &BaselineSpec::ZeroInput).unwrap();
        let expected: f64 = chans.iter().map(|&c| hig.values.channel(c).iter().sum::<f64>()).sum();
        assert!((map.total() - expected).abs() < 1e-10);
        let same = inputgrad_map(&model, &x, "res_out", &chans, &t, &BaselineSpec::CustomInput(x.clone())).unwrap();
        assert_eq!(same.values.max_abs(), 0.0);
    }

    #[test]
    fn linear_maps_agree() {
        let (model, x) = linear();
        let t = TargetSpec::new(crate::contrib::TargetKind::SingleOutput { index: 0 });
        let b = BaselineSpec::ZeroInput;
        let ig = inputgrad_map(&model, &x, "h", &[0, 2], &t, &b).unwrap();
        let ad = actgrad_decomp_map(&model, &x, "h", &[0, 2], &t, &b, 1).unwrap();
        let hd = hig_decomp_map(&model, &x, "h", &[0, 2], &t, &b, 1).unwrap();
        assert!(ig.values.sub(&ad.values).max_abs() < 1e-12);
        assert!(ig.values.sub(&hd.values).max_abs() < 1e-12);
        // w-weighted pixel products for a single channel
        let one = inputgrad_map(&model, &x, "h", &[1], &t, &b).unwrap();
        let w = [0.3, 0.1, -1.0, 2.0];
        for i in 0..4 {
            assert!((one.values.data()[i] - (-1.0) * w[i] * x.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn hig_map_double_marginals() {
        let (model, x) = toy();
        let t = TargetSpec::top1();
        let b = BaselineSpec::ZeroInput;
        let steps = 16;
        let all = hig_decomp_map(&model, &x, "conv2", &[0, 1, 2, 3], &t, &b, steps).unwrap();
        let ig = ig_input(&model, &x, &t, &b, steps).unwrap();
        assert!(all.values.sub(&ig).max_abs() < 1e-9);
        let h = hidden_ig_with_rule(&model, &x, "conv2", &t, &b, steps, RiemannRule::Tangent).unwrap();
        let part = hig_decomp_map(&model, &x, "conv2", &[1, 2], &t, &b, steps).unwrap();
        let expected: f64 = [1, 2].iter().map(|&c| h.values.channel(c).iter().sum::<f64>()).sum();
        assert!((part.total() - expected).abs() < 1e-9);
    }

    #[test]
    fn actgrad_decomp_converges() {
        let (model, x) = toy();
        let t = TargetSpec::top1();
        let b = BaselineSpec::ZeroInput;
        let ag = actgrad(&model, &x, "res_out", &t, &b).unwrap();
        let target: f64 = [0, 1].iter().map(|&c| ag.values.channel(c).iter().sum::<f64>()).sum();
        let errs: Vec<f64> = [8, 32, 128]
            .iter()
            .map(|&s| (actgrad_decomp_map(&model, &x, "res_out", &[0, 1], &t, &b, s).unwrap().total() - target).abs())
            .collect();
        assert!(errs[2] <= errs[0] + 1e-12);
        assert!(errs[2] <= 1e-2 * target.abs().max(1e-3), "{errs:?} target {target}");
    }

    #[test]
    fn mode_linearity() {
        let (model, x) = toy();
        let t = TargetSpec::top1();
        let b = BaselineSpec::ZeroInput;
        for alg in [MapAlgorithm::InputGrad, MapAlgorithm::ActGradDecomp, MapAlgorithm::HigDecomp] {
            let both = contribution_map(alg, &model, &x, "res_out", &[1, 3], &t, &b, 8).unwrap();
            let a = contribution_map(alg, &model, &x, "res_out", &[1], &t, &b, 8).unwrap();
            let c = contribution_map(alg, &model, &x, "res_out", &[3], &t, &b, 8).unwrap();
            assert!(both.values.sub(&a.values.add(&c.values)).max_abs() < 1e-10, "{alg:?}");
        }
    }

    #[test]
    fn median_filter_hand_case() {
        // single hot pixel at (2,2) in a 6x6 plane
        let mut plane = vec![0.0; 36];
        plane[2 * 6 + 2] = 1.0;
        assert!(median_filter(&plane, 6, 6, 4).iter().all(|&v| v == 0.0));
        // a 3x3 block at rows/cols 1..=3: anchor (r,c) sees hot_rows(r) * hot_cols(c)
        // hot cells with hot_rows = [3, 3, 2, 1, 0, 0]; the median is 1 only when > 8
        let mut block = vec![0.0; 36];
        for r in 1..4 {
            for c in 1..4 {
                block[r * 6 + c] = 1.0;
            }
        }
        let f = median_filter(&block, 6, 6, 4);
        let expected = [
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(f[r * 6 + c], expected[r][c], "({r},{c})");
            }
        }
    }

    fn map_of(values: Tensor) -> ContributionMap {
        ContributionMap {
            tap: "t".into(),
            channels: vec![],
            algorithm: MapAlgorithm::InputGrad,
            sign: MapSign::Net,
            values,
            steps: 1,
        }
    }

    #[test]
    fn render_constant_map_is_degenerate() {
        let img = Tensor::new(vec![1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let r = render_mask(&map_of(Tensor::full(&[1, 5, 5], 0.3)), &img, &RenderOptions::default()).unwrap();
        assert!(r.degenerate);
        assert!(r.mask.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn render_range_and_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let map = Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let r = render_mask(&map_of(map), &img, &RenderOptions::default()).unwrap();
        assert!(!r.degenerate);
        assert_eq!(r.image.shape(), img.shape());
        assert!(r.mask.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mean = img.sum() / 192.0;
        let std = (img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 192.0).sqrt();
        let (lo, hi) = img.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        for &v in r.image.data() {
            assert!(v >= ((lo - mean) / std).min(0.0) - 1e-12 && v <= ((hi - mean) / std).max(0.0) + 1e-12);
        }
        assert!(render_mask(&map_of(Tensor::zeros(&[1, 4, 4])), &img, &RenderOptions::default()).is_err());
    }

    #[test]
    fn pgm_header_and_size() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let bytes = to_pgm(&t).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 51, 102, 153, 204, 255]);
    }
}
