use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom};
use crate::error::{invalid, CodecError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// `weight: [out, in]`, `bias: [out]`; input is flattened.
    Dense { weight: Tensor, bias: Tensor },
    /// `weight: [C_out, C_in, kH, kW]`, `bias: [C_out]`, explicit zero padding.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    Softplus,
    /// Adds node `source` (0 = model input) to the incoming activation.
    ResidualAdd { source: usize },
    Flatten,
    AvgPool { kernel: usize, stride: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Softplus,
    ResidualAdd,
    Flatten,
    Avgpool,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Softplus => LayerKind::Softplus,
            LayerSpec::ResidualAdd { .. } => LayerKind::ResidualAdd,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::AvgPool { .. } => LayerKind::Avgpool,
        }
    }

    /// Weight and bias tensors, in declaration order, for parameterized layers.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            LayerSpec::Dense { weight, bias } | LayerSpec::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            LayerSpec::Dense { weight, bias } | LayerSpec::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub name: String,
    /// Index of the layer whose output is tapped.
    pub layer: usize,
}

/// Restricts one tap to a subset of its channels (axis 0 of the activation).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelMask {
    pub tap: String,
    pub keep: Vec<bool>,
}

impl ChannelMask {
    pub fn from_channels(tap: &str, n_channels: usize, channels: &[usize]) -> Result<Self> {
        let mut keep = vec![false; n_channels];
        for &c in channels {
            if c >= n_channels {
                return Err(invalid(format!(
                    "channel {c} out of range for tap `{tap}` with {n_channels} channels"
                )));
            }
            keep[c] = true;
        }
        Ok(ChannelMask {
            tap: tap.to_string(),
            keep,
        })
    }

    pub fn all(tap: &str, n_channels: usize) -> Self {
        ChannelMask {
            tap: tap.to_string(),
            keep: vec![true; n_channels],
        }
    }

    pub fn complement(&self) -> Self {
        ChannelMask {
            tap: self.tap.clone(),
            keep: self.keep.iter().map(|k| !k).collect(),
        }
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&c| self.keep[c]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    taps: Vec<Tap>,
    node_shapes: Vec<Vec<usize>>,
    fingerprint: u64,
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.taps == other.taps
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.kind() == b.kind()
                    && match (a.params(), b.params()) {
                        (Some((wa, ba)), Some((wb, bb))) => wa.bit_eq(wb) && ba.bit_eq(bb),
                        (None, None) => a == b,
                        _ => false,
                    }
            })
    }
}

fn shape_err(layer: usize, expected: &[usize], got: &[usize]) -> CodecError {
    CodecError::Shape {
        layer,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn output_shape(index: usize, layer: &LayerSpec, input: &[usize], nodes: &[Vec<usize>]) -> Result<Vec<usize>> {
    match layer {
        LayerSpec::Dense { weight, bias } => {
            let n_in: usize = input.iter().product();
            if weight.ndim() != 2 || weight.shape()[1] != n_in {
                return Err(shape_err(index, &[weight.shape()[0], n_in], weight.shape()));
            }
            if bias.shape() != [weight.shape()[0]] {
                return Err(shape_err(index, &[weight.shape()[0]], bias.shape()));
            }
            Ok(vec![weight.shape()[0]])
        }
        LayerSpec::Conv2d {
            weight,
            bias,
            stride,
            padding,
        } => {
            if input.len() != 3 {
                return Err(shape_err(index, &[0, 0, 0], input));
            }
            let ws = weight.shape();
            if ws.len() != 4 || ws[1] != input[0] {
                return Err(shape_err(index, &[ws[0], input[0], ws[2], ws[3]], ws));
            }
            if bias.shape() != [ws[0]] {
                return Err(shape_err(index, &[ws[0]], bias.shape()));
            }
            if *stride == 0 || input[1] + 2 * padding < ws[2] || input[2] + 2 * padding < ws[3] {
                return Err(invalid(format!("layer {index}: kernel does not fit padded input")));
            }
            let g = geom(input, ws, *stride, *padding);
            Ok(vec![ws[0], g.out_h(), g.out_w()])
        }
        LayerSpec::Relu | LayerSpec::Softplus => Ok(input.to_vec()),
        LayerSpec::ResidualAdd { source } => {
            let src = nodes
                .get(*source)
                .ok_or_else(|| invalid(format!("layer {index}: residual source node {source} is not earlier")))?;
            if src.as_slice() != input {
                return Err(shape_err(index, input, src));
            }
            Ok(input.to_vec())
        }
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        LayerSpec::AvgPool { kernel, stride } => {
            if input.len() != 3 || *kernel == 0 || *stride == 0 || input[1] < *kernel || input[2] < *kernel {
                return Err(invalid(format!("layer {index}: avgpool needs a [C,H,W] input at least {kernel} wide")));
            }
            Ok(vec![
                input[0],
                (input[1] - kernel) / stride + 1,
                (input[2] - kernel) / stride + 1,
            ])
        }
    }
}

fn geom(input: &[usize], ws: &[usize], stride: usize, padding: usize) -> ConvGeom {
    ConvGeom {
        c_in: input[0],
        h: input[1],
        w: input[2],
        c_out: ws[0],
        kh: ws[2],
        kw: ws[3],
        stride,
        padding,
    }
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, taps: Vec<Tap>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(invalid(format!("bad input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(invalid("model has no layers"));
        }
        let mut node_shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            if let Some((w, b)) = layer.params() {
                if !w.is_finite() || !b.is_finite() {
                    return Err(CodecError::NonFinite(format!("parameters of layer {i}")));
                }
            }
            let s = output_shape(i, layer, &node_shapes[i], &node_shapes)?;
            node_shapes.push(s);
        }
        for (i, t) in taps.iter().enumerate() {
            if t.layer >= layers.len() {
                return Err(invalid(format!("tap `{}` refers to missing layer {}", t.name, t.layer)));
            }
            if taps[..i].iter().any(|o| o.name == t.name) {
                return Err(invalid(format!("duplicate tap name `{}`", t.name)));
            }
        }
        let mut m = ModelSpec {
            input_shape,
            layers,
            taps,
            node_shapes,
            fingerprint: 0,
        };
        m.fingerprint = m.compute_fingerprint();
        Ok(m)
    }

    fn compute_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.input_shape.hash(&mut h);
        for layer in &self.layers {
            (layer.kind() as u8).hash(&mut h);
            match layer {
                LayerSpec::Conv2d { stride, padding, .. } => (stride, padding).hash(&mut h),
                LayerSpec::ResidualAdd { source } => source.hash(&mut h),
                LayerSpec::AvgPool { kernel, stride } => (kernel, stride).hash(&mut h),
                _ => {}
            }
            if let Some((w, b)) = layer.params() {
                for v in w.data().iter().chain(b.data()) {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.node_shapes.last().expect("non-empty model")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn n_outputs(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Parameter count over all dense and conv layers.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub(crate) fn tap_node(&self, name: &str) -> Result<usize> {
        self.taps
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.layer + 1)
            .ok_or_else(|| CodecError::UnknownTap(name.to_string()))
    }

    pub fn tap_shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.node_shapes[self.tap_node(name)?])
    }

    pub fn tap_channels(&self, name: &str) -> Result<usize> {
        Ok(self.tap_shape(name)?[0])
    }

    /// Replaces the taps, e.g. after loading or to probe extra layers.
    pub fn with_taps(&self, taps: Vec<Tap>) -> Result<Self> {
        ModelSpec::new(self.input_shape.clone(), self.layers.clone(), taps)
    }

    /// Mutates parameters in place, layer by layer, and re-validates.
    pub(crate) fn update_params(&mut self, mut f: impl FnMut(usize, &mut Tensor, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some((w, b)) = layer.params_mut() {
                f(i, w, b);
            }
        }
        self.fingerprint = self.compute_fingerprint();
    }

    fn resolve_mask(&self, mask: Option<&ChannelMask>) -> Result<Option<(usize, Vec<bool>)>> {
        match mask {
            None => Ok(None),
            Some(m) => {
                let node = self.tap_node(&m.tap)?;
                let c = self.node_shapes[node][0];
                if m.keep.len() != c {
                    return Err(invalid(format!(
                        "mask for tap `{}` has {} channels, layer has {c}",
                        m.tap,
                        m.keep.len()
                    )));
                }
                Ok(Some((node, m.keep.clone())))
            }
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<ActivationTrace> {
        self.run(input, None)
    }

    /// Forward pass with the channels not kept by `mask` zeroed at its tap.
    pub fn forward_masked(&self, input: &Tensor, mask: &ChannelMask) -> Result<ActivationTrace> {
        let resolved = self.resolve_mask(Some(mask))?;
        self.run(input, resolved)
    }

    fn run(&self, input: &Tensor, intervention: Option<(usize, Vec<bool>)>) -> Result<ActivationTrace> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(shape_err(0, &self.input_shape, input.shape()));
        }
        if !input.is_finite() {
            return Err(CodecError::NonFinite("model input".into()));
        }
        let mut nodes: Vec<Tensor> = Vec::with_capacity(self.layers.len() + 1);
        nodes.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &nodes[i];
            let out_shape = &self.node_shapes[i + 1];
            let data = match layer {
                LayerSpec::Dense { weight, bias } => {
                    ops::dense(x.data(), weight.data(), Some(bias.data()), out_shape[0])
                }
                LayerSpec::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => ops::conv2d(
                    &geom(x.shape(), weight.shape(), *stride, *padding),
                    x.data(),
                    weight.data(),
                    Some(bias.data()),
                ),
                LayerSpec::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Softplus => x.data().iter().map(|&v| ops::softplus(v)).collect(),
                LayerSpec::ResidualAdd { source } => {
                    x.data().iter().zip(nodes[*source].data()).map(|(a, b)| a + b).collect()
                }
                LayerSpec::Flatten => x.data().to_vec(),
                LayerSpec::AvgPool { kernel, stride } => {
                    let s = x.shape();
                    ops::avgpool(s[0], s[1], s[2], *kernel, *stride, x.data())
                }
            };
            let mut out = Tensor::new(out_shape.clone(), data)?;
            if let Some((node, keep)) = &intervention {
                if *node == i + 1 {
                    apply_channel_mask(&mut out, keep);
                }
            }
            nodes.push(out);
        }
        let last = nodes.last().expect("at least one layer");
        if !last.is_finite() {
            return Err(CodecError::NonFinite("model output".into()));
        }
        Ok(ActivationTrace {
            nodes,
            taps: self.taps.iter().map(|t| (t.name.clone(), t.layer + 1)).collect(),
            fingerprint: self.fingerprint,
            intervention,
        })
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.fingerprint != self.fingerprint || trace.nodes.len() != self.layers.len() + 1 {
            return Err(CodecError::TraceMismatch);
        }
        Ok(())
    }

    /// Reverse sweep from node `start` seeded with `seed`. Returns the gradient
    /// at every node `<= start` (`None` where no signal arrives). `path_mask`
    /// zeroes the signal flowing back through unselected channels of one node.
    pub(crate) fn backprop(
        &self,
        trace: &ActivationTrace,
        start: usize,
        seed: Tensor,
        path_mask: Option<&(usize, Vec<bool>)>,
        mut param_grads: Option<&mut super::ParamGrads>,
    ) -> Result<Vec<Option<Tensor>>> {
        self.check_trace(trace)?;
        if seed.shape() != self.node_shapes[start].as_slice() {
            return Err(shape_err(start.saturating_sub(1), &self.node_shapes[start], seed.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.layers.len() + 1];
        grads[start] = Some(seed);
        for i in (0..start).rev() {
            let Some(g_node) = grads[i + 1].as_ref() else {
                continue;
            };
            let mut g = g_node.clone();
            if let Some((node, keep)) = &trace.intervention {
                if *node == i + 1 {
                    apply_channel_mask(&mut g, keep);
                }
            }
            if let Some((node, keep)) = path_mask {
                if *node == i + 1 {
                    apply_channel_mask(&mut g, keep);
                }
            }
            let x = &trace.nodes[i];
            let in_shape = &self.node_shapes[i];
            let gin: Vec<f64> = match &self.layers[i] {
                LayerSpec::Dense { weight, .. } => {
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (gw, gb) = pg.layer_mut(i);
                        ops::dense_grad_params(g.data(), x.data(), gw, gb);
                    }
                    ops::dense_grad_input(g.data(), weight.data(), x.len())
                }
                LayerSpec::Conv2d {
                    weight,
                    stride,
                    padding,
                    ..
                } => {
                    let gm = geom(in_shape, weight.shape(), *stride, *padding);
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (gw, gb) = pg.layer_mut(i);
                        ops::conv2d_grad_params(&gm, g.data(), x.data(), gw, gb);
                    }
                    ops::conv2d_grad_input(&gm, g.data(), weight.data())
                }
                // subgradient at 0 is 0
                LayerSpec::Relu => g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
                LayerSpec::Softplus => g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| gv * ops::sigmoid(xv))
                    .collect(),
                LayerSpec::ResidualAdd { source } => {
                    accumulate(&mut grads[*source], &g);
                    g.data().to_vec()
                }
                LayerSpec::Flatten => g.data().to_vec(),
                LayerSpec::AvgPool { kernel, stride } => {
                    ops::avgpool_grad(in_shape[0], in_shape[1], in_shape[2], *kernel, *stride, g.data())
                }
            };
            let gin = Tensor::new(in_shape.clone(), gin)?;
            accumulate(&mut grads[i], &gin);
        }
        Ok(grads)
    }

    /// Gradient of `seed · output` with respect to every tapped activation.
    pub fn backward(&self, trace: &ActivationTrace, output_seed: &Tensor) -> Result<Vec<(String, Tensor)>> {
        let grads = self.backprop(trace, self.layers.len(), output_seed.clone(), None, None)?;
        Ok(self
            .taps
            .iter()
            .map(|t| {
                let node = t.layer + 1;
                let g = grads[node]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&self.node_shapes[node]));
                (t.name.clone(), g)
            })
            .collect())
    }

    /// Gradient of `seed · output` with respect to one tap.
    pub fn tap_gradient(&self, trace: &ActivationTrace, tap: &str, output_seed: &Tensor) -> Result<Tensor> {
        let node = self.tap_node(tap)?;
        let grads = self.backprop(trace, self.layers.len(), output_seed.clone(), None, None)?;
        Ok(grads[node]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.node_shapes[node])))
    }

    /// `∂(seed · y)/∂x` restricted to backward paths through the channels kept
    /// by `mask`; without a mask, the full input gradient.
    pub fn grad_wrt_input(&self, input: &Tensor, output_seed: &Tensor, mask: Option<&ChannelMask>) -> Result<Tensor> {
        let trace = self.forward(input)?;
        self.input_gradient(&trace, output_seed, mask)
    }

    pub fn input_gradient(&self, trace: &ActivationTrace, output_seed: &Tensor, mask: Option<&ChannelMask>) -> Result<Tensor> {
        let pm = self.resolve_mask(mask)?;
        let grads = self.backprop(trace, self.layers.len(), output_seed.clone(), pm.as_ref(), None)?;
        Ok(grads[0].clone().unwrap_or_else(|| Tensor::zeros(&self.input_shape)))
    }

    /// Input gradient of `seed · h_tap`, i.e. `J_tapᵀ seed`.
    pub fn vjp_from_tap(&self, trace: &ActivationTrace, tap: &str, seed: &Tensor) -> Result<Tensor> {
        let node = self.tap_node(tap)?;
        let grads = self.backprop(trace, node, seed.clone(), None, None)?;
        Ok(grads[0].clone().unwrap_or_else(|| Tensor::zeros(&self.input_shape)))
    }

    /// Forward-mode directional derivative of every node along `direction`
    /// in input space, linearized at `trace`.
    pub(crate) fn jvp_nodes(&self, trace: &ActivationTrace, direction: &Tensor) -> Result<Vec<Tensor>> {
        self.check_trace(trace)?;
        if direction.shape() != self.input_shape.as_slice() {
            return Err(shape_err(0, &self.input_shape, direction.shape()));
        }
        let mut tangents: Vec<Tensor> = Vec::with_capacity(self.layers.len() + 1);
        tangents.push(direction.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let t = &tangents[i];
            let x = &trace.nodes[i];
            let data: Vec<f64> = match layer {
                LayerSpec::Dense { weight, .. } => ops::dense(t.data(), weight.data(), None, weight.shape()[0]),
                LayerSpec::Conv2d {
                    weight,
                    stride,
                    padding,
                    ..
                } => ops::conv2d(&geom(t.shape(), weight.shape(), *stride, *padding), t.data(), weight.data(), None),
                LayerSpec::Relu => t
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&tv, &xv)| if xv > 0.0 { tv } else { 0.0 })
                    .collect(),
                LayerSpec::Softplus => t
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&tv, &xv)| tv * ops::sigmoid(xv))
                    .collect(),
                LayerSpec::ResidualAdd { source } => {
                    t.data().iter().zip(tangents[*source].data()).map(|(a, b)| a + b).collect()
                }
                LayerSpec::Flatten => t.data().to_vec(),
                LayerSpec::AvgPool { kernel, stride } => {
                    let s = t.shape();
                    ops::avgpool(s[0], s[1], s[2], *kernel, *stride, t.data())
                }
            };
            let mut out = Tensor::new(self.node_shapes[i + 1].clone(), data)?;
            if let Some((node, keep)) = &trace.intervention {
                if *node == i + 1 {
                    apply_channel_mask(&mut out, keep);
                }
            }
            tangents.push(out);
        }
        Ok(tangents)
    }

    /// Directional derivative `J_tap · direction` at the traced input.
    pub fn jvp_at_tap(&self, trace: &ActivationTrace, tap: &str, direction: &Tensor) -> Result<Tensor> {
        let node = self.tap_node(tap)?;
        let mut t = self.jvp_nodes(trace, direction)?;
        Ok(t.swap_remove(node))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

pub(crate) fn apply_channel_mask(t: &mut Tensor, keep: &[bool]) {
    let stride = t.channel_stride();
    for (c, chunk) in t.data_mut().chunks_mut(stride).enumerate() {
        if !keep[c] {
            chunk.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Recorded per-node activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    nodes: Vec<Tensor>,
    taps: Vec<(String, usize)>,
    fingerprint: u64,
    intervention: Option<(usize, Vec<bool>)>,
}

impl ActivationTrace {
    pub fn input(&self) -> &Tensor {
        &self.nodes[0]
    }

    pub fn output(&self) -> &Tensor {
        self.nodes.last().expect("non-empty trace")
    }

    pub fn activation(&self, tap: &str) -> Option<&Tensor> {
        self.taps
            .iter()
            .find(|(n, _)| n == tap)
            .map(|(_, node)| &self.nodes[*node])
    }

    /// Tap name → activation, in model tap order.
    pub fn tap_activations(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.taps.iter().map(|(n, node)| (n.as_str(), &self.nodes[*node]))
    }
}
