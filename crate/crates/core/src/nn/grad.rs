use super::ModelSpec;
use crate::contrib::TargetSpec;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Per-layer weight/bias gradient buffers, shaped like the model parameters.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    layers: Vec<Option<(Tensor, Tensor)>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &ModelSpec) -> Self {
        ParamGrads {
            layers: model
                .layers()
                .iter()
                .map(|l| l.params().map(|(w, b)| (Tensor::zeros(w.shape()), Tensor::zeros(b.shape()))))
                .collect(),
        }
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.layers[i].as_mut().expect("parameterized layer");
        (w.data_mut(), b.data_mut())
    }

    pub fn layer(&self, i: usize) -> Option<(&Tensor, &Tensor)> {
        self.layers[i].as_ref().map(|(w, b)| (w, b))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a.as_mut(), b.as_ref()) {
                aw.add_assign(bw);
                ab.add_assign(bb);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.data_mut().iter_mut().for_each(|v| *v *= c);
            b.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|(w, b)| w.is_finite() && b.is_finite())
    }
}

impl ModelSpec {
    /// Gradient of `seed · output` with respect to every parameter.
    pub fn param_gradient(&self, trace: &super::ActivationTrace, output_seed: &Tensor) -> Result<ParamGrads> {
        let mut pg = ParamGrads::zeros_like(self);
        self.backprop(trace, self.layers().len(), output_seed.clone(), None, Some(&mut pg))?;
        Ok(pg)
    }
}

/// Central-difference estimate of the input gradient of a scalar target.
///
/// The target is resolved once at the unperturbed input (e.g. the top-1
/// class is fixed there) so every probe differentiates the same function.
pub fn finite_difference_gradient(model: &ModelSpec, input: &Tensor, target: &TargetSpec, step: f64) -> Result<Tensor> {
    if !(step > 0.0) {
        return Err(invalid("finite-difference step must be > 0"));
    }
    let base = model.forward(input)?;
    let resolved = target.resolve(base.output())?;
    let mut grad = Tensor::zeros(input.shape());
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = resolved.value(model.forward(&probe)?.output());
        probe.data_mut()[i] = orig - step;
        let down = resolved.value(model.forward(&probe)?.output());
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}
