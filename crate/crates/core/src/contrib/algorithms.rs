use serde::{Deserialize, Serialize};

use super::target::{ResolvedTarget, TargetSpec};
use crate::error::{invalid, CodecError, Result};
use crate::nn::ModelSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// `(h - h') ⊙ ∂y/∂h` with the gradient taken at the input.
    #[serde(rename = "actgrad", alias = "act-grad")]
    ActGrad,
    /// `∂y/∂h ⊙ J_h (x - x')`.
    #[serde(rename = "hinput-grad", alias = "h-input-grad")]
    HInputGrad,
    /// Hidden integrated gradients along the straight input-space path.
    HiddenIg,
}

impl Algorithm {
    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::ActGrad => "actgrad",
            Algorithm::HInputGrad => "hinput-grad",
            Algorithm::HiddenIg => "hidden-ig",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actgrad" => Ok(Algorithm::ActGrad),
            "hinput-grad" | "hinputgrad" => Ok(Algorithm::HInputGrad),
            "hidden-ig" | "ig" | "hig" => Ok(Algorithm::HiddenIg),
            other => Err(invalid(format!("unknown contribution algorithm `{other}`"))),
        }
    }
}

/// Discretization of the hidden IG path integral.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiemannRule {
    /// `Σ_k ∂y/∂h|_{α=k/m} · (h(k/m) - h((k-1)/m))`
    #[default]
    Increment,
    /// `Σ_k ∂y/∂h|_{α=k/m} · J_h(k/m)(x - x')/m`; the pixel-sum of the
    /// input-space HIG decomposition.
    Tangent,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaselineSpec {
    /// Hidden baseline `h' = 0` (ActGrad only).
    ZeroHidden,
    ZeroInput,
    CustomInput(Tensor),
}

impl BaselineSpec {
    pub fn id(&self) -> String {
        match self {
            BaselineSpec::ZeroHidden => "zero-hidden".into(),
            BaselineSpec::ZeroInput => "zero-input".into(),
            BaselineSpec::CustomInput(t) => format!("custom-input{:?}", t.shape()),
        }
    }

    /// Baseline point in input space, if the baseline is defined there.
    pub fn input_point(&self, model: &ModelSpec) -> Result<Option<Tensor>> {
        match self {
            BaselineSpec::ZeroHidden => Ok(None),
            BaselineSpec::ZeroInput => Ok(Some(Tensor::zeros(model.input_shape()))),
            BaselineSpec::CustomInput(t) => {
                if t.shape() != model.input_shape() {
                    return Err(CodecError::Shape {
                        layer: 0,
                        expected: model.input_shape().to_vec(),
                        got: t.shape().to_vec(),
                    });
                }
                Ok(Some(t.clone()))
            }
        }
    }

    fn require_input_point(&self, model: &ModelSpec, what: &str) -> Result<Tensor> {
        self.input_point(model)?
            .ok_or_else(|| invalid(format!("{what} needs an input-space baseline, not {}", self.id())))
    }
}

#[derive(Clone, Debug)]
pub struct ContributionTensor {
    pub tap: String,
    pub algorithm: Algorithm,
    pub target: TargetSpec,
    pub values: Tensor,
    pub baseline: String,
    /// Integration steps (1 for single-point algorithms).
    pub steps: usize,
}

/// Full description of how contributions are computed.
#[derive(Clone, Debug, PartialEq)]
pub struct ContribMethod {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub baseline: BaselineSpec,
    pub rule: RiemannRule,
}

impl ContribMethod {
    /// Hidden IG, 10 steps, zero-input baseline.
    pub fn default_ig() -> Self {
        ContribMethod {
            algorithm: Algorithm::HiddenIg,
            steps: 10,
            baseline: BaselineSpec::ZeroInput,
            rule: RiemannRule::Increment,
        }
    }

    pub fn actgrad() -> Self {
        ContribMethod {
            algorithm: Algorithm::ActGrad,
            steps: 1,
            baseline: BaselineSpec::ZeroHidden,
            rule: RiemannRule::Increment,
        }
    }

    pub fn hinput_grad() -> Self {
        ContribMethod {
            algorithm: Algorithm::HInputGrad,
            steps: 1,
            baseline: BaselineSpec::ZeroInput,
            rule: RiemannRule::Increment,
        }
    }
}

fn resolve_at(model: &ModelSpec, input: &Tensor, target: &TargetSpec) -> Result<(crate::nn::ActivationTrace, ResolvedTarget)> {
    let trace = model.forward(input)?;
    let resolved = target.resolve(trace.output())?;
    Ok((trace, resolved))
}

fn pack(tap: &str, algorithm: Algorithm, target: &TargetSpec, values: Tensor, baseline: &BaselineSpec, steps: usize) -> ContributionTensor {
    ContributionTensor {
        tap: tap.to_string(),
        algorithm,
        target: target.clone(),
        values,
        baseline: baseline.id(),
        steps,
    }
}

pub fn actgrad(model: &ModelSpec, input: &Tensor, tap: &str, target: &TargetSpec, baseline: &BaselineSpec) -> Result<ContributionTensor> {
    let (trace, resolved) = resolve_at(model, input, target)?;
    let (_, seed) = resolved.value_and_seed(trace.output());
    let grad = model.tap_gradient(&trace, tap, &seed)?;
    let h = trace.activation(tap).ok_or_else(|| CodecError::UnknownTap(tap.into()))?;
    let values = match baseline.input_point(model)? {
        None => h.mul(&grad),
        Some(x0) => {
            let base = model.forward(&x0)?;
            let h0 = base.activation(tap).expect("tap checked above");
            h.sub(h0).mul(&grad)
        }
    };
    Ok(pack(tap, Algorithm::ActGrad, target, values, baseline, 1))
}

pub fn hinput_grad(model: &ModelSpec, input: &Tensor, tap: &str, target: &TargetSpec, baseline: &BaselineSpec) -> Result<ContributionTensor> {
    let x0 = baseline.require_input_point(model, "hinput_grad")?;
    let (trace, resolved) = resolve_at(model, input, target)?;
    let (_, seed) = resolved.value_and_seed(trace.output());
    let grad = model.tap_gradient(&trace, tap, &seed)?;
    let tangent = model.jvp_at_tap(&trace, tap, &input.sub(&x0))?;
    Ok(pack(tap, Algorithm::HInputGrad, target, grad.mul(&tangent), baseline, 1))
}

/// Point `k/m` of the way from `x0` to `x`; the last point is `x` itself.
pub(crate) fn path_point(x0: &Tensor, x: &Tensor, k: usize, m: usize) -> Tensor {
    if k == m {
        return x.clone();
    }
    let alpha = k as f64 / m as f64;
    x0.zip_map(x, |a, b| a + alpha * (b - a))
}

pub fn hidden_ig(model: &ModelSpec, input: &Tensor, tap: &str, target: &TargetSpec, baseline: &BaselineSpec, steps: usize) -> Result<ContributionTensor> {
    hidden_ig_with_rule(model, input, tap, target, baseline, steps, RiemannRule::Increment)
}

pub fn hidden_ig_with_rule(
    model: &ModelSpec,
    input: &Tensor,
    tap: &str,
    target: &TargetSpec,
    baseline: &BaselineSpec,
    steps: usize,
    rule: RiemannRule,
) -> Result<ContributionTensor> {
    if steps == 0 {
        return Err(invalid("hidden_ig needs at least one step"));
    }
    let x0 = baseline.require_input_point(model, "hidden_ig")?;
    let (_, resolved) = resolve_at(model, input, target)?;
    let delta = input.sub(&x0);
    let mut acc = Tensor::zeros(model.tap_shape(tap)?);
    let mut h_prev = model
        .forward(&x0)?
        .activation(tap)
        .cloned()
        .ok_or_else(|| CodecError::UnknownTap(tap.into()))?;
    for k in 1..=steps {
        let xk = path_point(&x0, input, k, steps);
        let trace = model.forward(&xk)?;
        let (_, seed) = resolved.value_and_seed(trace.output());
        let grad = model.tap_gradient(&trace, tap, &seed)?;
        match rule {
            RiemannRule::Increment => {
                let h = trace.activation(tap).expect("tap exists").clone();
                acc.add_assign(&grad.mul(&h.sub(&h_prev)));
                h_prev = h;
            }
            RiemannRule::Tangent => {
                let t = model.jvp_at_tap(&trace, tap, &delta)?;
                acc.axpy(1.0 / steps as f64, &grad.mul(&t));
            }
        }
    }
    Ok(pack(tap, Algorithm::HiddenIg, target, acc, baseline, steps))
}

/// Input-layer integrated gradients with the right-endpoint Riemann sum.
pub fn ig_input(model: &ModelSpec, input: &Tensor, target: &TargetSpec, baseline: &BaselineSpec, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(invalid("ig_input needs at least one step"));
    }
    let x0 = baseline.require_input_point(model, "ig_input")?;
    let (_, resolved) = resolve_at(model, input, target)?;
    let mut acc = Tensor::zeros(input.shape());
    for k in 1..=steps {
        let trace = model.forward(&path_point(&x0, input, k, steps))?;
        let (_, seed) = resolved.value_and_seed(trace.output());
        acc.add_assign(&model.input_gradient(&trace, &seed, None)?);
    }
    Ok(acc.scale(1.0 / steps as f64).mul(&input.sub(&x0)))
}

/// Dispatches on `method.algorithm`.
pub fn contribution(model: &ModelSpec, input: &Tensor, tap: &str, target: &TargetSpec, method: &ContribMethod) -> Result<ContributionTensor> {
    match method.algorithm {
        Algorithm::ActGrad => actgrad(model, input, tap, target, &method.baseline),
        Algorithm::HInputGrad => hinput_grad(model, input, tap, target, &method.baseline),
        Algorithm::HiddenIg => hidden_ig_with_rule(model, input, tap, target, &method.baseline, method.steps, method.rule),
    }
}
