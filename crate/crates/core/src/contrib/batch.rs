use rayon::prelude::*;

use super::algorithms::{contribution, ContribMethod, ContributionTensor};
use super::target::TargetSpec;
use crate::error::{CodecError, Result};
use crate::nn::ModelSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Serial,
    /// Fan out across inputs on the current rayon pool; results are merged
    /// back in input order.
    Parallel,
}

const CHUNK: usize = 32;

fn one(model: &ModelSpec, index: usize, input: &Tensor, tap: &str, target: &TargetSpec, method: &ContribMethod) -> Result<ContributionTensor> {
    contribution(model, input, tap, target, method).map_err(|e| CodecError::Sample {
        index,
        source: Box::new(e),
    })
}

/// Computes contributions for every input and hands them to `sink` in input
/// order. The first failing sample aborts the batch.
pub fn batch_contributions_streamed(
    model: &ModelSpec,
    inputs: &[Tensor],
    tap: &str,
    target: &TargetSpec,
    method: &ContribMethod,
    execution: Execution,
    mut sink: impl FnMut(usize, ContributionTensor) -> Result<()>,
) -> Result<()> {
    model.tap_shape(tap)?;
    for (chunk_idx, chunk) in inputs.chunks(CHUNK).enumerate() {
        let base = chunk_idx * CHUNK;
        let results: Vec<Result<ContributionTensor>> = match execution {
            Execution::Serial => chunk
                .iter()
                .enumerate()
                .map(|(i, x)| one(model, base + i, x, tap, target, method))
                .collect(),
            Execution::Parallel => chunk
                .par_iter()
                .enumerate()
                .map(|(i, x)| one(model, base + i, x, tap, target, method))
                .collect(),
        };
        for (i, r) in results.into_iter().enumerate() {
            sink(base + i, r?)?;
        }
    }
    Ok(())
}

pub fn batch_contributions(
    model: &ModelSpec,
    inputs: &[Tensor],
    tap: &str,
    target: &TargetSpec,
    method: &ContribMethod,
    execution: Execution,
) -> Result<Vec<ContributionTensor>> {
    let mut out = Vec::with_capacity(inputs.len());
    batch_contributions_streamed(model, inputs, tap, target, method, execution, |_, c| {
        out.push(c);
        Ok(())
    })?;
    Ok(out)
}
