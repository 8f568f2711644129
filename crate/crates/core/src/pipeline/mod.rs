//! Command-level orchestration: run configuration, checksummed artifacts
//! with embedded manifests, and one function per pipeline stage.

mod artifacts;
mod commands;
mod config;

pub use artifacts::{csv, ArtifactRef, Lock, ManifestSidecar, RunManifest, Session, TOOLKIT_VERSION};
pub use commands::{
    activation_file, ccm_file, contrib, contrib_file, correlate, correlation_from_envelope, correlation_to_envelope,
    inputmap, loadings_file, loadings_from_envelope, loadings_to_envelope, mode_channels, perturb, report, sae,
    sae_file, stats, train_toy, Outcome, DATASET_FILE, MODEL_FILE,
};
pub use config::{
    apply_override, BaselineChoice, ContribConfig, CorrelateConfig, InputMapConfig, PerturbConfig, RunConfig, Task,
};

/// Caps the global rayon pool; `None` reads `CODEC_THREADS`. Has no effect
/// once the pool exists.
pub fn init_thread_pool(threads: Option<usize>) -> crate::error::Result<()> {
    let threads = match threads {
        Some(n) => Some(n),
        None => match std::env::var("CODEC_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| crate::error::CodecError::Config(format!("CODEC_THREADS must be a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(crate::error::CodecError::Config("thread count must be positive".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
    Ok(())
}
