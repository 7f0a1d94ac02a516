//! Library surface of the `spectrasweep` command-line tool, so pipelines and
//! test suites can drive the same code paths the binary does.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::run_pipeline;
pub use config::{DatasetManifest, DatasetPair, ReconstructMethod, RunConfig, RunManifest};

/// Cap the global thread pool from `SPECTRASWEEP_THREADS` if set. Safe to
/// call more than once; later calls are no-ops.
pub fn init_threads() {
    if let Ok(value) = std::env::var("SPECTRASWEEP_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}
