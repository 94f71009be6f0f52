//! Configuration, optimization, the two training stages, inference,
//! evaluation and the finite-difference gradient suite.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod optim;
pub mod train;

pub use checkpoint::{Checkpoint, Stage};
pub use config::{Config, TrainConfig};
pub use eval::{evaluate, generate_pseudo_labels, EvalRecord, EvalReport, Split};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use optim::Adam;
pub use train::{
    infer, initial_checkpoint, retrain_fused, train_supervised, LossRecord, Model, TrainOutcome, CHECKPOINT_FILE,
    LOSS_LOG_FILE,
};

use crate::error::Result;

/// Environment variable holding the worker thread count (default 1).
pub const THREADS_ENV: &str = "SFSNID_THREADS";

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

/// Maps `f` over `items` on up to [`thread_count`] threads. Results keep
/// the input order, and the first error (in input order) is returned.
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let threads = thread_count().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let results: Vec<Vec<Result<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    results.into_iter().flatten().collect()
}
