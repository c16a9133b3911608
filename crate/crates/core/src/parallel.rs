//! Worker-pool control. Results never depend on the worker count: all
//! parallel reductions run over fixed-size chunks combined in order.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "CLICKMODEL_THREADS";

/// Sessions per reduction chunk.
pub const CHUNK: usize = 4096;

/// Worker cap from `CLICKMODEL_THREADS`, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (`None` = all cores).
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
