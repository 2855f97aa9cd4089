//! Pairwise preference annotation for model explanations.
//!
//! Label-consistent explanation pairs are grouped into batches and assigned
//! to registered annotators. Each annotator sees the two explanations in an
//! order fixed by a keyed hash of (seed, sample, annotator) and never learns
//! which model wrote which. Votes are resolved to model names on the server
//! and exported for majority-vote aggregation.

pub mod clock;
pub mod error;
pub mod http;
pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use clock::{Clock, StepClock, SystemClock};
pub use error::{AnnotationError, Result};
pub use http::{router, AppState};
pub use model::{order_flip, resolve_choice, AnnotationItem, AnnotatorProfile, Batch, Choice, Demographics, PairSource, StoredVote, CRITERIA};
pub use store::{ExportFormat, NextItem, Progress, Store};

pub const SEED_ENV: &str = "MODKIT_ANNOTATION_SEED";
pub const DATA_DIR_ENV: &str = "MODKIT_ANNOTATION_DATA";
pub const ADDR_ENV: &str = "MODKIT_ANNOTATION_ADDR";
pub const ADMIN_TOKEN_ENV: &str = "MODKIT_ANNOTATION_ADMIN_TOKEN";
pub const ASSIGNMENTS_ENV: &str = "MODKIT_ANNOTATION_ASSIGNMENTS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub seed: String,
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
    pub admin_token: Option<String>,
    /// Odd by default so two-way choices rarely tie.
    pub assignments_per_item: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            seed: "0".into(),
            data_dir: PathBuf::from("annotation-data"),
            addr: SocketAddr::from(([127, 0, 0, 1], 8787)),
            admin_token: None,
            assignments_per_item: 3,
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by the `MODKIT_ANNOTATION_*` variables.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut c = Self::default();
        if let Some(seed) = get(SEED_ENV) {
            c.seed = seed;
        }
        if let Some(dir) = get(DATA_DIR_ENV) {
            c.data_dir = dir.into();
        }
        if let Some(addr) = get(ADDR_ENV) {
            c.addr = addr.parse().map_err(|e| AnnotationError::Config(format!("{ADDR_ENV}={addr}: {e}")))?;
        }
        c.admin_token = get(ADMIN_TOKEN_ENV).filter(|t| !t.is_empty());
        if let Some(n) = get(ASSIGNMENTS_ENV) {
            c.assignments_per_item = n
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| AnnotationError::Config(format!("{ASSIGNMENTS_ENV}={n}: expected a positive integer")))?;
        }
        Ok(c)
    }

    pub fn app_state(&self, clock: Arc<dyn Clock>) -> Result<AppState> {
        Ok(AppState {
            store: Arc::new(Store::open(&self.data_dir, self.seed.clone(), clock)?),
            admin_token: self.admin_token.clone(),
            default_assignments: self.assignments_per_item,
        })
    }
}

/// Serve until ctrl-c, then write a final snapshot.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let state = config.app_state(Arc::new(SystemClock))?;
    let store = state.store.clone();
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    store.snapshot()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_variables() {
        let vars = [(SEED_ENV, "abc"), (ADDR_ENV, "0.0.0.0:9000"), (ASSIGNMENTS_ENV, "5"), (ADMIN_TOKEN_ENV, "t")];
        let c = ServiceConfig::from_lookup(|k| vars.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())).unwrap();
        assert_eq!(c.seed, "abc");
        assert_eq!(c.addr.port(), 9000);
        assert_eq!(c.assignments_per_item, 5);
        assert_eq!(c.admin_token.as_deref(), Some("t"));
        assert_eq!(ServiceConfig::from_lookup(|_| None).unwrap(), ServiceConfig::default());
        assert!(ServiceConfig::from_lookup(|k| (k == ASSIGNMENTS_ENV).then(|| "0".to_string())).is_err());
        assert!(ServiceConfig::from_lookup(|k| (k == ADDR_ENV).then(|| "nope".to_string())).is_err());
    }
}
