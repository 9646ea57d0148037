//! HTTP front end for the policy manager.
//!
//! [`build_state`] assembles a live device from a [`config::ServiceConfig`];
//! [`api::router`] exposes it as JSON over HTTP, with runtime prompts
//! streamed as server-sent events.

pub mod api;
pub mod config;

use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use policy_manager::engine::{Blacklist, Engine};
use policy_manager::generator::{DirectoryRepository, LibraryFacts, PolicyRepository};
use policy_manager::sim::Device;
use policy_manager::store::PolicyStore;
use policy_manager::{Catalog, SystemClock};

pub use api::{router, AppState};
pub use config::ServiceConfig;

/// Opens the store and wires engine, device and repository together.
pub fn build_state(config: &ServiceConfig) -> Result<AppState> {
    let catalog = Catalog::builtin();
    let facts = match &config.facts {
        Some(p) => LibraryFacts::from_file(p, &catalog)
            .with_context(|| format!("cannot load library facts from {}", p.display()))?,
        None => LibraryFacts::builtin(),
    };
    let mut store = PolicyStore::with_mode(&config.store.mode(), catalog.clone(), Arc::new(SystemClock))
        .context("cannot open policy store")?;
    if let Some(token) = &config.admin_token {
        store = store.with_admin_token(token.clone());
    }
    let mut engine = Engine::new(Arc::new(store), Arc::new(facts), config.engine.clone());
    if let Some(p) = &config.audit_log {
        engine = engine
            .with_audit_log(p)
            .with_context(|| format!("cannot open audit log {}", p.display()))?;
    }
    if let Some(p) = &config.blacklist {
        let list = Blacklist::from_file(p).with_context(|| format!("cannot read blacklist {}", p.display()))?;
        engine.set_blacklist(list);
    }
    let repository: Option<Arc<dyn PolicyRepository>> = config
        .repository
        .as_ref()
        .map(|dir| Arc::new(DirectoryRepository::new(dir, catalog.clone())) as Arc<dyn PolicyRepository>);
    let engine = Arc::new(engine);
    let device = Arc::new(Device::new(engine, repository.clone()));
    Ok(AppState { device, repository })
}

/// Expires prompts nobody is waiting on, such as those raised through
/// `POST /requests` without `wait`.
pub fn spawn_prompt_reaper(engine: Arc<Engine>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            for d in engine.expire_due() {
                tracing::debug!(request = %d.request_id, "prompt timed out");
            }
        }
    })
}
