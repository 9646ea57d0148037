//! The device's policy repository.
//!
//! All mutations go through a single writer lock and are appended to an event
//! log before they become visible. Readers take an `Arc` snapshot of the state
//! and never block the writer for longer than a pointer swap.

mod log;
mod state;
mod types;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

pub use self::log::replay;
pub use state::{LogRecord, StoreEvent, StoreState};
pub use types::*;

use crate::clock::Clock;
use crate::schema::{AppPolicy, Catalog, Permission};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("app `{0}` is already installed")]
    AppAlreadyInstalled(String),
    #[error("unknown permission `{0}`")]
    UnknownPermission(String),
    #[error("invalid organizational profile: {0}")]
    Validation(String),
    #[error("organizational profile `{0}` is already active")]
    ProfileAlreadyActive(String),
    #[error("organizational profile `{0}` not found")]
    ProfileNotFound(String),
    #[error("removal refused: admin token rejected")]
    Refused,
    #[error("{sensor} is locked {mandated:?} by the organizational profile")]
    Locked { sensor: Sensor, mandated: SensorState },
    #[error("corrupt event log at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoreMode {
    Persistent(PathBuf),
    InMemory,
}

enum Backend {
    Memory,
    File(self::log::EventLog),
}

pub struct PolicyStore {
    catalog: Arc<Catalog>,
    clock: Arc<dyn Clock>,
    admin_token: Option<String>,
    writer: Mutex<Backend>,
    state: RwLock<Arc<StoreState>>,
}

impl std::fmt::Debug for PolicyStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyStore")
            .field("seq", &self.state.read().seq)
            .finish_non_exhaustive()
    }
}

impl PolicyStore {
    pub fn in_memory(catalog: Arc<Catalog>, clock: Arc<dyn Clock>) -> Self {
        PolicyStore {
            catalog,
            clock,
            admin_token: None,
            writer: Mutex::new(Backend::Memory),
            state: RwLock::new(Arc::new(StoreState::default())),
        }
    }

    /// Opens (or creates) a persistent store, replaying any existing log.
    pub fn open(path: &Path, catalog: Arc<Catalog>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let (log, state) = self::log::EventLog::open(path)?;
        Ok(PolicyStore {
            catalog,
            clock,
            admin_token: None,
            writer: Mutex::new(Backend::File(log)),
            state: RwLock::new(Arc::new(state)),
        })
    }

    pub fn with_mode(mode: &StoreMode, catalog: Arc<Catalog>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        match mode {
            StoreMode::InMemory => Ok(PolicyStore::in_memory(catalog, clock)),
            StoreMode::Persistent(p) => PolicyStore::open(p, catalog, clock),
        }
    }

    /// Shared secret required to remove an organizational profile.
    pub fn with_admin_token(mut self, token: impl Into<String>) -> Self {
        self.admin_token = Some(token.into());
        self
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// A consistent read-only view of the current state.
    pub fn state(&self) -> Arc<StoreState> {
        self.state.read().clone()
    }

    fn commit<F>(&self, build: F) -> Result<LogRecord, StoreError>
    where
        F: FnOnce(&StoreState, u64) -> Result<StoreEvent, StoreError>,
    {
        let mut backend = self.writer.lock();
        let current = self.state();
        let seq = current.seq + 1;
        let event = build(&current, seq)?;
        drop(current);
        let record = LogRecord {
            seq,
            at: self.clock.now(),
            event,
        };
        if let Backend::File(log) = &mut *backend {
            log.append(&record)?;
        }
        let mut guard = self.state.write();
        Arc::make_mut(&mut guard).apply(&record);
        Ok(record)
    }

    fn check_permission(&self, p: &Permission) -> Result<(), StoreError> {
        if self.catalog.is_dangerous(p) {
            Ok(())
        } else {
            Err(StoreError::UnknownPermission(p.to_string()))
        }
    }

    pub fn install_app(
        &self,
        app_id: &str,
        category: &str,
        declared_permissions: std::collections::BTreeSet<Permission>,
        policy: AppPolicy,
    ) -> Result<InstalledApp, StoreError> {
        let record = self.commit(|state, _| {
            if state.apps.contains_key(app_id) {
                return Err(StoreError::AppAlreadyInstalled(app_id.to_string()));
            }
            Ok(StoreEvent::AppInstalled(InstalledApp {
                app_id: app_id.to_string(),
                category: category.to_string(),
                declared_permissions,
                policy,
                installed_at: self.clock.now(),
            }))
        })?;
        match record.event {
            StoreEvent::AppInstalled(app) => Ok(app),
            _ => unreachable!("install commits an AppInstalled event"),
        }
    }

    pub fn record_user_policy(&self, new: NewUserPolicy) -> Result<UserPolicy, StoreError> {
        self.check_permission(&new.permission)?;
        let record = self.commit(|state, seq| {
            if let Scope::App(app) = &new.scope {
                if !state.apps.contains_key(app) {
                    return Err(StoreError::UnknownApp(app.clone()));
                }
            }
            Ok(StoreEvent::UserPolicyRecorded(UserPolicy {
                id: PolicyId(seq),
                scope: new.scope,
                permission: new.permission,
                purpose: new.purpose,
                origin: new.origin,
                action: new.action,
                stamp: Stamp {
                    seq,
                    at: self.clock.now(),
                },
            }))
        })?;
        match record.event {
            StoreEvent::UserPolicyRecorded(p) => Ok(p),
            _ => unreachable!("record commits a UserPolicyRecorded event"),
        }
    }

    /// Matching user policies, newest first.
    pub fn matching_policies(&self, key: &RequestKey) -> Vec<UserPolicy> {
        self.state().matching_policies(key).into_iter().cloned().collect()
    }

    pub fn install_org_profile(&self, profile: OrgProfile) -> Result<(), StoreError> {
        for (i, rule) in profile.rules.iter().enumerate() {
            if rule.action == PolicyAction::Ask {
                return Err(StoreError::Validation(format!(
                    "rule {i} uses `ask`; organizational rules must allow or deny"
                )));
            }
            if !self.catalog.is_dangerous(&rule.permission) {
                return Err(StoreError::Validation(format!(
                    "rule {i}: unknown permission `{}`",
                    rule.permission
                )));
            }
        }
        if profile.id.trim().is_empty() {
            return Err(StoreError::Validation("profile id is empty".into()));
        }
        self.commit(|state, _| {
            if let Some(active) = state.active_profile() {
                return Err(StoreError::ProfileAlreadyActive(active.id.clone()));
            }
            Ok(StoreEvent::OrgProfileInstalled(profile))
        })?;
        Ok(())
    }

    pub fn remove_org_profile(&self, id: &str, admin_token: &str) -> Result<(), StoreError> {
        self.commit(|state, _| {
            match state.org_profiles.get(id) {
                Some(p) if p.active => {}
                _ => return Err(StoreError::ProfileNotFound(id.to_string())),
            }
            match &self.admin_token {
                Some(t) if constant_time_eq(t.as_bytes(), admin_token.as_bytes()) => {
                    Ok(StoreEvent::OrgProfileRemoved { id: id.to_string() })
                }
                _ => {
                    tracing::warn!(profile = id, "organizational profile removal refused");
                    Err(StoreError::Refused)
                }
            }
        })?;
        Ok(())
    }

    pub fn set_quick_setting(&self, sensor: Sensor, state: SensorState) -> Result<(), StoreError> {
        self.commit(|current, _| {
            if let Some(mandated) = current.quick_settings.lock(sensor) {
                if mandated != state {
                    return Err(StoreError::Locked { sensor, mandated });
                }
            }
            Ok(StoreEvent::QuickSettingChanged { sensor, state })
        })?;
        Ok(())
    }

    /// Compacts the persistent log into a single snapshot record. A no-op for
    /// in-memory stores.
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let mut backend = self.writer.lock();
        if let Backend::File(log) = &mut *backend {
            let state = self.state();
            log.compact(&state, self.clock.now())?;
        }
        Ok(())
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
