//! The policy decision point.
//!
//! Every request is attributed to a purpose and an origin, then walked
//! through the tiers: organizational profile, quick settings, user policies
//! (newest first), and finally the user through a runtime prompt. Automated
//! decisions feed a rate-limited silent notification feed; every decision is
//! appended to an audit log.

mod cards;
mod evaluate;
mod notify;
mod recommend;
mod request;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

pub use cards::{
    app_settings, build_cards, global_settings, lock_for, AppSettings, GlobalDestination, GlobalPurpose,
    GlobalSettings, InstallPlan, LockSource, PolicyCard,
};
pub use evaluate::{attribute_clause, evaluate, origin_of_class, origin_of_clause, Outcome};
pub use notify::{deep_link, Emitted, Notification, NotificationCenter};
pub use recommend::{access_counts, recommendations, Blacklist, Priority, Recommendation};
pub use request::{
    AuditRecord, Decision, DecisionSource, PermissionRequest, PromptEvent, PromptId, PromptTicket, Remember,
    RequestKind, Resolution, SourceKind,
};

use crate::clock::Timestamp;
use crate::generator::{fallback_policy, AppDescriptor, LibraryFacts, PolicyRepository};
use crate::schema::{Catalog, ParseError, Permission, PolicyParser, Provenance, Purpose};
use crate::store::{
    NewUserPolicy, OriginSelector, PolicyStore, PurposeSelector, RequestKey, Scope, StoreError, Verdict,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    #[serde(with = "secs")]
    pub prompt_timeout: Duration,
    #[serde(with = "secs")]
    pub suppression_window: Duration,
    /// Multiple of the category median above which an app is flagged.
    pub outlier_factor: f64,
    /// How far back recommendations look.
    #[serde(with = "secs")]
    pub recommendation_window: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            prompt_timeout: Duration::from_secs(60),
            suppression_window: Duration::from_secs(5 * 60),
            outlier_factor: 5.0,
            recommendation_window: Duration::from_secs(7 * 24 * 3600),
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("unknown permission `{0}`")]
    UnknownPermission(String),
    #[error("unknown purpose `{0}`")]
    UnknownPurpose(String),
    #[error("no outstanding prompt {0}")]
    UnknownPrompt(PromptId),
    #[error("{prompt_id} was already answered")]
    AlreadyAnswered { prompt_id: PromptId },
    #[error("{prompt_id} expired")]
    Expired {
        prompt_id: PromptId,
        decision: Box<Decision>,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A submitted request: decided on the spot or waiting for the user.
#[derive(Debug)]
pub enum Pending {
    Decided(Decision),
    Waiting {
        ticket: PromptTicket,
        reply: oneshot::Receiver<Decision>,
    },
}

struct Waiter {
    request: PermissionRequest,
    key: RequestKey,
    reply: Option<oneshot::Sender<Decision>>,
}

struct Outstanding {
    ticket: PromptTicket,
    waiters: Vec<Waiter>,
}

enum Closed {
    Answered,
    Expired(Decision),
}

type PromptKey = (String, Permission, Purpose);

struct Inner {
    next_request: u64,
    next_prompt: u64,
    outstanding: BTreeMap<PromptId, Outstanding>,
    by_key: HashMap<PromptKey, PromptId>,
    closed: HashMap<PromptId, Closed>,
    notifications: NotificationCenter,
    log: Vec<AuditRecord>,
    audit_file: Option<File>,
}

pub struct Engine {
    store: Arc<PolicyStore>,
    facts: Arc<LibraryFacts>,
    config: EngineConfig,
    inner: Mutex<Inner>,
    events: broadcast::Sender<PromptEvent>,
    blacklist: parking_lot::RwLock<Blacklist>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(store: Arc<PolicyStore>, facts: Arc<LibraryFacts>, config: EngineConfig) -> Self {
        let (events, _) = broadcast::channel(256);
        Engine {
            store,
            facts,
            inner: Mutex::new(Inner {
                next_request: 1,
                next_prompt: 1,
                outstanding: BTreeMap::new(),
                by_key: HashMap::new(),
                closed: HashMap::new(),
                notifications: NotificationCenter::new(config.suppression_window),
                log: Vec::new(),
                audit_file: None,
            }),
            config,
            events,
            blacklist: parking_lot::RwLock::new(Blacklist::default()),
        }
    }

    /// Appends every decision to `path` as a JSON line.
    pub fn with_audit_log(self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.inner.lock().audit_file = Some(file);
        Ok(self)
    }

    pub fn set_blacklist(&self, blacklist: Blacklist) {
        *self.blacklist.write() = blacklist;
    }

    pub fn store(&self) -> &Arc<PolicyStore> {
        &self.store
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        self.store.catalog()
    }

    pub fn facts(&self) -> &Arc<LibraryFacts> {
        &self.facts
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn now(&self) -> Timestamp {
        self.store.clock().now()
    }

    // ---- install ----

    /// Chooses the app's policy (embedded, then repository, then fallback)
    /// and builds its cards without installing anything.
    pub fn plan_install(
        &self,
        descriptor: &AppDescriptor,
        embedded: Option<&[u8]>,
        repository: Option<&dyn PolicyRepository>,
    ) -> Result<InstallPlan, EngineError> {
        let state = self.store.state();
        if state.app(&descriptor.app_id).is_some() {
            return Err(StoreError::AppAlreadyInstalled(descriptor.app_id.clone()).into());
        }
        let catalog = self.catalog();
        let policy = match embedded {
            Some(raw) => {
                PolicyParser::new(catalog)
                    .mode(Provenance::DeveloperEmbedded.default_mode())
                    .parse(raw, &descriptor.app_id, Provenance::DeveloperEmbedded)?
                    .policy
            }
            None => match repository.and_then(|r| r.lookup(&descriptor.app_id)) {
                Some(p) => p,
                None => fallback_policy(&descriptor.app_id, &descriptor.declared_permissions, catalog),
            },
        };
        let cards = build_cards(&descriptor.app_id, &policy, &state, &self.facts, catalog);
        Ok(InstallPlan {
            app_id: descriptor.app_id.clone(),
            policy,
            cards,
        })
    }

    /// Install-time hook: plans, then records the app with its policy.
    pub fn on_app_install(
        &self,
        descriptor: &AppDescriptor,
        embedded: Option<&[u8]>,
        repository: Option<&dyn PolicyRepository>,
    ) -> Result<InstallPlan, EngineError> {
        let plan = self.plan_install(descriptor, embedded, repository)?;
        self.store.install_app(
            &descriptor.app_id,
            &descriptor.app_category,
            descriptor.declared_permissions.clone(),
            plan.policy.clone(),
        )?;
        Ok(plan)
    }

    // ---- resolution ----

    /// Fills in purpose and origin and checks the request against the
    /// installed app.
    pub fn attribute(&self, request: &PermissionRequest) -> Result<RequestKey, EngineError> {
        self.attribute_with_clause(request).map(|(k, _)| k)
    }

    fn attribute_with_clause(
        &self,
        request: &PermissionRequest,
    ) -> Result<(RequestKey, Option<crate::schema::PolicyClause>), EngineError> {
        let catalog = self.catalog();
        if !catalog.is_dangerous(&request.permission) {
            return Err(EngineError::UnknownPermission(request.permission.to_string()));
        }
        let state = self.store.state();
        let app = state
            .app(&request.app_id)
            .ok_or_else(|| EngineError::UnknownApp(request.app_id.clone()))?;
        let clause = attribute_clause(
            &app.policy,
            &request.permission,
            &request.class_name,
            &request.method_name,
        );
        let (purpose, clause) = match &request.purpose {
            Some(p) => {
                let p = catalog
                    .normalize_purpose(p.canonical_name())
                    .map_err(|_| EngineError::UnknownPurpose(p.to_string()))?;
                let clause = clause.filter(|c| c.purpose == p).cloned();
                (p, clause)
            }
            None => (
                clause.map_or_else(|| catalog.fallback_purpose(), |c| c.purpose.clone()),
                clause.cloned(),
            ),
        };
        let origin = request
            .origin
            .clone()
            .unwrap_or_else(|| origin_of_class(&request.class_name, &self.facts));
        Ok((
            RequestKey {
                app_id: request.app_id.clone(),
                permission: request.permission.clone(),
                purpose,
                origin,
            },
            clause,
        ))
    }

    /// Resolves a request. When no stored rule decides, a prompt is issued
    /// (or joined, if one is already outstanding for the same app,
    /// permission and purpose) and the caller receives its ticket.
    pub fn resolve(&self, request: PermissionRequest) -> Result<Resolution, EngineError> {
        self.submit(request, None)
    }

    fn submit(
        &self,
        mut request: PermissionRequest,
        reply: Option<oneshot::Sender<Decision>>,
    ) -> Result<Resolution, EngineError> {
        self.expire_due();
        let (key, clause) = self.attribute_with_clause(&request)?;
        let now = self.now();
        let mut inner = self.inner.lock();
        if request.request_id.is_empty() {
            request.request_id = format!("req-{}", inner.next_request);
            inner.next_request += 1;
        }
        request.timestamp = now;
        request.origin = Some(key.origin.clone());
        if request.purpose.is_some() {
            request.purpose = Some(key.purpose.clone());
        }

        let state = self.store.state();
        match evaluate(&state, &key) {
            Outcome::Decided { action, source } => {
                let decision = Decision {
                    request_id: request.request_id.clone(),
                    action,
                    source,
                    resolved_at: now,
                };
                inner
                    .notifications
                    .emit(&key.app_id, &key.permission, &key.purpose, &decision);
                Self::record(&mut inner, request, key, decision.clone(), state.seq);
                Ok(Resolution::Decided(decision))
            }
            Outcome::Prompt => {
                let pk = (key.app_id.clone(), key.permission.clone(), key.purpose.clone());
                if let Some(id) = inner.by_key.get(&pk).copied() {
                    let o = inner.outstanding.get_mut(&id).expect("indexed prompt is outstanding");
                    o.waiters.push(Waiter { request, key, reply });
                    return Ok(Resolution::NeedsPrompt(o.ticket.clone()));
                }
                let prompt_id = PromptId(inner.next_prompt);
                inner.next_prompt += 1;
                let ticket = PromptTicket {
                    prompt_id,
                    request: request.clone(),
                    key: key.clone(),
                    clause,
                    issued_at: now,
                    deadline: now.saturating_add(self.config.prompt_timeout),
                };
                inner.by_key.insert(pk, prompt_id);
                inner.outstanding.insert(
                    prompt_id,
                    Outstanding {
                        ticket: ticket.clone(),
                        waiters: vec![Waiter { request, key, reply }],
                    },
                );
                let _ = self.events.send(PromptEvent::Issued { ticket: ticket.clone() });
                Ok(Resolution::NeedsPrompt(ticket))
            }
        }
    }

    fn record(inner: &mut Inner, request: PermissionRequest, key: RequestKey, decision: Decision, seq: u64) {
        let record = AuditRecord {
            request,
            key,
            decision,
            store_seq: seq,
        };
        if let Some(f) = inner.audit_file.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("audit record serializes");
            line.push(b'\n');
            if let Err(e) = f.write_all(&line) {
                tracing::error!(error = %e, "cannot append to decision audit log");
            }
        }
        inner.log.push(record);
    }

    fn close(
        &self,
        inner: &mut Inner,
        prompt_id: PromptId,
        action: Verdict,
        source: DecisionSource,
    ) -> Option<Decision> {
        let o = inner.outstanding.remove(&prompt_id)?;
        let t = &o.ticket;
        inner
            .by_key
            .remove(&(t.key.app_id.clone(), t.key.permission.clone(), t.key.purpose.clone()));
        let now = self.now();
        let seq = self.store.state().seq;
        let mut first = None;
        for w in o.waiters {
            let decision = Decision {
                request_id: w.request.request_id.clone(),
                action,
                source: source.clone(),
                resolved_at: now,
            };
            if let Some(tx) = w.reply {
                let _ = tx.send(decision.clone());
            }
            first.get_or_insert_with(|| decision.clone());
            Self::record(inner, w.request, w.key, decision, seq);
        }
        first
    }

    /// Answers an outstanding prompt. Every request waiting on it receives
    /// the answer. With `remember`, a user policy for the exact
    /// (permission, purpose, origin) is recorded at app or global scope.
    pub fn answer_prompt(
        &self,
        prompt_id: PromptId,
        action: Verdict,
        remember: Remember,
    ) -> Result<Decision, EngineError> {
        self.expire_due();
        let mut inner = self.inner.lock();
        let Some(o) = inner.outstanding.get(&prompt_id) else {
            return Err(match inner.closed.get(&prompt_id) {
                Some(Closed::Expired(d)) => EngineError::Expired {
                    prompt_id,
                    decision: Box::new(d.clone()),
                },
                Some(Closed::Answered) => EngineError::AlreadyAnswered { prompt_id },
                None => EngineError::UnknownPrompt(prompt_id),
            });
        };
        let key = o.ticket.key.clone();
        let scope = match remember {
            Remember::None => None,
            Remember::ThisApp => Some(Scope::App(key.app_id.clone())),
            Remember::AllApps => Some(Scope::Global),
        };
        if let Some(scope) = scope {
            self.store.record_user_policy(NewUserPolicy {
                scope,
                permission: key.permission.clone(),
                purpose: PurposeSelector::Specific(key.purpose.clone()),
                origin: OriginSelector::exactly(&key.origin),
                action: action.into(),
            })?;
        }
        let decision = self
            .close(
                &mut inner,
                prompt_id,
                action,
                DecisionSource::RuntimePrompt { prompt_id },
            )
            .expect("prompt was outstanding");
        inner.closed.insert(prompt_id, Closed::Answered);
        drop(inner);
        let _ = self.events.send(PromptEvent::Answered {
            prompt_id,
            decision: decision.clone(),
        });
        Ok(decision)
    }

    fn expire(&self, inner: &mut Inner, prompt_id: PromptId) -> Option<Decision> {
        let d = self.close(
            inner,
            prompt_id,
            Verdict::Deny,
            DecisionSource::PromptTimeout { prompt_id },
        )?;
        inner.closed.insert(prompt_id, Closed::Expired(d.clone()));
        let _ = self.events.send(PromptEvent::Expired { prompt_id });
        Some(d)
    }

    /// Denies every prompt whose deadline has passed. Returns the decisions
    /// of the prompts' first requests.
    pub fn expire_due(&self) -> Vec<Decision> {
        let now = self.now();
        let mut inner = self.inner.lock();
        let due: Vec<PromptId> = inner
            .outstanding
            .values()
            .filter(|o| now > o.ticket.deadline)
            .map(|o| o.ticket.prompt_id)
            .collect();
        due.into_iter().filter_map(|id| self.expire(&mut inner, id)).collect()
    }

    /// Denies a prompt now, regardless of its deadline.
    pub fn expire_prompt(&self, prompt_id: PromptId) -> Option<Decision> {
        let mut inner = self.inner.lock();
        self.expire(&mut inner, prompt_id)
    }

    pub fn outstanding_prompts(&self) -> Vec<PromptTicket> {
        self.inner
            .lock()
            .outstanding
            .values()
            .map(|o| o.ticket.clone())
            .collect()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<PromptEvent> {
        self.events.subscribe()
    }

    // ---- platform hooks ----

    /// Permission-check hook. Waits for the user when a prompt is needed,
    /// up to the prompt timeout, after which the request is denied.
    pub async fn on_dangerous_permission_request(
        &self,
        mut request: PermissionRequest,
    ) -> Result<Decision, EngineError> {
        request.kind = RequestKind::DangerousPermission;
        self.await_decision(request).await
    }

    /// Private-data module hook. Same logic as the permission hook.
    pub async fn on_private_data_request(&self, mut request: PermissionRequest) -> Result<Decision, EngineError> {
        request.kind = RequestKind::PrivateData;
        self.await_decision(request).await
    }

    async fn await_decision(&self, request: PermissionRequest) -> Result<Decision, EngineError> {
        match self.submit_waiting(request)? {
            Pending::Decided(d) => Ok(d),
            Pending::Waiting { ticket, reply } => self.wait(ticket.prompt_id, reply).await,
        }
    }

    /// Resolves a request and, when a prompt is needed, hands back a
    /// receiver for the eventual answer. Pair with [`Engine::wait`].
    pub fn submit_waiting(&self, request: PermissionRequest) -> Result<Pending, EngineError> {
        let (tx, rx) = oneshot::channel();
        Ok(match self.submit(request, Some(tx))? {
            Resolution::Decided(d) => Pending::Decided(d),
            Resolution::NeedsPrompt(ticket) => Pending::Waiting { ticket, reply: rx },
        })
    }

    /// Waits up to the prompt timeout for an answer, then denies.
    pub async fn wait(
        &self,
        prompt_id: PromptId,
        mut reply: oneshot::Receiver<Decision>,
    ) -> Result<Decision, EngineError> {
        if let Ok(Ok(d)) = tokio::time::timeout(self.config.prompt_timeout, &mut reply).await {
            return Ok(d);
        }
        self.expire_prompt(prompt_id);
        reply.await.map_err(|_| EngineError::UnknownPrompt(prompt_id))
    }

    // ---- notifications ----

    pub fn notifications(&self) -> Vec<Notification> {
        self.inner.lock().notifications.visible()
    }

    pub fn all_notifications(&self) -> Vec<Notification> {
        self.inner.lock().notifications.all().to_vec()
    }

    pub fn dismiss_notification(&self, id: u64) -> bool {
        self.inner.lock().notifications.dismiss(id)
    }

    /// An app came to the foreground; its suppression windows restart.
    pub fn session_start(&self, app_id: &str) {
        self.inner.lock().notifications.session_start(app_id);
    }

    // ---- views ----

    pub fn decision_log(&self) -> Vec<AuditRecord> {
        self.inner.lock().log.clone()
    }

    pub fn app_settings(&self, app_id: &str) -> Result<AppSettings, EngineError> {
        app_settings(app_id, &self.store.state(), &self.facts, self.catalog())
            .ok_or_else(|| EngineError::UnknownApp(app_id.to_string()))
    }

    pub fn global_settings(&self, permission: &Permission) -> Result<GlobalSettings, EngineError> {
        if !self.catalog().is_dangerous(permission) {
            return Err(EngineError::UnknownPermission(permission.to_string()));
        }
        Ok(global_settings(
            permission,
            &self.store.state(),
            &self.facts,
            self.catalog(),
        ))
    }

    pub fn recommendations(&self) -> Vec<Recommendation> {
        let now = self.now();
        let since = now.saturating_sub(self.config.recommendation_window);
        let counts = {
            let inner = self.inner.lock();
            access_counts(&inner.log, since, Timestamp(now.0.saturating_add(1)))
        };
        recommendations(
            &self.store.state(),
            &counts,
            &self.blacklist.read(),
            self.config.outlier_factor,
        )
    }
}
