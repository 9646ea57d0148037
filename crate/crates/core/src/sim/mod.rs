//! A simulated device: installs apps, replays scripted request traces
//! against the engine and summarizes how apps used sensitive data.
//!
//! Batch runs use a virtual clock and a fresh in-memory store, so the same
//! scenario always yields the same report. Interactive runs drive a live
//! [`Device`] in real time and leave prompts to whoever is subscribed.

mod scenario;
mod summary;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use scenario::{Expectations, ExpectedDecision, Scenario, ScenarioApp, ScenarioError, TraceEvent, TraceKind};
pub use summary::{app_groups, usage_summary, AppGroups, Counts, GroupThresholds, UsageRow, UsageSummary, Window};

use crate::clock::{Timestamp, VirtualClock};
use crate::engine::{
    AuditRecord, Blacklist, Engine, EngineConfig, EngineError, InstallPlan, Notification, Pending, PromptId,
    PromptTicket, Recommendation, Resolution,
};
use crate::generator::{AppDescriptor, LibraryFacts, PolicyRepository};
use crate::schema::Catalog;
use crate::store::{PolicyStore, StoreError, StoreState};

/// The runtime behind the service API.
pub struct Device {
    engine: Arc<Engine>,
    repository: Option<Arc<dyn PolicyRepository>>,
    groups: GroupThresholds,
    run_lock: tokio::sync::Mutex<()>,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("engine", &self.engine)
            .finish_non_exhaustive()
    }
}

impl Device {
    pub fn new(engine: Arc<Engine>, repository: Option<Arc<dyn PolicyRepository>>) -> Self {
        Device {
            engine,
            repository,
            groups: GroupThresholds::default(),
            run_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn with_group_thresholds(mut self, groups: GroupThresholds) -> Self {
        self.groups = groups;
        self
    }

    /// A fresh in-memory device on a virtual clock starting at zero.
    pub fn virtual_device(
        catalog: Arc<Catalog>,
        facts: Arc<LibraryFacts>,
        config: EngineConfig,
        repository: Option<Arc<dyn PolicyRepository>>,
    ) -> (Device, Arc<VirtualClock>) {
        let clock = Arc::new(VirtualClock::new(Timestamp(0)));
        let store = PolicyStore::in_memory(catalog, clock.clone());
        let engine = Engine::new(Arc::new(store), facts, config);
        (Device::new(Arc::new(engine), repository), clock)
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn store(&self) -> &Arc<PolicyStore> {
        self.engine.store()
    }

    pub fn now(&self) -> Timestamp {
        self.store().clock().now()
    }

    pub fn install(&self, descriptor: &AppDescriptor, embedded: Option<&[u8]>) -> Result<InstallPlan, EngineError> {
        self.engine
            .on_app_install(descriptor, embedded, self.repository.as_deref())
    }

    pub fn summary(&self, window: Window) -> UsageSummary {
        usage_summary(&self.engine.decision_log(), self.now(), window, self.engine.catalog())
    }

    pub fn app_groups(&self) -> AppGroups {
        app_groups(
            &self.store().state(),
            &self.engine.decision_log(),
            self.now(),
            &self.groups,
        )
    }

    pub fn recommendations(&self) -> Vec<Recommendation> {
        self.engine.recommendations()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Batch,
    Interactive,
}

/// Something a scenario asked for that could not happen, such as answering
/// a prompt when none is outstanding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioIssue {
    pub index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub mode: RunMode,
    pub install_plans: Vec<InstallPlan>,
    /// Every decision made during the run, in resolution order.
    pub decisions: Vec<AuditRecord>,
    /// Prompts issued during the run, in issue order.
    pub prompts: Vec<PromptTicket>,
    pub notifications: Vec<Notification>,
    pub issues: Vec<ScenarioIssue>,
    /// Unmet expectations declared by the scenario.
    pub expectation_failures: Vec<String>,
    pub final_state: StoreState,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.expectation_failures.is_empty()
    }
}

fn setup(device: &Device, scenario: &Scenario) -> Result<(), ScenarioError> {
    if !scenario.blacklist.is_empty() {
        device
            .engine
            .set_blacklist(Blacklist::parse(&scenario.blacklist.join("\n")));
    }
    if let Some(profile) = &scenario.org_profile {
        device
            .store()
            .install_org_profile(profile.clone())
            .map_err(|e| ScenarioError::general(format!("organizational profile: {e}")))?;
    }
    Ok(())
}

fn embedded_bytes(app: &ScenarioApp) -> Option<Vec<u8>> {
    app.policy
        .as_ref()
        .map(|v| serde_json::to_vec(v).expect("JSON value serializes"))
}

fn find_app<'s>(scenario: &'s Scenario, app_id: &str) -> &'s ScenarioApp {
    scenario
        .apps
        .iter()
        .find(|a| a.descriptor.app_id == app_id)
        .expect("validated: installs reference listed apps")
}

/// What one trace event does that is the same in both modes. Requests are
/// handled by the caller.
fn apply_common(
    device: &Device,
    scenario: &Scenario,
    index: usize,
    kind: &TraceKind,
    plans: &mut Vec<InstallPlan>,
    issues: &mut Vec<ScenarioIssue>,
) -> Result<(), ScenarioError> {
    let engine = &device.engine;
    match kind {
        TraceKind::Install { app_id } => {
            let app = find_app(scenario, app_id);
            let plan = device
                .install(&app.descriptor, embedded_bytes(app).as_deref())
                .map_err(|e| ScenarioError::at(index, e.to_string()))?;
            plans.push(plan);
        }
        TraceKind::SessionStart { app_id } => engine.session_start(app_id),
        TraceKind::PromptAnswer {
            action,
            remember,
            prompt_id,
        } => {
            let target = prompt_id.or_else(|| engine.outstanding_prompts().first().map(|t| t.prompt_id));
            match target {
                None => issues.push(ScenarioIssue {
                    index,
                    message: "prompt answer with no outstanding prompt".into(),
                }),
                Some(id) => {
                    if let Err(e) = engine.answer_prompt(id, *action, *remember) {
                        issues.push(ScenarioIssue {
                            index,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        TraceKind::QuickToggle { sensor, state } => match device.store().set_quick_setting(*sensor, *state) {
            Ok(()) => {}
            Err(e @ StoreError::Locked { .. }) => issues.push(ScenarioIssue {
                index,
                message: e.to_string(),
            }),
            Err(e) => return Err(ScenarioError::at(index, e.to_string())),
        },
        TraceKind::SetPolicy { policy } => {
            device
                .store()
                .record_user_policy(policy.clone())
                .map_err(|e| ScenarioError::at(index, e.to_string()))?;
        }
        TraceKind::Request { .. } => unreachable!("requests are mode specific"),
    }
    Ok(())
}

fn push_prompt(prompts: &mut Vec<PromptTicket>, seen: &mut BTreeSet<PromptId>, ticket: PromptTicket) {
    if seen.insert(ticket.prompt_id) {
        prompts.push(ticket);
    }
}

/// Runs a scenario on a fresh virtual device. Prompts are answered only by
/// scripted answers; whatever is still outstanding after the last event
/// times out.
pub fn run_scenario(
    scenario: &Scenario,
    catalog: Arc<Catalog>,
    facts: Arc<LibraryFacts>,
    config: EngineConfig,
    repository: Option<Arc<dyn PolicyRepository>>,
) -> Result<RunReport, ScenarioError> {
    scenario.validate()?;
    let (device, clock) = Device::virtual_device(catalog, facts, config, repository);
    setup(&device, scenario)?;
    let engine = device.engine.clone();

    let mut plans = Vec::new();
    let mut issues = Vec::new();
    let mut prompts = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, ev) in scenario.trace.iter().enumerate() {
        clock.advance_to(Timestamp(ev.at_ms));
        engine.expire_due();
        match &ev.kind {
            TraceKind::Request { request, repeat } => {
                for _ in 0..*repeat {
                    match engine
                        .resolve(request.clone())
                        .map_err(|e| ScenarioError::at(i, e.to_string()))?
                    {
                        Resolution::Decided(_) => {}
                        Resolution::NeedsPrompt(t) => push_prompt(&mut prompts, &mut seen, t),
                    }
                }
            }
            other => apply_common(&device, scenario, i, other, &mut plans, &mut issues)?,
        }
    }
    if let Some(last) = engine.outstanding_prompts().iter().map(|t| t.deadline).max() {
        clock.advance_to(last.saturating_add(Duration::from_millis(1)));
        engine.expire_due();
    }

    Ok(finish(&device, scenario, RunMode::Batch, plans, 0, prompts, issues, 0))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    device: &Device,
    scenario: &Scenario,
    mode: RunMode,
    install_plans: Vec<InstallPlan>,
    log_start: usize,
    prompts: Vec<PromptTicket>,
    issues: Vec<ScenarioIssue>,
    notifications_start: usize,
) -> RunReport {
    let engine = &device.engine;
    let decisions = engine.decision_log().split_off(log_start);
    let notifications = engine
        .all_notifications()
        .into_iter()
        .filter(|n| n.id as usize > notifications_start)
        .collect();
    let mut report = RunReport {
        name: scenario.name.clone(),
        mode,
        install_plans,
        decisions,
        prompts,
        notifications,
        issues,
        expectation_failures: Vec::new(),
        final_state: (*device.store().state()).clone(),
    };
    if let Some(expect) = &scenario.expect {
        report.expectation_failures = check_expectations(expect, &report);
    }
    report
}

/// Runs a scenario against a live device in real time. Requests needing a
/// prompt wait for an answer from any source (scripted or over the API) up
/// to the prompt timeout. Only one run may be active per device.
pub async fn run_interactive(device: &Device, scenario: &Scenario) -> Result<RunReport, ScenarioError> {
    let _guard = device.run_lock.try_lock().map_err(|_| ScenarioError::busy())?;
    scenario.validate()?;
    let engine = device.engine.clone();
    let log_start = engine.decision_log().len();
    let notifications_start = engine.all_notifications().last().map_or(0, |n| n.id as usize);
    setup(device, scenario)?;

    let start = tokio::time::Instant::now();
    let mut plans = Vec::new();
    let mut issues = Vec::new();
    let mut prompts = Vec::new();
    let mut seen = BTreeSet::new();
    let mut waiting = tokio::task::JoinSet::new();
    for (i, ev) in scenario.trace.iter().enumerate() {
        tokio::time::sleep_until(start + Duration::from_millis(ev.at_ms)).await;
        match &ev.kind {
            TraceKind::Request { request, repeat } => {
                for _ in 0..*repeat {
                    match engine
                        .submit_waiting(request.clone())
                        .map_err(|e| ScenarioError::at(i, e.to_string()))?
                    {
                        Pending::Decided(_) => {}
                        Pending::Waiting { ticket, reply } => {
                            let id = ticket.prompt_id;
                            push_prompt(&mut prompts, &mut seen, ticket);
                            let engine = engine.clone();
                            waiting.spawn(async move { engine.wait(id, reply).await });
                        }
                    }
                }
            }
            other => apply_common(device, scenario, i, other, &mut plans, &mut issues)?,
        }
    }
    while waiting.join_next().await.is_some() {}

    Ok(finish(
        device,
        scenario,
        RunMode::Interactive,
        plans,
        log_start,
        prompts,
        issues,
        notifications_start,
    ))
}

pub fn check_expectations(expect: &Expectations, report: &RunReport) -> Vec<String> {
    let mut failures = Vec::new();
    let mut count = |what: &str, want: Option<usize>, got: usize| {
        if let Some(want) = want {
            if want != got {
                failures.push(format!("expected {want} {what}, got {got}"));
            }
        }
    };
    count("notifications", expect.notifications, report.notifications.len());
    count("prompts", expect.prompts, report.prompts.len());
    count("issues", expect.issues, report.issues.len());
    if let Some(want) = expect.notification_count {
        let got = report.notifications.first().map(|n| n.count);
        if got != Some(want) {
            failures.push(format!("expected first notification count {want}, got {got:?}"));
        }
    }
    if let Some(want) = &expect.decisions {
        let got: Vec<_> = report.decisions.iter().collect();
        if want.len() != got.len() {
            failures.push(format!("expected {} decisions, got {}", want.len(), got.len()));
        }
        for (i, (w, g)) in want.iter().zip(&got).enumerate() {
            let app_ok = w.app_id.as_ref().is_none_or(|a| *a == g.key.app_id);
            if w.action != g.decision.action || w.source != g.decision.source.kind() || !app_ok {
                failures.push(format!(
                    "decision {i}: expected {:?} from {:?}, got {:?} from {:?} for `{}`",
                    w.action,
                    w.source,
                    g.decision.action,
                    g.decision.source.kind(),
                    g.key.app_id
                ));
            }
        }
    }
    failures
}
