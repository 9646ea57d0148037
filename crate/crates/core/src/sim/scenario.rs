use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{PermissionRequest, PromptId, Remember, SourceKind};
use crate::generator::AppDescriptor;
use crate::store::{NewUserPolicy, OrgProfile, Sensor, SensorState, Verdict};

#[derive(Debug, Error)]
#[error("{}{message}", index.map(|i| format!("event {i}: ")).unwrap_or_default())]
pub struct ScenarioError {
    /// Index into the trace, when the failure is tied to one event.
    pub index: Option<usize>,
    pub message: String,
}

impl ScenarioError {
    pub fn at(index: usize, message: impl Into<String>) -> Self {
        ScenarioError {
            index: Some(index),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        ScenarioError {
            index: None,
            message: message.into(),
        }
    }

    pub(crate) fn busy() -> Self {
        ScenarioError::general(BUSY)
    }

    /// Another interactive run holds the device.
    pub fn is_busy(&self) -> bool {
        self.index.is_none() && self.message == BUSY
    }
}

const BUSY: &str = "another scenario is running";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioApp {
    pub descriptor: AppDescriptor,
    /// Policy document embedded in the app package, if any.
    #[serde(default)]
    pub policy: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub apps: Vec<ScenarioApp>,
    #[serde(default)]
    pub org_profile: Option<OrgProfile>,
    /// Spouseware package names.
    #[serde(default)]
    pub blacklist: Vec<String>,
    #[serde(default)]
    pub trace: Vec<TraceEvent>,
    #[serde(default)]
    pub expect: Option<Expectations>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Virtual milliseconds since the start of the run.
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceKind {
    Install {
        app_id: String,
    },
    Request {
        #[serde(flatten)]
        request: PermissionRequest,
        /// Identical copies issued at the same instant.
        #[serde(default = "one")]
        repeat: u32,
    },
    SessionStart {
        app_id: String,
    },
    /// Answers the given prompt, or the oldest outstanding one.
    PromptAnswer {
        action: Verdict,
        #[serde(default)]
        remember: Remember,
        #[serde(default)]
        prompt_id: Option<PromptId>,
    },
    QuickToggle {
        sensor: Sensor,
        state: SensorState,
    },
    SetPolicy {
        policy: NewUserPolicy,
    },
}

fn one() -> u32 {
    1
}

/// Checks a scenario file can make about its own run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Expected decisions in resolution order.
    #[serde(default)]
    pub decisions: Option<Vec<ExpectedDecision>>,
    #[serde(default)]
    pub notifications: Option<usize>,
    /// Count of the first notification.
    #[serde(default)]
    pub notification_count: Option<u64>,
    #[serde(default)]
    pub prompts: Option<usize>,
    #[serde(default)]
    pub issues: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedDecision {
    pub action: Verdict,
    pub source: SourceKind,
    #[serde(default)]
    pub app_id: Option<String>,
}

impl Scenario {
    pub fn from_json(raw: &[u8]) -> Result<Scenario, ScenarioError> {
        serde_json::from_slice(raw).map_err(|e| ScenarioError::general(format!("invalid scenario: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Scenario, ScenarioError> {
        let raw =
            std::fs::read(path).map_err(|e| ScenarioError::general(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_json(&raw)
    }

    /// Structural checks: ordered timestamps, installs of listed apps, and
    /// app events only after the app's install.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut listed = std::collections::BTreeSet::new();
        for a in &self.apps {
            if !listed.insert(a.descriptor.app_id.as_str()) {
                return Err(ScenarioError::general(format!(
                    "app `{}` listed twice",
                    a.descriptor.app_id
                )));
            }
        }
        let mut installed = std::collections::BTreeSet::new();
        let mut last = 0;
        for (i, ev) in self.trace.iter().enumerate() {
            if ev.at_ms < last {
                return Err(ScenarioError::at(i, "trace timestamps go backwards"));
            }
            last = ev.at_ms;
            let needs = match &ev.kind {
                TraceKind::Install { app_id } => {
                    if !listed.contains(app_id.as_str()) {
                        return Err(ScenarioError::at(i, format!("install of unlisted app `{app_id}`")));
                    }
                    if !installed.insert(app_id.as_str()) {
                        return Err(ScenarioError::at(i, format!("app `{app_id}` installed twice")));
                    }
                    None
                }
                TraceKind::Request { request, .. } => Some(request.app_id.as_str()),
                TraceKind::SessionStart { app_id } => Some(app_id.as_str()),
                TraceKind::SetPolicy { policy } => match &policy.scope {
                    crate::store::Scope::App(a) => Some(a.as_str()),
                    crate::store::Scope::Global => None,
                },
                TraceKind::PromptAnswer { .. } | TraceKind::QuickToggle { .. } => None,
            };
            if let Some(app) = needs {
                if !installed.contains(app) {
                    return Err(ScenarioError::at(i, format!("app `{app}` is not installed yet")));
                }
            }
        }
        Ok(())
    }
}
