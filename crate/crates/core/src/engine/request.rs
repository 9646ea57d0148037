use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::schema::{Permission, PolicyClause, Purpose};
use crate::store::{Origin, PolicyId, RequestKey, Scope, Sensor, Verdict};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    /// An Android permission check.
    #[default]
    DangerousPermission,
    /// A request routed through a private-data module.
    PrivateData,
}

/// A runtime access attempt as reported by the platform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionRequest {
    /// Assigned by the engine when empty.
    #[serde(default)]
    pub request_id: String,
    pub app_id: String,
    pub permission: Permission,
    /// The developer-declared purpose, if the request carried one.
    #[serde(default)]
    pub purpose: Option<Purpose>,
    #[serde(default)]
    pub class_name: String,
    #[serde(default)]
    pub method_name: String,
    /// Inferred from the class name and the library table when absent.
    #[serde(default)]
    pub origin: Option<Origin>,
    /// Stamped by the engine on arrival.
    #[serde(default)]
    pub timestamp: Timestamp,
    #[serde(default)]
    pub kind: RequestKind,
}

impl PermissionRequest {
    pub fn new(app_id: impl Into<String>, permission: Permission) -> Self {
        PermissionRequest {
            request_id: String::new(),
            app_id: app_id.into(),
            permission,
            purpose: None,
            class_name: String::new(),
            method_name: String::new(),
            origin: None,
            timestamp: Timestamp(0),
            kind: RequestKind::DangerousPermission,
        }
    }

    pub fn with_purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = Some(purpose);
        self
    }

    pub fn with_site(mut self, class_name: impl Into<String>, method_name: impl Into<String>) -> Self {
        self.class_name = class_name.into();
        self.method_name = method_name.into();
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = Some(origin);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u64);

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "prompt-{}", self.0)
    }
}

/// Which tier decided, and which rule, setting or prompt within it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionSource {
    OrgProfile { profile_id: String, rule_index: usize },
    QuickSettings { sensor: Sensor },
    UserPolicy { policy_id: PolicyId, scope: Scope },
    RuntimePrompt { prompt_id: PromptId },
    PromptTimeout { prompt_id: PromptId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    OrgProfile,
    QuickSettings,
    UserPolicy,
    RuntimePrompt,
    PromptTimeout,
}

impl DecisionSource {
    pub fn kind(&self) -> SourceKind {
        match self {
            DecisionSource::OrgProfile { .. } => SourceKind::OrgProfile,
            DecisionSource::QuickSettings { .. } => SourceKind::QuickSettings,
            DecisionSource::UserPolicy { .. } => SourceKind::UserPolicy,
            DecisionSource::RuntimePrompt { .. } => SourceKind::RuntimePrompt,
            DecisionSource::PromptTimeout { .. } => SourceKind::PromptTimeout,
        }
    }

    /// Whether the decision was made without the user present.
    pub fn is_automated(&self) -> bool {
        matches!(
            self,
            DecisionSource::OrgProfile { .. }
                | DecisionSource::QuickSettings { .. }
                | DecisionSource::UserPolicy { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub request_id: String,
    pub action: Verdict,
    pub source: DecisionSource,
    pub resolved_at: Timestamp,
}

/// A request waiting for the user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTicket {
    pub prompt_id: PromptId,
    pub request: PermissionRequest,
    /// The request after purpose and origin resolution.
    pub key: RequestKey,
    /// The policy clause the request was attributed to, if any.
    pub clause: Option<PolicyClause>,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Resolution {
    Decided(Decision),
    NeedsPrompt(PromptTicket),
}

impl Resolution {
    pub fn decision(&self) -> Option<&Decision> {
        match self {
            Resolution::Decided(d) => Some(d),
            Resolution::NeedsPrompt(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remember {
    #[default]
    None,
    ThisApp,
    AllApps,
}

/// One line of the decision audit log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request: PermissionRequest,
    pub key: RequestKey,
    pub decision: Decision,
    /// Store sequence number the decision was evaluated against.
    pub store_seq: u64,
}

/// Pushed to prompt subscribers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PromptEvent {
    Issued { ticket: PromptTicket },
    Answered { prompt_id: PromptId, decision: Decision },
    Expired { prompt_id: PromptId },
}
