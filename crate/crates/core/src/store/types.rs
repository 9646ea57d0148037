use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clock::Timestamp;
use crate::schema::{AppPolicy, Permission, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyAction {
    Allow,
    Deny,
    #[default]
    Ask,
}

/// The outcome of a decided request. Unlike [`PolicyAction`] there is no
/// deferral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Allow,
    Deny,
}

impl From<Verdict> for PolicyAction {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Allow => PolicyAction::Allow,
            Verdict::Deny => PolicyAction::Deny,
        }
    }
}

impl PolicyAction {
    pub fn verdict(self) -> Option<Verdict> {
        match self {
            PolicyAction::Allow => Some(Verdict::Allow),
            PolicyAction::Deny => Some(Verdict::Deny),
            PolicyAction::Ask => None,
        }
    }
}

/// Where a request's data goes: the app itself or a named third party.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    FirstParty,
    ThirdParty(String),
}

impl Origin {
    pub fn destination(&self) -> Option<&str> {
        match self {
            Origin::FirstParty => None,
            Origin::ThirdParty(d) => Some(d),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginSelector {
    #[default]
    Any,
    FirstParty,
    /// `None` matches every third-party destination.
    ThirdParty(Option<String>),
}

impl OriginSelector {
    pub fn matches(&self, origin: &Origin) -> bool {
        match (self, origin) {
            (OriginSelector::Any, _) => true,
            (OriginSelector::FirstParty, Origin::FirstParty) => true,
            (OriginSelector::ThirdParty(None), Origin::ThirdParty(_)) => true,
            (OriginSelector::ThirdParty(Some(want)), Origin::ThirdParty(got)) => want == got,
            _ => false,
        }
    }

    /// The narrowest selector matching exactly `origin`.
    pub fn exactly(origin: &Origin) -> OriginSelector {
        match origin {
            Origin::FirstParty => OriginSelector::FirstParty,
            Origin::ThirdParty(d) => OriginSelector::ThirdParty(Some(d.clone())),
        }
    }
}

/// A purpose or the `*` wildcard. Serialized as the purpose name or `"*"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PurposeSelector {
    Any,
    Specific(Purpose),
}

impl PurposeSelector {
    pub fn matches(&self, purpose: &Purpose) -> bool {
        match self {
            PurposeSelector::Any => true,
            PurposeSelector::Specific(p) => p == purpose,
        }
    }
}

impl Serialize for PurposeSelector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PurposeSelector::Any => s.serialize_str("*"),
            PurposeSelector::Specific(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PurposeSelector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "*" || raw.eq_ignore_ascii_case("any") {
            return Ok(PurposeSelector::Any);
        }
        crate::schema::normalize_purpose(&raw)
            .map(PurposeSelector::Specific)
            .map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for PurposeSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PurposeSelector::Any => f.write_str("*"),
            PurposeSelector::Specific(p) => p.fmt(f),
        }
    }
}

/// An app id or the `*` wildcard.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AppSelector {
    Any,
    App(String),
}

impl AppSelector {
    pub fn matches(&self, app_id: &str) -> bool {
        match self {
            AppSelector::Any => true,
            AppSelector::App(a) => a == app_id,
        }
    }
}

impl Serialize for AppSelector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AppSelector::Any => s.serialize_str("*"),
            AppSelector::App(a) => s.serialize_str(a),
        }
    }
}

impl<'de> Deserialize<'de> for AppSelector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(if raw == "*" {
            AppSelector::Any
        } else {
            AppSelector::App(raw)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    App(String),
}

impl Scope {
    pub fn applies_to(&self, app_id: &str) -> bool {
        match self {
            Scope::Global => true,
            Scope::App(a) => a == app_id,
        }
    }
}

/// Monotonic event sequence number of the record that created a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyId(pub u64);

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "up-{}", self.0)
    }
}

/// Total order used for most-recent-wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stamp {
    pub seq: u64,
    pub at: Timestamp,
}

/// A user policy as submitted, before the store assigns id and timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewUserPolicy {
    pub scope: Scope,
    pub permission: Permission,
    #[serde(default = "any_purpose")]
    pub purpose: PurposeSelector,
    #[serde(default)]
    pub origin: OriginSelector,
    pub action: PolicyAction,
}

fn any_purpose() -> PurposeSelector {
    PurposeSelector::Any
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPolicy {
    pub id: PolicyId,
    pub scope: Scope,
    pub permission: Permission,
    pub purpose: PurposeSelector,
    pub origin: OriginSelector,
    pub action: PolicyAction,
    pub stamp: Stamp,
}

impl UserPolicy {
    pub fn matches(&self, key: &RequestKey) -> bool {
        self.permission == key.permission
            && self.purpose.matches(&key.purpose)
            && self.origin.matches(&key.origin)
            && self.scope.applies_to(&key.app_id)
    }
}

/// The attributes every tier matches on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestKey {
    pub app_id: String,
    pub permission: Permission,
    pub purpose: Purpose,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgRule {
    #[serde(default = "any_app")]
    pub app: AppSelector,
    pub permission: Permission,
    #[serde(default = "any_purpose")]
    pub purpose: PurposeSelector,
    #[serde(default)]
    pub origin: OriginSelector,
    pub action: PolicyAction,
}

fn any_app() -> AppSelector {
    AppSelector::Any
}

impl OrgRule {
    pub fn matches(&self, key: &RequestKey) -> bool {
        self.app.matches(&key.app_id)
            && self.permission == key.permission
            && self.purpose.matches(&key.purpose)
            && self.origin.matches(&key.origin)
    }
}

/// A mandatory rule set installed by an organization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgProfile {
    pub id: String,
    pub name: String,
    pub issuer: String,
    pub rules: Vec<OrgRule>,
    /// Quick-setting states the organization mandates.
    #[serde(default)]
    pub sensors: BTreeMap<Sensor, SensorState>,
    #[serde(default)]
    pub active: bool,
}

impl OrgProfile {
    /// First matching rule in list order.
    pub fn first_match(&self, key: &RequestKey) -> Option<(usize, &OrgRule)> {
        self.rules.iter().enumerate().find(|(_, r)| r.matches(key))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Camera,
    Location,
    Microphone,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Camera, Sensor::Location, Sensor::Microphone];

    /// The quick-settings sensor gating a permission, if any.
    pub fn for_permission(p: &Permission) -> Option<Sensor> {
        if !p.as_str().starts_with(crate::schema::ANDROID_PERMISSION_PREFIX) {
            return None;
        }
        match p.short_name() {
            "CAMERA" => Some(Sensor::Camera),
            "ACCESS_FINE_LOCATION" | "ACCESS_COARSE_LOCATION" => Some(Sensor::Location),
            "RECORD_AUDIO" => Some(Sensor::Microphone),
            _ => None,
        }
    }

    pub fn parse(raw: &str) -> Option<Sensor> {
        match raw.to_ascii_lowercase().as_str() {
            "camera" => Some(Sensor::Camera),
            "location" => Some(Sensor::Location),
            "microphone" => Some(Sensor::Microphone),
            _ => None,
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensor::Camera => "camera",
            Sensor::Location => "location",
            Sensor::Microphone => "microphone",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorState {
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuickSettings {
    pub sensors: BTreeMap<Sensor, SensorState>,
    pub locks: BTreeMap<Sensor, SensorState>,
}

impl Default for QuickSettings {
    fn default() -> Self {
        QuickSettings {
            sensors: Sensor::ALL.iter().map(|s| (*s, SensorState::On)).collect(),
            locks: BTreeMap::new(),
        }
    }
}

impl QuickSettings {
    pub fn state(&self, sensor: Sensor) -> SensorState {
        self.sensors.get(&sensor).copied().unwrap_or(SensorState::On)
    }

    pub fn lock(&self, sensor: Sensor) -> Option<SensorState> {
        self.locks.get(&sensor).copied()
    }
}

/// An installed app as the store records it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstalledApp {
    pub app_id: String,
    #[serde(default)]
    pub category: String,
    pub declared_permissions: BTreeSet<Permission>,
    pub policy: AppPolicy,
    pub installed_at: Timestamp,
}
