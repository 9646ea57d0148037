use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::*;
use crate::clock::Timestamp;

/// Everything the repository knows. Equal states serialize to equal bytes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreState {
    /// Sequence number of the last applied event.
    pub seq: u64,
    pub apps: BTreeMap<String, InstalledApp>,
    /// In recording order, which is also timestamp order.
    pub user_policies: Vec<UserPolicy>,
    pub org_profiles: BTreeMap<String, OrgProfile>,
    pub quick_settings: QuickSettings,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum StoreEvent {
    AppInstalled(InstalledApp),
    UserPolicyRecorded(UserPolicy),
    OrgProfileInstalled(OrgProfile),
    OrgProfileRemoved {
        id: String,
    },
    QuickSettingChanged {
        sensor: Sensor,
        state: SensorState,
    },
    /// Full state written by compaction; only valid as the first record.
    Snapshot(Box<StoreState>),
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub event: StoreEvent,
}

impl StoreState {
    pub fn apply(&mut self, record: &LogRecord) {
        match &record.event {
            StoreEvent::Snapshot(state) => {
                *self = (**state).clone();
                return;
            }
            StoreEvent::AppInstalled(app) => {
                self.apps.insert(app.app_id.clone(), app.clone());
            }
            StoreEvent::UserPolicyRecorded(p) => self.user_policies.push(p.clone()),
            StoreEvent::OrgProfileInstalled(profile) => {
                let mut profile = profile.clone();
                profile.active = true;
                for (sensor, state) in &profile.sensors {
                    self.quick_settings.sensors.insert(*sensor, *state);
                }
                self.org_profiles.insert(profile.id.clone(), profile);
            }
            StoreEvent::OrgProfileRemoved { id } => {
                if let Some(p) = self.org_profiles.get_mut(id) {
                    p.active = false;
                }
            }
            StoreEvent::QuickSettingChanged { sensor, state } => {
                self.quick_settings.sensors.insert(*sensor, *state);
            }
        }
        self.quick_settings.locks = self.active_profile().map(|p| p.sensors.clone()).unwrap_or_default();
        self.seq = record.seq;
    }

    pub fn active_profile(&self) -> Option<&OrgProfile> {
        self.org_profiles.values().find(|p| p.active)
    }

    pub fn app(&self, app_id: &str) -> Option<&InstalledApp> {
        self.apps.get(app_id)
    }

    /// Matching user policies, newest first.
    pub fn matching_policies(&self, key: &RequestKey) -> Vec<&UserPolicy> {
        self.user_policies.iter().rev().filter(|p| p.matches(key)).collect()
    }

    pub fn newest_matching(&self, key: &RequestKey) -> Option<&UserPolicy> {
        self.user_policies.iter().rev().find(|p| p.matches(key))
    }

    /// The first rule of the active profile matching `key`.
    pub fn org_rule(&self, key: &RequestKey) -> Option<(&OrgProfile, usize, &OrgRule)> {
        let profile = self.active_profile()?;
        profile.first_match(key).map(|(i, r)| (profile, i, r))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("store state serializes")
    }
}
