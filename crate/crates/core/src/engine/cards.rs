use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::generator::LibraryFacts;
use crate::schema::{AppPolicy, Catalog, Permission, Provenance, Purpose};
use crate::store::{Origin, PolicyAction, RequestKey, Scope, Sensor, SensorState, StoreState, UserPolicy};

use super::evaluate::origin_of_clause;

/// What holds a card at its mandated value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LockSource {
    OrgRule {
        profile_id: String,
        profile_name: String,
        rule_index: usize,
    },
    /// The profile mandates the sensor off.
    OrgSensor {
        profile_id: String,
        profile_name: String,
        sensor: Sensor,
    },
}

/// One (permission, purpose, origin) row with its current setting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCard {
    pub permission: Permission,
    pub permission_group: String,
    pub purpose: Purpose,
    pub purpose_display: String,
    pub origin: Origin,
    pub for_string: String,
    pub action: PolicyAction,
    /// The stored policy the action comes from, if any.
    pub policy_id: Option<crate::store::PolicyId>,
    pub locked: bool,
    pub lock_source: Option<LockSource>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstallPlan {
    pub app_id: String,
    pub policy: AppPolicy,
    pub cards: Vec<PolicyCard>,
}

impl InstallPlan {
    pub fn provenance(&self) -> Provenance {
        self.policy.provenance
    }
}

/// Builds cards for an app's policy, grouping clauses by
/// (permission, purpose, origin). Card order follows first appearance.
pub fn build_cards(
    app_id: &str,
    policy: &AppPolicy,
    state: &StoreState,
    facts: &LibraryFacts,
    catalog: &Catalog,
) -> Vec<PolicyCard> {
    let mut order: Vec<RequestKey> = Vec::new();
    let mut for_strings: BTreeMap<RequestKey, String> = BTreeMap::new();
    for clause in &policy.clauses {
        let key = RequestKey {
            app_id: app_id.to_string(),
            permission: clause.uses.clone(),
            purpose: clause.purpose.clone(),
            origin: origin_of_clause(clause, facts),
        };
        let entry = for_strings.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            String::new()
        });
        if entry.is_empty() {
            *entry = clause.display_for();
        }
    }
    order
        .into_iter()
        .map(|key| {
            let for_string = for_strings.remove(&key).unwrap_or_default();
            card_for(&key, for_string, state, catalog)
        })
        .collect()
}

pub fn card_for(key: &RequestKey, for_string: String, state: &StoreState, catalog: &Catalog) -> PolicyCard {
    let stored = state.newest_matching(key);
    let (action, policy_id) = stored.map_or((PolicyAction::Ask, None), |p| (p.action, Some(p.id)));
    let (locked_action, lock_source) = lock_for(key, state).unzip();
    PolicyCard {
        permission: key.permission.clone(),
        permission_group: catalog
            .permission_info(&key.permission)
            .map(|i| i.group.clone())
            .unwrap_or_default(),
        purpose: key.purpose.clone(),
        purpose_display: key.purpose.display_name(),
        origin: key.origin.clone(),
        for_string,
        action: locked_action.unwrap_or(action),
        policy_id: if lock_source.is_some() { None } else { policy_id },
        locked: lock_source.is_some(),
        lock_source,
    }
}

/// The organizational mandate covering a key, if any. Rules come first, then
/// sensors the profile forces off.
pub fn lock_for(key: &RequestKey, state: &StoreState) -> Option<(PolicyAction, LockSource)> {
    let profile = state.active_profile()?;
    if let Some((idx, rule)) = profile.first_match(key) {
        return Some((
            rule.action,
            LockSource::OrgRule {
                profile_id: profile.id.clone(),
                profile_name: profile.name.clone(),
                rule_index: idx,
            },
        ));
    }
    let sensor = Sensor::for_permission(&key.permission)?;
    (state.quick_settings.lock(sensor) == Some(SensorState::Off)).then(|| {
        (
            PolicyAction::Deny,
            LockSource::OrgSensor {
                profile_id: profile.id.clone(),
                profile_name: profile.name.clone(),
                sensor,
            },
        )
    })
}

/// The app-settings screen: cards split by who uses the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSettings {
    pub app_id: String,
    pub provenance: Provenance,
    pub internal: Vec<PolicyCard>,
    pub third_party: Vec<PolicyCard>,
}

pub fn app_settings(app_id: &str, state: &StoreState, facts: &LibraryFacts, catalog: &Catalog) -> Option<AppSettings> {
    let app = state.app(app_id)?;
    let (internal, third_party) = build_cards(app_id, &app.policy, state, facts, catalog)
        .into_iter()
        .partition(|c| c.origin == Origin::FirstParty);
    Some(AppSettings {
        app_id: app_id.to_string(),
        provenance: app.policy.provenance,
        internal,
        third_party,
    })
}

/// Global settings for one permission, zoomable from purpose down to
/// destinations and individual apps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalSettings {
    pub permission: Permission,
    pub permission_group: String,
    /// Global policies for this permission, newest first.
    pub policies: Vec<UserPolicy>,
    pub purposes: Vec<GlobalPurpose>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalPurpose {
    pub purpose: Purpose,
    pub purpose_display: String,
    /// Newest global setting covering this purpose for every origin.
    pub action: PolicyAction,
    pub destinations: Vec<GlobalDestination>,
    pub apps: Vec<PolicyCard>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalDestination {
    pub origin: Origin,
    pub action: PolicyAction,
}

pub fn global_settings(
    permission: &Permission,
    state: &StoreState,
    facts: &LibraryFacts,
    catalog: &Catalog,
) -> GlobalSettings {
    let globals: Vec<&UserPolicy> = state
        .user_policies
        .iter()
        .rev()
        .filter(|p| p.scope == Scope::Global && &p.permission == permission)
        .collect();

    let mut by_purpose: BTreeMap<Purpose, Vec<PolicyCard>> = BTreeMap::new();
    for app in state.apps.values() {
        for card in build_cards(&app.app_id, &app.policy, state, facts, catalog) {
            if &card.permission == permission {
                by_purpose.entry(card.purpose.clone()).or_default().push(card);
            }
        }
    }

    let purposes = by_purpose
        .into_iter()
        .map(|(purpose, apps)| {
            let global_action = |origin: Option<&Origin>| {
                globals
                    .iter()
                    .find(|p| {
                        p.purpose.matches(&purpose)
                            && match origin {
                                None => p.origin == crate::store::OriginSelector::Any,
                                Some(o) => p.origin.matches(o),
                            }
                    })
                    .map_or(PolicyAction::Ask, |p| p.action)
            };
            let mut origins: Vec<Origin> = apps.iter().map(|c| c.origin.clone()).collect();
            origins.sort();
            origins.dedup();
            GlobalPurpose {
                purpose_display: purpose.display_name(),
                action: global_action(None),
                destinations: origins
                    .into_iter()
                    .map(|o| GlobalDestination {
                        action: global_action(Some(&o)),
                        origin: o,
                    })
                    .collect(),
                purpose,
                apps,
            }
        })
        .collect();

    GlobalSettings {
        permission: permission.clone(),
        permission_group: catalog
            .permission_info(permission)
            .map(|i| i.group.clone())
            .unwrap_or_default(),
        policies: globals.into_iter().cloned().collect(),
        purposes,
    }
}
