//! Fixtures, oracles and generators shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use policy_manager::clock::VirtualClock;
use policy_manager::engine::{Engine, EngineConfig, PermissionRequest, Resolution, SourceKind};
use policy_manager::generator::{AppDescriptor, CallSite, LibraryFacts};
use policy_manager::schema::Catalog;
use policy_manager::sim::{run_scenario, RunReport, Scenario};
use policy_manager::store::{
    AppSelector, NewUserPolicy, OrgProfile, OrgRule, Origin, OriginSelector, PolicyAction, PolicyStore,
    PurposeSelector, Scope, Sensor, SensorState, StoreError, Verdict,
};
use policy_manager::{AppPolicy, Permission, Provenance, Timestamp};
use proptest::prelude::*;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn scenario_paths() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/scenarios");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .expect("scenario directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
}

pub fn run_scenario_file(path: &Path) -> RunReport {
    let scenario = Scenario::from_file(path).unwrap();
    run_scenario(
        &scenario,
        Catalog::builtin(),
        Arc::new(LibraryFacts::builtin()),
        EngineConfig::default(),
        None,
    )
    .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---- data tables ----

/// Dangerous permissions by group, transcribed by hand.
pub const PERMISSION_TABLE: [(&str, &[&str]); 9] = [
    ("CALENDAR", &["READ_CALENDAR", "WRITE_CALENDAR"]),
    ("CAMERA", &["CAMERA"]),
    ("CONTACTS", &["READ_CONTACTS", "WRITE_CONTACTS", "GET_ACCOUNTS"]),
    ("LOCATION", &["ACCESS_FINE_LOCATION", "ACCESS_COARSE_LOCATION"]),
    ("MICROPHONE", &["RECORD_AUDIO"]),
    (
        "PHONE",
        &[
            "READ_PHONE_STATE",
            "READ_PHONE_NUMBERS",
            "CALL_PHONE",
            "ANSWER_PHONE_CALLS",
            "READ_CALL_LOG",
            "WRITE_CALL_LOG",
            "ADD_VOICEMAIL",
            "USE_SIP",
            "PROCESS_OUTGOING_CALLS",
        ],
    ),
    ("SENSORS", &["BODY_SENSORS"]),
    (
        "SMS",
        &["SEND_SMS", "RECEIVE_SMS", "READ_SMS", "RECEIVE_WAP_PUSH", "RECEIVE_MMS"],
    ),
    ("STORAGE", &["READ_EXTERNAL_STORAGE", "WRITE_EXTERNAL_STORAGE"]),
];

/// Purpose display names, transcribed by hand.
pub const PURPOSE_TABLE: [&str; 18] = [
    "For Displaying Advertisements",
    "For Gathering Analytics",
    "For Monitoring Health",
    "For Connecting with Other People or Social Media",
    "For Conducting Research",
    "For Backing-up to Cloud Service",
    "For Navigating to a Destination",
    "For Searching Nearby Places",
    "For Delivering Local Weather",
    "For Adding Location to Photo",
    "For Playing Games",
    "For Securing Device",
    "For Messaging or Calling People",
    "For Recognizing Voice or Speech",
    "For Streaming Media",
    "For Notifying Emergency Services",
    "For Supporting Development",
    "For Running Other Features",
];

// ---- tier resolution ----

pub const TIER_APPS: [&str; 2] = ["com.example.alpha", "com.example.beta"];
pub const TIER_PERMISSIONS: [&str; 3] = ["CAMERA", "ACCESS_FINE_LOCATION", "READ_CONTACTS"];
pub const TIER_PURPOSES: [&str; 2] = ["Displaying Advertisements", "Searching Nearby Places"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyScope {
    Global,
    App,
}

#[derive(Clone, Debug)]
pub struct TierCase {
    pub app: &'static str,
    pub permission: &'static str,
    pub purpose: &'static str,
    pub origin: Origin,
    /// Action of the matching org rule, if the profile has one.
    pub org: Option<Verdict>,
    /// `None` when the permission has no quick-settings sensor.
    pub sensor: Option<SensorState>,
    /// Matching user policies, oldest first.
    pub policies: Vec<(PolicyScope, PolicyAction)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expected {
    Decided(Verdict, SourceKind),
    Prompt,
}

/// The resolution flowchart written out as plain conditionals.
pub fn tier_oracle(c: &TierCase) -> Expected {
    if let Some(action) = c.org {
        Expected::Decided(action, SourceKind::OrgProfile)
    } else if c.sensor == Some(SensorState::Off) {
        Expected::Decided(Verdict::Deny, SourceKind::QuickSettings)
    } else if let Some((_, newest)) = c.policies.last() {
        match newest {
            PolicyAction::Allow => Expected::Decided(Verdict::Allow, SourceKind::UserPolicy),
            PolicyAction::Deny => Expected::Decided(Verdict::Deny, SourceKind::UserPolicy),
            PolicyAction::Ask => Expected::Prompt,
        }
    } else {
        Expected::Prompt
    }
}

fn policy_sequences() -> Vec<Vec<(PolicyScope, PolicyAction)>> {
    let choices: Vec<_> = [PolicyScope::Global, PolicyScope::App]
        .into_iter()
        .flat_map(|s| [PolicyAction::Allow, PolicyAction::Ask, PolicyAction::Deny].map(|a| (s, a)))
        .collect();
    let mut all = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..3 {
        frontier = frontier
            .iter()
            .flat_map(|seq: &Vec<_>| {
                choices.iter().map(move |c| {
                    let mut next = seq.clone();
                    next.push(*c);
                    next
                })
            })
            .collect();
        all.extend(frontier.iter().cloned());
    }
    all
}

/// Every combination of org rule, sensor state and ordered sequence of up to
/// three matching user policies, for each request key.
pub fn tier_universe() -> Vec<TierCase> {
    let sequences = policy_sequences();
    let mut out = Vec::new();
    for app in TIER_APPS {
        for permission in TIER_PERMISSIONS {
            let sensors: Vec<Option<SensorState>> = match permission {
                "READ_CONTACTS" => vec![None],
                _ => vec![Some(SensorState::On), Some(SensorState::Off)],
            };
            for purpose in TIER_PURPOSES {
                for origin in [Origin::FirstParty, Origin::ThirdParty("MoPub".into())] {
                    for org in [None, Some(Verdict::Allow), Some(Verdict::Deny)] {
                        for sensor in &sensors {
                            for policies in &sequences {
                                out.push(TierCase {
                                    app,
                                    permission,
                                    purpose,
                                    origin: origin.clone(),
                                    org,
                                    sensor: *sensor,
                                    policies: policies.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn verdict_action(v: Verdict) -> PolicyAction {
    match v {
        Verdict::Allow => PolicyAction::Allow,
        Verdict::Deny => PolicyAction::Deny,
    }
}

fn opposite(v: Verdict) -> Verdict {
    match v {
        Verdict::Allow => Verdict::Deny,
        Verdict::Deny => Verdict::Allow,
    }
}

/// Builds the case on a fresh device and resolves it through the engine.
/// Each device also carries non-matching decoys: an earlier org rule for the
/// other app and a newer user policy for the other app.
pub fn engine_outcome(c: &TierCase, facts: &Arc<LibraryFacts>) -> Expected {
    let catalog = Catalog::builtin();
    let clock = Arc::new(VirtualClock::new(Timestamp(0)));
    let store = Arc::new(PolicyStore::in_memory(catalog.clone(), clock.clone()));
    let permission = catalog.permission(c.permission).unwrap();
    let purpose = catalog.normalize_purpose(c.purpose).unwrap();
    let other = TIER_APPS.iter().copied().find(|a| *a != c.app).unwrap();
    for app in TIER_APPS {
        store
            .install_app(
                app,
                "Tools",
                [permission.clone()].into(),
                AppPolicy::new(app, Provenance::Fallback),
            )
            .unwrap();
    }
    if let Some(action) = c.org {
        let rule = |app: AppSelector, action| OrgRule {
            app,
            permission: permission.clone(),
            purpose: PurposeSelector::Specific(purpose.clone()),
            origin: OriginSelector::exactly(&c.origin),
            action,
        };
        store
            .install_org_profile(OrgProfile {
                id: "org".into(),
                name: "Org".into(),
                issuer: "IT".into(),
                rules: vec![
                    rule(AppSelector::App(other.into()), verdict_action(opposite(action))),
                    rule(AppSelector::Any, verdict_action(action)),
                ],
                sensors: Default::default(),
                active: false,
            })
            .unwrap();
    }
    if let Some(state) = c.sensor {
        let sensor = Sensor::for_permission(&permission).unwrap();
        store.set_quick_setting(sensor, state).unwrap();
    }
    let record = |scope: Scope, action| {
        clock.advance_by(Duration::from_millis(1));
        store
            .record_user_policy(NewUserPolicy {
                scope,
                permission: permission.clone(),
                purpose: PurposeSelector::Specific(purpose.clone()),
                origin: OriginSelector::exactly(&c.origin),
                action,
            })
            .unwrap();
    };
    for (scope, action) in &c.policies {
        let scope = match scope {
            PolicyScope::Global => Scope::Global,
            PolicyScope::App => Scope::App(c.app.into()),
        };
        record(scope, *action);
    }
    record(Scope::App(other.into()), PolicyAction::Allow);

    let engine = Engine::new(store, facts.clone(), EngineConfig::default());
    let request = PermissionRequest::new(c.app, permission)
        .with_purpose(purpose)
        .with_origin(c.origin.clone());
    match engine.resolve(request).unwrap() {
        Resolution::Decided(d) => Expected::Decided(d.action, d.source.kind()),
        Resolution::NeedsPrompt(_) => Expected::Prompt,
    }
}

pub struct TierReport {
    pub cases: usize,
    pub mismatches: Vec<String>,
}

pub fn check_tier_universe() -> TierReport {
    let facts = Arc::new(LibraryFacts::builtin());
    let universe = tier_universe();
    let mut mismatches = Vec::new();
    for c in &universe {
        let want = tier_oracle(c);
        let got = engine_outcome(c, &facts);
        if want != got {
            mismatches.push(format!("{c:?}: oracle {want:?}, engine {got:?}"));
        }
    }
    TierReport {
        cases: universe.len(),
        mismatches,
    }
}

// ---- store durability ----

#[derive(Clone, Debug)]
pub enum StoreOp {
    Install(usize),
    Policy {
        app: Option<usize>,
        permission: usize,
        purpose: Option<usize>,
        third_party: Option<bool>,
        action: PolicyAction,
    },
    Toggle(Sensor, SensorState),
    InstallProfile {
        id: usize,
        deny: usize,
        locks: Option<(Sensor, SensorState)>,
    },
    RemoveProfile {
        id: usize,
        good_token: bool,
    },
    Snapshot,
    Tick(u64),
}

pub const ADMIN_TOKEN: &str = "admin-secret";
const OP_APPS: [&str; 3] = ["com.a", "com.b", "com.c"];
const OP_PERMISSIONS: [&str; 4] = ["CAMERA", "RECORD_AUDIO", "READ_CONTACTS", "ACCESS_COARSE_LOCATION"];
const OP_PURPOSES: [&str; 3] = [
    "Displaying Advertisements",
    "Backup to Cloud Service",
    "Running Other Features",
];

fn action_strategy() -> impl Strategy<Value = PolicyAction> {
    prop_oneof![
        Just(PolicyAction::Allow),
        Just(PolicyAction::Ask),
        Just(PolicyAction::Deny)
    ]
}

fn sensor_strategy() -> impl Strategy<Value = Sensor> {
    prop::sample::select(Sensor::ALL.to_vec())
}

fn sensor_state_strategy() -> impl Strategy<Value = SensorState> {
    prop_oneof![Just(SensorState::On), Just(SensorState::Off)]
}

pub fn store_op_strategy() -> impl Strategy<Value = StoreOp> {
    prop_oneof![
        2 => (0..OP_APPS.len()).prop_map(StoreOp::Install),
        4 => (
            prop::option::of(0..OP_APPS.len()),
            0..OP_PERMISSIONS.len(),
            prop::option::of(0..OP_PURPOSES.len()),
            prop::option::of(any::<bool>()),
            action_strategy(),
        )
            .prop_map(|(app, permission, purpose, third_party, action)| StoreOp::Policy {
                app,
                permission,
                purpose,
                third_party,
                action,
            }),
        2 => (sensor_strategy(), sensor_state_strategy()).prop_map(|(s, v)| StoreOp::Toggle(s, v)),
        1 => (0..2usize, 0..OP_PERMISSIONS.len(), prop::option::of((sensor_strategy(), sensor_state_strategy())))
            .prop_map(|(id, deny, locks)| StoreOp::InstallProfile { id, deny, locks }),
        1 => (0..2usize, any::<bool>()).prop_map(|(id, good_token)| StoreOp::RemoveProfile { id, good_token }),
        1 => Just(StoreOp::Snapshot),
        1 => (0..10_000u64).prop_map(StoreOp::Tick),
    ]
}

pub fn store_ops_strategy() -> impl Strategy<Value = Vec<StoreOp>> {
    prop::collection::vec(store_op_strategy(), 0..40)
}

fn apply_op(store: &PolicyStore, catalog: &Catalog, op: &StoreOp) -> Result<(), StoreError> {
    let perm = |i: usize| catalog.permission(OP_PERMISSIONS[i]).unwrap();
    match op {
        StoreOp::Install(i) => {
            let declared: BTreeSet<Permission> = (0..OP_PERMISSIONS.len()).map(perm).collect();
            store
                .install_app(
                    OP_APPS[*i],
                    "Tools",
                    declared,
                    AppPolicy::new(OP_APPS[*i], Provenance::Fallback),
                )
                .map(drop)
        }
        StoreOp::Policy {
            app,
            permission,
            purpose,
            third_party,
            action,
        } => store
            .record_user_policy(NewUserPolicy {
                scope: app.map_or(Scope::Global, |a| Scope::App(OP_APPS[a].into())),
                permission: perm(*permission),
                purpose: purpose.map_or(PurposeSelector::Any, |p| {
                    PurposeSelector::Specific(catalog.normalize_purpose(OP_PURPOSES[p]).unwrap())
                }),
                origin: match third_party {
                    None => OriginSelector::Any,
                    Some(false) => OriginSelector::FirstParty,
                    Some(true) => OriginSelector::ThirdParty(Some("MoPub".into())),
                },
                action: *action,
            })
            .map(drop),
        StoreOp::Toggle(sensor, state) => store.set_quick_setting(*sensor, *state),
        StoreOp::InstallProfile { id, deny, locks } => store.install_org_profile(OrgProfile {
            id: format!("profile-{id}"),
            name: format!("Profile {id}"),
            issuer: "IT".into(),
            rules: vec![OrgRule {
                app: AppSelector::Any,
                permission: perm(*deny),
                purpose: PurposeSelector::Any,
                origin: OriginSelector::Any,
                action: PolicyAction::Deny,
            }],
            sensors: locks.iter().copied().collect(),
            active: false,
        }),
        StoreOp::RemoveProfile { id, good_token } => store.remove_org_profile(
            &format!("profile-{id}"),
            if *good_token { ADMIN_TOKEN } else { "wrong" },
        ),
        StoreOp::Snapshot => store.snapshot(),
        StoreOp::Tick(_) => Ok(()),
    }
}

/// Applies `ops` to an in-memory store and a persistent one, then reopens
/// the persistent log and compares all three states byte for byte.
pub fn durability_case(ops: &[StoreOp]) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("store.log");
    let catalog = Catalog::builtin();
    let clock = Arc::new(VirtualClock::new(Timestamp(1_000)));
    let memory = PolicyStore::in_memory(catalog.clone(), clock.clone()).with_admin_token(ADMIN_TOKEN);
    let disk = PolicyStore::open(&path, catalog.clone(), clock.clone())
        .map_err(|e| e.to_string())?
        .with_admin_token(ADMIN_TOKEN);
    for (i, op) in ops.iter().enumerate() {
        if let StoreOp::Tick(ms) = op {
            clock.advance_by(Duration::from_millis(*ms));
        }
        let a = apply_op(&memory, &catalog, op).map_err(|e| e.to_string());
        let b = apply_op(&disk, &catalog, op).map_err(|e| e.to_string());
        if a != b {
            return Err(format!("op {i} {op:?}: memory {a:?}, persistent {b:?}"));
        }
    }
    let expected = memory.state().canonical_bytes();
    if disk.state().canonical_bytes() != expected {
        return Err("live persistent state differs from in-memory state".into());
    }
    drop(disk);
    let reopened = PolicyStore::open(&path, catalog, clock).map_err(|e| e.to_string())?;
    if reopened.state().canonical_bytes() != expected {
        return Err("replayed state differs from in-memory state".into());
    }
    Ok(())
}

// ---- generator inputs ----

const SEGMENTS: [&str; 10] = [
    "ads", "weather", "social", "ui", "net", "core", "adsdk", "maps", "camera", "util",
];

/// Random descriptors over the builtin catalog and library facts, including
/// undeclared call sites, non-dangerous permissions and unknown libraries.
pub fn descriptor_strategy() -> impl Strategy<Value = AppDescriptor> {
    let catalog = Catalog::builtin();
    let dangerous: Vec<String> = catalog.permissions().iter().map(|p| p.permission.to_string()).collect();
    let mut all = dangerous.clone();
    all.push("android.permission.INTERNET".into());
    all.push("android.permission.VIBRATE".into());
    let libraries: Vec<String> = LibraryFacts::builtin()
        .facts()
        .iter()
        .map(|f| f.library_id.clone())
        .chain(["com.unknown.sdk".to_string(), "org.example.lib".to_string()])
        .collect();
    let class = (
        prop::sample::select(libraries.clone()),
        prop::collection::vec(prop::sample::select(SEGMENTS.to_vec()), 0..3),
        "[A-Z][a-z]{0,6}",
        any::<bool>(),
    )
        .prop_map(|(lib, segs, leaf, own)| {
            let root = if own { "com.rand.app".to_string() } else { lib };
            let mut parts = vec![root];
            parts.extend(segs.into_iter().map(String::from));
            parts.push(leaf);
            parts.join(".")
        });
    let site =
        (class, "[a-z]{1,5}", prop::sample::select(dangerous)).prop_map(|(class_name, method_name, p)| CallSite {
            class_name,
            method_name,
            permission: Permission::qualified(&p),
        });
    (
        0u32..1000,
        prop::sample::select(vec!["Weather", "Social", "Tools", "Games"]),
        prop::sample::subsequence(all, 0..8),
        prop::sample::subsequence(libraries, 0..4),
        prop::collection::vec(site, 0..8),
    )
        .prop_map(|(n, category, perms, libraries, call_sites)| AppDescriptor {
            app_id: format!("com.rand.app{n}"),
            app_category: category.to_string(),
            declared_permissions: perms.iter().map(|p| Permission::qualified(p)).collect(),
            libraries,
            call_sites,
        })
}
