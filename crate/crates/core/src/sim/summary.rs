use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::engine::{AuditRecord, DecisionSource};
use crate::schema::{Catalog, Permission, Purpose};
use crate::store::{StoreState, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hour,
    Day,
    Week,
}

impl Window {
    pub fn duration(self) -> Duration {
        Duration::from_secs(match self {
            Window::Hour => 3600,
            Window::Day => 24 * 3600,
            Window::Week => 7 * 24 * 3600,
        })
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hour" => Ok(Window::Hour),
            "day" => Ok(Window::Day),
            "week" => Ok(Window::Week),
            _ => Err(format!("unknown window `{s}`; expected hour, day or week")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub allowed: u64,
    pub denied: u64,
    /// Requests that went to the user, whatever the answer.
    pub prompted: u64,
}

impl Counts {
    pub fn add(&mut self, record: &AuditRecord) {
        match record.decision.action {
            Verdict::Allow => self.allowed += 1,
            Verdict::Deny => self.denied += 1,
        }
        if matches!(
            record.decision.source,
            DecisionSource::RuntimePrompt { .. } | DecisionSource::PromptTimeout { .. }
        ) {
            self.prompted += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.allowed + self.denied
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRow {
    pub app_id: String,
    pub permission: Permission,
    pub purpose: Purpose,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub window: Window,
    pub since: Timestamp,
    pub until: Timestamp,
    /// Sorted by (app, permission, purpose).
    pub rows: Vec<UsageRow>,
    /// Totals per permission group; every group is present.
    pub by_group: BTreeMap<String, Counts>,
}

/// Folds decisions resolved in `[until - window, until]`.
pub fn usage_summary(log: &[AuditRecord], until: Timestamp, window: Window, catalog: &Catalog) -> UsageSummary {
    let since = until.saturating_sub(window.duration());
    let mut rows: BTreeMap<(String, Permission, Purpose), Counts> = BTreeMap::new();
    let mut by_group: BTreeMap<String, Counts> = catalog
        .groups()
        .into_iter()
        .map(|g| (g.to_string(), Counts::default()))
        .collect();
    for r in log {
        let at = r.decision.resolved_at;
        if at < since || at > until {
            continue;
        }
        rows.entry((r.key.app_id.clone(), r.key.permission.clone(), r.key.purpose.clone()))
            .or_default()
            .add(r);
        if let Some(info) = catalog.permission_info(&r.key.permission) {
            by_group.entry(info.group.clone()).or_default().add(r);
        }
    }
    UsageSummary {
        window,
        since,
        until,
        rows: rows
            .into_iter()
            .map(|((app_id, permission, purpose), counts)| UsageRow {
                app_id,
                permission,
                purpose,
                counts,
            })
            .collect(),
        by_group,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupThresholds {
    /// Size of the most-used list.
    pub most_used: usize,
    /// Apps installed this recently count as recently installed.
    pub recent: Duration,
    /// Apps without decisions for this long count as inactive.
    pub inactive_after: Duration,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        let week = Window::Week.duration();
        GroupThresholds {
            most_used: 5,
            recent: week,
            inactive_after: week,
        }
    }
}

/// Home-screen app groupings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppGroups {
    /// Most decisions in the last `inactive_after`, busiest first.
    pub most_used: Vec<String>,
    /// Newest first.
    pub recently_installed: Vec<String>,
    pub inactive: Vec<String>,
}

pub fn app_groups(state: &StoreState, log: &[AuditRecord], now: Timestamp, t: &GroupThresholds) -> AppGroups {
    let active_since = now.saturating_sub(t.inactive_after);
    let mut last_seen: BTreeMap<&str, Timestamp> = BTreeMap::new();
    let mut recent_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in log {
        let at = r.decision.resolved_at;
        let e = last_seen.entry(r.key.app_id.as_str()).or_insert(at);
        *e = (*e).max(at);
        if at >= active_since && at <= now {
            *recent_counts.entry(r.key.app_id.as_str()).or_default() += 1;
        }
    }

    let mut most_used: Vec<(&str, u64)> = recent_counts
        .into_iter()
        .filter(|(id, _)| state.apps.contains_key(*id))
        .collect();
    most_used.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let recent_since = now.saturating_sub(t.recent);
    let mut recently: Vec<_> = state.apps.values().filter(|a| a.installed_at >= recent_since).collect();
    recently.sort_by(|a, b| b.installed_at.cmp(&a.installed_at).then(a.app_id.cmp(&b.app_id)));

    let inactive = state
        .apps
        .values()
        .filter(|a| {
            let last = last_seen
                .get(a.app_id.as_str())
                .copied()
                .unwrap_or(a.installed_at)
                .max(a.installed_at);
            last < active_since
        })
        .map(|a| a.app_id.clone())
        .collect();

    AppGroups {
        most_used: most_used
            .into_iter()
            .take(t.most_used)
            .map(|(id, _)| id.to_string())
            .collect(),
        recently_installed: recently.into_iter().map(|a| a.app_id.clone()).collect(),
        inactive,
    }
}
