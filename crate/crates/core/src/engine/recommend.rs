use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::schema::{Permission, Purpose};
use crate::store::StoreState;

use super::request::AuditRecord;

/// Package names of known partner-surveillance apps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Blacklist {
    names: BTreeSet<String>,
}

impl Blacklist {
    /// One package name per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Blacklist {
        Blacklist {
            names: text
                .lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Blacklist> {
        Ok(Blacklist::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, app_id: &str) -> bool {
        self.names.contains(app_id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    High,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recommendation {
    Spouseware {
        app_id: String,
        priority: Priority,
    },
    /// An app uses data far more often than others in its category.
    FrequencyOutlier {
        app_id: String,
        category: String,
        permission: Permission,
        purpose: Purpose,
        count: u64,
        category_median: f64,
        factor: f64,
        priority: Priority,
    },
}

/// Access counts per app and (permission, purpose) for decisions resolved in
/// `[since, until)`.
pub fn access_counts(
    log: &[AuditRecord],
    since: Timestamp,
    until: Timestamp,
) -> BTreeMap<(String, Permission, Purpose), u64> {
    let mut counts = BTreeMap::new();
    for r in log {
        let at = r.decision.resolved_at;
        if at >= since && at < until {
            *counts
                .entry((r.key.app_id.clone(), r.key.permission.clone(), r.key.purpose.clone()))
                .or_insert(0) += 1;
        }
    }
    counts
}

fn median(values: &mut [u64]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Spouseware warnings first, then frequency outliers.
///
/// An app is an outlier for a (permission, purpose) when its count exceeds
/// `factor` times the median count of the other installed apps in its
/// category (apps without accesses count as zero, and the median is floored
/// at one). Apps alone in their category are never flagged.
pub fn recommendations(
    state: &StoreState,
    counts: &BTreeMap<(String, Permission, Purpose), u64>,
    blacklist: &Blacklist,
    factor: f64,
) -> Vec<Recommendation> {
    let mut out: Vec<Recommendation> = state
        .apps
        .keys()
        .filter(|id| blacklist.contains(id))
        .map(|id| Recommendation::Spouseware {
            app_id: id.clone(),
            priority: Priority::High,
        })
        .collect();

    for ((app_id, permission, purpose), &count) in counts {
        let Some(app) = state.app(app_id) else { continue };
        let mut peers: Vec<u64> = state
            .apps
            .values()
            .filter(|a| a.category == app.category && a.app_id != app.app_id)
            .map(|a| {
                counts
                    .get(&(a.app_id.clone(), permission.clone(), purpose.clone()))
                    .copied()
                    .unwrap_or(0)
            })
            .collect();
        if peers.is_empty() {
            continue;
        }
        let category_median = median(&mut peers);
        if count as f64 > factor * category_median.max(1.0) {
            out.push(Recommendation::FrequencyOutlier {
                app_id: app_id.clone(),
                category: app.category.clone(),
                permission: permission.clone(),
                purpose: purpose.clone(),
                count,
                category_median,
                factor,
                priority: Priority::Normal,
            });
        }
    }
    out
}
