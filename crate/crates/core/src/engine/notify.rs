use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::schema::{Permission, Purpose};
use crate::store::{Scope, Verdict};

use super::request::{Decision, DecisionSource, SourceKind};

/// A silent notice about an automated decision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub id: u64,
    pub app_id: String,
    pub permission: Permission,
    pub purpose: Purpose,
    pub action: Verdict,
    pub source: DecisionSource,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    /// Decisions folded into this notice, including the first.
    pub count: u64,
    /// API path of the setting that decided, e.g. `/global/{permission}`.
    pub deep_link: String,
    pub silent: bool,
    #[serde(default)]
    pub dismissed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Emitted {
    New(Notification),
    /// Folded into an existing notice inside its window.
    Suppressed {
        id: u64,
        count: u64,
    },
}

type WindowKey = (String, Permission, Purpose, SourceKind, Verdict);

/// Rate-limited notification feed. At most one notice per
/// (app, permission, purpose, source kind, action) is opened per window;
/// repeats inside the window bump its counter. A new app session closes the
/// app's open windows.
#[derive(Debug)]
pub struct NotificationCenter {
    window: Duration,
    next_id: u64,
    feed: Vec<Notification>,
    open: HashMap<WindowKey, usize>,
}

pub fn deep_link(app_id: &str, permission: &Permission, source: &DecisionSource) -> String {
    match source {
        DecisionSource::OrgProfile { profile_id, .. } => format!("/org-profile/{profile_id}"),
        DecisionSource::QuickSettings { .. } => "/quick-settings".to_string(),
        DecisionSource::UserPolicy {
            scope: Scope::Global, ..
        } => format!("/global/{permission}"),
        _ => format!("/apps/{app_id}/settings"),
    }
}

impl NotificationCenter {
    pub fn new(window: Duration) -> Self {
        NotificationCenter {
            window,
            next_id: 1,
            feed: Vec::new(),
            open: HashMap::new(),
        }
    }

    /// Records an automated decision. Returns `None` for decisions the user
    /// made themselves.
    pub fn emit(
        &mut self,
        app_id: &str,
        permission: &Permission,
        purpose: &Purpose,
        decision: &Decision,
    ) -> Option<Emitted> {
        if !decision.source.is_automated() {
            return None;
        }
        let now = decision.resolved_at;
        let key = (
            app_id.to_string(),
            permission.clone(),
            purpose.clone(),
            decision.source.kind(),
            decision.action,
        );
        if let Some(&idx) = self.open.get(&key) {
            let n = &mut self.feed[idx];
            if now < n.created_at.saturating_add(self.window) {
                n.count += 1;
                n.updated_at = now;
                return Some(Emitted::Suppressed {
                    id: n.id,
                    count: n.count,
                });
            }
        }
        let n = Notification {
            id: self.next_id,
            app_id: app_id.to_string(),
            permission: permission.clone(),
            purpose: purpose.clone(),
            action: decision.action,
            source: decision.source.clone(),
            created_at: now,
            updated_at: now,
            count: 1,
            deep_link: deep_link(app_id, permission, &decision.source),
            silent: true,
            dismissed: false,
        };
        self.next_id += 1;
        self.open.insert(key, self.feed.len());
        self.feed.push(n.clone());
        Some(Emitted::New(n))
    }

    pub fn session_start(&mut self, app_id: &str) {
        self.open.retain(|k, _| k.0 != app_id);
    }

    /// Hides a notice and closes its window. Returns false for unknown ids.
    pub fn dismiss(&mut self, id: u64) -> bool {
        let Some(idx) = self.feed.iter().position(|n| n.id == id) else {
            return false;
        };
        self.feed[idx].dismissed = true;
        self.open.retain(|_, v| *v != idx);
        true
    }

    /// Every notice ever emitted, oldest first.
    pub fn all(&self) -> &[Notification] {
        &self.feed
    }

    /// Notices not yet dismissed, newest first.
    pub fn visible(&self) -> Vec<Notification> {
        self.feed.iter().rev().filter(|n| !n.dismissed).cloned().collect()
    }
}
