use crate::generator::LibraryFacts;
use crate::schema::{AppPolicy, ClassPattern, MethodPattern, Permission, PolicyClause};
use crate::store::{Origin, PolicyAction, RequestKey, Sensor, SensorState, StoreState, Verdict};

use super::request::DecisionSource;

/// Result of the four-tier walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Decided { action: Verdict, source: DecisionSource },
    Prompt,
}

/// Resolves a fully attributed request against a store snapshot:
/// organizational profile, then quick settings, then the newest matching
/// user policy, then the user.
pub fn evaluate(state: &StoreState, key: &RequestKey) -> Outcome {
    if let Some((profile, rule_index, rule)) = state.org_rule(key) {
        if let Some(action) = rule.action.verdict() {
            return Outcome::Decided {
                action,
                source: DecisionSource::OrgProfile {
                    profile_id: profile.id.clone(),
                    rule_index,
                },
            };
        }
    }

    if let Some(sensor) = Sensor::for_permission(&key.permission) {
        if state.quick_settings.state(sensor) == SensorState::Off {
            return Outcome::Decided {
                action: Verdict::Deny,
                source: DecisionSource::QuickSettings { sensor },
            };
        }
    }

    if let Some(policy) = state.newest_matching(key) {
        if let Some(action) = policy.action.verdict() {
            return Outcome::Decided {
                action,
                source: DecisionSource::UserPolicy {
                    policy_id: policy.id,
                    scope: policy.scope.clone(),
                },
            };
        }
        debug_assert_eq!(policy.action, PolicyAction::Ask);
    }

    Outcome::Prompt
}

/// The clause a call site is attributed to: the most specific clause for the
/// permission whose patterns match the site. Exact classes beat package
/// prefixes (longer first) beat the class wildcard; named methods beat the
/// method wildcard. Among equally specific clauses the first listed wins.
pub fn attribute_clause<'p>(
    policy: &'p AppPolicy,
    permission: &Permission,
    class_name: &str,
    method_name: &str,
) -> Option<&'p PolicyClause> {
    let mut best: Option<((u8, usize, u8), &PolicyClause)> = None;
    for clause in &policy.clauses {
        if &clause.uses != permission || !clause.matches_site(class_name, method_name) {
            continue;
        }
        let rank = specificity(clause);
        if best.as_ref().is_none_or(|(r, _)| rank > *r) {
            best = Some((rank, clause));
        }
    }
    best.map(|(_, c)| c)
}

fn specificity(clause: &PolicyClause) -> (u8, usize, u8) {
    let (class, len) = match &clause.class_pattern {
        ClassPattern::Exact(c) => (2, c.len()),
        ClassPattern::Package(p) => (1, p.len()),
        ClassPattern::Any => (0, 0),
    };
    let method = match clause.method_pattern {
        MethodPattern::Named(_) => 1,
        MethodPattern::Any => 0,
    };
    (class, len, method)
}

/// Who receives the data at a code site. Library code is third party, named
/// by the library table; everything else is the app itself.
pub fn origin_of_class(class_name: &str, facts: &LibraryFacts) -> Origin {
    match facts.lookup(class_name) {
        Some(f) if !class_name.is_empty() => Origin::ThirdParty(f.destination_name.clone()),
        _ => Origin::FirstParty,
    }
}

/// Origin of a policy clause, from its class pattern.
pub fn origin_of_clause(clause: &PolicyClause, facts: &LibraryFacts) -> Origin {
    match &clause.class_pattern {
        ClassPattern::Any => Origin::FirstParty,
        ClassPattern::Package(p) | ClassPattern::Exact(p) => origin_of_class(p, facts),
    }
}
