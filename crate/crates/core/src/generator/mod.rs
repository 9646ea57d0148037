//! Heuristic app policies for apps that ship without one, and audits of
//! policies against what an app actually contains.
//!
//! Generation runs three passes, each only filling gaps the previous pass
//! left:
//!
//! 1. bundled libraries found in the lookup table contribute their known
//!    (permission, purpose) grants, scoped to the library's package;
//! 2. sensitive call sites outside any known library get a purpose from
//!    keywords in their package name;
//! 3. every declared permission still without a clause gets a wildcard clause
//!    with the generic fallback purpose.

mod audit;
mod batch;
mod facts;

use std::collections::BTreeSet;

use serde::Serialize;

pub use audit::{audit_policy, AuditFinding, AuditReport, AuditWarning};
pub use batch::{batch_generate, BatchError, BatchReport, DirectoryRepository, PolicyRepository};
pub use facts::{
    AppDescriptor, CallSite, FactsError, KeywordRule, KeywordRules, LibraryFact, LibraryFacts, LibraryGrant,
};

use crate::schema::{AppPolicy, Catalog, ClassPattern, MethodPattern, Permission, PolicyClause, Provenance, Purpose};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationWarning {
    /// Declared permission outside the dangerous set; ignored.
    NonDangerousPermission { permission: Permission },
    /// Call site whose permission the app does not declare; skipped.
    UndeclaredCallSite { class_name: String, permission: Permission },
    /// Declared permission that only received the fallback purpose.
    FallbackPurpose { permission: Permission },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedPolicy {
    pub policy: AppPolicy,
    pub warnings: Vec<GenerationWarning>,
}

/// Builds a policy from extracted app facts. Always succeeds.
pub fn generate_policy(
    descriptor: &AppDescriptor,
    facts: &LibraryFacts,
    rules: &KeywordRules,
    catalog: &Catalog,
) -> GeneratedPolicy {
    let mut warnings = Vec::new();
    let declared: BTreeSet<&Permission> = descriptor
        .declared_permissions
        .iter()
        .filter(|p| {
            let ok = catalog.is_dangerous(p);
            if !ok {
                warnings.push(GenerationWarning::NonDangerousPermission {
                    permission: (*p).clone(),
                });
            }
            ok
        })
        .collect();

    let mut clauses: Vec<PolicyClause> = Vec::new();
    fn push(clauses: &mut Vec<PolicyClause>, clause: PolicyClause) {
        if !clauses.contains(&clause) {
            clauses.push(clause);
        }
    }
    let for_string = |purpose: &Purpose| catalog.purpose_info(purpose).map(|i| i.summary()).unwrap_or_default();

    // pass 1: library lookup
    let mut libs: Vec<&LibraryFact> = descriptor.libraries.iter().filter_map(|l| facts.lookup(l)).collect();
    libs.sort_by(|a, b| a.library_id.cmp(&b.library_id));
    libs.dedup_by(|a, b| a.library_id == b.library_id);
    for fact in libs {
        for grant in &fact.grants {
            if declared.contains(&grant.permission) {
                push(
                    &mut clauses,
                    PolicyClause {
                        uses: grant.permission.clone(),
                        purpose: grant.purpose.clone(),
                        class_pattern: ClassPattern::Package(fact.library_id.clone()),
                        method_pattern: MethodPattern::Any,
                        for_string: for_string(&grant.purpose),
                    },
                );
            }
        }
    }

    // pass 2: package keywords on first-party call sites
    for site in &descriptor.call_sites {
        if facts.is_known_library_code(&site.class_name) {
            continue;
        }
        if !declared.contains(&site.permission) {
            warnings.push(GenerationWarning::UndeclaredCallSite {
                class_name: site.class_name.clone(),
                permission: site.permission.clone(),
            });
            continue;
        }
        let Some(rule) = rules.infer(&site.class_name) else {
            continue;
        };
        let (Ok(class_pattern), Ok(method_pattern)) = (
            ClassPattern::parse(&site.class_name),
            MethodPattern::parse(&site.method_name),
        ) else {
            continue;
        };
        push(
            &mut clauses,
            PolicyClause {
                uses: site.permission.clone(),
                purpose: rule.purpose.clone(),
                class_pattern,
                method_pattern,
                for_string: for_string(&rule.purpose),
            },
        );
    }

    // pass 3: fallback
    let fallback = catalog.fallback_purpose();
    for p in &declared {
        if !clauses.iter().any(|c| &c.uses == *p) {
            warnings.push(GenerationWarning::FallbackPurpose {
                permission: (*p).clone(),
            });
            push(
                &mut clauses,
                PolicyClause {
                    uses: (*p).clone(),
                    purpose: fallback.clone(),
                    class_pattern: ClassPattern::Any,
                    method_pattern: MethodPattern::Any,
                    for_string: for_string(&fallback),
                },
            );
        }
    }

    GeneratedPolicy {
        policy: AppPolicy {
            app_id: descriptor.app_id.clone(),
            clauses,
            provenance: Provenance::PreGenerated,
        },
        warnings,
    }
}

/// The policy used when nothing is known about an app: each declared
/// dangerous permission with the fallback purpose at any site.
pub fn fallback_policy(app_id: &str, declared: &BTreeSet<Permission>, catalog: &Catalog) -> AppPolicy {
    let purpose = catalog.fallback_purpose();
    let for_string = catalog.purpose_info(&purpose).map(|i| i.summary()).unwrap_or_default();
    AppPolicy {
        app_id: app_id.to_string(),
        clauses: declared
            .iter()
            .filter(|p| catalog.is_dangerous(p))
            .map(|p| PolicyClause {
                uses: p.clone(),
                purpose: purpose.clone(),
                class_pattern: ClassPattern::Any,
                method_pattern: MethodPattern::Any,
                for_string: for_string.clone(),
            })
            .collect(),
        provenance: Provenance::Fallback,
    }
}
