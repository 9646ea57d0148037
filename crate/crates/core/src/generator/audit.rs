use serde::Serialize;

use super::facts::{AppDescriptor, LibraryFacts};
use crate::schema::{
    is_within_package, validate_app_policy, AppPolicy, Catalog, ClassPattern, MethodPattern, Permission, Purpose,
    Violation,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditFinding {
    DuplicatePurposeForSite {
        class: ClassPattern,
        method: MethodPattern,
        uses: Permission,
        purposes: Vec<Purpose>,
    },
    UndeclaredPermission {
        permission: Permission,
    },
    /// A bundled library is known to use a permission for a purpose the
    /// policy does not declare.
    LibraryMismatch {
        library_id: String,
        destination_name: String,
        permission: Permission,
        purpose: Purpose,
    },
    /// A clause names code that does not exist in the app.
    OrphanClause {
        clause: usize,
        class: ClassPattern,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditWarning {
    /// First-party code requesting a permission whose only purpose is the
    /// generic fallback; the keyword table had nothing to offer.
    NoPurposeHint { class_name: String, permission: Permission },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub findings: Vec<AuditFinding>,
    pub warnings: Vec<AuditWarning>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks a policy against the app it claims to describe.
pub fn audit_policy(
    policy: &AppPolicy,
    descriptor: &AppDescriptor,
    facts: &LibraryFacts,
    catalog: &Catalog,
) -> AuditReport {
    let mut report = AuditReport::default();
    let declared = descriptor
        .declared_permissions
        .iter()
        .filter(|p| catalog.is_dangerous(p))
        .cloned()
        .collect();

    for v in validate_app_policy(policy, &declared) {
        match v {
            Violation::DuplicatePurposeForSite {
                class,
                method,
                uses,
                purposes,
            } => report.findings.push(AuditFinding::DuplicatePurposeForSite {
                class,
                method,
                uses,
                purposes,
            }),
            Violation::UndeclaredPermission { permission } => {
                report.findings.push(AuditFinding::UndeclaredPermission { permission })
            }
            Violation::UnusedDeclaredPermission { .. } => {}
        }
    }

    let mut libs: Vec<_> = descriptor.libraries.iter().filter_map(|l| facts.lookup(l)).collect();
    libs.sort_by(|a, b| a.library_id.cmp(&b.library_id));
    libs.dedup_by(|a, b| a.library_id == b.library_id);
    for fact in libs {
        for grant in &fact.grants {
            if !declared.contains(&grant.permission) {
                continue;
            }
            let covered = policy.clauses.iter().any(|c| {
                c.uses == grant.permission
                    && c.purpose == grant.purpose
                    && class_overlaps_package(&c.class_pattern, &fact.library_id)
            });
            if !covered {
                report.findings.push(AuditFinding::LibraryMismatch {
                    library_id: fact.library_id.clone(),
                    destination_name: fact.destination_name.clone(),
                    permission: grant.permission.clone(),
                    purpose: grant.purpose.clone(),
                });
            }
        }
    }

    for (i, clause) in policy.clauses.iter().enumerate() {
        let found = match &clause.class_pattern {
            ClassPattern::Any => true,
            ClassPattern::Exact(class) => {
                descriptor.call_sites.iter().any(|s| &s.class_name == class)
                    || descriptor.libraries.iter().any(|l| is_within_package(class, l))
            }
            ClassPattern::Package(pkg) => {
                descriptor
                    .call_sites
                    .iter()
                    .any(|s| is_within_package(&s.class_name, pkg))
                    || descriptor
                        .libraries
                        .iter()
                        .any(|l| is_within_package(l, pkg) || is_within_package(pkg, l))
            }
        };
        if !found {
            report.findings.push(AuditFinding::OrphanClause {
                clause: i,
                class: clause.class_pattern.clone(),
            });
        }
    }

    let fallback = catalog.fallback_purpose();
    for site in &descriptor.call_sites {
        if facts.is_known_library_code(&site.class_name) {
            continue;
        }
        let mut purposes = policy
            .clauses
            .iter()
            .filter(|c| c.uses == site.permission && c.matches_site(&site.class_name, &site.method_name))
            .map(|c| &c.purpose);
        if purposes.all(|p| *p == fallback) && declared.contains(&site.permission) {
            report.warnings.push(AuditWarning::NoPurposeHint {
                class_name: site.class_name.clone(),
                permission: site.permission.clone(),
            });
        }
    }

    report
}

fn class_overlaps_package(pattern: &ClassPattern, package: &str) -> bool {
    match pattern {
        ClassPattern::Any => true,
        ClassPattern::Package(p) => is_within_package(p, package) || is_within_package(package, p),
        ClassPattern::Exact(c) => is_within_package(c, package),
    }
}
