use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{is_within_package, Catalog, Permission, Purpose};

const BUILTIN_FACTS: &str = include_str!("../../data/library_facts.json");
const BUILTIN_KEYWORDS: &str = include_str!("../../data/keyword_rules.json");

#[derive(Debug, Error)]
pub enum FactsError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// A sensitive API call found in an app.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallSite {
    pub class_name: String,
    pub method_name: String,
    pub permission: Permission,
}

/// Facts extracted from an app package by an external analysis tool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDescriptor {
    pub app_id: String,
    #[serde(default, alias = "category")]
    pub app_category: String,
    #[serde(alias = "permissions")]
    pub declared_permissions: BTreeSet<Permission>,
    /// Root package prefixes of bundled libraries, e.g. `com.mopub`.
    #[serde(default)]
    pub libraries: Vec<String>,
    #[serde(default)]
    pub call_sites: Vec<CallSite>,
}

impl AppDescriptor {
    pub fn from_json(raw: &[u8]) -> Result<AppDescriptor, FactsError> {
        Ok(serde_json::from_slice(raw)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryGrant {
    pub permission: Permission,
    pub purpose: Purpose,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryFact {
    pub library_id: String,
    pub destination_name: String,
    pub category: String,
    pub grants: Vec<LibraryGrant>,
}

/// The library lookup table. Library ids are unique and each library grants at
/// most one purpose per permission.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LibraryFacts {
    facts: Vec<LibraryFact>,
}

impl LibraryFacts {
    pub fn new(facts: Vec<LibraryFact>, catalog: &Catalog) -> Result<LibraryFacts, FactsError> {
        let mut ids = HashSet::new();
        for f in &facts {
            if !ids.insert(f.library_id.as_str()) {
                return Err(FactsError::Invalid(format!("library `{}` listed twice", f.library_id)));
            }
            let mut seen = HashSet::new();
            for g in &f.grants {
                if !catalog.is_dangerous(&g.permission) {
                    return Err(FactsError::Invalid(format!(
                        "library `{}`: unknown permission `{}`",
                        f.library_id, g.permission
                    )));
                }
                if !catalog.is_canonical(&g.purpose) {
                    return Err(FactsError::Invalid(format!(
                        "library `{}`: purpose `{}` is not canonical",
                        f.library_id, g.purpose
                    )));
                }
                if !seen.insert(&g.permission) {
                    return Err(FactsError::Invalid(format!(
                        "library `{}` grants `{}` twice",
                        f.library_id, g.permission
                    )));
                }
            }
        }
        Ok(LibraryFacts { facts })
    }

    pub fn builtin() -> LibraryFacts {
        LibraryFacts::from_json(BUILTIN_FACTS.as_bytes(), &Catalog::builtin()).expect("builtin library facts are valid")
    }

    /// Parses a JSON array of facts. Purpose names are normalized.
    pub fn from_json(raw: &[u8], catalog: &Catalog) -> Result<LibraryFacts, FactsError> {
        let mut facts: Vec<LibraryFact> = serde_json::from_slice(raw)?;
        for f in &mut facts {
            for g in &mut f.grants {
                g.purpose = catalog
                    .normalize_purpose(g.purpose.canonical_name())
                    .map_err(|e| FactsError::Invalid(format!("library `{}`: {e}", f.library_id)))?;
            }
        }
        LibraryFacts::new(facts, catalog)
    }

    pub fn from_file(path: &Path, catalog: &Catalog) -> Result<LibraryFacts, FactsError> {
        let raw = std::fs::read(path).map_err(|source| FactsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        LibraryFacts::from_json(&raw, catalog)
    }

    pub fn facts(&self) -> &[LibraryFact] {
        &self.facts
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// The fact with the longest library id containing `name` (a package,
    /// library id or fully qualified class name).
    pub fn lookup(&self, name: &str) -> Option<&LibraryFact> {
        self.facts
            .iter()
            .filter(|f| is_within_package(name, &f.library_id))
            .max_by_key(|f| f.library_id.len())
    }

    pub fn is_known_library_code(&self, class_name: &str) -> bool {
        self.lookup(class_name).is_some()
    }
}

/// Maps a package-name keyword to a likely purpose.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub keyword: String,
    pub purpose: Purpose,
}

impl KeywordRule {
    /// Whether the keyword starts a word inside the package segment.
    /// Words are split on `_`, digits and lower-to-upper case changes, so
    /// `weatherwidget` and `AdsManager` match while `loads` does not.
    pub fn matches_segment(&self, segment: &str) -> bool {
        let kw = self.keyword.to_lowercase();
        if kw.is_empty() {
            return false;
        }
        segment_words(segment).iter().any(|w| w.to_lowercase().starts_with(&kw))
    }
}

fn segment_words(segment: &str) -> Vec<&str> {
    let mut words = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = segment.char_indices().collect();
    for w in 0..chars.len() {
        let (i, c) = chars[w];
        let boundary = if c == '_' || c.is_ascii_digit() {
            if start < i {
                words.push(&segment[start..i]);
            }
            start = i + c.len_utf8();
            continue;
        } else {
            w > 0 && c.is_uppercase() && chars[w - 1].1.is_lowercase()
        };
        if boundary && start < i {
            words.push(&segment[start..i]);
            start = i;
        }
    }
    if start < segment.len() {
        words.push(&segment[start..]);
    }
    words
}

/// Keyword rules in priority order; the first matching rule wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeywordRules {
    rules: Vec<KeywordRule>,
}

impl KeywordRules {
    pub fn new(rules: Vec<KeywordRule>) -> Self {
        KeywordRules { rules }
    }

    /// The three package keywords ("ads", "social", "weather").
    pub fn builtin() -> KeywordRules {
        KeywordRules::from_json(BUILTIN_KEYWORDS.as_bytes(), &Catalog::builtin())
            .expect("builtin keyword rules are valid")
    }

    pub fn from_json(raw: &[u8], catalog: &Catalog) -> Result<KeywordRules, FactsError> {
        #[derive(Deserialize)]
        struct Raw {
            keyword: String,
            purpose: String,
        }
        let raw: Vec<Raw> = serde_json::from_slice(raw)?;
        let rules = raw
            .into_iter()
            .map(|r| {
                let purpose = catalog
                    .normalize_purpose(&r.purpose)
                    .map_err(|e| FactsError::Invalid(format!("keyword `{}`: {e}", r.keyword)))?;
                Ok(KeywordRule {
                    keyword: r.keyword,
                    purpose,
                })
            })
            .collect::<Result<_, FactsError>>()?;
        Ok(KeywordRules { rules })
    }

    /// Appends rules from an extension file after the existing ones.
    pub fn extend_from_file(&mut self, path: &Path, catalog: &Catalog) -> Result<(), FactsError> {
        let raw = std::fs::read(path).map_err(|source| FactsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.rules.extend(KeywordRules::from_json(&raw, catalog)?.rules);
        Ok(())
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    /// Scans the package segments of a class name (everything but the
    /// simple class name).
    pub fn infer(&self, class_name: &str) -> Option<&KeywordRule> {
        let segments: Vec<&str> = class_name.split('.').collect();
        let package = &segments[..segments.len().saturating_sub(1)];
        self.rules
            .iter()
            .find(|r| package.iter().any(|seg| r.matches_segment(seg)))
    }
}
