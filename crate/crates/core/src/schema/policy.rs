//! App policies: parsing, canonical serialization and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use super::catalog::{Catalog, CatalogError, Permission, Purpose};

/// Purpose strings longer than this are shortened for display.
pub const DISPLAY_FOR_LIMIT: usize = 140;

const KEY_USES: &str = "uses";
const KEY_PURPOSE: &str = "purpose";
const KEY_CLASS: &str = "class";
const KEY_METHOD: &str = "method";
const KEY_FOR: &str = "for";
const KNOWN_KEYS: [&str; 5] = [KEY_USES, KEY_PURPOSE, KEY_CLASS, KEY_METHOD, KEY_FOR];

/// Which code location a clause applies to.
///
/// `Package` (`com.mopub.*`) is only produced by the generator for library
/// clauses; developer policies normally use exact names or `*`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassPattern {
    Any,
    Package(String),
    Exact(String),
}

impl ClassPattern {
    pub fn parse(raw: &str) -> Result<ClassPattern, String> {
        let raw = raw.trim();
        if raw == "*" {
            return Ok(ClassPattern::Any);
        }
        if let Some(prefix) = raw.strip_suffix(".*") {
            return if is_dotted_identifier(prefix) {
                Ok(ClassPattern::Package(prefix.to_string()))
            } else {
                Err(format!("invalid package pattern `{raw}`"))
            };
        }
        if is_dotted_identifier(raw) {
            Ok(ClassPattern::Exact(raw.to_string()))
        } else {
            Err(format!("invalid class name `{raw}`"))
        }
    }

    pub fn matches(&self, class_name: &str) -> bool {
        match self {
            ClassPattern::Any => true,
            ClassPattern::Package(p) => is_within_package(class_name, p),
            ClassPattern::Exact(c) => c == class_name,
        }
    }

    pub fn is_wildcard(&self) -> bool {
        matches!(self, ClassPattern::Any)
    }
}

impl fmt::Display for ClassPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassPattern::Any => f.write_str("*"),
            ClassPattern::Package(p) => write!(f, "{p}.*"),
            ClassPattern::Exact(c) => f.write_str(c),
        }
    }
}

/// Method names only; signatures are not modelled.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodPattern {
    Any,
    Named(String),
}

impl MethodPattern {
    pub fn parse(raw: &str) -> Result<MethodPattern, String> {
        let raw = raw.trim();
        if raw == "*" {
            Ok(MethodPattern::Any)
        } else if !raw.is_empty() && !raw.contains('*') && !raw.chars().any(char::is_whitespace) {
            Ok(MethodPattern::Named(raw.to_string()))
        } else {
            Err(format!("invalid method name `{raw}`"))
        }
    }

    pub fn matches(&self, method: &str) -> bool {
        match self {
            MethodPattern::Any => true,
            MethodPattern::Named(m) => m == method,
        }
    }
}

impl fmt::Display for MethodPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodPattern::Any => f.write_str("*"),
            MethodPattern::Named(m) => f.write_str(m),
        }
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                <$ty>::parse(&raw).map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(ClassPattern);
string_serde!(MethodPattern);

fn is_dotted_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.split('.')
            .all(|seg| !seg.is_empty() && seg.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '$'))
}

/// True when `name` equals `package` or lies underneath it.
pub fn is_within_package(name: &str, package: &str) -> bool {
    name == package
        || (name.len() > package.len() && name.starts_with(package) && name.as_bytes()[package.len()] == b'.')
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyClause {
    pub uses: Permission,
    pub purpose: Purpose,
    #[serde(rename = "class")]
    pub class_pattern: ClassPattern,
    #[serde(rename = "method")]
    pub method_pattern: MethodPattern,
    #[serde(rename = "for")]
    pub for_string: String,
}

impl PolicyClause {
    pub fn matches_site(&self, class_name: &str, method_name: &str) -> bool {
        self.class_pattern.matches(class_name) && self.method_pattern.matches(method_name)
    }

    /// The purpose string as shown on cards and prompts.
    pub fn display_for(&self) -> String {
        truncate_for_display(&self.for_string)
    }
}

pub fn truncate_for_display(s: &str) -> String {
    if s.chars().count() <= DISPLAY_FOR_LIMIT {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(DISPLAY_FOR_LIMIT - 1).collect();
        out.push('…');
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    DeveloperEmbedded,
    PreGenerated,
    Fallback,
}

impl Provenance {
    pub fn default_mode(self) -> ParseMode {
        match self {
            Provenance::DeveloperEmbedded => ParseMode::Strict,
            Provenance::PreGenerated | Provenance::Fallback => ParseMode::Lenient,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppPolicy {
    pub app_id: String,
    pub clauses: Vec<PolicyClause>,
    pub provenance: Provenance,
}

impl AppPolicy {
    pub fn new(app_id: impl Into<String>, provenance: Provenance) -> Self {
        AppPolicy {
            app_id: app_id.into(),
            clauses: Vec::new(),
            provenance,
        }
    }

    pub fn permissions(&self) -> BTreeSet<Permission> {
        self.clauses.iter().map(|c| c.uses.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Unknown keys, permissions and purposes are errors.
    Strict,
    /// Unknown keys are warnings, unknown purposes fall back to the generic
    /// purpose and clauses with unknown permissions are dropped.
    Lenient,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed policy document: {0}")]
    MalformedDocument(String),
    #[error("unknown permission `{0}`")]
    UnknownPermission(String),
    #[error("unknown purpose `{0}`")]
    UnknownPurpose(String),
    #[error("clause {clause}: missing field `{field}`")]
    MissingField { clause: usize, field: &'static str },
    #[error("clause {clause}: unknown field `{field}`")]
    UnknownField { clause: usize, field: String },
    #[error("clause {clause}: {reason}")]
    InvalidPattern { clause: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    UnknownField { clause: usize, field: String },
    UnknownPurposeDefaulted { clause: usize, purpose: String },
    ClauseDropped { clause: usize, reason: String },
    FieldDefaulted { clause: usize, field: &'static str },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPolicy {
    pub policy: AppPolicy,
    pub warnings: Vec<ParseWarning>,
}

/// Parses policy documents against a catalog.
#[derive(Debug, Clone)]
pub struct PolicyParser<'c> {
    catalog: &'c Catalog,
    mode: Option<ParseMode>,
}

impl<'c> PolicyParser<'c> {
    pub fn new(catalog: &'c Catalog) -> Self {
        PolicyParser { catalog, mode: None }
    }

    /// Overrides the mode implied by the provenance.
    pub fn mode(mut self, mode: ParseMode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn parse(&self, raw: &[u8], app_id: &str, provenance: Provenance) -> Result<ParsedPolicy, ParseError> {
        let mode = self.mode.unwrap_or_else(|| provenance.default_mode());
        let text = std::str::from_utf8(raw).map_err(|e| ParseError::MalformedDocument(format!("not UTF-8: {e}")))?;
        let doc: Value = serde_json::from_str(text).map_err(|e| ParseError::MalformedDocument(e.to_string()))?;
        let objects = match doc {
            Value::Array(items) => items,
            obj @ Value::Object(_) => vec![obj],
            other => {
                return Err(ParseError::MalformedDocument(format!(
                    "expected a clause object or an array of clauses, found {}",
                    json_kind(&other)
                )))
            }
        };

        let mut warnings = Vec::new();
        let mut clauses = Vec::with_capacity(objects.len());
        for (i, item) in objects.into_iter().enumerate() {
            let Value::Object(map) = item else {
                return Err(ParseError::MalformedDocument(format!(
                    "clause {i} is {}, expected an object",
                    json_kind(&item)
                )));
            };
            if let Some(clause) = self.parse_clause(i, &map, mode, &mut warnings)? {
                clauses.push(clause);
            }
        }
        Ok(ParsedPolicy {
            policy: AppPolicy {
                app_id: app_id.to_string(),
                clauses,
                provenance,
            },
            warnings,
        })
    }

    fn parse_clause(
        &self,
        i: usize,
        map: &Map<String, Value>,
        mode: ParseMode,
        warnings: &mut Vec<ParseWarning>,
    ) -> Result<Option<PolicyClause>, ParseError> {
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                match mode {
                    ParseMode::Strict => {
                        return Err(ParseError::UnknownField {
                            clause: i,
                            field: key.clone(),
                        })
                    }
                    ParseMode::Lenient => warnings.push(ParseWarning::UnknownField {
                        clause: i,
                        field: key.clone(),
                    }),
                }
            }
        }
        let field = |name: &'static str| -> Result<Option<&str>, ParseError> {
            match map.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.as_str())),
                Some(other) => Err(ParseError::MalformedDocument(format!(
                    "clause {i}: field `{name}` must be a string, found {}",
                    json_kind(other)
                ))),
            }
        };
        let required = |name: &'static str| -> Result<&str, ParseError> {
            match field(name)? {
                Some(s) if !s.trim().is_empty() => Ok(s),
                _ => Err(ParseError::MissingField { clause: i, field: name }),
            }
        };

        let uses_raw = required(KEY_USES)?;
        let uses = match self.catalog.permission(uses_raw) {
            Ok(p) => p,
            Err(_) if mode == ParseMode::Lenient => {
                warnings.push(ParseWarning::ClauseDropped {
                    clause: i,
                    reason: format!("`{uses_raw}` is not a dangerous permission"),
                });
                return Ok(None);
            }
            Err(_) => return Err(ParseError::UnknownPermission(uses_raw.to_string())),
        };

        let purpose_raw = required(KEY_PURPOSE)?;
        let purpose = match self.catalog.normalize_purpose(purpose_raw) {
            Ok(p) => p,
            Err(CatalogError::UnknownPurpose(_)) if mode == ParseMode::Lenient => {
                warnings.push(ParseWarning::UnknownPurposeDefaulted {
                    clause: i,
                    purpose: purpose_raw.to_string(),
                });
                self.catalog.fallback_purpose()
            }
            Err(_) => return Err(ParseError::UnknownPurpose(purpose_raw.to_string())),
        };

        let mut site = |name: &'static str| -> Result<String, ParseError> {
            match (mode, field(name)?) {
                (_, Some(s)) if !s.trim().is_empty() => Ok(s.to_string()),
                (ParseMode::Lenient, _) => {
                    warnings.push(ParseWarning::FieldDefaulted { clause: i, field: name });
                    Ok("*".to_string())
                }
                (ParseMode::Strict, _) => Err(ParseError::MissingField { clause: i, field: name }),
            }
        };
        let class_raw = site(KEY_CLASS)?;
        let method_raw = site(KEY_METHOD)?;
        let class_pattern =
            ClassPattern::parse(&class_raw).map_err(|reason| ParseError::InvalidPattern { clause: i, reason })?;
        let method_pattern =
            MethodPattern::parse(&method_raw).map_err(|reason| ParseError::InvalidPattern { clause: i, reason })?;

        let for_string = match (mode, field(KEY_FOR)?) {
            (_, Some(s)) => s.to_string(),
            (ParseMode::Lenient, None) => String::new(),
            (ParseMode::Strict, None) => {
                return Err(ParseError::MissingField {
                    clause: i,
                    field: KEY_FOR,
                })
            }
        };

        Ok(Some(PolicyClause {
            uses,
            purpose,
            class_pattern,
            method_pattern,
            for_string,
        }))
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Parses with the builtin catalog in the mode implied by `provenance`.
pub fn parse_app_policy(raw: &[u8], app_id: &str, provenance: Provenance) -> Result<AppPolicy, ParseError> {
    let catalog = Catalog::builtin();
    PolicyParser::new(&catalog)
        .parse(raw, app_id, provenance)
        .map(|p| p.policy)
}

/// Canonical form: a pretty-printed array with keys in the order
/// `uses, purpose, class, method, for`.
pub fn serialize_app_policy(policy: &AppPolicy) -> Vec<u8> {
    serde_json::to_vec_pretty(&policy.clauses).expect("clauses serialize to JSON")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicatePurposeForSite {
        class: ClassPattern,
        method: MethodPattern,
        uses: Permission,
        purposes: Vec<Purpose>,
    },
    UndeclaredPermission {
        permission: Permission,
    },
    UnusedDeclaredPermission {
        permission: Permission,
    },
}

/// Checks the one-purpose-per-site rule and agreement with the declared
/// permission set.
pub fn validate_app_policy(policy: &AppPolicy, declared_permissions: &BTreeSet<Permission>) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut sites: BTreeMap<(&ClassPattern, &MethodPattern, &Permission), Vec<&Purpose>> = BTreeMap::new();
    for c in &policy.clauses {
        let purposes = sites.entry((&c.class_pattern, &c.method_pattern, &c.uses)).or_default();
        if !purposes.contains(&&c.purpose) {
            purposes.push(&c.purpose);
        }
    }
    for ((class, method, uses), purposes) in sites {
        if purposes.len() > 1 {
            out.push(Violation::DuplicatePurposeForSite {
                class: class.clone(),
                method: method.clone(),
                uses: uses.clone(),
                purposes: purposes.into_iter().cloned().collect(),
            });
        }
    }

    let used = policy.permissions();
    for p in used.difference(declared_permissions) {
        out.push(Violation::UndeclaredPermission { permission: p.clone() });
    }
    for p in declared_permissions.difference(&used) {
        out.push(Violation::UnusedDeclaredPermission { permission: p.clone() });
    }
    out
}
