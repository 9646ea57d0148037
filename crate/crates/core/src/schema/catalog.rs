//! The dangerous-permission set and the purpose taxonomy.
//!
//! Both tables are versioned JSON data files. The builtin copies are compiled
//! in, and [`Catalog::from_json`] loads replacements without a rebuild.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

const BUILTIN_PERMISSIONS: &str = include_str!("../../data/permissions.json");
const BUILTIN_PURPOSES: &str = include_str!("../../data/purposes.json");

/// Namespace of the platform permissions in the builtin table.
pub const ANDROID_PERMISSION_PREFIX: &str = "android.permission.";

/// A permission identifier in its fully qualified form,
/// e.g. `android.permission.ACCESS_FINE_LOCATION`.
///
/// Values are only validated against a [`Catalog`]; deserialization expands the
/// short form (`CAMERA`) but does not check membership.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Permission(String);

impl Permission {
    /// Expands a short name into the platform namespace. Names containing a
    /// dot are taken as already qualified.
    pub fn qualified(raw: &str) -> Permission {
        let raw = raw.trim();
        if raw.contains('.') {
            Permission(raw.to_string())
        } else {
            Permission(format!("{ANDROID_PERMISSION_PREFIX}{raw}"))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The last dotted segment, e.g. `CAMERA`.
    pub fn short_name(&self) -> &str {
        self.0.rsplit('.').next().unwrap_or(&self.0)
    }
}

impl fmt::Debug for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permission({})", self.short_name())
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Permission {
    type Err = CatalogError;

    /// Parses against the builtin catalog.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Catalog::builtin().permission(s)
    }
}

impl<'de> Deserialize<'de> for Permission {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(Permission::qualified(&raw))
    }
}

/// A canonical purpose from the taxonomy, identified by its canonical name
/// (without the "For " display prefix).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Purpose(String);

impl Purpose {
    pub fn canonical_name(&self) -> &str {
        &self.0
    }

    pub fn display_name(&self) -> String {
        format!("For {}", self.0)
    }
}

impl fmt::Debug for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Purpose({})", self.0)
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Purpose {
    type Err = CatalogError;

    /// Normalizes against the builtin catalog.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Catalog::builtin().normalize_purpose(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermissionInfo {
    pub permission: Permission,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PurposeInfo {
    pub purpose: Purpose,
    pub description: String,
    pub likely_permissions: BTreeSet<Permission>,
}

impl PurposeInfo {
    pub fn display_name(&self) -> String {
        self.purpose.display_name()
    }

    /// The first sentence of the description, used as the default purpose
    /// string of generated clauses.
    pub fn summary(&self) -> String {
        let first = match self.description.find(". ") {
            Some(i) => &self.description[..i],
            None => self.description.trim_end_matches('.'),
        };
        format!("{first}.")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurposeAlias {
    pub alias: String,
    pub target: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("unknown permission `{0}`")]
    UnknownPermission(String),
    #[error("unknown purpose `{0}`")]
    UnknownPurpose(String),
    #[error("invalid catalog data: {0}")]
    InvalidData(String),
}

#[derive(Deserialize)]
struct PermissionFile {
    version: String,
    prefix: String,
    groups: Vec<PermissionGroupEntry>,
}

#[derive(Deserialize)]
struct PermissionGroupEntry {
    group: String,
    permissions: Vec<String>,
}

#[derive(Deserialize)]
struct PurposeFile {
    version: String,
    fallback: String,
    purposes: Vec<PurposeEntry>,
    #[serde(default)]
    aliases: Vec<PurposeAlias>,
}

#[derive(Deserialize)]
struct PurposeEntry {
    name: String,
    description: String,
    likely_permissions: LikelyPermissions,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LikelyPermissions {
    Listed(Vec<String>),
    Keyword(String),
}

/// The dangerous-permission set plus the purpose taxonomy and its aliases.
#[derive(Debug, Clone)]
pub struct Catalog {
    permission_version: String,
    purpose_version: String,
    permissions: Vec<PermissionInfo>,
    permission_index: HashMap<String, usize>,
    purposes: Vec<PurposeInfo>,
    aliases: Vec<PurposeAlias>,
    // lowercased canonical names and aliases -> index into `purposes`
    purpose_index: HashMap<String, usize>,
    fallback: usize,
}

impl Catalog {
    pub fn builtin() -> Arc<Catalog> {
        static BUILTIN: OnceLock<Arc<Catalog>> = OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                Arc::new(
                    Catalog::from_json(BUILTIN_PERMISSIONS, BUILTIN_PURPOSES).expect("builtin catalog data is valid"),
                )
            })
            .clone()
    }

    pub fn from_files(permissions: &Path, purposes: &Path) -> Result<Catalog, CatalogError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| CatalogError::InvalidData(format!("{}: {e}", p.display())))
        };
        Catalog::from_json(&read(permissions)?, &read(purposes)?)
    }

    pub fn from_json(permissions_json: &str, purposes_json: &str) -> Result<Catalog, CatalogError> {
        let pf: PermissionFile = serde_json::from_str(permissions_json)
            .map_err(|e| CatalogError::InvalidData(format!("permissions: {e}")))?;
        let mut permissions = Vec::new();
        let mut permission_index = HashMap::new();
        for g in &pf.groups {
            for name in &g.permissions {
                let permission = Permission(format!("{}{}", pf.prefix, name));
                if permission_index
                    .insert(permission.as_str().to_string(), permissions.len())
                    .is_some()
                {
                    return Err(CatalogError::InvalidData(format!("permission {name} listed twice")));
                }
                permissions.push(PermissionInfo {
                    permission,
                    group: g.group.clone(),
                });
            }
        }

        let uf: PurposeFile =
            serde_json::from_str(purposes_json).map_err(|e| CatalogError::InvalidData(format!("purposes: {e}")))?;
        let mut purposes = Vec::new();
        let mut purpose_index = HashMap::new();
        for entry in uf.purposes {
            let likely_permissions = match entry.likely_permissions {
                LikelyPermissions::Keyword(k) if k.eq_ignore_ascii_case("any") => {
                    permissions.iter().map(|p| p.permission.clone()).collect()
                }
                LikelyPermissions::Keyword(k) => {
                    return Err(CatalogError::InvalidData(format!(
                        "purpose {}: unrecognized permission keyword `{k}`",
                        entry.name
                    )))
                }
                LikelyPermissions::Listed(names) => names
                    .iter()
                    .map(|n| {
                        let p = Permission(format!("{}{}", pf.prefix, n));
                        if permission_index.contains_key(p.as_str()) {
                            Ok(p)
                        } else {
                            Err(CatalogError::UnknownPermission(n.clone()))
                        }
                    })
                    .collect::<Result<_, _>>()?,
            };
            if purpose_index
                .insert(entry.name.to_lowercase(), purposes.len())
                .is_some()
            {
                return Err(CatalogError::InvalidData(format!(
                    "purpose {} listed twice",
                    entry.name
                )));
            }
            purposes.push(PurposeInfo {
                purpose: Purpose(entry.name),
                description: entry.description,
                likely_permissions,
            });
        }
        for alias in &uf.aliases {
            let target = *purpose_index
                .get(&alias.target.to_lowercase())
                .ok_or_else(|| CatalogError::UnknownPurpose(alias.target.clone()))?;
            let key = alias.alias.to_lowercase();
            match purpose_index.get(&key) {
                Some(&existing) if existing != target => {
                    return Err(CatalogError::InvalidData(format!(
                        "alias `{}` conflicts with an existing name",
                        alias.alias
                    )))
                }
                _ => {
                    purpose_index.insert(key, target);
                }
            }
        }
        let fallback = *purpose_index
            .get(&uf.fallback.to_lowercase())
            .ok_or_else(|| CatalogError::UnknownPurpose(uf.fallback.clone()))?;

        Ok(Catalog {
            permission_version: pf.version,
            purpose_version: uf.version,
            permissions,
            permission_index,
            purposes,
            aliases: uf.aliases,
            purpose_index,
            fallback,
        })
    }

    pub fn permission_version(&self) -> &str {
        &self.permission_version
    }

    pub fn purpose_version(&self) -> &str {
        &self.purpose_version
    }

    pub fn permissions(&self) -> &[PermissionInfo] {
        &self.permissions
    }

    pub fn purposes(&self) -> &[PurposeInfo] {
        &self.purposes
    }

    pub fn aliases(&self) -> &[PurposeAlias] {
        &self.aliases
    }

    /// Distinct permission groups in table order.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.permissions {
            if !out.contains(&p.group.as_str()) {
                out.push(&p.group);
            }
        }
        out
    }

    /// Resolves a full or short permission name.
    pub fn permission(&self, raw: &str) -> Result<Permission, CatalogError> {
        let q = Permission::qualified(raw);
        self.permission_index
            .get(q.as_str())
            .map(|&i| self.permissions[i].permission.clone())
            .ok_or_else(|| CatalogError::UnknownPermission(raw.to_string()))
    }

    pub fn is_dangerous(&self, p: &Permission) -> bool {
        self.permission_index.contains_key(p.as_str())
    }

    pub fn permission_info(&self, p: &Permission) -> Option<&PermissionInfo> {
        self.permission_index.get(p.as_str()).map(|&i| &self.permissions[i])
    }

    pub fn purpose_info(&self, p: &Purpose) -> Option<&PurposeInfo> {
        self.purpose_index
            .get(&p.0.to_lowercase())
            .map(|&i| &self.purposes[i])
            .filter(|info| info.purpose == *p)
    }

    pub fn is_canonical(&self, p: &Purpose) -> bool {
        self.purpose_info(p).is_some()
    }

    /// The generic purpose used when nothing better is known.
    pub fn fallback_purpose(&self) -> Purpose {
        self.purposes[self.fallback].purpose.clone()
    }

    /// Case-insensitive lookup over canonical names, display names
    /// ("For ...") and the alias table.
    pub fn normalize_purpose(&self, raw: &str) -> Result<Purpose, CatalogError> {
        let key = raw.trim().to_lowercase();
        let stripped = key.strip_prefix("for ").map(str::trim_start);
        std::iter::once(key.as_str())
            .chain(stripped)
            .find_map(|k| self.purpose_index.get(k))
            .map(|&i| self.purposes[i].purpose.clone())
            .ok_or_else(|| CatalogError::UnknownPurpose(raw.to_string()))
    }
}
