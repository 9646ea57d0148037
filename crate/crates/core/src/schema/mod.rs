//! Policy data model: permissions, purposes, app policies.

mod archive;
mod catalog;
mod policy;

pub use archive::{extract_embedded_policy, ArchiveError, EMBEDDED_POLICY_ENTRY};
pub use catalog::{
    Catalog, CatalogError, Permission, PermissionInfo, Purpose, PurposeAlias, PurposeInfo, ANDROID_PERMISSION_PREFIX,
};
pub use policy::{
    is_within_package, parse_app_policy, serialize_app_policy, truncate_for_display, validate_app_policy, AppPolicy,
    ClassPattern, MethodPattern, ParseError, ParseMode, ParseWarning, ParsedPolicy, PolicyClause, PolicyParser,
    Provenance, Violation, DISPLAY_FOR_LIMIT,
};

/// Shorthand for the builtin catalog's normalization.
pub fn normalize_purpose(raw: &str) -> Result<Purpose, CatalogError> {
    Catalog::builtin().normalize_purpose(raw)
}
