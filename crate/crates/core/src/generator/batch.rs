use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::facts::{AppDescriptor, FactsError, KeywordRules, LibraryFacts};
use super::generate_policy;
use crate::schema::{serialize_app_policy, AppPolicy, Catalog, PolicyParser, Provenance};

const POLICY_SUFFIX: &str = ".policy.json";

/// Source of pre-generated policies consulted at install time.
pub trait PolicyRepository: Send + Sync {
    fn lookup(&self, app_id: &str) -> Option<AppPolicy>;
}

impl PolicyRepository for HashMap<String, AppPolicy> {
    fn lookup(&self, app_id: &str) -> Option<AppPolicy> {
        self.get(app_id).cloned()
    }
}

/// A directory holding one `<app_id>.policy.json` per app.
#[derive(Clone)]
pub struct DirectoryRepository {
    root: PathBuf,
    catalog: std::sync::Arc<Catalog>,
}

impl fmt::Debug for DirectoryRepository {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirectoryRepository").field("root", &self.root).finish()
    }
}

impl DirectoryRepository {
    pub fn new(root: impl Into<PathBuf>, catalog: std::sync::Arc<Catalog>) -> Self {
        DirectoryRepository {
            root: root.into(),
            catalog,
        }
    }

    pub fn path_for(&self, app_id: &str) -> Option<PathBuf> {
        policy_file_name(app_id).map(|n| self.root.join(n))
    }
}

impl PolicyRepository for DirectoryRepository {
    fn lookup(&self, app_id: &str) -> Option<AppPolicy> {
        let raw = std::fs::read(self.path_for(app_id)?).ok()?;
        match PolicyParser::new(&self.catalog).parse(&raw, app_id, Provenance::PreGenerated) {
            Ok(p) => Some(p.policy),
            Err(e) => {
                tracing::warn!(app_id, error = %e, "unreadable pre-generated policy");
                None
            }
        }
    }
}

fn policy_file_name(app_id: &str) -> Option<String> {
    let ok = !app_id.is_empty()
        && !app_id.starts_with('.')
        && app_id
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '.' | '_' | '-'));
    ok.then(|| format!("{app_id}{POLICY_SUFFIX}"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BatchError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BatchReport {
    pub written: Vec<PathBuf>,
    pub errors: Vec<BatchError>,
}

/// Generates a policy for every `*.json` descriptor in `descriptor_dir` and
/// writes them to `out_dir`. Per-file failures are collected; only an
/// unreadable facts file or directory aborts the batch.
pub fn batch_generate(
    descriptor_dir: &Path,
    facts_file: &Path,
    out_dir: &Path,
    rules: &KeywordRules,
    catalog: &Catalog,
) -> Result<BatchReport, FactsError> {
    let facts = LibraryFacts::from_file(facts_file, catalog)?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| FactsError::Io { path, source }
    };
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(descriptor_dir)
        .map_err(io_err(descriptor_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    inputs.sort();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let results: Vec<Result<PathBuf, BatchError>> = inputs
        .par_iter()
        .map(|path| {
            let fail = |message: String| BatchError {
                path: path.clone(),
                message,
            };
            let raw = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
            let descriptor = AppDescriptor::from_json(&raw).map_err(|e| fail(e.to_string()))?;
            let name = policy_file_name(&descriptor.app_id)
                .ok_or_else(|| fail(format!("unusable app id `{}`", descriptor.app_id)))?;
            let generated = generate_policy(&descriptor, &facts, rules, catalog);
            let target = out_dir.join(name);
            std::fs::write(&target, serialize_app_policy(&generated.policy)).map_err(|e| fail(e.to_string()))?;
            Ok(target)
        })
        .collect();

    let mut report = BatchReport::default();
    for r in results {
        match r {
            Ok(p) => report.written.push(p),
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}
