//! Service configuration: a TOML file, then `POLICY_MANAGER_*` environment
//! overrides, then command-line flags.

use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use policy_manager::engine::EngineConfig;
use policy_manager::store::StoreMode;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "POLICY_MANAGER_";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    #[default]
    Memory,
    Persistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub mode: StoreKind,
    /// Event log location in persistent mode.
    pub path: PathBuf,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            mode: StoreKind::Memory,
            path: PathBuf::from("policy-store.log"),
        }
    }
}

impl StoreConfig {
    pub fn mode(&self) -> StoreMode {
        match self.mode {
            StoreKind::Memory => StoreMode::InMemory,
            StoreKind::Persistent => StoreMode::Persistent(self.path.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub store: StoreConfig,
    pub engine: EngineConfig,
    /// Spouseware blacklist, one package name per line.
    pub blacklist: Option<PathBuf>,
    /// Secret required to remove an organizational profile.
    pub admin_token: Option<String>,
    /// Directory of pre-generated `<app_id>.policy.json` files.
    pub repository: Option<PathBuf>,
    /// Third-party library facts; the builtin set when absent.
    pub facts: Option<PathBuf>,
    /// Line-delimited JSON decision log.
    pub audit_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            store: StoreConfig::default(),
            engine: EngineConfig::default(),
            blacklist: None,
            admin_token: None,
            repository: None,
            facts: None,
            audit_log: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<ServiceConfig> {
        toml::from_str(text).context("invalid configuration")
    }

    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<ServiceConfig> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                ServiceConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ServiceConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Overrides fields from `POLICY_MANAGER_<NAME>` variables. Durations
    /// are in seconds.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        let get = |name: &str| var(&format!("{ENV_PREFIX}{name}"));
        let parse_err = |name: &str| format!("invalid {ENV_PREFIX}{name}");

        if let Some(v) = get("BIND") {
            self.bind = v.parse().with_context(|| parse_err("BIND"))?;
        }
        if let Some(v) = get("PORT") {
            self.port = v.parse().with_context(|| parse_err("PORT"))?;
        }
        if let Some(v) = get("STORE_MODE") {
            self.store.mode = match v.to_ascii_lowercase().as_str() {
                "memory" => StoreKind::Memory,
                "persistent" => StoreKind::Persistent,
                _ => anyhow::bail!("{}: expected memory or persistent", parse_err("STORE_MODE")),
            };
        }
        if let Some(v) = get("STORE_PATH") {
            self.store.path = v.into();
        }
        for (name, slot) in [
            ("PROMPT_TIMEOUT", &mut self.engine.prompt_timeout),
            ("SUPPRESSION_WINDOW", &mut self.engine.suppression_window),
            ("RECOMMENDATION_WINDOW", &mut self.engine.recommendation_window),
        ] {
            if let Some(v) = get(name) {
                let secs: f64 = v.parse().with_context(|| parse_err(name))?;
                *slot = Duration::try_from_secs_f64(secs).with_context(|| parse_err(name))?;
            }
        }
        if let Some(v) = get("OUTLIER_FACTOR") {
            self.engine.outlier_factor = v.parse().with_context(|| parse_err("OUTLIER_FACTOR"))?;
        }
        if let Some(v) = get("BLACKLIST") {
            self.blacklist = Some(v.into());
        }
        if let Some(v) = get("ADMIN_TOKEN") {
            self.admin_token = Some(v);
        }
        if let Some(v) = get("REPOSITORY") {
            self.repository = Some(v.into());
        }
        if let Some(v) = get("FACTS") {
            self.facts = Some(v.into());
        }
        if let Some(v) = get("AUDIT_LOG") {
            self.audit_log = Some(v.into());
        }
        Ok(())
    }
}
