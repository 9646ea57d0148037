use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use policy_manager::generator::{
    audit_policy, batch_generate, AppDescriptor, DirectoryRepository, KeywordRules, LibraryFacts, PolicyRepository,
};
use policy_manager::schema::{validate_app_policy, ParseMode, PolicyParser};
use policy_manager::sim::{run_scenario, Scenario};
use policy_manager::{Catalog, Provenance};
use policy_manager_service::{build_state, router, spawn_prompt_reaper, ServiceConfig};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "policy-manager", version, about = "Purpose-aware privacy policy manager")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "POLICY_MANAGER_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Run a scenario in batch mode and print the report.
    Run { scenario: PathBuf },
    /// Generate policies for a directory of app descriptors.
    Generate {
        descriptors: PathBuf,
        facts: PathBuf,
        /// Output repository directory.
        #[arg(long, short, default_value = "policy-repo")]
        out: PathBuf,
        /// Extra keyword rules, appended to the builtin ones.
        #[arg(long)]
        keywords: Option<PathBuf>,
    },
    /// Audit a policy against the app it describes.
    Audit { policy: PathBuf, descriptor: PathBuf },
    /// Parse and validate a policy file.
    Validate {
        policy: PathBuf,
        /// Check declared permissions against this descriptor.
        #[arg(long)]
        descriptor: Option<PathBuf>,
        /// Accept what an installer would accept for generated policies.
        #[arg(long)]
        lenient: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when the command ran but found problems.
fn run(cli: Cli) -> Result<bool> {
    let mut config = ServiceConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { port } => {
            if let Some(p) = port {
                config.port = p;
            }
            serve(config)?;
            Ok(true)
        }
        Command::Run { scenario } => {
            let scenario = Scenario::from_file(&scenario)?;
            let catalog = Catalog::builtin();
            let facts = load_facts(config.facts.as_deref(), &catalog)?;
            let repository = config
                .repository
                .as_ref()
                .map(|d| Arc::new(DirectoryRepository::new(d, catalog.clone())) as Arc<dyn PolicyRepository>);
            let report = run_scenario(&scenario, catalog, Arc::new(facts), config.engine.clone(), repository)?;
            print_json(&report)?;
            for f in &report.expectation_failures {
                eprintln!("expectation failed: {f}");
            }
            Ok(report.passed())
        }
        Command::Generate {
            descriptors,
            facts,
            out,
            keywords,
        } => {
            let catalog = Catalog::builtin();
            let mut rules = KeywordRules::builtin();
            if let Some(k) = keywords {
                rules.extend_from_file(&k, &catalog)?;
            }
            let report = batch_generate(&descriptors, &facts, &out, &rules, &catalog)?;
            print_json(&report)?;
            Ok(report.errors.is_empty())
        }
        Command::Audit { policy, descriptor } => {
            let catalog = Catalog::builtin();
            let descriptor = read_descriptor(&descriptor)?;
            let raw = read(&policy)?;
            let parsed = PolicyParser::new(&catalog).mode(ParseMode::Lenient).parse(
                &raw,
                &descriptor.app_id,
                Provenance::PreGenerated,
            )?;
            let facts = load_facts(config.facts.as_deref(), &catalog)?;
            let report = audit_policy(&parsed.policy, &descriptor, &facts, &catalog);
            print_json(&report)?;
            Ok(report.is_clean())
        }
        Command::Validate {
            policy,
            descriptor,
            lenient,
        } => {
            let catalog = Catalog::builtin();
            let descriptor = descriptor.as_deref().map(read_descriptor).transpose()?;
            let app_id = descriptor.as_ref().map_or("app", |d| d.app_id.as_str());
            let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
            let raw = read(&policy)?;
            let parsed = match PolicyParser::new(&catalog)
                .mode(mode)
                .parse(&raw, app_id, Provenance::DeveloperEmbedded)
            {
                Ok(p) => p,
                Err(e) => {
                    print_json(&json!({ "valid": false, "error": e.to_string() }))?;
                    return Ok(false);
                }
            };
            let declared = match &descriptor {
                Some(d) => d.declared_permissions.clone(),
                None => parsed.policy.permissions(),
            };
            let violations = validate_app_policy(&parsed.policy, &declared);
            print_json(&json!({
                "valid": violations.is_empty(),
                "clauses": parsed.policy.clauses.len(),
                "warnings": parsed.warnings,
                "violations": violations,
            }))?;
            Ok(violations.is_empty())
        }
    }
}

fn serve(config: ServiceConfig) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let state = build_state(&config)?;
        spawn_prompt_reaper(state.device.engine().clone(), Duration::from_secs(1));
        let addr = std::net::SocketAddr::new(config.bind, config.port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        tracing::info!(%addr, "serving");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_descriptor(path: &Path) -> Result<AppDescriptor> {
    AppDescriptor::from_json(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_facts(path: Option<&Path>, catalog: &Catalog) -> Result<LibraryFacts> {
    Ok(match path {
        Some(p) => LibraryFacts::from_file(p, catalog)?,
        None => LibraryFacts::builtin(),
    })
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
