//! Harness configuration: a versioned TOML document resolved from an
//! explicit path, the `PARALBENCH_CONFIG` environment variable, or built-in
//! defaults — in that order. The effective configuration is content-hashed
//! so result records can pin the configuration they ran under.

use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;
/// Fallback configuration path when no `--config` flag is given.
pub const CONFIG_ENV_VAR: &str = "PARALBENCH_CONFIG";

/// Everything the command-line surface needs to locate state and data.
/// Field defaults keep a minimal file minimal: only `version` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub version: u32,
    /// Extracted-feature cache directory.
    #[serde(default = "default_cache_root")]
    pub cache_root: PathBuf,
    /// Append-only run-artifact directory.
    #[serde(default = "default_results_root")]
    pub results_root: PathBuf,
    /// Trained-probe checkpoint directory.
    #[serde(default = "default_checkpoints_root")]
    pub checkpoints_root: PathBuf,
    /// Extra task/dataset catalog merged over the built-in registry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_catalog: Option<PathBuf>,
    /// Raw corpus locations by dataset id, for loader-backed datasets.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw_roots: BTreeMap<String, PathBuf>,
    /// Seed used when a command does not pass `--seed`.
    #[serde(default = "default_seed")]
    pub default_seed: u64,
}

fn default_cache_root() -> PathBuf {
    PathBuf::from(".paralbench/cache")
}

fn default_results_root() -> PathBuf {
    PathBuf::from(".paralbench/results")
}

fn default_checkpoints_root() -> PathBuf {
    PathBuf::from(".paralbench/checkpoints")
}

fn default_seed() -> u64 {
    42
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            version: CONFIG_VERSION,
            cache_root: default_cache_root(),
            results_root: default_results_root(),
            checkpoints_root: default_checkpoints_root(),
            task_catalog: None,
            raw_roots: BTreeMap::new(),
            default_seed: default_seed(),
        }
    }
}

/// Parse and version-check a configuration document.
pub fn parse_config(text: &str) -> Result<HarnessConfig> {
    let config: HarnessConfig = toml::from_str(text)?;
    if config.version != CONFIG_VERSION {
        return Err(HarnessError::Config(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            config.version
        )));
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<HarnessConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        HarnessError::Config(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    parse_config(&text)
}

/// The effective configuration and where it came from (`None` = defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: HarnessConfig,
    pub path: Option<PathBuf>,
}

/// Resolve with the documented precedence: explicit path, then the
/// `PARALBENCH_CONFIG` environment variable, then defaults.
pub fn resolve_config(explicit: Option<&Path>) -> Result<ResolvedConfig> {
    let env = std::env::var_os(CONFIG_ENV_VAR);
    resolve_config_from(explicit, env.as_deref())
}

fn resolve_config_from(explicit: Option<&Path>, env: Option<&OsStr>) -> Result<ResolvedConfig> {
    let path = match (explicit, env) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(e)) if !e.is_empty() => Some(PathBuf::from(e)),
        _ => None,
    };
    let config = match &path {
        Some(p) => load_config(p)?,
        None => HarnessConfig::default(),
    };
    Ok(ResolvedConfig { config, path })
}

/// Content hash of the effective configuration (canonical JSON, SHA-256).
pub fn config_hash(config: &HarnessConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn minimal_file_gets_defaults() {
        let config = parse_config("version = 1\n").unwrap();
        assert_eq!(config, HarnessConfig::default());
        assert_eq!(config.cache_root, PathBuf::from(".paralbench/cache"));
        assert_eq!(config.default_seed, 42);
    }

    #[test]
    fn full_file_round_trips() {
        let text = r#"
version = 1
cache_root = "/var/cache/plb"
results_root = "/var/results"
checkpoints_root = "/var/ckpt"
task_catalog = "tasks.toml"
default_seed = 7

[raw_roots]
timit = "/data/timit"
meld = "/data/meld"
"#;
        let config = parse_config(text).unwrap();
        assert_eq!(config.raw_roots["timit"], PathBuf::from("/data/timit"));
        assert_eq!(config.default_seed, 7);
        let rendered = toml::to_string(&config).unwrap();
        assert_eq!(parse_config(&rendered).unwrap(), config);
    }

    #[test]
    fn version_and_unknown_keys_are_rejected() {
        assert!(parse_config("version = 2\n").is_err());
        assert!(parse_config("").is_err(), "version is required");
        assert!(
            parse_config("version = 1\ncache_dir = \"x\"\n").is_err(),
            "typos must not be silently ignored"
        );
    }

    #[test]
    fn resolution_precedence_is_explicit_then_env_then_default() {
        let dir = tempfile::tempdir().unwrap();
        let explicit_path = dir.path().join("explicit.toml");
        let env_path = dir.path().join("env.toml");
        std::fs::File::create(&explicit_path)
            .unwrap()
            .write_all(b"version = 1\ndefault_seed = 1\n")
            .unwrap();
        std::fs::File::create(&env_path)
            .unwrap()
            .write_all(b"version = 1\ndefault_seed = 2\n")
            .unwrap();

        let r = resolve_config_from(Some(&explicit_path), Some(env_path.as_os_str())).unwrap();
        assert_eq!(r.config.default_seed, 1);
        assert_eq!(r.path.as_deref(), Some(explicit_path.as_path()));

        let r = resolve_config_from(None, Some(env_path.as_os_str())).unwrap();
        assert_eq!(r.config.default_seed, 2);

        let r = resolve_config_from(None, None).unwrap();
        assert_eq!(r.config, HarnessConfig::default());
        assert_eq!(r.path, None);

        let r = resolve_config_from(None, Some(OsStr::new(""))).unwrap();
        assert_eq!(r.config, HarnessConfig::default(), "empty variable = unset");
    }

    #[test]
    fn missing_explicit_file_is_an_error() {
        let err = resolve_config_from(Some(Path::new("/no/such/config.toml")), None).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = HarnessConfig::default();
        let b = HarnessConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = a.clone();
        c.default_seed = 43;
        assert_ne!(config_hash(&a), config_hash(&c));
        let mut d = a.clone();
        d.raw_roots.insert("timit".into(), "/data".into());
        assert_ne!(config_hash(&a), config_hash(&d));
    }
}
