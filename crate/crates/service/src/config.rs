use std::net::SocketAddr;
use std::path::PathBuf;

use crate::error::ServiceError;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Runtime settings, normally read from `LUS_*` environment variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    /// Directory holding one `fold<k>/` bundle per ensemble member.
    pub model_dir: PathBuf,
    /// Contribution records and media live here.
    pub storage_root: PathBuf,
    pub max_upload_bytes: usize,
    /// Bearer token for the review endpoint; review is disabled when unset.
    pub admin_token: Option<String>,
    /// Dataset manifest whose counts seed `/api/stats`.
    pub manifest: Option<PathBuf>,
    pub bind: SocketAddr,
}

impl ServiceConfig {
    pub fn new(model_dir: impl Into<PathBuf>, storage_root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            model_dir: model_dir.into(),
            storage_root: storage_root.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            admin_token: None,
            manifest: None,
            bind: DEFAULT_BIND.parse().expect("valid default address"),
        }
    }

    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// `LUS_MODEL_DIR` and `LUS_STORAGE_ROOT` are required; `LUS_MAX_UPLOAD_BYTES`,
    /// `LUS_ADMIN_TOKEN`, `LUS_MANIFEST` and `LUS_BIND` are optional.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let required = |k: &str| get(k).filter(|v| !v.is_empty()).ok_or_else(|| ServiceError::Config(format!("{k} is not set")));
        let mut cfg = ServiceConfig::new(required("LUS_MODEL_DIR")?, required("LUS_STORAGE_ROOT")?);
        if let Some(v) = get("LUS_MAX_UPLOAD_BYTES") {
            cfg.max_upload_bytes = v
                .parse()
                .ok()
                .filter(|&n: &usize| n > 0)
                .ok_or_else(|| ServiceError::Config(format!("LUS_MAX_UPLOAD_BYTES: not a positive integer: {v:?}")))?;
        }
        cfg.admin_token = get("LUS_ADMIN_TOKEN").filter(|t| !t.is_empty());
        cfg.manifest = get("LUS_MANIFEST").filter(|p| !p.is_empty()).map(PathBuf::from);
        if let Some(v) = get("LUS_BIND") {
            cfg.bind = v.parse().map_err(|e| ServiceError::Config(format!("LUS_BIND {v:?}: {e}")))?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn lookup(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn required_and_optional_keys() {
        let cfg = ServiceConfig::from_lookup(lookup(&[
            ("LUS_MODEL_DIR", "/m"),
            ("LUS_STORAGE_ROOT", "/s"),
            ("LUS_MAX_UPLOAD_BYTES", "1024"),
            ("LUS_ADMIN_TOKEN", "secret"),
        ]))
        .unwrap();
        assert_eq!(cfg.max_upload_bytes, 1024);
        assert_eq!(cfg.admin_token.as_deref(), Some("secret"));
        assert!(ServiceConfig::from_lookup(lookup(&[("LUS_MODEL_DIR", "/m")])).is_err());
        assert!(ServiceConfig::from_lookup(lookup(&[
            ("LUS_MODEL_DIR", "/m"),
            ("LUS_STORAGE_ROOT", "/s"),
            ("LUS_MAX_UPLOAD_BYTES", "0"),
        ]))
        .is_err());
    }
}
