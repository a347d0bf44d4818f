use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use zoomseg_core::backend::{Backend, ModelConfig, OracleBackend, TinyVit, ORACLE_TAU};
use zoomseg_core::pipeline::EngineConfig;
use zoomseg_core::{Error, Result};

/// Environment variable holding the host address to bind.
pub const BIND_ENV: &str = "ZOOMSEG_BIND";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    Tinyvit,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "oracle" => Ok(BackendKind::Oracle),
            "tinyvit" => Ok(BackendKind::Tinyvit),
            other => Err(format!(
                "unknown backend {other:?} (expected oracle or tinyvit)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Oracle foreground threshold on normalized intensity.
    pub oracle_threshold: f32,
    pub model: ModelConfig,
    /// Tensor manifest directory; random seeded weights when absent.
    pub weights: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Oracle,
            oracle_threshold: ORACLE_TAU,
            model: ModelConfig::default(),
            weights: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub backend: BackendConfig,
    pub max_volumes: usize,
    pub max_sessions: usize,
    pub body_limit_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            engine: EngineConfig::default(),
            backend: BackendConfig::default(),
            max_volumes: 8,
            max_sessions: 64,
            body_limit_bytes: 1 << 30,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.max_volumes == 0 || self.max_sessions == 0 {
            return Err(Error::InvalidConfig(
                "store capacities must be positive".into(),
            ));
        }
        if self.backend.kind == BackendKind::Tinyvit
            && self.backend.model.input_shape != self.engine.model_shape
        {
            return Err(Error::InvalidConfig(format!(
                "tinyvit input shape {:?} differs from engine model shape {:?}",
                self.backend.model.input_shape, self.engine.model_shape
            )));
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>> {
        self.validate()?;
        Ok(match self.backend.kind {
            BackendKind::Oracle => {
                Arc::new(OracleBackend::with_threshold(self.backend.oracle_threshold))
            }
            BackendKind::Tinyvit => match &self.backend.weights {
                Some(dir) => Arc::new(TinyVit::load_manifest(&self.backend.model, dir)?),
                None => Arc::new(TinyVit::new(&self.backend.model)?),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c: ServiceConfig =
            serde_json::from_str(r#"{"max_volumes": 2, "backend": {"kind": "tinyvit"}}"#).unwrap();
        assert_eq!(c.max_volumes, 2);
        assert_eq!(c.backend.kind, BackendKind::Tinyvit);
        assert_eq!(c.engine, EngineConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn mismatched_model_shape_rejected() {
        let mut c = ServiceConfig::default();
        c.backend.kind = BackendKind::Tinyvit;
        c.engine.model_shape = [64, 64, 16];
        assert!(c.validate().is_err());
        c.backend.kind = BackendKind::Oracle;
        assert_eq!(c.build_backend().unwrap().name(), "oracle");
    }
}
