//! Run configuration: protocol, loss, pipeline and synthesis settings in
//! one JSON document with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::losses::LossConfig;
use crate::metrics::ProtocolConfig;
use crate::pipeline::PipelineConfig;
use crate::synth::SynthConfig;
use crate::{Error, Result};

/// Environment variable overriding every seed in a configuration.
pub const SEED_ENV: &str = "CONTACT4D_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub loss: LossConfig,
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
    /// When set, replaces the pipeline and synthesis seeds.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let seed = cfg.seed;
        let cfg = cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        self.loss.validate()?;
        self.pipeline.validate()?;
        self.synth.validate()
    }

    fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = Some(s);
            self.pipeline.seed = s;
            self.synth.seed = s;
        }
        self
    }

    /// Applies a seed given as the text of the override variable.
    pub fn with_seed_text(self, text: Option<&str>) -> Result<Self> {
        match text {
            None => Ok(self),
            Some(t) => {
                let s: u64 = t
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("{SEED_ENV}=`{t}` is not an unsigned integer")))?;
                Ok(self.with_seed(Some(s)))
            }
        }
    }

    /// Applies the seed from the environment, if set.
    pub fn with_env_seed(self) -> Result<Self> {
        let var = std::env::var(SEED_ENV).ok();
        self.with_seed_text(var.as_deref())
    }

    /// JSON schema of the document, derived from the defaults.
    pub fn schema() -> Value {
        let mut s = schema_of(&serde_json::to_value(RunConfig::default()).expect("serialisable"));
        s["$schema"] = json!("https://json-schema.org/draft/2020-12/schema");
        s["title"] = json!("contact4d run configuration");
        s["properties"]["seed"] = json!({"type": ["integer", "null"], "minimum": 0, "default": null});
        s
    }
}

fn schema_of(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let props: Map<String, Value> = map.iter().map(|(k, x)| (k.clone(), schema_of(x))).collect();
            json!({"type": "object", "additionalProperties": false, "properties": props})
        }
        Value::Bool(_) => json!({"type": "boolean", "default": v}),
        Value::Number(n) if n.is_f64() => json!({"type": "number", "default": v}),
        Value::Number(_) => json!({"type": "integer", "minimum": 0, "default": v}),
        Value::String(_) => json!({"type": "string", "default": v}),
        Value::Array(_) => json!({"type": "array", "default": v}),
        Value::Null => json!({"default": null}),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(matches!(RunConfig::from_json(r#"{"protocol": {"tolerance": 1}}"#), Err(Error::Schema(_))));
        assert!(matches!(RunConfig::from_json(r#"{"extra": 1}"#), Err(Error::Schema(_))));
        assert!(RunConfig::from_json(r#"{"protocol": {"segment_length": 1}}"#).is_err());
    }

    #[test]
    fn seed_overrides() {
        let cfg = RunConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!((cfg.pipeline.seed, cfg.synth.seed), (7, 7));
        let cfg = cfg.with_seed_text(Some("11")).unwrap();
        assert_eq!((cfg.seed, cfg.pipeline.seed, cfg.synth.seed), (Some(11), 11, 11));
        assert!(RunConfig::default().with_seed_text(Some("-3")).is_err());
        assert_eq!(RunConfig::default().with_seed_text(None).unwrap(), RunConfig::default());
    }

    #[test]
    fn published_schema_is_current() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/run_config.schema.json");
        let text = serde_json::to_string_pretty(&RunConfig::schema()).unwrap() + "\n";
        if std::env::var_os("CONTACT4D_WRITE_SCHEMA").is_some() {
            std::fs::write(&path, &text).unwrap();
        }
        let published = std::fs::read_to_string(&path).expect("docs/run_config.schema.json exists");
        assert_eq!(published, text, "regenerate with CONTACT4D_WRITE_SCHEMA=1 cargo test");
    }
}
