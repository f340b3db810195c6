//! Metric reports and their canonical serialisations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::contact::DEFAULT_CONTACT_THRESHOLD;
use super::physical::{GroundMode, DEFAULT_FOOT_CONTACT_TOL, DEFAULT_TOLERANCE};
use crate::{Error, Result};

/// Frames per evaluation segment.
pub const DEFAULT_SEGMENT_LENGTH: usize = 100;

/// Evaluation protocol switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub segment_length: usize,
    pub tolerance_m: f64,
    pub ground_mode: GroundMode,
    pub contact_threshold: f64,
    pub foot_contact_tol_m: f64,
    pub geo_one_sided: bool,
    pub root_centered: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            segment_length: DEFAULT_SEGMENT_LENGTH,
            tolerance_m: DEFAULT_TOLERANCE,
            ground_mode: GroundMode::Plane,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            foot_contact_tol_m: DEFAULT_FOOT_CONTACT_TOL,
            geo_one_sided: false,
            root_centered: true,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length < 2 {
            return Err(Error::Schema("segment_length must be at least 2".into()));
        }
        for (name, v) in [
            ("tolerance_m", self.tolerance_m),
            ("foot_contact_tol_m", self.foot_contact_tol_m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Schema(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.contact_threshold) {
            return Err(Error::Schema("contact_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Alignment conventions recorded with every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolMeta {
    pub config: ProtocolConfig,
    pub pa_alignment: &'static str,
    pub wa_alignment: &'static str,
    pub w_alignment: &'static str,
    pub rte_alignment: &'static str,
    pub ground_source: &'static str,
    pub jitter_unit: &'static str,
}

impl ProtocolMeta {
    pub fn new(config: ProtocolConfig) -> Self {
        let mode = config.ground_mode;
        ProtocolMeta {
            config,
            pa_alignment: "per-frame similarity",
            wa_alignment: "per-segment similarity over all joints",
            w_alignment: "rigid fit on the first two frames of each segment",
            rte_alignment: "rigid over the segment root trajectory, normalised by ground-truth path length",
            ground_source: match mode {
                GroundMode::Plane => "10th percentile of ground-truth per-frame lowest vertex heights",
                GroundMode::Points => "height of the horizontally nearest valid world pointmap point",
            },
            jitter_unit: "10 m/s^3",
        }
    }
}

/// Unit suffix of a metric key.
pub fn unit_of(key: &str) -> &'static str {
    const SUFFIXES: [(&str, &str); 5] = [
        ("_mm", "mm"),
        ("_cm", "cm"),
        ("_pct", "%"),
        ("_10m_s3", "10 m/s^3"),
        ("", "ratio"),
    ];
    SUFFIXES
        .iter()
        .find(|(s, _)| key.ends_with(s))
        .map(|(_, u)| *u)
        .expect("empty suffix matches")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    /// Metric key to the reason it was not computed.
    pub skipped: BTreeMap<String, String>,
    pub units: BTreeMap<String, String>,
    pub protocol: ProtocolMeta,
    /// Free-form provenance (bundle name, frame count, person count).
    pub source: BTreeMap<String, Value>,
}

impl MetricReport {
    pub fn new(config: ProtocolConfig) -> Self {
        MetricReport {
            metrics: BTreeMap::new(),
            skipped: BTreeMap::new(),
            units: BTreeMap::new(),
            protocol: ProtocolMeta::new(config),
            source: BTreeMap::new(),
        }
    }

    /// Records a value; non-finite values are an error.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("metric `{key}` is not finite")));
        }
        self.units.insert(key.into(), unit_of(key).into());
        self.skipped.remove(key);
        self.metrics.insert(key.into(), value);
        Ok(())
    }

    pub fn skip(&mut self, key: &str, reason: impl Into<String>) {
        self.metrics.remove(key);
        self.units.insert(key.into(), unit_of(key).into());
        self.skipped.insert(key.into(), reason.into());
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(canonical_json(&serde_json::to_value(self)?))
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        let mut s = self.to_canonical_json()?;
        s.push('\n');
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    /// One row per metric: `metric,value,unit,status`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value", "unit", "status"])?;
        let keys: std::collections::BTreeSet<&String> = self.metrics.keys().chain(self.skipped.keys()).collect();
        for key in keys {
            let unit = unit_of(key);
            match (self.metrics.get(key), self.skipped.get(key)) {
                (Some(v), _) => w.write_record([key.as_str(), &format_float(*v), unit, "ok"])?,
                (None, Some(reason)) => w.write_record([key.as_str(), "", unit, &format!("skipped: {reason}")])?,
                (None, None) => unreachable!("key taken from one of the maps"),
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Nine significant digits in exponent form; negative zero prints as zero.
pub fn format_float(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.8e}")
}

/// Compact JSON with sorted object keys, integers verbatim and every other
/// number through [`format_float`].
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&value.to_string());
        }
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64 number")));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}
