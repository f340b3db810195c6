//! Pipeline weights on disk, in the same manifest-plus-sidecar layout as
//! bundles. Every parameter array is stored as `f64` under its dotted name.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arrays::{ArrayData, ArrayStore, NamedArray};
use crate::nn::ParamSet;
use crate::pipeline::{PipelineConfig, PipelineWeights, WeightGroup};
use crate::{Error, Result};

pub const WEIGHTS_FORMAT: &str = "contact4d-weights";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupInfo {
    pub frozen: bool,
    pub arrays: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsMeta {
    pub config: PipelineConfig,
    pub groups: BTreeMap<String, GroupInfo>,
}

pub fn save_weights(w: &PipelineWeights, dir: &Path) -> Result<()> {
    w.validate()?;
    let mut store = ArrayStore::default();
    let mut groups = BTreeMap::new();
    for g in WeightGroup::ALL {
        let mut names = Vec::new();
        w.visit_group(g, &mut |name, a| {
            let shape = a.shape().to_vec();
            let data = a.iter().copied().collect();
            store.insert(&name, NamedArray::f64(shape, data).expect("shape matches the view"));
            names.push(name);
        });
        groups.insert(
            g.name().to_string(),
            GroupInfo {
                frozen: g.frozen(),
                arrays: names,
            },
        );
    }
    let meta = WeightsMeta {
        config: w.config.clone(),
        groups,
    };
    store.save(dir, WEIGHTS_FORMAT, serde_json::to_value(&meta)?)?;
    Ok(())
}

pub fn load_weights(dir: &Path) -> Result<PipelineWeights> {
    let (manifest, store) = ArrayStore::load(dir, WEIGHTS_FORMAT)?;
    let meta: WeightsMeta =
        serde_json::from_value(manifest.meta).map_err(|e| Error::Schema(format!("weights meta: {e}")))?;
    meta.config.validate()?;
    let mut w = PipelineWeights::init(&meta.config)?;
    let mut expected = BTreeSet::new();
    let mut failure = None;
    w.visit_mut("", &mut |name, mut a| {
        if failure.is_some() {
            return;
        }
        let Some(stored) = store.arrays.get(&name) else {
            failure = Some(Error::Integrity {
                array: name.clone(),
                reason: "parameter array is not catalogued".into(),
            });
            return;
        };
        if stored.shape != a.shape() {
            failure = Some(Error::Schema(format!(
                "parameter `{name}` has shape {:?}, the configuration needs {:?}",
                stored.shape,
                a.shape()
            )));
            return;
        }
        match &stored.data {
            ArrayData::F64(v) => a.iter_mut().zip(v).for_each(|(x, y)| *x = *y),
            other => {
                failure = Some(Error::Schema(format!("parameter `{name}` has dtype {:?}", other.dtype())));
                return;
            }
        }
        expected.insert(name);
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = store.arrays.keys().find(|k| !expected.contains(*k)) {
        return Err(Error::Schema(format!("unexpected array `{extra}` in weights")));
    }
    for g in WeightGroup::ALL {
        match meta.groups.get(g.name()) {
            Some(info) if info.frozen == g.frozen() => {}
            _ => return Err(Error::Schema(format!("group `{}` missing or mislabelled", g.name()))),
        }
    }
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig {
            width: 8,
            heads: 2,
            depth: 1,
            state_tokens: 4,
            prior_width: 5,
            vertices: 16,
            joints: 3,
            window: 3,
            patch: 4,
            seed: 9,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let w = PipelineWeights::init(&small()).unwrap();
        save_weights(&w, dir.path()).unwrap();
        let back = load_weights(dir.path()).unwrap();
        assert_eq!(back, w);
        let first = std::fs::read(dir.path().join("manifest.json")).unwrap();
        save_weights(&back, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("manifest.json")).unwrap(), first);
    }

    #[test]
    fn missing_parameter_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        save_weights(&PipelineWeights::init(&small()).unwrap(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("gate.fc1.weight.bin")).unwrap();
        match load_weights(dir.path()) {
            Err(Error::Integrity { array, .. }) => assert_eq!(array, "gate.fc1.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
