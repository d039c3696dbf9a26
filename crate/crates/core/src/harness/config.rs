//! Flat-text configuration: one `section.key = value` entry per line, `#`
//! comments, no nesting. Unknown keys are an error so typos cannot silently
//! fall back to defaults.

use std::collections::BTreeMap;

use super::HarnessError;
use crate::engine::{EngineConfig, FitnessKind, GrowthMode};
use crate::space::{InputShape, OpSet};

/// Parsed key/value entries, consumed key-by-key so leftovers can be
/// reported as unknown.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take_parsed<T: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> Result<Option<T>, HarnessError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| HarnessError::BadValue {
                key: key.to_string(),
                value: v,
                reason: format!("expected {}", std::any::type_name::<T>()),
            }),
        }
    }

    /// Error unless every entry has been consumed.
    pub fn finish(self) -> Result<(), HarnessError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<String> = self.entries.into_keys().collect();
            Err(HarnessError::UnknownKeys(keys.join(", ")))
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn parse_config(text: &str) -> Result<ConfigFile, HarnessError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HarnessError::BadLine { line: i + 1, got: raw.to_string() });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(HarnessError::BadLine { line: i + 1, got: raw.to_string() });
        }
        if entries.insert(key.clone(), value).is_some() {
            return Err(HarnessError::DuplicateKey(key));
        }
    }
    Ok(ConfigFile { entries })
}

fn parse_input(value: &str) -> Result<InputShape, HarnessError> {
    let bad = |reason: &str| HarnessError::BadValue {
        key: "model.input".into(),
        value: value.into(),
        reason: reason.into(),
    };
    if let Some(dim) = value.strip_prefix("vector:") {
        return Ok(InputShape::Vector {
            dim: dim.parse().map_err(|_| bad("bad vector dimension"))?,
        });
    }
    if let Some(dims) = value.strip_prefix("image:") {
        let parts: Vec<&str> = dims.split('x').collect();
        if parts.len() != 3 {
            return Err(bad("expected image:HxWxC"));
        }
        let mut nums = [0usize; 3];
        for (slot, p) in nums.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| bad("bad image dimension"))?;
        }
        return Ok(InputShape::Image { height: nums[0], width: nums[1], channels: nums[2] });
    }
    Err(bad("expected vector:D or image:HxWxC"))
}

fn parse_fitness(value: &str) -> Result<FitnessKind, HarnessError> {
    if value == "shared" {
        return Ok(FitnessKind::SharedWeight);
    }
    if let Some(seed) = value.strip_prefix("surrogate:") {
        return Ok(FitnessKind::Surrogate {
            target_seed: seed.parse().map_err(|_| HarnessError::BadValue {
                key: "search.fitness".into(),
                value: value.into(),
                reason: "bad surrogate seed".into(),
            })?,
        });
    }
    Err(HarnessError::BadValue {
        key: "search.fitness".into(),
        value: value.into(),
        reason: "expected shared or surrogate:<seed>".into(),
    })
}

/// Build an [`EngineConfig`] from config text. Every key is optional and
/// falls back to the desk-scale default; unrecognized keys are an error.
pub fn engine_config_from_text(text: &str) -> Result<EngineConfig, HarnessError> {
    let mut f = parse_config(text)?;
    let cfg = engine_config_from(&mut f)?;
    f.finish()?;
    Ok(cfg)
}

/// Consume the engine-related keys from an already parsed file; leftover
/// keys stay for the caller (e.g. rank-study settings).
pub fn engine_config_from(f: &mut ConfigFile) -> Result<EngineConfig, HarnessError> {
    let mut cfg = EngineConfig::desk_default();
    if let Some(v) = f.take_parsed("search.total_blocks")? {
        cfg.total_blocks = v;
    }
    if let Some(v) = f.take_parsed("search.generations")? {
        cfg.generations_per_stage = v;
    }
    if let Some(v) = f.take_parsed("search.pop_size")? {
        cfg.pop_size = v;
    }
    if let Some(v) = f.take_parsed("search.warmup_epochs")? {
        cfg.warmup_epochs = v;
    }
    if let Some(v) = f.take_parsed("search.stage_epochs")? {
        cfg.stage_epochs = v;
    }
    if let Some(v) = f.take_parsed("search.samples")? {
        cfg.completion_samples = v;
    }
    if let Some(v) = f.take_parsed("search.batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = f.take_parsed::<usize>("search.eval_batches")? {
        cfg.eval_batches = Some(v);
    }
    if let Some(v) = f.take_parsed("search.lr_max")? {
        cfg.lr_max = v;
    }
    if let Some(v) = f.take_parsed("search.momentum")? {
        cfg.momentum = v;
    }
    if let Some(v) = f.take_parsed("search.weight_decay")? {
        cfg.weight_decay = v;
    }
    if let Some(v) = f.take_parsed("search.crossover_rate")? {
        cfg.variation.crossover_rate = v;
    }
    if let Some(v) = f.take_parsed("search.mutation_rate")? {
        cfg.variation.mutation_rate = v;
    }
    if let Some(v) = f.take_parsed("search.dedup_retries")? {
        cfg.variation.dedup_retries = v;
    }
    if let Some(v) = f.take_parsed("search.protection")? {
        cfg.accuracy_protection = v;
    }
    if let Some(v) = f.take_parsed("search.seed")? {
        cfg.seed = v;
    }
    if let Some(v) = f.take("search.fitness") {
        cfg.fitness = parse_fitness(&v)?;
    }
    if let Some(v) = f.take("search.growth") {
        cfg.growth = match v.as_str() {
            "staged" => GrowthMode::Staged,
            "flat" => GrowthMode::Flat,
            _ => {
                return Err(HarnessError::BadValue {
                    key: "search.growth".into(),
                    value: v,
                    reason: "expected staged or flat".into(),
                })
            }
        };
    }
    if let Some(v) = f.take("model.input") {
        cfg.input = parse_input(&v)?;
    }
    if let Some(v) = f.take_parsed("model.base_width")? {
        cfg.base_width = v;
    }
    if let Some(v) = f.take_parsed("model.classes")? {
        cfg.classes = v;
    }
    if let Some(v) = f.take("model.opset") {
        cfg.opset = OpSet::by_name(&v).map_err(|e| HarnessError::BadValue {
            key: "model.opset".into(),
            value: v,
            reason: e.to_string(),
        })?;
    }
    Ok(cfg)
}
