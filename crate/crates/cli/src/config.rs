//! Run-config archival: every command serializes its resolved settings
//! as TOML next to its outputs, so a run is reproducible from the
//! archive plus the seed.

use std::path::Path;

use serde::Serialize;

use mwae_core::{Error, Result};

pub fn archive_config<T: Serialize>(config: &T, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(config)
        .map_err(|e| Error::data(format!("cannot serialize config: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_config_file(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::data(format!("invalid TOML in {}: {e}", path.display())))
}

/// Pull an optional numeric/bool field out of a TOML table.
pub fn field<T: TomlField>(table: &toml::Table, key: &str) -> Result<Option<T>> {
    match table.get(key) {
        None => Ok(None),
        Some(value) => T::from_value(value)
            .map(Some)
            .ok_or_else(|| Error::data(format!("config field '{key}' has the wrong type"))),
    }
}

pub trait TomlField: Sized {
    fn from_value(v: &toml::Value) -> Option<Self>;
}

impl TomlField for f64 {
    fn from_value(v: &toml::Value) -> Option<Self> {
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
    }
}

impl TomlField for usize {
    fn from_value(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| usize::try_from(i).ok())
    }
}

impl TomlField for u64 {
    fn from_value(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| u64::try_from(i).ok())
    }
}

impl TomlField for bool {
    fn from_value(v: &toml::Value) -> Option<Self> {
        v.as_bool()
    }
}
