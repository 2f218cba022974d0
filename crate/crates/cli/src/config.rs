//! Config files, flag merging and the resolved-config echo.
//!
//! A config file is TOML. Top-level scalar keys (`seed`, `jobs`, ...) apply
//! to every subcommand that has a field of that name; a table named after
//! the subcommand (`[rerank]`, `[diagnose.mapper]`) sets that subcommand's
//! fields. Flags given on the command line always win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn load(path: Option<&Path>) -> CliResult<Option<toml::Table>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|e| CliError::data(format!("{e:#}")))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    Ok(Some(table))
}

fn unset(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Bool(b) => !b,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

fn section<'a>(config: &'a toml::Table, path: &[&str]) -> CliResult<Option<&'a toml::Table>> {
    let mut cur = config;
    for key in path {
        match cur.get(*key) {
            None => return Ok(None),
            Some(toml::Value::Table(t)) => cur = t,
            Some(_) => {
                return Err(CliError::usage(format!(
                    "config key {key:?} must be a table"
                )))
            }
        }
    }
    Ok(Some(cur))
}

fn to_json(v: &toml::Value) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::usage(format!("config value: {e}")))
}

/// Fills every unset field of `args` from the config, subcommand table
/// first, then top-level scalars. Unknown keys in the subcommand table are
/// rejected.
pub fn merge<T: Serialize + DeserializeOwned>(
    args: &T,
    config: Option<&toml::Table>,
    path: &[&str],
) -> CliResult<T> {
    let mut fields: Map<String, Value> = match serde_json::to_value(args) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("argument structs serialize to objects"),
    };
    if let Some(config) = config {
        if let Some(table) = section(config, path)? {
            for (k, v) in table {
                // nested tables belong to deeper subcommands
                if matches!(v, toml::Value::Table(_)) {
                    continue;
                }
                let Some(slot) = fields.get_mut(k) else {
                    return Err(CliError::usage(format!(
                        "unknown key {k:?} in config table [{}]",
                        path.join(".")
                    )));
                };
                if unset(slot) {
                    *slot = to_json(v)?;
                }
            }
        }
        for (k, v) in config {
            if matches!(v, toml::Value::Table(_)) {
                continue;
            }
            if let Some(slot) = fields.get_mut(k) {
                if unset(slot) {
                    *slot = to_json(v)?;
                }
            }
        }
    }
    serde_json::from_value(Value::Object(fields))
        .map_err(|e| CliError::usage(format!("config for [{}]: {e}", path.join("."))))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("hashing {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// What a run read and how it was configured.
#[derive(Debug, Default)]
pub struct Echo {
    pub inputs: Vec<PathBuf>,
}

impl Echo {
    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Adds `path` and its `.json` sidecar when one exists.
    pub fn input_with_sidecar(&mut self, path: &Path) {
        self.input(path);
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let side = PathBuf::from(side);
        if side.exists() {
            self.inputs.push(side);
        }
    }

    /// Writes `{command, version, strict, config, inputs}` as pretty JSON.
    pub fn write(
        &self,
        dest: &Path,
        command: &str,
        strict: bool,
        config: &impl Serialize,
    ) -> CliResult<()> {
        let mut hashes = BTreeMap::new();
        for p in &self.inputs {
            hashes.insert(p.display().to_string(), sha256_file(p)?);
        }
        let doc = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "strict": strict,
            "config": config,
            "inputs": hashes,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("echo serializes");
        text.push('\n');
        nbra::store::write_atomic(dest, text.as_bytes())?;
        Ok(())
    }
}

/// `<file>.config.json` next to a primary output file.
pub fn echo_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}
