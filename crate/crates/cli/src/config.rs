//! TOML run configurations.
//!
//! A config file may name parent files under `inherit` (a path or a list of
//! paths, relative to the file). Parents are merged in order and the child
//! overrides them key by key, recursing into tables. A top-level `env_file`
//! names an environment parameter file that becomes the `env` table, with
//! any explicit `[env]` keys taking precedence.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::CliError;

const MAX_INHERIT_DEPTH: usize = 16;

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
    text.parse::<Table>()
        .map_err(|e| CliError::Validation(vec![format!("{}: {}", path.display(), first_line(&e.to_string()))]))
}

fn first_line(s: &str) -> String {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or(s).trim().to_string()
}

/// `over` wins; tables present on both sides are merged recursively.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn relative(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn load_inner(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Table, CliError> {
    let canonical = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    if stack.contains(&canonical) {
        return Err(CliError::Validation(vec![format!(
            "{}: inheritance cycle",
            path.display()
        )]));
    }
    if stack.len() >= MAX_INHERIT_DEPTH {
        return Err(CliError::Validation(vec![format!(
            "{}: inheritance deeper than {MAX_INHERIT_DEPTH}",
            path.display()
        )]));
    }
    stack.push(canonical);
    let mut own = read_table(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let parents: Vec<String> = match own.remove("inherit") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(CliError::Validation(vec![format!(
                    "{}: inherit entries must be strings",
                    path.display()
                )])),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(CliError::Validation(vec![format!(
                "{}: inherit must be a path or a list of paths",
                path.display()
            )]))
        }
    };
    if let Some(env_file) = own.remove("env_file") {
        let Value::String(p) = env_file else {
            return Err(CliError::Validation(vec![format!("{}: env_file must be a path", path.display())]));
        };
        let mut env = read_table(&relative(dir, &p))?;
        if let Some(Value::Table(explicit)) = own.remove("env") {
            merge(&mut env, explicit);
        }
        own.insert("env".into(), Value::Table(env));
    }
    let mut merged = Table::new();
    for p in parents {
        merge(&mut merged, load_inner(&relative(dir, &p), stack)?);
    }
    merge(&mut merged, own);
    stack.pop();
    Ok(merged)
}

/// Reads `path` and resolves inheritance into one table.
pub fn load_table(path: &Path) -> Result<Table, CliError> {
    load_inner(path, &mut Vec::new())
}

fn wrap(path: &[String], v: Value) -> Value {
    path.iter().rev().fold(v, |acc, k| {
        let mut t = Table::new();
        t.insert(k.clone(), acc);
        Value::Table(t)
    })
}

fn try_parse<T: DeserializeOwned>(v: Value) -> Result<(), String> {
    v.try_into::<T>().map(|_| ()).map_err(|e| first_line(&e.to_string()))
}

fn dotted(path: &[String]) -> String {
    if path.is_empty() {
        "<root>".into()
    } else {
        path.join(".")
    }
}

/// Narrows a failing value down to the keys responsible. Each key is tried
/// in isolation; a key that fails on its own for a reason other than a
/// missing sibling is a culprit and is searched further.
fn probe<T: DeserializeOwned>(path: &[String], v: &Value, errors: &mut Vec<String>) {
    let Err(msg) = try_parse::<T>(wrap(path, v.clone())) else {
        return;
    };
    let mut found = false;
    if let Value::Table(t) = v {
        for (k, cv) in t {
            let mut p = path.to_vec();
            p.push(k.clone());
            match try_parse::<T>(wrap(&p, cv.clone())) {
                Ok(()) => {}
                Err(m) if m.contains("missing field") => {}
                Err(_) => {
                    found = true;
                    probe::<T>(&p, cv, errors);
                }
            }
        }
    }
    if !found {
        errors.push(format!("{}: {msg}", dotted(path)));
    }
}

/// Types that can report every semantic problem at once.
pub trait Validate {
    fn validate(&self) -> Vec<String>;
}

/// Deserializes `table`, reporting every offending key and every failed
/// semantic check together.
pub fn parse<T: DeserializeOwned + Validate>(table: &Table) -> Result<T, CliError> {
    let value = Value::Table(table.clone());
    match value.clone().try_into::<T>() {
        Ok(cfg) => {
            let problems = cfg.validate();
            if problems.is_empty() {
                Ok(cfg)
            } else {
                Err(CliError::Validation(problems))
            }
        }
        Err(e) => {
            let mut errors = Vec::new();
            probe::<T>(&[], &value, &mut errors);
            if errors.is_empty() {
                errors.push(first_line(&e.to_string()));
            }
            let unique: BTreeSet<String> = errors.into_iter().collect();
            Err(CliError::Validation(unique.into_iter().collect()))
        }
    }
}

/// SHA-256 of the canonical serialization: tables are key-sorted, so the
/// hash ignores the key order of the source file.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    let value = Value::try_from(cfg).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))?;
    let text = canonical(&value);
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn canonical(v: &Value) -> String {
    match v {
        Value::Table(t) => {
            let mut keys: Vec<&String> = t.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys.iter().map(|k| format!("{k:?}={}", canonical(&t[*k]))).collect();
            format!("{{{}}}", inner.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        Value::Float(f) => format!("f{:?}", f),
        other => other.to_string(),
    }
}

/// Seeds given either as a list or as an inclusive range `"a..b"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range(String),
}

impl SeedSpec {
    pub fn resolve(&self) -> Result<Vec<u64>, String> {
        match self {
            SeedSpec::List(v) if v.is_empty() => Err("seed list is empty".into()),
            SeedSpec::List(v) => Ok(v.clone()),
            SeedSpec::Range(s) => parse_seeds(s),
        }
    }
}

/// `"7"`, `"0..99"` (inclusive), `"0..=99"` or `"1,4,9"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("invalid seed `{t}` in `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if b < a {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(num).collect()
}
