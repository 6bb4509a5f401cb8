//! Run configuration: defaults, then the `--config` JSON file, then flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::failure::Failure;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<C> {
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    /// Output directory. Left out of the snapshot so reruns into different
    /// directories snapshot identically.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: C,
}

impl<C> RunConfig<C> {
    pub fn out_dir(&self) -> Result<&Path, Failure> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::config("missing output directory: pass --out <DIR>"))
    }
}

/// Flag values that override the merged configuration, keyed by field name.
#[derive(Debug, Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &'static str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0
                .push((key, serde_json::to_value(v).expect("flag values serialize")));
        }
        self
    }

    pub fn flag(&mut self, key: &'static str, on: bool, value: bool) -> &mut Self {
        if on {
            self.0.push((key, Value::Bool(value)));
        }
        self
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn keys(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let Value::Object(m) = v {
        for (k, v) in m {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            keys(v, &path, out);
            out.insert(path);
        }
    }
}

/// Merges defaults, the optional config file and the flag overrides, and
/// rejects keys that no setting consumes.
pub fn resolve<C>(defaults: RunConfig<C>, file: Option<&Path>, flags: &Overrides) -> Result<RunConfig<C>, Failure>
where
    C: Serialize + DeserializeOwned,
{
    let mut doc = serde_json::to_value(&defaults).expect("defaults serialize");
    let mut given = Value::Object(Map::new());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read --config {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("invalid JSON in {}: {e}", path.display())))?;
        if !v.is_object() {
            return Err(Failure::config(format!("{} must hold a JSON object", path.display())));
        }
        merge(&mut given, v);
    }
    for (k, v) in &flags.0 {
        let nested = k.rsplit('.').fold(v.clone(), |acc, part| {
            Value::Object(Map::from_iter([(part.to_string(), acc)]))
        });
        merge(&mut given, nested);
    }
    let out = given.as_object_mut().and_then(|m| m.remove("out"));
    merge(&mut doc, given.clone());
    let mut cfg: RunConfig<C> =
        serde_json::from_value(doc).map_err(|e| Failure::config(format!("invalid configuration: {e}")))?;
    cfg.out = match out {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(Value::Null) | None => defaults.out,
        Some(_) => return Err(Failure::config("out must be a path string")),
    };

    let mut known = BTreeSet::new();
    keys(&serde_json::to_value(&cfg).expect("config serializes"), "", &mut known);
    let mut seen = BTreeSet::new();
    keys(&given, "", &mut seen);
    if let Some(k) = seen.iter().find(|k| !known.contains(*k)) {
        return Err(Failure::config(format!("unknown configuration key `{k}`")));
    }
    Ok(cfg)
}

/// Writes the resolved configuration to `dir/config.json`.
pub fn snapshot<C: Serialize>(cfg: &RunConfig<C>, dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    let text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    std::fs::write(dir.join("config.json"), text)
        .map_err(|e| Failure::config(format!("cannot write config snapshot: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Demo {
        n: usize,
        rate: f64,
        inner: Inner,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Inner {
        a: u32,
        b: u32,
    }

    fn defaults() -> RunConfig<Demo> {
        RunConfig {
            seed: 0,
            workers: None,
            out: None,
            settings: Demo {
                n: 4,
                rate: 0.5,
                inner: Inner { a: 1, b: 2 },
            },
        }
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 10, "seed": 3, "inner": {"b": 7}, "out": "x"}"#).unwrap();
        let mut o = Overrides::default();
        o.set("n", Some(12)).set("rate", None::<f64>).set("inner.a", Some(5));
        let c = resolve(defaults(), Some(&path), &o).unwrap();
        assert_eq!(c.settings.n, 12);
        assert_eq!(c.settings.rate, 0.5);
        assert_eq!(c.settings.inner, Inner { a: 5, b: 7 });
        assert_eq!(c.seed, 3);
        assert_eq!(c.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"inner": {"c": 1}}"#).unwrap();
        assert_eq!(
            resolve(defaults(), Some(&path), &Overrides::default())
                .unwrap_err()
                .code,
            2
        );
        std::fs::write(&path, r#"{"n": "many"}"#).unwrap();
        assert_eq!(
            resolve(defaults(), Some(&path), &Overrides::default())
                .unwrap_err()
                .code,
            2
        );
    }

    #[test]
    fn snapshot_omits_out() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = defaults();
        c.out = Some(dir.path().to_path_buf());
        snapshot(&c, dir.path()).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
        assert!(v.get("out").is_none());
        assert_eq!(v["n"], 4);
    }
}
