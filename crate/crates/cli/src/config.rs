//! Layered run configuration: defaults, then a TOML file, then `--set`
//! overrides, then dedicated flags.

use std::path::{Path, PathBuf};

use lidseg::classifier::{NetworkSpec, TrainConfig};
use lidseg::pipeline::{Method, PipelineConfig};
use lidseg::synth::DatasetConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::InputError;

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "LIDSEG_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory under `output_root` that receives every artifact.
    pub name: String,
    pub output_root: PathBuf,
    /// When set, replaces both `data.seed` and `train.seed`.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Map that feeds segmentation in `infer`.
    pub method: Method,
    pub data: DatasetConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "default".into(),
            output_root: PathBuf::from("runs"),
            seed: None,
            jobs: 0,
            method: Method::CgFusion,
            data: DatasetConfig::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn run_dir(&self) -> PathBuf {
        self.output_root.join(&self.name)
    }

    pub fn to_toml(&self) -> Result<String, InputError> {
        toml::to_string(self).map_err(|e| InputError(format!("cannot serialise config: {e}")))
    }
}

/// Settings a flag or `--set` assigns, as `(dotted.key, value)`.
pub type Override = (String, Value);

/// Parses `key.path=value`. The value is read as a TOML literal when
/// possible and as a bare string otherwise.
pub fn parse_set(arg: &str) -> Result<Override, String> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got '{arg}'"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("bad key '{key}'"));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn assign(table: &mut Table, key: &str, value: Value) -> Result<(), InputError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| InputError(format!("'{key}': '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Dotted keys present in `given` but absent from `known`.
fn unknown_keys(given: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => out.push(path),
            (Some(Value::Table(kt)), Value::Table(gt)) => unknown_keys(gt, kt, &path, out),
            _ => {}
        }
    }
}

fn load_file(path: &Path) -> Result<Table, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

/// Resolves the final configuration.
pub fn resolve(file: Option<&Path>, sets: &[Override], flags: &[Override]) -> Result<RunConfig, InputError> {
    let mut defaults = RunConfig::default();
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        defaults.output_root = PathBuf::from(root);
    }
    let mut table: Table = toml::from_str(&defaults.to_toml()?).expect("defaults round-trip");
    let mut given = Table::new();
    if let Some(path) = file {
        merge(&mut given, load_file(path)?);
    }
    for (key, value) in sets.iter().chain(flags) {
        assign(&mut given, key, value.clone())?;
    }
    merge(&mut table, given.clone());

    let mut cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| InputError(format!("config: {}", e.message())))?;

    // Fields such as `pipeline.rule` are not `deny_unknown_fields`, so
    // compare against what the resolved config serialises back to.
    let known: Table = toml::from_str(&cfg.to_toml()?).expect("resolved round-trip");
    let mut unknown = Vec::new();
    unknown_keys(&given, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(InputError(format!("unknown config key(s): {}", unknown.join(", "))));
    }

    if let Some(seed) = cfg.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    if cfg.name.is_empty() || cfg.name.contains(['/', '\\']) || cfg.name == ".." {
        return Err(InputError(format!("run name '{}' must be a single path component", cfg.name)));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> Override {
        parse_set(s).unwrap()
    }

    #[test]
    fn set_values_parse_as_toml_or_string() {
        assert_eq!(set("train.lr=0.5").1, Value::Float(0.5));
        assert_eq!(set("data.scenes = 3").1, Value::Integer(3));
        assert_eq!(set("method=cgcam").1, Value::String("cgcam".into()));
        assert_eq!(set("pipeline.fusion.stages=[1,2]").1, Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
        assert!(parse_set("novalue").is_err());
        assert!(parse_set("a..b=1").is_err());
    }

    #[test]
    fn later_layers_win() {
        let cfg = resolve(None, &[set("train.epochs=5")], &[set("train.epochs=7")]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.lr, TrainConfig::default().lr);
    }

    #[test]
    fn seed_propagates() {
        let cfg = resolve(None, &[set("seed=42")], &[]).unwrap();
        assert_eq!((cfg.data.seed, cfg.train.seed), (42, 42));
    }

    #[test]
    fn unknown_and_mistyped_keys_fail() {
        assert!(resolve(None, &[set("train.learning_rate=0.1")], &[]).is_err());
        assert!(resolve(None, &[set("pipeline.rule.dlta=0.1")], &[]).is_err());
        assert!(resolve(None, &[set("train.epochs=\"many\"")], &[]).is_err());
        assert!(resolve(None, &[set("method=bogus")], &[]).is_err());
        assert!(resolve(None, &[set("train.lr.x=1")], &[]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = resolve(None, &[set("pipeline.deep_stage=4"), set("seed=3"), set("name=x")], &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        assert_eq!(resolve(Some(&path), &[], &[]).unwrap(), cfg);
    }

    #[test]
    fn bad_names_rejected() {
        assert!(resolve(None, &[set("name=\"a/b\"")], &[]).is_err());
        assert!(resolve(None, &[set("name=\"\"")], &[]).is_err());
    }
}
