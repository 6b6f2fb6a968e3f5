//! Run configuration: one JSON document per experiment, with `--set`
//! overrides applied before validation.

use std::fs;
use std::path::{Path, PathBuf};

use cat2vec_core::{ConstraintSpec, EvalMode, Metric, Objective, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub train_corpus: Option<PathBuf>,
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
    /// Generate the corpora instead of reading them.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub prepared_dir: PathBuf,
    pub output_dir: PathBuf,
    pub constraint: ConstraintSpec,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub vocab: VocabConfig,
    pub episode: EpisodeConfig,
    #[serde(default = "default_support_sets")]
    pub support_sets: usize,
    #[serde(default)]
    pub train: TrainConfig,
    /// Objectives to train and evaluate; `train.objective` alone when empty.
    #[serde(default)]
    pub objectives: Vec<Objective>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_support_sets() -> usize {
    3
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub chunk_size: usize,
    pub max_chunks: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub min_count: u64,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_count: 1,
            max_size: 50_000,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Classes per support set; every test class when unset.
    #[serde(default)]
    pub n_way: Option<usize>,
    pub k_shot: usize,
    /// Support set `i` is drawn with seed `seed + i`.
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metric: Metric,
    /// Defaults to category vectors for objectives that learn them and to
    /// prototypes otherwise.
    pub mode: Option<EvalMode>,
    pub queries_per_episode: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metric: Metric::Full,
            mode: None,
            queries_per_episode: 15,
        }
    }
}

impl RunConfig {
    /// Reads `path`, applies `key.path=value` overrides, validates, and
    /// resolves relative paths against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config = RunConfig::from_value(value)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            config.train_corpus.as_mut(),
            config.test_corpus.as_mut(),
            Some(&mut config.prepared_dir),
            Some(&mut config.output_dir),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn from_value(value: Value) -> Result<RunConfig, CliError> {
        if let Some(v) = value.get("version") {
            if v.as_u64() != Some(u64::from(CONFIG_VERSION)) {
                return Err(CliError::Usage(format!("unsupported config version {v}")));
            }
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let files = self.train_corpus.is_some() || self.test_corpus.is_some();
        match (&self.synth, files) {
            (Some(_), true) => {
                return Err(CliError::Usage(
                    "give either synth or train_corpus/test_corpus, not both".into(),
                ))
            }
            (None, false) => {
                return Err(CliError::Usage(
                    "no corpora: set synth or train_corpus/test_corpus".into(),
                ))
            }
            (None, true) if self.train_corpus.is_none() || self.test_corpus.is_none() => {
                return Err(CliError::Usage("train_corpus and test_corpus go together".into()))
            }
            _ => {}
        }
        if self.support_sets == 0 {
            return Err(CliError::Usage("support_sets must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn objectives(&self) -> Vec<Objective> {
        if self.objectives.is_empty() {
            vec![self.train.objective]
        } else {
            self.objectives.clone()
        }
    }
}

/// Sets a dotted key to a value. The value is read as JSON when it parses,
/// otherwise as a string; missing intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("bad override key {key:?}")));
        }
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "override {key:?} descends into a non-object"
                )))
            }
        };
        if parts.peek().is_none() {
            obj.insert(part.to_owned(), new);
            return Ok(());
        }
        node = obj.entry(part).or_insert(Value::Null);
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "version": 1,
            "synth": SynthSpec::default(),
            "prepared_dir": "prep",
            "output_dir": "out",
            "constraint": {"m_tshot": 1, "seed": 0},
            "episode": {"k_shot": 5, "seed": 0}
        })
    }

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_value(base()).unwrap();
        assert_eq!(c.support_sets, 3);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.objectives(), vec![Objective::Cc]);
        assert_eq!(c.eval.metric, Metric::Full);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let mut v = base();
        v["surprise"] = json!(1);
        assert!(matches!(RunConfig::from_value(v), Err(CliError::Usage(_))));
        let mut v = base();
        v["train"] = json!({"epochz": 3});
        assert!(RunConfig::from_value(v).is_err());
        let mut v = base();
        v["version"] = json!(2);
        let err = RunConfig::from_value(v).unwrap_err();
        assert!(err.to_string().contains("unsupported config version"));
        let mut v = base();
        v.as_object_mut().unwrap().remove("version");
        assert!(RunConfig::from_value(v).is_err());
    }

    #[test]
    fn corpora_sources_are_exclusive() {
        let mut v = base();
        v["train_corpus"] = json!("a.jsonl");
        assert!(RunConfig::from_value(v.clone()).is_err());
        v.as_object_mut().unwrap().remove("synth");
        assert!(RunConfig::from_value(v.clone()).is_err());
        v["test_corpus"] = json!("b.jsonl");
        assert!(RunConfig::from_value(v).is_ok());
    }

    #[test]
    fn overrides() {
        let mut v = base();
        apply_override(&mut v, "train.epochs=7").unwrap();
        apply_override(&mut v, "train.objective=nce").unwrap();
        apply_override(&mut v, "synth.shift=0.5").unwrap();
        apply_override(&mut v, "objectives=[\"cc\",\"nce\"]").unwrap();
        let c = RunConfig::from_value(v.clone()).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.objective, Objective::Nce);
        assert_eq!(c.synth.as_ref().unwrap().shift, 0.5);
        assert_eq!(c.objectives(), vec![Objective::Cc, Objective::Nce]);
        assert!(apply_override(&mut v, "noequals").is_err());
        assert!(apply_override(&mut v, "version.x=1").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, base().to_string()).unwrap();
        let c = RunConfig::load(&path, &["output_dir=/abs/out".into()]).unwrap();
        assert_eq!(c.prepared_dir, dir.path().join("prep"));
        assert_eq!(c.output_dir, PathBuf::from("/abs/out"));
        assert!(matches!(
            RunConfig::load(&dir.path().join("missing.json"), &[]),
            Err(CliError::Io { .. })
        ));
    }
}
