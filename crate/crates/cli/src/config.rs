//! Run configuration, stored as TOML.
//!
//! ```toml
//! seed = 0
//! timeout_secs = 5.0
//!
//! [paths]            # relative paths resolve against the config file
//! schemas = "tables.json"
//! train = "train.json"
//! dev = "dev.json"
//! databases = "database"   # optional; <dir>/<db_id>/<db_id>.sqlite
//! output = "run"
//!
//! [sampler.model] / [sampler.train]
//! [generator.model] / [generator.train]   # generator.external = ["python3", "t5_worker.py"]
//! [parser.model] / [parser.train]
//! [synthesis]        # s1, s2, generator_beam, parser_beam, temperature
//! [mixture]          # alpha_train, alpha_new, mode, aug_token
//! [student]          # sweep = [[0.3, 0.1], [0.3, 0.3]]
//! ```
//!
//! Component seeds are not configured individually: each one is derived
//! from the global seed and a fixed label (see [`RunConfig::component_seed`]).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sqlaug_core::mixture::TrainingMixtureConfig;
use sqlaug_core::seed;
use sqlaug_core::synthesis::SynthesisConfig;
use sqlaug_models::generator::{GeneratorConfig, GeneratorTrainConfig};
use sqlaug_models::parser::{ParserConfig, ParserTrainConfig};
use sqlaug_models::sampler::{SamplerConfig, SamplerTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub schemas: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub databases: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub model: SamplerConfig,
    pub train: SamplerTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    /// Worker command for an external generator; the built-in model is
    /// used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<Vec<String>>,
    pub model: GeneratorConfig,
    pub train: GeneratorTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserSection {
    pub model: ParserConfig,
    pub train: ParserTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    /// `(alpha_train, alpha_new)` pairs; empty means the single pair from `[mixture]`.
    pub sweep: Vec<(f64, f64)>,
}

fn default_timeout() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    pub paths: Paths,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub parser: ParserSection,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub mixture: TrainingMixtureConfig,
    #[serde(default)]
    pub student: StudentSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn schemas_path(&self) -> PathBuf {
        self.resolve(&self.paths.schemas)
    }

    pub fn train_path(&self) -> PathBuf {
        self.resolve(&self.paths.train)
    }

    pub fn dev_path(&self) -> PathBuf {
        self.resolve(&self.paths.dev)
    }

    pub fn databases_path(&self) -> Option<PathBuf> {
        self.paths.databases.as_ref().map(|p| self.resolve(p))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output)
    }

    /// Checks every referenced input path and every component config
    /// before any work starts.
    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![
            ("schemas", self.schemas_path()),
            ("train", self.train_path()),
            ("dev", self.dev_path()),
        ];
        if let Some(d) = self.databases_path() {
            inputs.push(("databases", d));
        }
        for (name, p) in inputs {
            if !p.exists() {
                bail!("config: {name} path {} does not exist", p.display());
            }
        }
        if !(self.timeout_secs > 0.0) {
            bail!("config: timeout_secs must be positive");
        }
        self.generator.train.validate()?;
        self.parser.train.validate()?;
        self.synthesis.validate()?;
        self.mixture.validate()?;
        for &(a, b) in &self.student.sweep {
            if !(a >= 0.0 && b >= 0.0) {
                bail!("config: sweep weights must be non-negative");
            }
        }
        if let Some(cmd) = &self.generator.external {
            if cmd.is_empty() {
                bail!("config: generator.external needs a program");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Hash of everything the trained components depend on: the seed, the
    /// component sections and the schema and training data contents.
    pub fn components_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            seed: u64,
            sampler: &'a SamplerSection,
            generator: &'a GeneratorSection,
            parser: &'a ParserSection,
            schemas: String,
            train: String,
        }
        let key = Key {
            seed: self.seed,
            sampler: &self.sampler,
            generator: &self.generator,
            parser: &self.parser,
            schemas: file_hash(&self.schemas_path())?,
            train: file_hash(&self.train_path())?,
        };
        Ok(sha256_hex(toml::to_string(&key)?.as_bytes()))
    }

    /// Seed of a component: `derive(seed, label)` with labels `sampler`,
    /// `generator`, `parser` and `synthesis`. The student shares the
    /// parser's seed so that a student without augmentation retraces the
    /// teacher.
    pub fn component_seed(&self, label: &str) -> u64 {
        let label = if label == "student" { "parser" } else { label };
        seed::derive(self.seed, label)
    }

    pub fn sampler_train(&self) -> SamplerTrainConfig {
        SamplerTrainConfig {
            seed: self.component_seed("sampler"),
            ..self.sampler.train.clone()
        }
    }

    pub fn generator_train(&self) -> GeneratorTrainConfig {
        GeneratorTrainConfig {
            seed: self.component_seed("generator"),
            ..self.generator.train.clone()
        }
    }

    pub fn parser_train(&self) -> ParserTrainConfig {
        ParserTrainConfig {
            seed: self.component_seed("parser"),
            ..self.parser.train.clone()
        }
    }

    pub fn synthesis_config(&self) -> SynthesisConfig {
        SynthesisConfig {
            seed: self.component_seed("synthesis"),
            ..self.synthesis.clone()
        }
    }

    /// Settings used for the toy corpus: the from-scratch generator and
    /// parser need more epochs and a larger generator learning rate than
    /// the defaults, which target a pretrained generator.
    pub fn toy(paths: Paths, seed: u64) -> Self {
        let mut cfg = RunConfig {
            seed,
            timeout_secs: default_timeout(),
            paths,
            sampler: SamplerSection::default(),
            generator: GeneratorSection::default(),
            parser: ParserSection::default(),
            synthesis: SynthesisConfig::default(),
            mixture: TrainingMixtureConfig::default(),
            student: StudentSection::default(),
            base_dir: PathBuf::new(),
        };
        cfg.generator.train.epochs = 20;
        cfg.generator.train.learning_rate = 3e-3;
        cfg.parser.train.epochs = 20;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths() -> Paths {
        Paths {
            schemas: "tables.json".into(),
            train: "train.json".into(),
            dev: "dev.json".into(),
            databases: Some("database".into()),
            output: "run".into(),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::toy(paths(), 7);
        cfg.student.sweep = vec![(0.3, 0.1), (0.3, 0.3)];
        cfg.generator.external = Some(vec!["python3".into(), "w.py".into()]);
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::toy(paths(), 1);
        let mut b = a.clone();
        b.synthesis.s1 = 10;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = RunConfig::toy(paths(), 1).to_toml().unwrap() + "\nbogus = 1\n";
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn missing_input_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::toy(paths(), 0);
        cfg.base_dir = dir.path().to_path_buf();
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("schemas"), "{e}");
    }

    #[test]
    fn component_seeds_are_distinct_and_student_matches_parser() {
        let cfg = RunConfig::toy(paths(), 3);
        let labels = ["sampler", "generator", "parser", "synthesis"];
        let seeds: std::collections::BTreeSet<u64> = labels.iter().map(|l| cfg.component_seed(l)).collect();
        assert_eq!(seeds.len(), labels.len());
        assert_eq!(cfg.component_seed("student"), cfg.component_seed("parser"));
    }
}
