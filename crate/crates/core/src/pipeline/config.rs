//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! output_dir = "out/ya-convex"
//! meta = "mlp"
//! constraint = "convex"
//! meta_features = ["mod2"]
//!
//! [data]
//! source = "synthetic"
//! mix = "a"
//! length = 730
//! seed = 1
//!
//! [split]
//! t1 = 530
//! t_end = 630
//! t2 = 730
//!
//! [meta_hyperparams]
//! learning_rate = 0.01
//!
//! [[bases]]
//! name = "arma"
//! kind = "passthrough"
//! hyperparams = { column = "y1" }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselearners::{BaseKind, BasePredictorSpec};
use crate::constraints::ConstraintKind;
use crate::datagen::{MixKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::frame::SplitSpec;
use crate::gbdt::GBDTConfig;
use crate::mlp::MLPConfig;
use crate::params::{Hyperparams, ParamValue};

/// Test-window length used when `[split]` is omitted.
pub const DEFAULT_TEST_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    Gbdt,
    Mlp,
    ConventionalLinear,
    ConventionalMlp,
    BestBase,
    UniformAverage,
}

impl MetaKind {
    pub const ALL: [MetaKind; 6] = [
        MetaKind::Gbdt,
        MetaKind::Mlp,
        MetaKind::ConventionalLinear,
        MetaKind::ConventionalMlp,
        MetaKind::BestBase,
        MetaKind::UniformAverage,
    ];

    /// Metas that produce weights from side information under a constraint.
    pub fn needs_constraint(self) -> bool {
        matches!(self, MetaKind::Gbdt | MetaKind::Mlp)
    }

    /// Reference metas outside the constrained weighted-ensemble family.
    pub fn is_extension(self) -> bool {
        matches!(self, MetaKind::BestBase | MetaKind::UniformAverage)
    }

    pub fn label(self) -> &'static str {
        match self {
            MetaKind::Gbdt => "gbdt",
            MetaKind::Mlp => "mlp",
            MetaKind::ConventionalLinear => "conventional_linear",
            MetaKind::ConventionalMlp => "conventional_mlp",
            MetaKind::BestBase => "best_base",
            MetaKind::UniformAverage => "uniform_average",
        }
    }

    fn hyperparam_keys(self) -> &'static [&'static str] {
        match self {
            MetaKind::Gbdt => &GBDTConfig::KEYS,
            MetaKind::Mlp | MetaKind::ConventionalMlp => &MLPConfig::KEYS,
            _ => &[],
        }
    }
}

impl fmt::Display for MetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MetaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MetaKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown meta `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        mix: MixKind,
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_sigma")]
        noise_sigma: f64,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_length() -> usize {
    730
}

fn default_sigma() -> f64 {
    1.0
}

impl DataSource {
    pub fn synthetic(spec: &SyntheticSpec) -> Self {
        DataSource::Synthetic {
            mix: spec.mix,
            length: spec.length,
            seed: spec.seed,
            noise_sigma: spec.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Defaults to a trailing 100-sample test window preceded by a
    /// 100-sample meta-training window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    pub bases: Vec<BasePredictorSpec>,
    pub meta: MetaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintKind>,
    #[serde(default, skip_serializing_if = "Hyperparams::is_empty")]
    pub meta_hyperparams: Hyperparams,
    /// Frame columns appended to the base models' side information for the
    /// meta-learner. `None` selects every side-information column that is
    /// not a passthrough source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_features: Option<Vec<String>>,
    /// Integer-valued meta features to expand into indicator columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub one_hot: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::ConfigParse(msg) => Error::ConfigParse(format!("{}: {msg}", path.display())),
            Error::ConfigInvalid(msg) => Error::ConfigInvalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic {
            mix,
            length,
            seed,
            noise_sigma,
        } = &self.data
        {
            SyntheticSpec {
                length: *length,
                mix: *mix,
                seed: *seed,
                noise_sigma: *noise_sigma,
            }
            .validate()?;
        }
        if let Some(split) = &self.split {
            SplitSpec::new(split.t1, split.t_end, split.t2)?;
        }
        if self.bases.len() < 2 {
            return Err(Error::ConfigInvalid(format!(
                "an ensemble needs at least 2 base models, got {}",
                self.bases.len()
            )));
        }
        for (i, base) in self.bases.iter().enumerate() {
            base.validate()?;
            if self.bases[..i].iter().any(|b| b.name == base.name) {
                return Err(Error::ConfigInvalid(format!("duplicate base model name `{}`", base.name)));
            }
        }
        match (self.meta.needs_constraint(), self.constraint) {
            (true, None) => {
                return Err(Error::ConfigInvalid(format!("meta `{}` requires a constraint", self.meta)));
            }
            (false, Some(_)) => {
                return Err(Error::ConfigInvalid(format!(
                    "meta `{}` takes no constraint; remove the `constraint` key",
                    self.meta
                )));
            }
            _ => {}
        }
        self.meta_hyperparams
            .check_keys(self.meta.hyperparam_keys(), &format!("meta `{}`", self.meta))?;
        match self.meta {
            MetaKind::Gbdt => self.gbdt_config()?.validate()?,
            MetaKind::Mlp | MetaKind::ConventionalMlp => self.mlp_config()?.validate()?,
            _ => {}
        }
        if let Some(features) = &self.meta_features {
            for name in &self.one_hot {
                if !features.contains(name) {
                    return Err(Error::ConfigInvalid(format!(
                        "one_hot column `{name}` is not listed in meta_features"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Meta-learner hyperparameters; the top-level seed fills in an absent
    /// `seed` key.
    fn resolved_hyperparams(&self) -> Hyperparams {
        let mut hp = self.meta_hyperparams.clone();
        if hp.get("seed").is_none() {
            hp = hp.set("seed", ParamValue::Int(self.seed as i64));
        }
        hp
    }

    pub fn gbdt_config(&self) -> Result<GBDTConfig> {
        self.resolved_hyperparams().to_config(&GBDTConfig::KEYS, "meta gbdt")
    }

    pub fn mlp_config(&self) -> Result<MLPConfig> {
        self.resolved_hyperparams().to_config(&MLPConfig::KEYS, "meta mlp")
    }

    /// Seed actually used by the meta-learner, if it is seeded.
    pub fn meta_seed(&self) -> Result<Option<u64>> {
        Ok(match self.meta {
            MetaKind::Gbdt => Some(self.gbdt_config()?.seed),
            MetaKind::Mlp | MetaKind::ConventionalMlp => Some(self.mlp_config()?.seed),
            _ => None,
        })
    }

    /// Frame columns read by passthrough bases.
    pub fn passthrough_columns(&self) -> Vec<String> {
        self.bases
            .iter()
            .filter(|b| b.kind == BaseKind::Passthrough)
            .filter_map(|b| b.source_column().ok().flatten().map(str::to_string))
            .collect()
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Resolves relative paths against `base` (normally the config file's
    /// directory for data, an output root for results).
    pub fn resolve_paths(&mut self, data_base: &Path, output_base: &Path) {
        if let DataSource::Csv { path } = &mut self.data {
            if path.is_relative() {
                *path = data_base.join(&*path);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = output_base.join(&self.output_dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3
meta = "gbdt"
constraint = "affine"
meta_features = ["mod2"]

[data]
source = "synthetic"
mix = "a"

[meta_hyperparams]
num_rounds = 10

[[bases]]
name = "arma"
kind = "passthrough"
hyperparams = { column = "y1" }

[[bases]]
name = "pw"
kind = "passthrough"
hyperparams = { column = "y2" }
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml_str(BASIC).unwrap();
        assert_eq!(c.meta, MetaKind::Gbdt);
        assert_eq!(c.constraint, Some(ConstraintKind::Affine));
        assert_eq!(c.gbdt_config().unwrap().num_rounds, 10);
        assert_eq!(c.gbdt_config().unwrap().seed, 3);
        assert_eq!(c.passthrough_columns(), vec!["y1", "y2"]);
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_toml_str("meta = \"gbdt\"\nconstraint = = 1\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn single_base_rejected() {
        let text = BASIC.split("[[bases]]\nname = \"pw\"").next().unwrap();
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn constraint_presence_rules() {
        let no_constraint = BASIC.replace("constraint = \"affine\"\n", "");
        assert!(ExperimentConfig::from_toml_str(&no_constraint).is_err());
        let conventional = BASIC
            .replace("meta = \"gbdt\"", "meta = \"conventional_linear\"")
            .replace("[meta_hyperparams]\nnum_rounds = 10\n", "");
        assert!(ExperimentConfig::from_toml_str(&conventional).is_err());
        let conventional = conventional.replace("constraint = \"affine\"\n", "");
        assert!(ExperimentConfig::from_toml_str(&conventional).is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str(&BASIC.replace("num_rounds", "num_round")).is_err());
        assert!(ExperimentConfig::from_toml_str(&format!("colour = 1\n{BASIC}")).is_err());
    }
}
