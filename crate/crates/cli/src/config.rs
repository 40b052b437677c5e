//! Run configuration read from TOML.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ccs_core::dataset::{
    generate_synthetic, load_csv, Age, EncodedDataset, FeatureSchema, GeneratorConfig, VocabMode,
};
use ccs_core::eval::ComparisonConfig;
use ccs_core::model::ModelConfigs;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "CCS_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for splits, model initialization and importance shuffles.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub models: ModelConfigs,
    #[serde(default)]
    pub compare: ComparisonConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of the two sources must be given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub day7: PathBuf,
    pub day28: PathBuf,
    /// Optional schema TOML; defaults to the nine-feature concrete layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
}

/// Both age datasets, encoded under one shared schema.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub day7: EncodedDataset,
    pub day28: EncodedDataset,
    pub dropped: usize,
}

impl Datasets {
    pub fn for_age(&self, age: Age) -> &EncodedDataset {
        match age {
            Age::Day7 => &self.day7,
            Age::Day28 => &self.day28,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
        if let Some(csv) = &mut cfg.data.csv {
            csv.day7 = base.join(&csv.day7);
            csv.day28 = base.join(&csv.day28);
            if let Some(s) = &mut csv.schema {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.generator, &self.data.csv) {
            (Some(g), None) => g.validate().map_err(CliError::Data),
            (None, Some(_)) => Ok(()),
            _ => Err(CliError::Config(
                "exactly one of [data.generator] and [data.csv] must be given".into(),
            )),
        }
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Canonical TOML of the configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn load_datasets(&self) -> Result<Datasets, CliError> {
        if let Some(g) = &self.data.generator {
            let data = generate_synthetic(g)?;
            return Ok(Datasets {
                day7: data.day7,
                day28: data.day28,
                dropped: 0,
            });
        }
        let csv = self.data.csv.as_ref().expect("validated source");
        let mut schema = match &csv.schema {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                FeatureSchema::from_toml(&text)?
            }
            None => FeatureSchema::concrete(),
        };
        let d7 = load_csv(&csv.day7, &mut schema, Age::Day7, VocabMode::Fit)?;
        let d28 = load_csv(&csv.day28, &mut schema, Age::Day28, VocabMode::Fit)?;
        let shared = Arc::new(schema);
        Ok(Datasets {
            day7: d7.dataset.with_schema(Arc::clone(&shared))?,
            day28: d28.dataset.with_schema(shared)?,
            dropped: d7.dropped + d28.dropped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_generator_config() {
        let cfg = RunConfig::from_toml("seed = 7\n[data.generator]\nn = 100\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.generator.unwrap().n, 100);
        assert_eq!(cfg.models, ModelConfigs::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("seed = 1\n[data.generator]\n[models.forest]\nntrees = 3\n")
            .unwrap_err();
        assert!(err.to_string().contains("ntrees"), "{err}");
    }

    #[test]
    fn exactly_one_source() {
        assert!(RunConfig::from_toml("seed = 1\n[data]\n").is_err());
        let both = "seed = 1\n[data.generator]\n[data.csv]\nday7 = \"a\"\nday28 = \"b\"\n";
        assert!(RunConfig::from_toml(both).is_err());
    }

    #[test]
    fn seed_is_required() {
        assert!(RunConfig::from_toml("[data.generator]\n").is_err());
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = RunConfig::from_toml("seed = 3\n[data.generator]\nn = 50\n[models.tree]\nmax_depth = 4\n")
            .unwrap();
        let again = RunConfig::from_toml(&cfg.canonical()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }
}
