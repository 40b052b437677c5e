use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

/// A real-valued input column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericalSpec {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

/// A categorical input column and its vocabulary, in index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalSpec {
    pub name: String,
    #[serde(default)]
    pub vocab: Vec<String>,
}

impl CategoricalSpec {
    /// Vocabulary size `K`.
    pub fn cardinality(&self) -> usize {
        self.vocab.len()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == value)
    }
}

/// Names of the strength columns, in psi.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetColumns {
    pub day7: String,
    pub day28: String,
}

impl TargetColumns {
    pub fn for_age(&self, age: Age) -> &str {
        match age {
            Age::Day7 => &self.day7,
            Age::Day28 => &self.day28,
        }
    }
}

/// Curing age of a strength measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Age {
    #[serde(rename = "7")]
    Day7,
    #[serde(rename = "28")]
    Day28,
}

impl Age {
    pub const ALL: [Age; 2] = [Age::Day7, Age::Day28];

    pub fn days(self) -> u32 {
        match self {
            Age::Day7 => 7,
            Age::Day28 => 28,
        }
    }
}

impl fmt::Display for Age {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.days())
    }
}

impl FromStr for Age {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().trim_end_matches('d') {
            "7" => Ok(Age::Day7),
            "28" => Ok(Age::Day28),
            other => Err(DataError::InvalidAge(other.to_string())),
        }
    }
}

/// Column layout of the input data: numerical features, categorical
/// features (with vocabularies) and the two strength targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub numerical: Vec<NumericalSpec>,
    pub categorical: Vec<CategoricalSpec>,
    pub targets: TargetColumns,
}

pub const UNIT_CEMENT: &str = "unit_cement_lb_cy";
pub const WC_RATIO: &str = "wc_ratio";
pub const CONCRETE_TEMP: &str = "concrete_temp_f";
pub const AIR_TEMP: &str = "air_temp_f";
pub const ELAPSED_TIME: &str = "elapsed_time_min";
pub const PLACEMENT_AIR: &str = "placement_air_pct";
pub const SLUMP: &str = "slump_in";
pub const MATERIAL_CODE: &str = "material_code";
pub const FRACTURE_TYPE: &str = "fracture_type";
pub const STRENGTH_7D: &str = "strength_7d_psi";
pub const STRENGTH_28D: &str = "strength_28d_psi";

/// The six recorded cylinder failure modes.
pub const FRACTURE_TYPES: [&str; 6] = [
    "cone",
    "cone_vertical_cracks",
    "columnar_vertical_cracks",
    "diagonal_shear",
    "edge_fracture",
    "edge_fracture_one_end",
];

impl FeatureSchema {
    /// The nine input parameters of the field dataset: seven numerical
    /// columns with their observed ranges, plus material code and fracture
    /// type with empty vocabularies (filled when data is fitted).
    pub fn concrete() -> Self {
        let num = |name: &str, unit: &str, min: f64, max: f64| NumericalSpec {
            name: name.to_string(),
            unit: unit.to_string(),
            min,
            max,
        };
        Self {
            numerical: vec![
                num(UNIT_CEMENT, "lb/CY", 208.5, 1380.0),
                num(WC_RATIO, "ratio", 0.14, 3.03),
                num(CONCRETE_TEMP, "F", 50.0, 97.0),
                num(AIR_TEMP, "F", 35.0, 109.0),
                num(ELAPSED_TIME, "min", 5.0, 118.0),
                num(PLACEMENT_AIR, "%", 1.0, 9.5),
                num(SLUMP, "in", 1.0, 9.0),
            ],
            categorical: vec![
                CategoricalSpec {
                    name: MATERIAL_CODE.to_string(),
                    vocab: Vec::new(),
                },
                CategoricalSpec {
                    name: FRACTURE_TYPE.to_string(),
                    vocab: Vec::new(),
                },
            ],
            targets: TargetColumns {
                day7: STRENGTH_7D.to_string(),
                day28: STRENGTH_28D.to_string(),
            },
        }
    }

    pub fn p_num(&self) -> usize {
        self.numerical.len()
    }

    pub fn p_cat(&self) -> usize {
        self.categorical.len()
    }

    /// Number of original input features (numerical + categorical).
    pub fn n_features(&self) -> usize {
        self.p_num() + self.p_cat()
    }

    /// Feature names: numerical first, then categorical.
    pub fn feature_names(&self) -> Vec<&str> {
        self.numerical
            .iter()
            .map(|s| s.name.as_str())
            .chain(self.categorical.iter().map(|s| s.name.as_str()))
            .collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names().iter().position(|n| *n == name)
    }

    /// Width of the one-hot expansion: `p_num + Σ K`.
    pub fn one_hot_width(&self) -> usize {
        self.p_num() + self.categorical.iter().map(CategoricalSpec::cardinality).sum::<usize>()
    }

    /// Structural checks that hold even before vocabularies are fitted.
    pub fn validate_layout(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        let names = self
            .feature_names()
            .into_iter()
            .chain([self.targets.day7.as_str(), self.targets.day28.as_str()]);
        for name in names {
            if !seen.insert(name) {
                return Err(DataError::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for spec in &self.numerical {
            if !(spec.min < spec.max) {
                return Err(DataError::Schema(format!(
                    "numerical column `{}` needs min < max, got [{}, {}]",
                    spec.name, spec.min, spec.max
                )));
            }
        }
        for spec in &self.categorical {
            let mut values = HashSet::new();
            for v in &spec.vocab {
                if !values.insert(v) {
                    return Err(DataError::Schema(format!(
                        "duplicate vocabulary entry `{v}` in `{}`",
                        spec.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full validation: layout plus a non-empty vocabulary per categorical.
    pub fn validate(&self) -> Result<(), DataError> {
        self.validate_layout()?;
        if let Some(spec) = self.categorical.iter().find(|s| s.vocab.is_empty()) {
            return Err(DataError::Schema(format!(
                "categorical column `{}` has an empty vocabulary",
                spec.name
            )));
        }
        Ok(())
    }

    /// Canonical text form; also the on-disk schema file format.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let schema: Self = toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate_layout()?;
        Ok(schema)
    }

    /// Stable 64-bit fingerprint of the canonical text form.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    /// True when `self` equals `earlier` except for vocabulary entries
    /// appended after the existing ones.
    pub fn extends(&self, earlier: &FeatureSchema) -> bool {
        self.numerical == earlier.numerical
            && self.targets == earlier.targets
            && self.categorical.len() == earlier.categorical.len()
            && self
                .categorical
                .iter()
                .zip(&earlier.categorical)
                .all(|(a, b)| a.name == b.name && a.vocab.starts_with(&b.vocab))
    }
}
