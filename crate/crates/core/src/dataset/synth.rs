//! Synthetic stand-in for the field strength records.
//!
//! Numerical inputs follow truncated normals matched to the field summary
//! statistics. Strength follows an Abrams-law core with multiplicative
//! cement, air, temperature and per-material-code effects; elapsed time and
//! slump do not enter the strength at all.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::schema::{
    AIR_TEMP, CONCRETE_TEMP, ELAPSED_TIME, FRACTURE_TYPES, PLACEMENT_AIR, SLUMP, UNIT_CEMENT, WC_RATIO,
};
use super::{Age, DataError, EncodedDataset, FeatureRows, FeatureSchema};

/// Marginal distribution of one numerical input.
#[derive(Clone, Copy, Debug)]
pub struct Marginal {
    pub name: &'static str,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Recording resolution used when quantizing.
    pub resolution: f64,
}

/// Field summary statistics of the seven numerical inputs, in schema order.
pub const FIELD_MARGINALS: [Marginal; 7] = [
    Marginal { name: UNIT_CEMENT, mean: 571.95, std: 73.67, min: 208.5, max: 1380.0, resolution: 0.1 },
    Marginal { name: WC_RATIO, mean: 0.38, std: 0.06, min: 0.14, max: 3.03, resolution: 0.001 },
    Marginal { name: CONCRETE_TEMP, mean: 76.0, std: 8.96, min: 50.0, max: 97.0, resolution: 0.1 },
    Marginal { name: AIR_TEMP, mean: 71.1, std: 14.97, min: 35.0, max: 109.0, resolution: 0.1 },
    Marginal { name: ELAPSED_TIME, mean: 39.7, std: 13.43, min: 5.0, max: 118.0, resolution: 1.0 },
    Marginal { name: PLACEMENT_AIR, mean: 4.3, std: 1.1, min: 1.0, max: 9.5, resolution: 0.1 },
    Marginal { name: SLUMP, mean: 5.5, std: 1.5, min: 1.0, max: 9.0, resolution: 0.25 },
];

/// Reference cement content of the power-law cement effect, lb/CY.
pub const CEMENT_REFERENCE: f64 = 572.0;
/// Reference air content of the linear air penalty, %.
pub const AIR_REFERENCE: f64 = 4.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    /// Log-normal noise scale of the 28-day strength.
    pub cov_28: f64,
    /// Log-normal noise scale of the 7-day strength.
    pub cov_7: f64,
    pub material_codes: usize,
    pub fracture_types: usize,
    /// Abrams numerator, psi.
    pub abrams_a: f64,
    /// Abrams base; strength scales with `B^(-w/c)`.
    pub abrams_b: f64,
    pub cement_exponent: f64,
    /// Fractional strength loss per % air above the reference.
    pub air_penalty: f64,
    pub concrete_temp_optimum: f64,
    /// Log-strength loss per °F² of concrete temperature deviation.
    pub concrete_temp_curvature: f64,
    pub air_temp_optimum: f64,
    pub air_temp_curvature: f64,
    /// Standard deviation of the per-code log-strength offset.
    pub code_effect_sigma: f64,
    /// Ratio of 7-day to 28-day latent strength.
    pub maturity_ratio: f64,
    /// Probability that a recorded fracture type is random rather than
    /// following the strength quantile.
    pub fracture_noise: f64,
    /// Fix every numerical input at its mean.
    pub pin_features: bool,
    /// Round inputs to their recording resolution and strengths to 1 psi.
    pub quantize: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            seed: 42,
            cov_28: 0.04,
            cov_7: 0.07,
            material_codes: 142,
            fracture_types: 6,
            abrams_a: 21_400.0,
            abrams_b: 20.0,
            cement_exponent: 1.0,
            air_penalty: 0.04,
            concrete_temp_optimum: 76.0,
            concrete_temp_curvature: 0.001,
            air_temp_optimum: 71.1,
            air_temp_curvature: 0.000_36,
            code_effect_sigma: 0.08,
            maturity_ratio: 0.7,
            fracture_noise: 0.5,
            pin_features: false,
            quantize: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Config(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.material_codes == 0 || self.fracture_types == 0 {
            return bad("material_codes and fracture_types must be at least 1".into());
        }
        for (name, v) in [
            ("cov_28", self.cov_28),
            ("cov_7", self.cov_7),
            ("code_effect_sigma", self.code_effect_sigma),
            ("concrete_temp_curvature", self.concrete_temp_curvature),
            ("air_temp_curvature", self.air_temp_curvature),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.maturity_ratio > 0.0 && self.maturity_ratio < 1.0) {
            return bad(format!("maturity_ratio must be in (0, 1), got {}", self.maturity_ratio));
        }
        if !(self.abrams_b > 1.0) {
            return bad(format!("abrams_b must exceed 1, got {}", self.abrams_b));
        }
        if !(self.abrams_a > 0.0) {
            return bad(format!("abrams_a must be positive, got {}", self.abrams_a));
        }
        if !(0.0..=1.0).contains(&self.fracture_noise) {
            return bad(format!("fracture_noise must be in [0, 1], got {}", self.fracture_noise));
        }
        Ok(())
    }

    /// Noise-free 28-day strength for one row of numerical inputs (schema
    /// order) and the offset of its material code.
    pub fn latent_strength_28(&self, x: &[f64], code_effect: f64) -> f64 {
        let (cement, wc, t_conc, t_air, air) = (x[0], x[1], x[2], x[3], x[5]);
        let abrams = self.abrams_a / self.abrams_b.powf(wc);
        let cement_factor = (cement / CEMENT_REFERENCE).powf(self.cement_exponent);
        let air_factor = (1.0 - self.air_penalty * (air - AIR_REFERENCE)).max(0.05);
        let temp = -self.concrete_temp_curvature * (t_conc - self.concrete_temp_optimum).powi(2)
            - self.air_temp_curvature * (t_air - self.air_temp_optimum).powi(2);
        abrams * cement_factor * air_factor * temp.exp() * code_effect.exp()
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut schema = FeatureSchema::concrete();
        let width = self.material_codes.to_string().len().max(3);
        schema.categorical[0].vocab = (1..=self.material_codes)
            .map(|c| format!("MC-{c:0width$}"))
            .collect();
        schema.categorical[1].vocab = (0..self.fracture_types)
            .map(|t| match FRACTURE_TYPES.get(t) {
                Some(name) => name.to_string(),
                None => format!("fracture_{}", t + 1),
            })
            .collect();
        schema
    }
}

/// Generated data for both ages. Both datasets share the feature rows.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub day7: EncodedDataset,
    pub day28: EncodedDataset,
    /// Noise-free 28-day strength per row.
    pub latent_28: Vec<f64>,
    /// Log-strength offset per material code.
    pub code_effects: Vec<f64>,
}

impl SyntheticData {
    pub fn for_age(&self, age: Age) -> &EncodedDataset {
        match age {
            Age::Day7 => &self.day7,
            Age::Day28 => &self.day28,
        }
    }
}

/// Rounds to a multiple of `step`. Steps with an integral reciprocal divide
/// instead of multiply so that 473.7 prints as 473.7.
fn quantize(v: f64, step: f64) -> f64 {
    let inv = 1.0 / step;
    if step < 1.0 && (inv - inv.round()).abs() < 1e-9 {
        (v * inv.round()).round() / inv.round()
    } else {
        (v / step).round() * step
    }
}

fn truncated_normal<R: Rng>(rng: &mut R, m: &Marginal) -> f64 {
    let normal = Normal::new(m.mean, m.std).expect("finite marginal");
    loop {
        let v = normal.sample(rng);
        if (m.min..=m.max).contains(&v) {
            return v;
        }
    }
}

pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<SyntheticData, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let code_effects: Vec<f64> = (0..cfg.material_codes)
        .map(|_| cfg.code_effect_sigma * std_normal.sample(&mut rng))
        .collect();

    let n = cfg.n;
    let p = FIELD_MARGINALS.len();
    let mut numeric = Vec::with_capacity(n * p);
    let mut codes = Vec::with_capacity(n);
    let mut latent_28 = Vec::with_capacity(n);
    let mut s28 = Vec::with_capacity(n);
    let mut s7 = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for _ in 0..n {
        for (slot, m) in row.iter_mut().zip(&FIELD_MARGINALS) {
            let v = if cfg.pin_features { m.mean } else { truncated_normal(&mut rng, m) };
            *slot = if cfg.quantize {
                quantize(v, m.resolution).clamp(m.min, m.max)
            } else {
                v
            };
        }
        let code = rng.random_range(0..cfg.material_codes);
        let latent = cfg.latent_strength_28(&row, code_effects[code]);
        let eta28 = cfg.cov_28 * std_normal.sample(&mut rng);
        let eta7 = cfg.cov_7 * std_normal.sample(&mut rng);
        let mut obs28 = (latent * eta28.exp()).max(1.0);
        let mut obs7 = (cfg.maturity_ratio * latent * eta7.exp()).max(1.0);
        if cfg.quantize {
            obs28 = obs28.round().max(1.0);
            obs7 = obs7.round().max(1.0);
        }
        numeric.extend_from_slice(&row);
        codes.push(code as u32);
        latent_28.push(latent);
        s28.push(obs28);
        s7.push(obs7);
    }

    // Fracture type follows the 28-day strength quantile, with a share of
    // records replaced by a uniformly random type.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s28[a].total_cmp(&s28[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let k = cfg.fracture_types;
    let mut categorical = Vec::with_capacity(2 * n);
    for i in 0..n {
        let by_quantile = rank[i] * k / n;
        let fracture = if rng.random::<f64>() < cfg.fracture_noise {
            rng.random_range(0..k)
        } else {
            by_quantile
        };
        categorical.push(codes[i]);
        categorical.push(fracture as u32);
    }

    let schema = Arc::new(cfg.schema());
    let rows = FeatureRows::new(schema, numeric, categorical)?;
    Ok(SyntheticData {
        day7: EncodedDataset::new(rows.clone(), s7, Age::Day7)?,
        day28: EncodedDataset::new(rows, s28, Age::Day28)?,
        latent_28,
        code_effects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_configs_rejected() {
        let cases: Vec<fn(&mut GeneratorConfig)> = vec![
            |c| c.n = 0,
            |c| c.maturity_ratio = 1.0,
            |c| c.abrams_b = 1.0,
            |c| c.cov_7 = -0.1,
            |c| c.code_effect_sigma = -1.0,
        ];
        for mutate in cases {
            let mut cfg = GeneratorConfig::default();
            mutate(&mut cfg);
            assert!(matches!(generate_synthetic(&cfg), Err(DataError::Config(_))));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = GeneratorConfig {
            n: 300,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.day7, b.day7);
        assert_eq!(a.day28, b.day28);
        let c = generate_synthetic(&GeneratorConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.day28.targets(), c.day28.targets());
    }

    #[test]
    fn ages_share_features() {
        let cfg = GeneratorConfig {
            n: 200,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.day7.features(), d.day28.features());
        assert_ne!(d.day7.targets(), d.day28.targets());
        assert!(d.day7.targets().iter().chain(d.day28.targets()).all(|&t| t > 0.0));
    }

    #[test]
    fn field_vocabulary_sizes() {
        let schema = GeneratorConfig::default().schema();
        assert_eq!(schema.categorical[0].cardinality(), 142);
        assert_eq!(schema.categorical[1].cardinality(), 6);
        assert!(schema.validate().is_ok());
    }
}
