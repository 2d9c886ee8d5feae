use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cdf::normal_cdf;
use super::mlp::Mlp;
use super::standardizer::Standardizer;
use crate::error::{Error, Result};

/// Lower bound on the predictive standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

pub const MODEL_FORMAT: &str = "bcmppi-surrogate";
pub const MODEL_VERSION: u32 = 1;

/// What the regression target measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelConvention {
    /// Negated worst L1 margin over the horizon; `≤ 0` is feasible.
    #[default]
    Margin,
    /// Horizon-averaged step penalty; feasible below one label standard
    /// deviation above the label mean.
    PenaltyAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePrediction {
    pub mean: f64,
    pub std: f64,
    pub feasibility_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEnsemble {
    pub members: Vec<Mlp>,
    pub standardizer: Standardizer,
    pub label_mean: f64,
    /// Labels are standardised as `(c - label_mean) / label_scale`.
    pub label_scale: f64,
    pub label_convention: LabelConvention,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    content_hash: String,
    model: SurrogateEnsemble,
}

impl SurrogateEnsemble {
    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::Model(format!(
                "an ensemble needs at least 2 members, found {}",
                self.members.len()
            )));
        }
        let dim = self.input_dim();
        if self.standardizer.std.len() != dim {
            return Err(Error::Model("standardizer mean/std length differ".into()));
        }
        if let Some(i) = self
            .members
            .iter()
            .position(|m| !m.is_valid() || m.input_dim() != dim)
        {
            return Err(Error::Model(format!(
                "member {i} has inconsistent layer shapes"
            )));
        }
        if !(self.label_scale > 0.0 && self.label_scale.is_finite() && self.label_mean.is_finite())
        {
            return Err(Error::Model(
                "label scaling must be finite with positive scale".into(),
            ));
        }
        Ok(())
    }

    /// Label value at or below which a prediction counts as feasible.
    pub fn feasibility_threshold(&self) -> f64 {
        match self.label_convention {
            LabelConvention::Margin => 0.0,
            LabelConvention::PenaltyAverage => self.label_mean + self.label_scale,
        }
    }

    /// Standardized outputs of every member for one raw feature row.
    pub fn member_outputs(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                actual: features.len(),
            });
        }
        let z = self.standardizer.transform(features);
        Ok(self.members.iter().map(|m| m.forward(&z)).collect())
    }

    pub fn predict(&self, features: &[f64]) -> Result<SurrogatePrediction> {
        let outputs = self.member_outputs(features)?;
        Ok(self.combine(&outputs))
    }

    pub fn predict_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<SurrogatePrediction>> {
        rows.iter().map(|r| self.predict(r.as_ref())).collect()
    }

    /// Ensemble mean and population spread, mapped back to label units.
    pub fn combine(&self, outputs: &[f64]) -> SurrogatePrediction {
        let m = outputs.len() as f64;
        let mean_z = outputs.iter().sum::<f64>() / m;
        let var_z = outputs
            .iter()
            .map(|o| (o - mean_z) * (o - mean_z))
            .sum::<f64>()
            / m;
        let mean = self.label_mean + self.label_scale * mean_z;
        let std = (self.label_scale * var_z.sqrt()).max(SIGMA_FLOOR);
        SurrogatePrediction {
            mean,
            std,
            feasibility_probability: normal_cdf((self.feasibility_threshold() - mean) / std),
        }
    }

    /// SHA-256 over the canonical JSON encoding of the model.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            content_hash: self.content_hash(),
            model: self.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Model(format!(
                "unexpected format tag {:?}",
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let model = file.model;
        model.validate()?;
        let hash = model.content_hash();
        if hash != file.content_hash {
            return Err(Error::Model(format!(
                "content hash mismatch: file says {}, contents hash to {hash}",
                file.content_hash
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::mlp::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_member(dim: usize, value: f64) -> Mlp {
        let mut out = Layer::zeros(dim, 1);
        out.biases[0] = value;
        Mlp { layers: vec![out] }
    }

    fn identity_standardizer(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn random_ensemble(seed: u64, members: usize) -> SurrogateEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SurrogateEnsemble {
            members: (0..members)
                .map(|_| Mlp::new(6, &[5, 4], &mut rng))
                .collect(),
            standardizer: Standardizer {
                mean: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                std: (0..6).map(|_| rng.gen_range(0.5..2.0)).collect(),
            },
            label_mean: 0.3,
            label_scale: 1.7,
            label_convention: LabelConvention::Margin,
        }
    }

    #[test]
    fn opposite_members_give_unit_spread() {
        let e = SurrogateEnsemble {
            members: vec![constant_member(3, -1.0), constant_member(3, 1.0)],
            standardizer: identity_standardizer(3),
            label_mean: 0.0,
            label_scale: 1.0,
            label_convention: LabelConvention::Margin,
        };
        let p = e.predict(&[0.4, 0.5, 0.6]).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.std, 1.0);
        assert_eq!(p.feasibility_probability, 0.5);
    }

    #[test]
    fn identical_members_hit_sigma_floor() {
        for (value, expect_feasible) in [(-0.2, true), (0.2, false)] {
            let e = SurrogateEnsemble {
                members: vec![constant_member(2, value); 3],
                standardizer: identity_standardizer(2),
                label_mean: 0.0,
                label_scale: 1.0,
                label_convention: LabelConvention::Margin,
            };
            let p = e.predict(&[1.0, 2.0]).unwrap();
            assert_eq!(p.std, SIGMA_FLOOR);
            assert_eq!(
                p.feasibility_probability,
                if expect_feasible { 1.0 } else { 0.0 }
            );
        }
    }

    #[test]
    fn zero_mean_is_even_odds_for_any_spread() {
        let e = random_ensemble(1, 4);
        for spread in [1e-3, 0.5, 40.0] {
            let p = e.combine(
                &[-spread, spread, -spread, spread].map(|v| v - e.label_mean / e.label_scale),
            );
            assert!(p.mean.abs() < 1e-12);
            assert!((p.feasibility_probability - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_convention_threshold() {
        let mut e = random_ensemble(2, 2);
        e.label_convention = LabelConvention::PenaltyAverage;
        assert_eq!(e.feasibility_threshold(), 0.3 + 1.7);
        let p = e.combine(&[1.0, 1.0]);
        assert_eq!(p.mean, 0.3 + 1.7);
        assert_eq!(p.feasibility_probability, 0.5);
    }

    #[test]
    fn member_order_does_not_matter() {
        let e = random_ensemble(3, 5);
        let mut r = e.clone();
        r.members.reverse();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (a, b) = (e.predict(&x).unwrap(), r.predict(&x).unwrap());
            assert!((a.mean - b.mean).abs() < 1e-12);
            assert!((a.std - b.std).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let e = random_ensemble(5, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.json");
        e.save(&path).unwrap();
        let back = SurrogateEnsemble::load(&path).unwrap();
        assert_eq!(back, e);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            assert_eq!(e.predict(&x).unwrap(), back.predict(&x).unwrap());
        }
    }

    #[test]
    fn tampered_file_is_rejected() {
        let e = random_ensemble(7, 2);
        let text = e
            .to_json()
            .unwrap()
            .replace("\"label_mean\":0.3", "\"label_mean\":0.31");
        assert!(
            matches!(SurrogateEnsemble::from_json(&text), Err(Error::Model(m)) if m.contains("hash"))
        );
    }

    #[test]
    fn single_member_is_rejected() {
        let mut e = random_ensemble(8, 2);
        e.members.pop();
        let text = e.to_json().unwrap();
        assert!(SurrogateEnsemble::from_json(&text).is_err());
    }

    #[test]
    fn wrong_feature_length() {
        let e = random_ensemble(9, 2);
        assert!(matches!(
            e.predict(&[0.0; 5]),
            Err(Error::LengthMismatch {
                expected: 6,
                actual: 5
            })
        ));
    }
}
