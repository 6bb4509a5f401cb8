//! JSON checkpoints of trained surrogates.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! weights survive a save/load cycle bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{state_labels, LnodeModel, StateNormalization};
use crate::nn::{AnnArchitecture, AnnWeights};
use crate::refmodel::ParameterSpace;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Document {
    format_version: u32,
    architecture: AnnArchitecture,
    seed: u64,
    /// Integration step the model was trained with [s].
    dt: f64,
    weights: Vec<f64>,
    normalization: StateNormalization,
    state_labels: Vec<String>,
    latent_ic: Vec<f64>,
    reference_ic: Vec<f64>,
    parameter_space: ParameterSpace,
}

/// A model together with the integration step it was trained at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LnodeModel,
    pub dt: f64,
}

impl Checkpoint {
    pub fn new(model: LnodeModel, dt: f64) -> Self {
        Self { model, dt }
    }

    pub fn to_json(&self) -> Result<String> {
        let m = &self.model;
        let doc = Document {
            format_version: CHECKPOINT_VERSION,
            architecture: m.ann.architecture().clone(),
            seed: m.seed,
            dt: self.dt,
            weights: m.ann.as_flat().to_vec(),
            normalization: m.norm.clone(),
            state_labels: m.state_labels(),
            latent_ic: m.latent_ic.clone(),
            reference_ic: m.reference_ic.clone(),
            parameter_space: m.space.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                doc.format_version
            )));
        }
        doc.architecture.validate()?;
        let n_z = doc.architecture.output_dim;
        if doc.architecture.input_dim != n_z + 2 + doc.parameter_space.len() {
            return Err(Error::Format("architecture does not match the parameter space".into()));
        }
        if doc.state_labels != state_labels(n_z) {
            return Err(Error::Format("unexpected state labels".into()));
        }
        if doc.normalization.center.len() != n_z || doc.normalization.scale.len() != n_z {
            return Err(Error::Format("normalization length mismatch".into()));
        }
        if doc.latent_ic.len() + crate::lnode::PHYSICAL_STATES != n_z {
            return Err(Error::Format("latent initial condition length mismatch".into()));
        }
        if !(doc.dt > 0.0) {
            return Err(Error::Format("dt must be positive".into()));
        }
        let ann = AnnWeights::from_flat(doc.architecture, doc.weights)?;
        Ok(Self {
            model: LnodeModel {
                ann,
                space: doc.parameter_space,
                norm: doc.normalization,
                latent_ic: doc.latent_ic,
                reference_ic: doc.reference_ic,
                seed: doc.seed,
            },
            dt: doc.dt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::benchmark_space;
    use rand::Rng as _;

    #[test]
    fn bit_exact_round_trip() {
        let space = benchmark_space();
        let mut model = LnodeModel::new(space, 10, 3, 13, StateNormalization::identity(10), vec![1.0; 8], 5).unwrap();
        let mut r = crate::rng::rng(9);
        for w in model.ann.as_flat_mut() {
            *w = r.random::<f64>() * 10f64.powi(r.random_range(-300..300));
        }
        model.latent_ic = vec![std::f64::consts::PI, -1e-310];
        let cp = Checkpoint::new(model, 1e-3);
        let back = Checkpoint::from_json(&cp.to_json().unwrap()).unwrap();
        assert_eq!(back, cp);
        let bits = |m: &LnodeModel| m.ann.as_flat().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model), bits(&cp.model));
    }

    #[test]
    fn rejects_mismatched_documents() {
        let model = LnodeModel::new(
            benchmark_space(),
            8,
            1,
            5,
            StateNormalization::identity(8),
            vec![0.0; 8],
            1,
        )
        .unwrap();
        let text = Checkpoint::new(model, 1e-3).to_json().unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::Format(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["weights"].as_array_mut().unwrap().pop();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(Error::ParameterShape { .. })
        ));
    }
}
