//! Parameterized trajectory datasets: generation, manifest and ingestion.
//!
//! On disk a dataset is `manifest.json` plus `samples/sample_%05d.csv`, each
//! file using the trajectory CSV schema. Anything that matches the schema can
//! be ingested, generator or not.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{CycleContext, Trajectory, PHYSICAL_STATES};
use crate::lowdisc::SobolStream;
use crate::refmodel::circulation::{simulate_circulation, CirculationParams, GENERATOR_DT};
use crate::refmodel::space::ParameterSpace;

pub const MANIFEST_VERSION: u32 = 1;
pub const GENERATOR_NAME: &str = "elastance-0d";
pub const GENERATOR_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: usize,
    pub theta: Vec<f64>,
    /// Physical state at t = 0 (row 0 of the trajectory).
    pub initial_state: Vec<f64>,
    pub trajectory: Trajectory,
    pub t_hb: f64,
    pub av_delay: f64,
    pub split: Split,
    pub warning: Option<String>,
}

impl TrainingSample {
    pub fn new(id: usize, theta: Vec<f64>, trajectory: Trajectory, split: Split) -> Result<Self> {
        if trajectory.num_states() < PHYSICAL_STATES || trajectory.len() < 3 {
            return Err(Error::Dataset(format!("sample {id}: trajectory too small")));
        }
        let initial_state = trajectory.states[0][..PHYSICAL_STATES].to_vec();
        Ok(Self {
            id,
            theta,
            initial_state,
            t_hb: trajectory.context.t_hb,
            av_delay: trajectory.context.av_delay,
            trajectory,
            split,
            warning: None,
        })
    }

    pub fn context(&self, dt: f64) -> Result<CycleContext> {
        CycleContext::new(self.t_hb, self.av_delay, dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub version: String,
    pub n_beats: usize,
    pub internal_dt: f64,
    pub output_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: ParameterSpace,
    pub samples: Vec<TrainingSample>,
    pub generator: Option<GeneratorInfo>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: usize,
    file: String,
    theta: Vec<f64>,
    t_hb: f64,
    av_delay: f64,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    space: ParameterSpace,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    generator: Option<GeneratorInfo>,
    n_samples: usize,
    samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    /// The last `n_test` samples are tagged as test data.
    pub n_test: usize,
    pub seed: u64,
    pub output_dt: f64,
    pub n_beats: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            n_test: 0,
            seed: 0,
            output_dt: 1e-3,
            n_beats: 5,
        }
    }
}

/// Samples the space with a scrambled Sobol' sequence and simulates every
/// point with the circulation generator.
pub fn generate_dataset(space: &ParameterSpace, cfg: &GeneratorConfig) -> Result<Dataset> {
    if cfg.n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if cfg.n_test > cfg.n_samples {
        return Err(Error::Config("n_test exceeds n_samples".into()));
    }
    let seq = SobolStream::new(space.len(), cfg.seed)?;
    let thetas: Vec<Vec<f64>> = (0..cfg.n_samples)
        .map(|i| space.from_unit_cube(&seq.point(i)))
        .collect();
    let samples = thetas
        .into_par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let params = CirculationParams::from_space(space, &theta)?;
            let ctx = CycleContext::new(params.t_hb, params.av_delay, cfg.output_dt)?;
            let run = simulate_circulation(&params, &ctx, cfg.n_beats)?;
            let split = if i >= cfg.n_samples - cfg.n_test {
                Split::Test
            } else {
                Split::Train
            };
            let mut s = TrainingSample::new(i, theta, run.trajectory, split)?;
            s.warning = run.warning;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        space: space.clone(),
        samples,
        generator: Some(GeneratorInfo {
            name: GENERATOR_NAME.into(),
            version: GENERATOR_VERSION.into(),
            n_beats: cfg.n_beats,
            internal_dt: GENERATOR_DT,
            output_dt: cfg.output_dt,
        }),
        seed: Some(cfg.seed),
    })
}

pub fn sample_file_name(id: usize) -> String {
    format!("samples/sample_{id:05}.csv")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.filter(|s| s.split == split)
    }

    pub fn filter(&self, keep: impl Fn(&TrainingSample) -> bool) -> Dataset {
        Dataset {
            space: self.space.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            generator: self.generator.clone(),
            seed: self.seed,
        }
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            space: self.space.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            generator: self.generator.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if !self.space.contains(&s.theta) {
                return Err(Error::Dataset(format!("sample {} outside the parameter space", s.id)));
            }
            if s.initial_state.len() != PHYSICAL_STATES {
                return Err(Error::Dataset(format!(
                    "sample {}: missing physical initial values",
                    s.id
                )));
            }
            let t = &s.trajectory.times;
            if t[0].abs() > 1e-12 || (t[t.len() - 1] - s.t_hb).abs() > 1e-9 {
                return Err(Error::Dataset(format!(
                    "sample {}: grid does not cover [0, T_HB]",
                    s.id
                )));
            }
        }
        Ok(())
    }

    /// Shared heartbeat period, or an error when samples disagree.
    pub fn common_period(&self) -> Result<f64> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Dataset("empty dataset".into()))?
            .t_hb;
        if self.samples.iter().any(|s| (s.t_hb - first).abs() > 1e-12) {
            return Err(Error::Dataset("samples do not share T_HB".into()));
        }
        Ok(first)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("samples"))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let file = sample_file_name(s.id);
            s.trajectory.save_csv(&dir.join(&file))?;
            entries.push(SampleEntry {
                id: s.id,
                file,
                theta: s.theta.clone(),
                t_hb: s.t_hb,
                av_delay: s.av_delay,
                split: s.split,
                warning: s.warning.clone(),
            });
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            space: self.space.clone(),
            seed: self.seed,
            generator: self.generator.clone(),
            n_samples: entries.len(),
            samples: entries,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(manifest_path(dir), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(manifest_path(dir))
            .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path(dir).display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        if manifest.n_samples != manifest.samples.len() {
            return Err(Error::Dataset("manifest sample count mismatch".into()));
        }
        let samples = manifest
            .samples
            .into_iter()
            .map(|e| {
                manifest.space.check_len(&e.theta)?;
                let mut traj = Trajectory::load_csv(&dir.join(&e.file), e.av_delay)?;
                traj.context.t_hb = e.t_hb;
                let mut s = TrainingSample::new(e.id, e.theta, traj, e.split)?;
                s.warning = e.warning;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset {
            space: manifest.space,
            samples,
            generator: manifest.generator,
            seed: manifest.seed,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::circulation::benchmark_space;

    #[test]
    fn one_sample_dataset() {
        let cfg = GeneratorConfig {
            n_samples: 1,
            ..Default::default()
        };
        let ds = generate_dataset(&benchmark_space(), &cfg).unwrap();
        assert_eq!(ds.len(), 1);
        ds.validate().unwrap();
        assert_eq!(ds.samples[0].initial_state, ds.samples[0].trajectory.states[0]);
    }

    #[test]
    fn write_read_round_trip_and_determinism() {
        let cfg = GeneratorConfig {
            n_samples: 6,
            n_test: 2,
            seed: 3,
            ..Default::default()
        };
        let ds = generate_dataset(&benchmark_space(), &cfg).unwrap();
        assert_eq!(ds.split(Split::Test).len(), 2);
        assert!(ds.samples.iter().all(|s| ds.space.contains(&s.theta)));
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);

        let again = generate_dataset(&benchmark_space(), &cfg).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        again.write(dir2.path()).unwrap();
        assert_eq!(
            std::fs::read(manifest_path(dir.path())).unwrap(),
            std::fs::read(manifest_path(dir2.path())).unwrap()
        );
    }

    #[test]
    fn rejects_empty_request() {
        let cfg = GeneratorConfig {
            n_samples: 0,
            ..Default::default()
        };
        assert!(generate_dataset(&benchmark_space(), &cfg).is_err());
    }
}
