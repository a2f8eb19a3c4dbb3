//! Experiment orchestration: bandwidth probing, scoring sweeps, robustness
//! studies, correlation against reference accuracies, and top-1 search.
//!
//! Every run is a pure function of its [`ExperimentConfig`] and input data.
//! All randomness is derived from the seed triple before any parallel work
//! starts, and parallel results are merged in candidate order.

mod cache;
mod correlate;
mod pipeline;
mod robust;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{self, ImageSet};
use crate::error::{Error, Result};
use crate::space::{NetworkSpec, SpaceConfig, SpaceKind};

pub use cache::{CacheKey, ScoreCache};
pub use correlate::{
    gamma_sweep, run_correlation, CorrelationRepeat, CorrelationReport, CorrelationSummary,
    GammaSweepReport, GammaSweepRow, ReferenceTable,
};
pub use pipeline::{
    detect_run_gammas, network_seed, network_trace, run_search, score_candidates, PhaseTimings,
    RunManifest, Scored, SearchOutcome, ENGINE_VERSION,
};
pub use robust::{
    run_batchsize_robustness, run_imagebatch_robustness, run_init_robustness, sampled_candidates,
    BatchSizeReport, NetworkSpread, SpreadReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Rbflex,
    Naswot,
    Both,
}

impl ScorerKind {
    pub fn rbflex(self) -> bool {
        matches!(self, ScorerKind::Rbflex | ScorerKind::Both)
    }

    pub fn naswot(self) -> bool {
        matches!(self, ScorerKind::Naswot | ScorerKind::Both)
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbflex" => Ok(ScorerKind::Rbflex),
            "naswot" => Ok(ScorerKind::Naswot),
            "both" => Ok(ScorerKind::Both),
            _ => Err(Error::Config(format!("unknown scorer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub weights: u64,
    pub batch: u64,
    pub sampler: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Seeded synthetic images at the space's input size.
    Synthetic { count: usize, seed: u64 },
    /// Directory of CIFAR-10 binary files.
    CifarDir(PathBuf),
}

pub const DEFAULT_SYNTHETIC_COUNT: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub space: SpaceConfig,
    /// Minibatch size.
    pub n: usize,
    /// Number of bandwidth probe networks.
    pub m: usize,
    /// Number of sampled candidates.
    pub s: usize,
    /// Explicit candidate spec ids, scored instead of sampling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    pub seeds: Seeds,
    pub data: DataSource,
    pub scorer: ScorerKind,
    pub repeats: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub cache_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: SpaceKind) -> Self {
        ExperimentConfig {
            space: SpaceConfig::new(kind),
            n: 16,
            m: 10,
            s: 100,
            candidates: None,
            seeds: Seeds::default(),
            data: DataSource::Synthetic {
                count: DEFAULT_SYNTHETIC_COUNT,
                seed: 0,
            },
            scorer: ScorerKind::Rbflex,
            repeats: 1,
            out_dir: None,
            cache_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "minibatch size {} is below 2",
                self.n
            )));
        }
        if self.m == 0 || self.s == 0 || self.repeats == 0 {
            return Err(Error::Config("M, S and repeats must be at least 1".into()));
        }
        if let Some(ids) = &self.candidates {
            if ids.is_empty() {
                return Err(Error::Config("empty candidate list".into()));
            }
            for id in ids {
                self.space.parse_id(id)?;
            }
        }
        let card = self.space.cardinality();
        if self.m > card || (self.candidates.is_none() && self.s > card) {
            return Err(Error::SpaceExhausted {
                requested: self.m.max(self.s),
                available: card,
            });
        }
        Ok(())
    }

    /// The explicit candidates if given, otherwise `s` networks sampled with
    /// the sampler seed.
    pub fn candidate_specs(&self) -> Result<Vec<NetworkSpec>> {
        match &self.candidates {
            Some(ids) => ids.iter().map(|id| self.space.parse_id(id)).collect(),
            None => self.space.sample(self.s, self.seeds.sampler),
        }
    }

    /// Loads the configured images and aligns the space's input size with them.
    pub fn load_images(&mut self) -> Result<ImageSet> {
        match &self.data {
            DataSource::Synthetic { count, seed } => {
                let side = self.space.input_size;
                data::synth_images(*count, side, side, *seed)
            }
            DataSource::CifarDir(dir) => {
                let set = data::load_cifar_dir(dir)?;
                self.space.input_size = set.side();
                Ok(set)
            }
        }
    }
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn hex(v: u64) -> String {
    format!("{v:016x}")
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
