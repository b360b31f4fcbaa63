//! TOML run configuration.
//!
//! Every key is optional. A minimal file:
//!
//! ```toml
//! seed = 7
//! method = "joint"
//! rank = 3
//!
//! [bootstrap]
//! draws = 1000
//! alpha = 0.05
//! ```
//!
//! The top-level `rank` and `bound` override the corresponding fields of the
//! `[convex]` and `[refine]` tables so the stages cannot disagree.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taskrank_core::btl::BtlOptions;
use taskrank_core::certify::BootstrapConfig;
use taskrank_core::convex::ConvexConfig;
use taskrank_core::refine::{JointConfig, RefineConfig, SplitMode};
use taskrank_core::synth::SyntheticConfig;

use crate::error::{Error, Result};
use crate::harness::CoverageScope;
use crate::ingest::BuildOptions;
use crate::pipeline::{Estimator, Method, DEFAULT_FOLDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub method: Method,
    pub rank: usize,
    pub bound: f64,
    pub folds: usize,
    pub split_mode: SplitMode,
    pub convex: ConvexConfig,
    pub refine: RefineConfig,
    pub btl: BtlOptions,
    pub bootstrap: BootstrapConfig,
    pub synthetic: SyntheticConfig,
    pub ingest: BuildOptions,
    pub certify: CertifySection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            method: Method::Joint,
            rank: 5,
            bound: 5.0,
            folds: DEFAULT_FOLDS,
            split_mode: SplitMode::Shared,
            convex: ConvexConfig::default(),
            refine: RefineConfig::default(),
            btl: BtlOptions::default(),
            bootstrap: BootstrapConfig::default(),
            synthetic: SyntheticConfig::default(),
            ingest: BuildOptions::default(),
            certify: CertifySection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    /// Top-K threshold.
    pub k: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Sweep,
    Coverage,
    Normality,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sweep" => Ok(Self::Sweep),
            "coverage" => Ok(Self::Coverage),
            "normality" => Ok(Self::Normality),
            other => Err(Error::Config(format!("unknown experiment {other:?} (expected sweep, coverage or normality)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub experiment: Experiment,
    pub trials: usize,
    pub n_values: Vec<usize>,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub scopes: Vec<CoverageScope>,
    /// Top-K threshold for the coverage experiment.
    pub k: usize,
    /// Contrasts of the normality experiment as `[task, model_a, model_b]`.
    pub contrasts: Vec<[usize; 3]>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            experiment: Experiment::Sweep,
            trials: 10,
            n_values: vec![4000, 8000, 16_000, 32_000],
            ks: vec![5, 10],
            methods: vec![Method::Joint, Method::PerTaskBtl],
            scopes: vec![CoverageScope::SingleTask, CoverageScope::Simultaneous],
            k: 5,
            contrasts: vec![[0, 0, 1], [0, 0, 2]],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Range checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.bound > 0.0) {
            return Err(Error::Config(format!("bound {} must be positive", self.bound)));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.ingest.top_k_models < 2 {
            return Err(Error::Config("ingest.top_k_models must be at least 2".into()));
        }
        if self.certify.k == 0 || self.bench.k == 0 || self.bench.ks.contains(&0) {
            return Err(Error::Config("top-K thresholds must be at least 1".into()));
        }
        if self.bench.trials == 0 {
            return Err(Error::Config("bench.trials must be at least 1".into()));
        }
        self.bootstrap.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    pub fn joint(&self) -> JointConfig {
        let mut joint = JointConfig::new(self.rank, self.bound);
        joint.convex = ConvexConfig { rank: self.rank, bound: self.bound, ..self.convex };
        joint.refine = RefineConfig { rank: self.rank, bound: self.bound, ..self.refine };
        joint.split_mode = self.split_mode;
        joint.seed = self.seed;
        joint
    }

    pub fn estimator(&self) -> Estimator {
        Estimator { method: self.method, joint: self.joint(), btl: self.btl, folds: self.folds, seed: self.seed }
    }

    /// Replaces the master seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.bootstrap.seed = seed;
        self.ingest.seed = seed;
    }
}
