//! Estimation and inference shared by the CLI and the experiment drivers.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use taskrank_core::btl::{self, BtlOptions, WaldInference};
use taskrank_core::refine::{fit_joint, JointConfig};
use taskrank_core::split::assign_folds;
use taskrank_core::tangent::{CgOptions, CrossFit, CrossFitOptions, InfluenceMap, SplitPlan};
use taskrank_core::{ComparisonDataset, ScoreMatrix};

use crate::error::{Error, Result};

/// Default number of cross-fitting folds.
pub const DEFAULT_FOLDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Low-rank joint estimator with cross-fitted one-step inference.
    Joint,
    /// Independent per-task BTL fits with Wald inference.
    PerTaskBtl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Joint => "joint",
            Method::PerTaskBtl => "per_task_btl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Method::Joint),
            "per_task_btl" | "btl" => Ok(Method::PerTaskBtl),
            other => Err(Error::Config(format!("unknown method {other:?} (expected joint or per_task_btl)"))),
        }
    }
}

/// Inference settings for either method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub method: Method,
    pub joint: JointConfig,
    pub btl: BtlOptions,
    pub folds: usize,
    pub seed: u64,
}

impl Estimator {
    pub fn new(method: Method, joint: JointConfig) -> Self {
        Self { method, joint, btl: BtlOptions::default(), folds: DEFAULT_FOLDS, seed: 0 }
    }

    pub fn validate(&self, data: &ComparisonDataset) -> Result<()> {
        let idx = data.index();
        let limit = idx.task_count().min(idx.model_count());
        if self.method == Method::Joint && (self.joint.refine.rank == 0 || self.joint.refine.rank > limit) {
            return Err(Error::Config(format!(
                "rank {} must lie in [1, min(d_t, d_m) = {limit}]",
                self.joint.refine.rank
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config("at least two folds are required".into()));
        }
        Ok(())
    }

    /// Point estimate of the score matrix on the full data.
    pub fn fit(&self, data: &ComparisonDataset) -> Result<ScoreMatrix> {
        self.validate(data)?;
        Ok(match self.method {
            Method::Joint => fit_joint(data, &self.joint)?.scores,
            Method::PerTaskBtl => btl::fit(data, &self.btl)?.scores,
        })
    }

    /// Influence map for contrast inference. The joint method cross-fits its
    /// nuisance over `folds` folds (fold fits run in parallel); the baseline
    /// uses the Wald sandwich of the full-data fit.
    pub fn influence_map(&self, data: &ComparisonDataset) -> Result<Box<dyn InfluenceMap + Send>> {
        self.validate(data)?;
        match self.method {
            Method::Joint => {
                let folds = assign_folds(data.len(), self.folds, self.seed)?;
                let plans = SplitPlan::cross_fit(&folds);
                let fits = plans
                    .par_iter()
                    .map(|p| Ok(fit_joint(&data.select(&p.aux), &self.joint)?.scores))
                    .collect::<Result<Vec<_>>>()?;
                let options = CrossFitOptions { rank: self.joint.refine.rank, cg: CgOptions::default() };
                Ok(Box::new(CrossFit::from_fits(data, &plans, fits, &options)?))
            }
            Method::PerTaskBtl => {
                let fit = btl::fit(data, &self.btl)?;
                Ok(Box::new(WaldInference::new(data, &fit)?))
            }
        }
    }
}
