//! Experiment configuration: JSON file format, defaults, and flag merging.
//!
//! Precedence is defaults < config file < explicit command-line flags, so a
//! file can pin a full study while individual runs override single knobs.

use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use svrcd::score::{HyperParams, StepMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GraphType {
    Bipartite,
    ScaleFree,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExpMode {
    SweepLambda1,
    SweepLambda2,
    SweepGamma,
    Compare,
    Scalability,
    Noise,
}

/// Learner knobs as they appear in config files. Mirrors
/// [`svrcd::score::HyperParams`] minus the step mode: the harness always
/// runs the stochastic learner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub m: Option<usize>,
    pub sweeps: usize,
    pub tol: f64,
    pub tau: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        HyperConfig {
            lambda1: hp.lambda1,
            lambda2: hp.lambda2,
            gamma: hp.gamma,
            m: hp.m,
            sweeps: hp.sweeps,
            tol: hp.tol,
            tau: hp.tau,
        }
    }
}

impl HyperConfig {
    pub fn to_hyper_params(self) -> HyperParams {
        HyperParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            gamma: self.gamma,
            m: self.m,
            sweeps: self.sweeps,
            tol: self.tol,
            tau: self.tau,
            mode: StepMode::Svrg,
        }
    }
}

/// One experiment: a data-generating setting, learner knobs, and a mode
/// describing which axis the run sweeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph_type: GraphType,
    pub p: usize,
    pub n: usize,
    pub replicates: usize,
    pub hyper: HyperConfig,
    /// Flip fractions visited by the noise mode.
    pub noise: Vec<f64>,
    pub seed: u64,
    pub max_parents: usize,
    pub mode: Option<ExpMode>,
    /// Output directory; usually supplied as a flag instead.
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph_type: GraphType::Bipartite,
            p: 50,
            n: 50,
            replicates: 20,
            hyper: HyperConfig::default(),
            noise: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            seed: 0,
            max_parents: 3,
            mode: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.p < 2 {
            return Err("p must be at least 2".into());
        }
        if self.n == 0 {
            return Err("n must be positive".into());
        }
        if self.replicates == 0 {
            return Err("replicates must be at least 1".into());
        }
        if self.noise.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err("noise fractions must lie in [0, 1]".into());
        }
        if !(self.hyper.gamma.is_finite() && self.hyper.gamma > 0.0) {
            return Err("gamma must be positive and finite".into());
        }
        if self.hyper.lambda1 < 0.0 || self.hyper.lambda2 < 0.0 {
            return Err("penalty weights must be nonnegative".into());
        }
        Ok(())
    }
}
