//! Experiment configuration: one JSON document drives signal synthesis,
//! sampling, noise injection, backend selection, and output locations.
//! Unknown keys are rejected with the offending key named.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use qgp::engine::{Backend, FitOptions, QuantumOpts};
use qgp::hhl::{self, AqcBudget};
use qgp::lpe::{NetworkConfig, SampleCounts};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub counts: SampleCounts,
    /// timestamp jitter as a fraction of the per-channel spacing
    pub jitter: f64,
    pub seed: u64,
    /// dense simulation grid size over one window
    pub grid_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            counts: SampleCounts::default(),
            jitter: 0.1,
            seed: 7,
            grid_points: 10_000,
        }
    }
}

/// Per-channel measurement noise stds; absent entries fall back to the
/// network defaults (0.5% of the current amplitude, 0.5% of the series drop
/// amplitude for voltages).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub std_ii: Option<f64>,
    pub std_vj: Option<f64>,
    pub std_vi: Option<f64>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            std_ii: None,
            std_vj: None,
            std_vi: None,
            seed: 42,
        }
    }
}

impl NoiseConfig {
    pub fn resolve(&self, network: &NetworkConfig) -> (f64, f64, f64) {
        let (d_ii, d_vj, d_vi) = network.default_noise_std();
        (
            self.std_ii.unwrap_or(d_ii),
            self.std_vj.unwrap_or(d_vj),
            self.std_vi.unwrap_or(d_vi),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    Classical,
    HhlExact,
    HhlSampled,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(BackendChoice::Classical),
            "hhl-exact" => Ok(BackendChoice::HhlExact),
            "hhl-sampled" => Ok(BackendChoice::HhlSampled),
            other => Err(format!(
                "backend: unknown value `{other}`, expected classical, hhl-exact, or hhl-sampled"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub sampling: SamplingConfig,
    pub noise: NoiseConfig,
    pub backend: BackendChoice,
    /// shot count for the sampled backend
    pub shots: u64,
    pub optimizer: FitOptions,
    /// regularization target and HHL circuit settings for quantum backends
    pub quantum: QuantumOpts,
    /// QPE-block compression budget; absent means exact evolution blocks
    pub aqc: Option<AqcBudget>,
    /// rows per channel in the prediction grid
    pub prediction_points: usize,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: NetworkConfig::default(),
            sampling: SamplingConfig::default(),
            noise: NoiseConfig::default(),
            backend: BackendChoice::Classical,
            shots: 100_000,
            optimizer: FitOptions::default(),
            quantum: QuantumOpts::default(),
            aqc: None,
            prediction_points: 200,
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.network.validate().map_err(|e| e.to_string())?;
        if self.sampling.grid_points == 0 {
            return Err("sampling.grid_points must be positive".into());
        }
        if self.prediction_points == 0 {
            return Err("prediction_points must be positive".into());
        }
        if let Some(s) = self
            .noise
            .std_ii
            .or(self.noise.std_vj)
            .or(self.noise.std_vi)
        {
            if s.partial_cmp(&0.0)
                .is_none_or(|o| o == std::cmp::Ordering::Less)
            {
                return Err("noise stds must be non-negative".into());
            }
        }
        Ok(())
    }

    /// Engine backend with the shot count and AQC budget folded in.
    pub fn engine_backend(&self) -> Backend {
        let mut q = self.quantum.clone();
        q.hhl.aqc = self.aqc.clone();
        match self.backend {
            BackendChoice::Classical => Backend::Classical,
            BackendChoice::HhlExact => {
                q.hhl.backend = hhl::Backend::ExactStatevector;
                Backend::HhlExact(q)
            }
            BackendChoice::HhlSampled => {
                q.hhl.backend = hhl::Backend::Sampled {
                    shots: self.shots,
                    seed: self.noise.seed,
                };
                Backend::HhlSampled(q)
            }
        }
    }
}
