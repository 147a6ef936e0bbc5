//! JSON run configuration: model, clock, initial condition, method and
//! Monte Carlo options. Phases are 1-based in configs and outputs.

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use fluidtime_core::toeplitz_expm::ExpmMethod;
use fluidtime_core::{ErlangClock, FluidModel};

/// Top-level configuration document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub clock: ClockSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub method: MethodSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub bph: Option<BphSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Generator rows (must be square, conservative, irreducible).
    pub generator: Vec<Vec<f64>>,
    /// Fluid rates, one per phase, none zero.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSpec {
    pub theta: f64,
    pub stages: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    /// Starting level (walk and queue).
    pub level: f64,
    /// Starting phase, 1-based.
    pub phase: usize,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            level: 0.0,
            phase: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSpec {
    /// One of `auto`, `direct`, `eps-circulant`, `embedding`.
    pub kind: MethodKind,
    pub epsilon: f64,
    /// Embedding size; 0 means `4 L`.
    pub embed_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Auto,
    Direct,
    EpsCirculant,
    Embedding,
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self {
            kind: MethodKind::Auto,
            epsilon: fluidtime_core::toeplitz_expm::DEFAULT_EPSILON,
            embed_k: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub paths: usize,
    pub seed: u64,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            paths: 100_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

/// Explicit bilateral phase-type triple; when absent the stage-extended
/// representation of the configured model and clock is used.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BphSpec {
    pub gamma: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub e: Vec<f64>,
}

impl RunConfig {
    /// Parse a config file.
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Build and validate the fluid model.
    pub fn build_model(&self) -> anyhow::Result<FluidModel> {
        let m = self.model.generator.len();
        if self.model.generator.iter().any(|row| row.len() != m) {
            bail!("generator rows must all have length {m}");
        }
        let mut a = DMatrix::zeros(m, m);
        for (i, row) in self.model.generator.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        let c = DVector::from_vec(self.model.rates.clone());
        Ok(FluidModel::new(a, c)?)
    }

    /// Build and validate the clock.
    pub fn build_clock(&self) -> anyhow::Result<ErlangClock> {
        Ok(ErlangClock::new(self.clock.theta, self.clock.stages)?)
    }

    /// Initial phase as a 0-based index, checked against the model.
    pub fn initial_phase_index(&self, model: &FluidModel) -> anyhow::Result<usize> {
        if self.initial.phase == 0 || self.initial.phase > model.num_phases() {
            bail!(
                "initial phase {} out of range 1..={}",
                self.initial.phase,
                model.num_phases()
            );
        }
        Ok(self.initial.phase - 1)
    }

    /// Translate the method spec (with CLI overrides applied beforehand).
    pub fn expm_method(&self, stages: usize) -> anyhow::Result<ExpmMethod> {
        Ok(match self.method.kind {
            MethodKind::Auto => ExpmMethod::Auto,
            MethodKind::Direct => ExpmMethod::Direct,
            MethodKind::EpsCirculant => {
                if !(self.method.epsilon > 0.0 && self.method.epsilon <= 1.0) {
                    bail!("epsilon must lie in (0, 1]");
                }
                ExpmMethod::EpsilonCirculant {
                    epsilon: self.method.epsilon,
                }
            }
            MethodKind::Embedding => {
                let k = if self.method.embed_k == 0 {
                    4 * stages
                } else {
                    self.method.embed_k
                };
                ExpmMethod::Embedding { blocks: k }
            }
        })
    }
}
