//! Config loading, canceller construction and error classification shared
//! by the subcommands.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nkaec::filters::{Canceller, Fdkf, FdkfConfig, Nlms, NlmsConfig};
use nkaec::neural::{ModelConfig, ModelWeights, NeuralCanceller, NeuralKalman, Variant};
use nkaec::training::sidecar_path;
use nkaec::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads a JSON config, or returns the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn log_config<T: Serialize>(command: &str, cfg: &T) -> Result<()> {
    eprintln!(
        "nkaec {command}: resolved config {}",
        serde_json::to_string(cfg)?
    );
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Exit status for an error: 2 for bad configuration or input, 3 for
/// numerical divergence, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => 3,
        Error::Io { .. } | Error::Autodiff(_) => 1,
        _ => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Nlms,
    Fdkf,
    Neuralkalman,
}

/// Settings for the cancellers. `model` falls back to the configuration
/// stored next to the weights file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub fdkf: FdkfConfig,
    pub nlms: NlmsConfig,
    pub model: Option<ModelConfig>,
}

/// Fully resolved canceller choice.
#[derive(Debug, Clone, Serialize)]
pub struct CancellerPlan {
    pub algo: Algo,
    pub variant: Option<Variant>,
    pub weights: Option<PathBuf>,
    pub fdkf: FdkfConfig,
    pub nlms: NlmsConfig,
    pub model: Option<ModelConfig>,
}

#[derive(Deserialize)]
struct Sidecar {
    variant: Variant,
    config: SidecarConfig,
}

#[derive(Deserialize)]
struct SidecarConfig {
    model: ModelConfig,
}

fn read_sidecar(weights: &Path) -> Result<Option<Sidecar>> {
    let path = sidecar_path(weights);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl CancellerPlan {
    /// Fills the model configuration and variant from the weights sidecar
    /// when they were not given explicitly.
    pub fn resolve(
        algo: Algo,
        variant: Option<Variant>,
        weights: Option<&Path>,
        cfg: AlgoConfig,
    ) -> Result<Self> {
        let mut plan = CancellerPlan {
            algo,
            variant: None,
            weights: None,
            fdkf: cfg.fdkf,
            nlms: cfg.nlms,
            model: None,
        };
        if algo != Algo::Neuralkalman {
            if variant.is_some() || weights.is_some() {
                return Err(Error::Config(
                    "--variant and --weights apply to --algo neuralkalman only".into(),
                ));
            }
            return Ok(plan);
        }
        let weights = weights
            .ok_or_else(|| Error::Config("--algo neuralkalman requires --weights".into()))?;
        let sidecar = read_sidecar(weights)?;
        let model = cfg
            .model
            .or(sidecar.as_ref().map(|s| s.config.model))
            .unwrap_or_default();
        model.validate()?;
        plan.variant = Some(
            variant
                .or(sidecar.as_ref().map(|s| s.variant))
                .unwrap_or(Variant::GTA),
        );
        plan.fdkf.block = model.block;
        plan.model = Some(model);
        plan.weights = Some(weights.to_path_buf());
        Ok(plan)
    }

    /// True when the canceller reports a learned transition factor.
    pub fn traces_a(&self) -> bool {
        self.variant.is_some_and(|v| v.hooks().a)
    }

    pub fn build(&self) -> Result<Box<dyn Canceller>> {
        Ok(match self.algo {
            Algo::Nlms => Box::new(Nlms::new(self.nlms)?),
            Algo::Fdkf => Box::new(Fdkf::new(self.fdkf)?),
            Algo::Neuralkalman => {
                let (Some(model), Some(variant), Some(path)) =
                    (self.model, self.variant, &self.weights)
                else {
                    return Err(Error::Config(
                        "neural canceller is not fully configured".into(),
                    ));
                };
                let weights = ModelWeights::load(path, &model)?;
                let nk = NeuralKalman::new(model, self.fdkf, variant.hooks())?;
                Box::new(NeuralCanceller::new(nk, &weights)?)
            }
        })
    }
}

pub fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}
