use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::BlockConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    Desk,
}

/// Signal the complex ratio filter is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfReference {
    Farend,
    Mic,
}

/// How the output of `t(·)` forms the next state from the candidate `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionForm {
    /// The output layers produce the state directly.
    Direct,
    /// `W + out`.
    Additive,
    /// `W ∘ (1 + out)`, a per-bin complex transition.
    Multiplicative,
}

/// Missing fields in JSON take the desk values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: Scale,
    pub block: BlockConfig,
    /// One-sided bins, `fft_size / 2 + 1`.
    pub n_bins: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub t_lstm_hidden: usize,
    pub psi_lstm_hidden: usize,
    pub crf_time_taps: usize,
    /// Odd number of frequency taps centred on the bin.
    pub crf_freq_taps: usize,
    pub feature_proj_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub crf_reference: CrfReference,
    pub t_form: TransitionForm,
    /// Fixed gain on the `t(·)` output layers.
    pub t_output_scale: f64,
    /// Decay of the running feature statistics.
    pub feature_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            scale: Scale::Desk,
            block: BlockConfig {
                hop: 32,
                fft_size: 64,
            },
            n_bins: 33,
            lstm_layers: 2,
            lstm_hidden: 32,
            t_lstm_hidden: 32,
            psi_lstm_hidden: 32,
            crf_time_taps: 3,
            crf_freq_taps: 3,
            feature_proj_dim: 32,
            conv_channels: 18,
            conv_kernel: 3,
            crf_reference: CrfReference::Farend,
            t_form: TransitionForm::Multiplicative,
            t_output_scale: 0.1,
            feature_decay: 0.999,
        }
    }

    pub fn paper() -> Self {
        Self {
            scale: Scale::Paper,
            block: BlockConfig::DEFAULT_16K,
            n_bins: 257,
            lstm_layers: 4,
            lstm_hidden: 257,
            t_lstm_hidden: 256,
            psi_lstm_hidden: 256,
            feature_proj_dim: 257,
            ..Self::desk()
        }
    }

    pub fn crf_taps(&self) -> usize {
        self.crf_time_taps * self.crf_freq_taps
    }

    /// Features per bin before projection.
    pub const FEATURES_PER_BIN: usize = 10;

    pub fn feature_dim(&self) -> usize {
        Self::FEATURES_PER_BIN * self.n_bins
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.n_bins != self.block.bins() {
            return Err(Error::Config(format!(
                "n_bins {} does not match fft_size {} (expected {})",
                self.n_bins,
                self.block.fft_size,
                self.block.bins()
            )));
        }
        let dims = [
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("t_lstm_hidden", self.t_lstm_hidden),
            ("psi_lstm_hidden", self.psi_lstm_hidden),
            ("crf_time_taps", self.crf_time_taps),
            ("crf_freq_taps", self.crf_freq_taps),
            ("feature_proj_dim", self.feature_proj_dim),
            ("conv_channels", self.conv_channels),
            ("conv_kernel", self.conv_kernel),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.crf_freq_taps.is_multiple_of(2) || self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(
                "crf_freq_taps and conv_kernel must be odd".into(),
            ));
        }
        if !(self.feature_decay > 0.0 && self.feature_decay < 1.0) {
            return Err(Error::Config("feature_decay must lie in (0, 1)".into()));
        }
        if !(self.t_output_scale > 0.0 && self.t_output_scale.is_finite()) {
            return Err(Error::Config("t_output_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Which learned components are active, named as in the ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "g_A")]
    GA,
    #[serde(rename = "g_t")]
    GT,
    #[serde(rename = "g_t_A")]
    GTA,
    #[serde(rename = "g_psi_A")]
    GPsiA,
    #[serde(rename = "g_psi_t_A")]
    GPsiTA,
    #[serde(rename = "A")]
    A,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::G,
        Variant::GA,
        Variant::GT,
        Variant::GTA,
        Variant::GPsiA,
        Variant::GPsiTA,
        Variant::A,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::G => "g",
            Variant::GA => "g_A",
            Variant::GT => "g_t",
            Variant::GTA => "g_t_A",
            Variant::GPsiA => "g_psi_A",
            Variant::GPsiTA => "g_psi_t_A",
            Variant::A => "A",
        }
    }

    pub fn hooks(self) -> HookSet {
        let name = self.name();
        HookSet {
            g: name.starts_with('g'),
            a: name.ends_with('A'),
            t: name.contains("_t"),
            psi: name.contains("psi"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant '{s}', expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Active hooks. All false is the classical filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HookSet {
    pub g: bool,
    pub a: bool,
    pub t: bool,
    pub psi: bool,
}

impl HookSet {
    pub const NONE: HookSet = HookSet {
        g: false,
        a: false,
        t: false,
        psi: false,
    };

    pub const ALL: HookSet = HookSet {
        g: true,
        a: true,
        t: true,
        psi: true,
    };

    /// Whether the shared recurrent trunk has to run.
    pub fn uses_trunk(&self) -> bool {
        self.g || self.a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
        let bad = ModelConfig {
            n_bins: 32,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variant_hooks() {
        assert_eq!(
            Variant::GTA.hooks(),
            HookSet {
                g: true,
                a: true,
                t: true,
                psi: false
            }
        );
        assert_eq!(
            Variant::A.hooks(),
            HookSet {
                a: true,
                ..HookSet::NONE
            }
        );
        assert_eq!(Variant::GPsiTA.hooks(), HookSet::ALL);
        assert_eq!(
            Variant::G.hooks(),
            HookSet {
                g: true,
                ..HookSet::NONE
            }
        );
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("g_x".parse::<Variant>().is_err());
    }
}
