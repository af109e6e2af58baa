use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::config::Variant;
use crate::backbone::model::ForecastModel;
use crate::error::{Error, Result};
use crate::params::ParameterStore;

/// Which parameters fine-tuning may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    /// Attention and FFN frozen. GPT-2 trains positions and every LayerNorm;
    /// Llama trains every RMSNorm gain and the rotary frequencies. Both train
    /// the input embedding and the head.
    #[default]
    Fpt,
    Full,
    /// Only the input embedding and the head.
    LinearProbe,
}

impl FromStr for FreezeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fpt" => Ok(Self::Fpt),
            "full" => Ok(Self::Full),
            "linear_probe" => Ok(Self::LinearProbe),
            other => Err(Error::Config(format!("unknown freeze mode `{other}`"))),
        }
    }
}

impl fmt::Display for FreezeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fpt => "fpt",
            Self::Full => "full",
            Self::LinearProbe => "linear_probe",
        })
    }
}

/// Whether `name` is trainable under `mode` for a backbone of `variant`.
pub fn is_trainable(variant: Variant, mode: FreezeMode, name: &str) -> bool {
    let io = name.starts_with("embed.") || name.starts_with("head.");
    match mode {
        FreezeMode::Full => true,
        FreezeMode::LinearProbe => io,
        FreezeMode::Fpt => {
            let norm = name.starts_with("final_norm.");
            io || norm
                || match variant {
                    Variant::Gpt2 => {
                        name == "pos.weight" || name.contains(".ln_1.") || name.contains(".ln_2.")
                    }
                    Variant::Llama => {
                        name == "rotary.inv_freq"
                            || name.contains(".rms_1.")
                            || name.contains(".rms_2.")
                    }
                }
        }
    }
}

pub fn apply_freeze_policy(model: &mut ForecastModel, mode: FreezeMode) -> &ParameterStore {
    let variant = model.config.variant;
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in names {
        model
            .params
            .set_trainable(&name, is_trainable(variant, mode, &name))
            .expect("name taken from the store");
    }
    &model.params
}
