use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{predict_proba, Network, Tensor};
use crate::repr::{encode, AutoencoderModel, TpcaModel};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Passive,
    Active,
    Naive,
    InSitu,
    Instance,
    NoTransfer,
    NoTransferAe,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Passive,
        Method::Active,
        Method::Naive,
        Method::InSitu,
        Method::Instance,
        Method::NoTransfer,
        Method::NoTransferAe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Passive => "passive",
            Method::Active => "active",
            Method::Naive => "naive",
            Method::InSitu => "in-situ",
            Method::Instance => "instance",
            Method::NoTransfer => "no-transfer",
            Method::NoTransferAe => "no-transfer-ae",
        }
    }

    /// Methods that read target labels (retrospectively).
    pub fn uses_target_labels(self) -> bool {
        matches!(self, Method::NoTransfer | Method::NoTransferAe)
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
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('-', "_") == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method `{s}`; expected one of {}",
                    Method::ALL.map(|m| m.name()).join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Representation {
    Raw,
    Autoencoder {
        model: AutoencoderModel,
    },
    AutoencoderTpca {
        model: AutoencoderModel,
        tpca: TpcaModel,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    Network {
        network: Network,
    },
    /// Fixed score for every student.
    Constant {
        value: f64,
    },
}

/// A trained predictor for dropout at `week`, taking features of weeks
/// `1..week-1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeeklyPredictor {
    pub format_version: u32,
    pub method: Method,
    pub week: usize,
    pub representation: Representation,
    pub head: Head,
    /// Use only the last `window` input weeks.
    #[serde(default)]
    pub window: Option<usize>,
    /// Set when the method had no defined model for this week and fell back
    /// to a constant.
    #[serde(default)]
    pub fallback: bool,
}

impl WeeklyPredictor {
    pub(crate) fn new(
        method: Method,
        week: usize,
        representation: Representation,
        head: Head,
    ) -> Self {
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            method,
            week,
            representation,
            head,
            window: None,
            fallback: false,
        }
    }

    /// Dropout probability per student from `[n, week-1, types]` features.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<f64>> {
        let shape = features.shape();
        if shape.len() != 3 || shape[1] != self.week - 1 {
            return Err(Error::shape(format!(
                "week-{} predictor needs [n, {}, types] features, got {:?}",
                self.week,
                self.week - 1,
                shape
            )));
        }
        let n = shape[0];
        if n == 0 {
            return Ok(Vec::new());
        }
        let x = match self.window {
            Some(w) => features.time_window(shape[1] - w, shape[1])?,
            None => features.clone(),
        };
        let net = match &self.head {
            Head::Constant { value } => return Ok(vec![*value; n]),
            Head::Network { network } => network,
        };
        let input = match &self.representation {
            Representation::Raw => x,
            Representation::Autoencoder { model } => encode(model, &x)?.into_tensor(),
            Representation::AutoencoderTpca { model, tpca } => {
                tpca.apply(&encode(model, &x)?)?.into_tensor()
            }
        };
        predict_proba(net, &input)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: WeeklyPredictor = serde_json::from_str(text)?;
        if p.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "predictor bundle version {} (supported: {BUNDLE_FORMAT_VERSION})",
                p.format_version
            )));
        }
        p.restore()
    }

    fn restore(self) -> Result<Self> {
        let representation = match self.representation {
            Representation::Raw => Representation::Raw,
            Representation::Autoencoder { model } => Representation::Autoencoder {
                model: model.restore()?,
            },
            Representation::AutoencoderTpca { model, tpca } => Representation::AutoencoderTpca {
                model: model.restore()?,
                tpca,
            },
        };
        let head = match self.head {
            Head::Network { network } => Head::Network {
                network: network.restore()?,
            },
            c => c,
        };
        Ok(Self {
            representation,
            head,
            ..self
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
