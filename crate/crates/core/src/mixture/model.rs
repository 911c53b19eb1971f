use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance parametrization of a Gaussian mixture, written as
/// `Sigma_g = lambda_g D_g A_g D_g'` with volume `lambda`, shape `A`
/// and orientation `D`.
///
/// The three letters of the multivariate codes say whether volume, shape and
/// orientation are Equal across components, Variable, or the Identity. The
/// univariate codes `E` and `V` only carry a volume.
///
/// | code | volume | shape | orientation | covariance parameters |
/// |------|--------|-------|-------------|-----------------------|
/// | E    | equal  |   -   |      -      | 1                     |
/// | V    | var.   |   -   |      -      | G                     |
/// | EII  | equal  | I     | I           | 1                     |
/// | VII  | var.   | I     | I           | G                     |
/// | EEI  | equal  | equal | I           | p                     |
/// | VEI  | var.   | equal | I           | p + G - 1             |
/// | EEE  | equal  | equal | equal       | p(p+1)/2              |
/// | EEV  | equal  | equal | var.        | G p(p+1)/2 - (G-1)p   |
/// | VEV  | var.   | equal | var.        | G p(p+1)/2 - (G-1)(p-1) |
/// | VVV  | var.   | var.  | var.        | G p(p+1)/2            |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    E,
    V,
    EII,
    VII,
    EEI,
    VEI,
    EEE,
    EEV,
    VEV,
    VVV,
}

impl ModelName {
    pub const UNIVARIATE: [ModelName; 2] = [ModelName::E, ModelName::V];
    pub const MULTIVARIATE: [ModelName; 8] = [
        ModelName::EII,
        ModelName::VII,
        ModelName::EEI,
        ModelName::VEI,
        ModelName::EEE,
        ModelName::EEV,
        ModelName::VEV,
        ModelName::VVV,
    ];

    pub fn is_univariate(self) -> bool {
        matches!(self, ModelName::E | ModelName::V)
    }

    /// Whether every component shares one covariance matrix.
    pub fn equal_covariance(self) -> bool {
        matches!(
            self,
            ModelName::E | ModelName::EII | ModelName::EEI | ModelName::EEE
        )
    }

    /// Whether the component volumes are shared.
    pub fn equal_volume(self) -> bool {
        self.as_str().starts_with('E')
    }

    pub fn supports(self, p: usize) -> bool {
        match p {
            0 => false,
            1 => self.is_univariate(),
            _ => !self.is_univariate(),
        }
    }

    /// Number of free covariance parameters for `p` variables and `g` components.
    pub fn covariance_params(self, p: usize, g: usize) -> usize {
        let full = p * (p + 1) / 2;
        match self {
            ModelName::E | ModelName::EII => 1,
            ModelName::V | ModelName::VII => g,
            ModelName::EEI => p,
            ModelName::VEI => p + g - 1,
            ModelName::EEE => full,
            ModelName::EEV => g * full - (g - 1) * p,
            ModelName::VEV => g * full - (g - 1) * (p - 1),
            ModelName::VVV => g * full,
        }
    }

    /// Map a requested model list onto the models valid in dimension `p`.
    ///
    /// In one dimension a multivariate code collapses to its volume letter, so
    /// `{EEE, VVV}` becomes `{E, V}`. Univariate codes are dropped for `p >= 2`.
    pub fn for_dimension(models: &[ModelName], p: usize) -> Vec<ModelName> {
        let mut out: Vec<ModelName> = if p == 1 {
            models
                .iter()
                .map(|m| if m.equal_volume() { ModelName::E } else { ModelName::V })
                .collect()
        } else {
            models.iter().copied().filter(|m| m.supports(p)).collect()
        };
        out.sort();
        out.dedup();
        out
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::E => "E",
            ModelName::V => "V",
            ModelName::EII => "EII",
            ModelName::VII => "VII",
            ModelName::EEI => "EEI",
            ModelName::VEI => "VEI",
            ModelName::EEE => "EEE",
            ModelName::EEV => "EEV",
            ModelName::VEV => "VEV",
            ModelName::VVV => "VVV",
        }
    }

    /// Every code, univariate first.
    pub fn all() -> Vec<ModelName> {
        Self::UNIVARIATE
            .iter()
            .chain(Self::MULTIVARIATE.iter())
            .copied()
            .collect()
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::all()
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model name '{s}'")))
    }
}

/// Total number of free parameters: mixing weights, means and covariances.
pub fn count_params(model: ModelName, p: usize, g: usize) -> Result<usize> {
    if p == 0 || g == 0 {
        return Err(Error::InvalidInput(format!(
            "parameter count needs p >= 1 and G >= 1 (got p={p}, G={g})"
        )));
    }
    if !model.supports(p) {
        return Err(Error::UnsupportedModel { model, p });
    }
    Ok((g - 1) + g * p + model.covariance_params(p, g))
}
