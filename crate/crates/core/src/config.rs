//! TOML recipe files: one file carries the model and, optionally, the
//! settings of the experiment run on it.
//!
//! ```toml
//! [scalars]
//! horizon = 2.0            # days
//! discount = 0.00005       # per day
//! initial_inventory = 6000.0
//! initial_price = 1.0
//! max_rate = 9000.0        # shares per day
//!
//! [chain]
//! generator = [[-4.0, 4.0], [4.0, -4.0]]
//! initial = [0.5, 0.5]
//!
//! [jumps]
//! marks = [0.001, -0.001]
//! intensity = [[1000.0, 900.0], [900.0, 1000.0]]   # rows: states
//! impact = [0.0, 7e-6]
//!
//! [impact]
//! scale = 5e-11
//! exponent = 0.6
//!
//! [terminal]
//! form = "zero"
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ChainSpec, JumpSpec, ModelSpec, PiecewiseLinear, TemporaryImpact, TerminalValue, TimeMultiplier,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarsSection {
    pub horizon: f64,
    pub discount: f64,
    pub initial_inventory: f64,
    pub initial_price: f64,
    pub max_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub generator: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsSection {
    pub marks: Vec<f64>,
    pub intensity: Vec<Vec<f64>>,
    pub impact: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_multiplier: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactSection {
    #[serde(default)]
    pub scale: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

fn default_exponent() -> f64 {
    0.6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalForm {
    Zero,
    Saturating,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub form: TerminalForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nt: Option<usize>,
    pub nw: Option<usize>,
    pub npi: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub dt_target: Option<f64>,
}

/// Which policies a comparison pits against each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Policy specifiers, e.g. `"filter"`, `"deterministic"`, `"constant:3000"`.
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Horizon of the simulated event data, days.
    pub data_horizon: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub states: Option<usize>,
    pub estimate_generator: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Rate caps as multiples of `w0 / T`.
    pub max_rate_multiples: Vec<f64>,
}

/// A parsed recipe file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub scalars: ScalarsSection,
    pub chain: ChainSection,
    pub jumps: JumpsSection,
    pub impact: ImpactSection,
    pub terminal: TerminalSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Recipe {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("recipe serializes")
    }

    pub fn from_model(spec: &ModelSpec) -> Self {
        Self {
            scalars: ScalarsSection {
                horizon: spec.horizon,
                discount: spec.discount,
                initial_inventory: spec.initial_inventory,
                initial_price: spec.initial_price,
                max_rate: spec.max_rate,
            },
            chain: ChainSection::from(&spec.chain),
            jumps: JumpsSection::from(&spec.jumps),
            impact: match &spec.impact {
                TemporaryImpact::Power { scale, exponent } => {
                    ImpactSection { scale: *scale, exponent: *exponent, table: None }
                }
                TemporaryImpact::Table(f) => ImpactSection { scale: 0.0, exponent: 1.0, table: Some(f.knots()) },
            },
            terminal: match &spec.terminal {
                TerminalValue::Zero => TerminalSection { form: TerminalForm::Zero, theta: None, table: None },
                TerminalValue::Saturating { theta } => {
                    TerminalSection { form: TerminalForm::Saturating, theta: Some(*theta), table: None }
                }
                TerminalValue::Table(f) => {
                    TerminalSection { form: TerminalForm::Custom, theta: None, table: Some(f.knots()) }
                }
            },
            grid: None,
            simulation: None,
            compare: None,
            calibration: None,
            sweep: None,
        }
    }

    /// Builds and validates the model described by the recipe.
    pub fn model(&self) -> Result<ModelSpec> {
        let chain = ChainSpec::new(self.chain.generator.clone(), self.chain.initial.clone())
            .map_err(|e| Error::Parse(format!("[chain]: {e}")))?;
        let multiplier = match &self.jumps.time_multiplier {
            None => TimeMultiplier::Constant,
            Some(knots) => TimeMultiplier::Table(PiecewiseLinear::new(knots)?),
        };
        let jumps = JumpSpec::new(
            self.jumps.marks.clone(),
            self.jumps.intensity.clone(),
            self.jumps.impact.clone(),
            multiplier,
        )
        .map_err(|e| Error::Parse(format!("[jumps]: {e}")))?;
        let impact = match &self.impact.table {
            Some(knots) => TemporaryImpact::Table(PiecewiseLinear::new(knots)?),
            None => TemporaryImpact::Power { scale: self.impact.scale, exponent: self.impact.exponent },
        };
        let terminal = match self.terminal.form {
            TerminalForm::Zero => TerminalValue::Zero,
            TerminalForm::Saturating => TerminalValue::Saturating {
                theta: self
                    .terminal
                    .theta
                    .ok_or_else(|| Error::Parse("[terminal]: form \"saturating\" requires theta".into()))?,
            },
            TerminalForm::Custom => TerminalValue::Table(PiecewiseLinear::new(
                self.terminal
                    .table
                    .as_deref()
                    .ok_or_else(|| Error::Parse("[terminal]: form \"custom\" requires table".into()))?,
            )?),
        };
        let spec = ModelSpec {
            chain,
            jumps,
            impact,
            terminal,
            discount: self.scalars.discount,
            horizon: self.scalars.horizon,
            initial_inventory: self.scalars.initial_inventory,
            initial_price: self.scalars.initial_price,
            max_rate: self.scalars.max_rate,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<&ChainSpec> for ChainSection {
    fn from(c: &ChainSpec) -> Self {
        Self { generator: c.generator_rows(), initial: c.initial().to_vec() }
    }
}

impl From<&JumpSpec> for JumpsSection {
    fn from(j: &JumpSpec) -> Self {
        Self {
            marks: j.marks().to_vec(),
            intensity: j.base_rows(),
            impact: j.impact().to_vec(),
            time_multiplier: match j.time_multiplier() {
                TimeMultiplier::Constant => None,
                TimeMultiplier::Table(f) => Some(f.knots()),
            },
        }
    }
}

/// Parameter-file fragment holding only the fitted chain and jump rates;
/// it can be pasted over the matching sections of a recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterFragment {
    pub chain: ChainSection,
    pub jumps: JumpsSection,
}

impl ParameterFragment {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("fragment serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}
