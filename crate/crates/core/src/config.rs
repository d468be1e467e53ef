//! TOML documents describing scenarios and designs.
//!
//! Both document kinds carry a `schema` tag and reject unknown fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AllocationSchedule, AnalysisSchedule, GroupSequentialDesign, ScenarioSpec, StoppingBoundaries,
    VarianceComponents,
};
use crate::optimize::{fixed_sample_reference, near_balanced_allocation, FixedSampleReference};

pub const SCENARIO_SCHEMA: &str = "swgs-scenario/1";
pub const DESIGN_SCHEMA: &str = "swgs-design/1";

/// Largest `m` searched when `m_sw` is derived from the reference design.
pub const REFERENCE_M_MAX: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub clusters: usize,
    pub periods: usize,
    pub analysis_periods: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub sigma_c2: f64,
    pub sigma_e2: f64,
    #[serde(default = "equal_weights")]
    pub weights: [f64; 3],
    /// Reference sample size; derived from the near-balanced design when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_sw: Option<f64>,
}

fn equal_weights() -> [f64; 3] {
    [1.0 / 3.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDoc {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub clusters: usize,
    pub periods: usize,
    pub analysis_periods: Vec<usize>,
    pub m: usize,
    pub switch_times: Vec<usize>,
    pub futility: Vec<f64>,
    pub efficacy: Vec<f64>,
    pub sigma_c2: f64,
    pub sigma_e2: f64,
    /// Informational only; ignored when the design is loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<DesignSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSummary {
    pub type_i: f64,
    pub power: f64,
    pub enm_null: f64,
    pub enm_alt: f64,
    pub max_measurements: f64,
    pub objective: f64,
    pub penalized_objective: f64,
}

/// A parsed scenario with its derived reference design, if one was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub spec: ScenarioSpec,
    pub reference: Option<FixedSampleReference>,
}

fn parse_error(location: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.to_string(),
        message: message.into(),
    }
}

fn field_error(location: &str, field: &str, err: Error) -> Error {
    parse_error(&format!("{location}: field `{field}`"), err.to_string())
}

fn check_schema(found: &str, expected: &str, location: &str) -> Result<()> {
    if found != expected {
        return Err(parse_error(
            &format!("{location}: field `schema`"),
            format!("expected \"{expected}\", found \"{found}\""),
        ));
    }
    Ok(())
}

impl ScenarioDoc {
    pub fn into_scenario(self, location: &str) -> Result<Scenario> {
        check_schema(&self.schema, SCENARIO_SCHEMA, location)?;
        let vc = VarianceComponents::new(self.sigma_c2, self.sigma_e2)
            .map_err(|e| field_error(location, "sigma_c2/sigma_e2", e))?;
        let schedule = AnalysisSchedule::new(self.analysis_periods, self.periods)
            .map_err(|e| field_error(location, "analysis_periods", e))?;
        let (m_sw, reference) = match self.m_sw {
            Some(v) => (v, None),
            None => {
                let alloc = near_balanced_allocation(self.clusters, self.periods)
                    .map_err(|e| field_error(location, "clusters", e))?;
                let r = fixed_sample_reference(
                    &alloc,
                    self.alpha,
                    self.beta,
                    self.delta,
                    &vc,
                    REFERENCE_M_MAX,
                )?;
                (r.m_sw, Some(r))
            }
        };
        let spec = ScenarioSpec::new(
            self.clusters,
            self.periods,
            self.alpha,
            self.beta,
            self.delta,
            vc,
            m_sw,
            self.weights,
            schedule,
        )
        .map_err(|e| parse_error(location, e.to_string()))?;
        Ok(Scenario {
            name: self.name,
            spec,
            reference,
        })
    }
}

impl DesignDoc {
    pub fn into_design(self, location: &str) -> Result<GroupSequentialDesign> {
        check_schema(&self.schema, DESIGN_SCHEMA, location)?;
        if self.switch_times.len() != self.clusters {
            return Err(parse_error(
                &format!("{location}: field `switch_times`"),
                format!(
                    "expected {} switching times (one per cluster), found {}",
                    self.clusters,
                    self.switch_times.len()
                ),
            ));
        }
        let allocation = AllocationSchedule::new(self.switch_times, self.periods)
            .map_err(|e| field_error(location, "switch_times", e))?;
        let schedule = AnalysisSchedule::new(self.analysis_periods, self.periods)
            .map_err(|e| field_error(location, "analysis_periods", e))?;
        let vc = VarianceComponents::new(self.sigma_c2, self.sigma_e2)
            .map_err(|e| field_error(location, "sigma_c2/sigma_e2", e))?;
        let boundaries = StoppingBoundaries::new(self.futility, self.efficacy)?;
        GroupSequentialDesign::new(allocation, schedule, boundaries, self.m, vc)
    }

    pub fn from_design(design: &GroupSequentialDesign, name: Option<String>) -> Self {
        Self {
            schema: DESIGN_SCHEMA.to_string(),
            name,
            clusters: design.clusters(),
            periods: design.periods(),
            analysis_periods: design.schedule.periods().to_vec(),
            m: design.m,
            switch_times: design.allocation.switch_times().to_vec(),
            futility: design.boundaries.futility_bounds().to_vec(),
            efficacy: design.boundaries.efficacy_bounds(),
            sigma_c2: design.vc.sigma_c2,
            sigma_e2: design.vc.sigma_e2,
            summary: None,
        }
    }
}

pub fn parse_scenario(text: &str, location: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| parse_error(location, e.to_string()))?;
    doc.into_scenario(location)
}

pub fn parse_design(text: &str, location: &str) -> Result<GroupSequentialDesign> {
    let doc: DesignDoc = toml::from_str(text).map_err(|e| parse_error(location, e.to_string()))?;
    doc.into_design(location)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| parse_error(&path.display().to_string(), e.to_string()))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    parse_scenario(&read(path)?, &path.display().to_string())
}

pub fn load_design(path: impl AsRef<Path>) -> Result<GroupSequentialDesign> {
    let path = path.as_ref();
    parse_design(&read(path)?, &path.display().to_string())
}

pub fn design_to_toml(doc: &DesignDoc) -> String {
    toml::to_string(doc).expect("design documents always serialise")
}
