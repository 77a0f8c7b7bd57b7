//! Registry of in-vehicle signals ranked by how much they leak about the
//! driver.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    VehicleTelematics,
    EnvironmentExternal,
    ConnectivityCommunication,
    InVehicleNetwork,
    UserInteractionInfotainment,
    SensorData,
    PowerEnergy,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::High, Priority::Medium, Priority::Low];

    pub fn color(self) -> &'static str {
        match self {
            Priority::High => "red",
            Priority::Medium => "amber",
            Priority::Low => "green",
        }
    }
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::VehicleTelematics,
        Category::EnvironmentExternal,
        Category::ConnectivityCommunication,
        Category::InVehicleNetwork,
        Category::UserInteractionInfotainment,
        Category::SensorData,
        Category::PowerEnergy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::VehicleTelematics => "Vehicle Telematics Signal",
            Category::EnvironmentExternal => "Environment and External Interaction Signal",
            Category::ConnectivityCommunication => "Connectivity and Communication Signal",
            Category::InVehicleNetwork => "In-Vehicle Network Signal",
            Category::UserInteractionInfotainment => "User Interaction and Infotainment Signal",
            Category::SensorData => "Sensor Data",
            Category::PowerEnergy => "Power and Energy Management Signals",
        }
    }
}

fn snake(v: impl Serialize) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&snake(self))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&snake(self))
    }
}

fn parse_choice<T: Copy + fmt::Display>(s: &str, all: &[T], what: &str) -> Result<T> {
    let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
    all.iter().copied().find(|v| v.to_string() == norm).ok_or_else(|| {
        let names: Vec<String> = all.iter().map(ToString::to_string).collect();
        Error::InvalidArgument(format!("unknown {what} {s:?}; expected one of {}", names.join(", ")))
    })
}

impl FromStr for Priority {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_choice(s, &Priority::ALL, "priority")
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_choice(s, &Category::ALL, "category")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaAssessment {
    /// Directly identifies the driver or tracks their behaviour.
    pub identifies: bool,
    /// Readily obtainable by an attacker.
    pub obtainable: bool,
    /// Known attacks with malicious intent.
    pub malicious_intent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalRecord {
    pub name: String,
    pub source: String,
    pub data_type: String,
    pub leakage: String,
    pub category: Category,
    pub priority: Priority,
    pub assessment: CriteriaAssessment,
    pub basis: String,
}

pub fn classify_priority(a: CriteriaAssessment) -> Priority {
    if a.identifies && a.obtainable && a.malicious_intent {
        Priority::High
    } else if a.identifies || (a.obtainable && a.malicious_intent) {
        Priority::Medium
    } else {
        Priority::Low
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    signals: Vec<SignalRecord>,
}

impl Registry {
    /// The registry bundled with the library.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("bundled taxonomy is valid")
    }

    /// Parses a registry, rejecting duplicate names and rows whose listed
    /// priority disagrees with their assessment.
    pub fn from_json(text: &str) -> Result<Self> {
        let signals: Vec<SignalRecord> = serde_json::from_str(text)?;
        let mut seen = HashSet::new();
        for s in &signals {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate signal {:?}", s.name)));
            }
            let derived = classify_priority(s.assessment);
            if derived != s.priority {
                return Err(Error::InvalidArgument(format!(
                    "signal {:?} is listed as {} but its assessment gives {derived}",
                    s.name, s.priority
                )));
            }
        }
        Ok(Registry { signals })
    }

    pub fn signals(&self) -> &[SignalRecord] {
        &self.signals
    }

    /// Records in registry order; both filters must match when given.
    pub fn list_signals(&self, priority: Option<Priority>, category: Option<Category>) -> Vec<&SignalRecord> {
        self.signals
            .iter()
            .filter(|s| priority.is_none_or(|p| s.priority == p))
            .filter(|s| category.is_none_or(|c| s.category == c))
            .collect()
    }
}
