//! Mock scenario files: scripted meta-agent steps plus executor reply rules.
//!
//! ```json
//! {
//!   "steps": [
//!     {"responses": ["analysis\n```python\ndef workflow(agent, task): ...```"],
//!      "true_accuracy": [0.5]}
//!   ],
//!   "executor": {
//!     "rules": [{"contains": "capital of France", "responses": ["Paris"]}],
//!     "default": "I am not sure."
//!   }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub steps: Vec<ScenarioStep>,
    #[serde(default)]
    pub executor: ExecutorScript,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub responses: Vec<String>,
    /// Declared score of each scripted candidate, for test harnesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_accuracy: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutorScript {
    #[serde(default)]
    pub rules: Vec<ExecutorRule>,
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorRule {
    /// Substring searched for in the concatenated message contents.
    pub contains: String,
    pub responses: Vec<String>,
}

impl Scenario {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        crate::util::read_json(path)
    }
}
