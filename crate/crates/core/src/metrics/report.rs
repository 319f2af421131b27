use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Result;

/// One reported number and the operation that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub operation: String,
}

/// Named metric values plus free-form metadata (dataset ids, model ids,
/// config hash).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, MetricValue>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64, operation: impl Into<String>) {
        self.values.insert(
            name.into(),
            MetricValue {
                value,
                operation: operation.into(),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|v| v.value)
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut r = MetricReport::new();
        r.insert("fq", 0.123456789012345, "forget_quality");
        r.set_metadata("seed", "7");
        let back = MetricReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get("fq"), Some(0.123456789012345));
    }
}
