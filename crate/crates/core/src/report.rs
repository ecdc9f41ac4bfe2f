//! JSON run reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// How a measured value is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `measured ≤ tolerance`
    AtMost,
    /// `measured ≥ tolerance`
    AtLeast,
    /// A boolean outcome; `measured` is 1 or 0 and the tolerance is unused.
    Holds,
}

/// One pass/fail verdict with the number behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            passed: measured <= tolerance,
            measured: finite_or_max(measured),
            tolerance,
            relation: Relation::AtMost,
            detail: String::new(),
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            passed: measured >= tolerance,
            measured: finite_or_max(measured),
            tolerance,
            relation: Relation::AtLeast,
            detail: String::new(),
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Check {
        Check {
            name: name.into(),
            passed: ok,
            measured: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            relation: Relation::Holds,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Check {
        self.detail = detail.into();
        self
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let rel = match self.relation {
            Relation::AtMost => format!("{:.3e} <= {:.1e}", self.measured, self.tolerance),
            Relation::AtLeast => format!("{:.3e} >= {:.1e}", self.measured, self.tolerance),
            Relation::Holds => String::new(),
        };
        let mut s = format!("{verdict}  {}", self.name);
        if !rel.is_empty() {
            s.push_str(&format!("  [{rel}]"));
        }
        if !self.detail.is_empty() {
            s.push_str(&format!("  {}", self.detail));
        }
        s
    }
}

// JSON has no infinities or NaN.
fn finite_or_max(v: f64) -> f64 {
    if v.is_nan() {
        f64::MAX
    } else {
        v.clamp(f64::MIN, f64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub command: String,
    pub config: Value,
    pub eigenvalues: Vec<f64>,
    pub checks: Vec<Check>,
    pub payload: BTreeMap<String, Value>,
    /// Files written next to the report, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: Option<&RunConfig>) -> RunReport {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        RunReport {
            tool: "critpot".into(),
            version: TOOL_VERSION.into(),
            timestamp,
            command: command.into(),
            config: config.map_or(Value::Null, |c| serde_json::to_value(c).unwrap_or(Value::Null)),
            eigenvalues: Vec::new(),
            checks: Vec::new(),
            payload: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn insert(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.payload.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()? + "\n")?;
        Ok(())
    }

    /// Same report with the timestamp zeroed, for reproducibility comparisons.
    pub fn without_timestamp(&self) -> RunReport {
        RunReport {
            timestamp: 0,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut r = RunReport::new("spectrum", None);
        r.eigenvalues = vec![0.0, 0.999_967_872_456_123_4, 1.0 / 3.0];
        r.checks.push(Check::at_most("residual", 1.234e-13, 1e-8));
        r.checks.push(Check::at_least("margin", f64::INFINITY, 1e-8));
        r.insert("note", "x").unwrap();
        let back = RunReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn check_lines() {
        assert!(Check::at_most("a", 2.0, 1.0).line().starts_with("FAIL"));
        assert!(Check::holds("b", true).line().starts_with("PASS  b"));
    }
}
