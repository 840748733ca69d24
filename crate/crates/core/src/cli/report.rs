//! Identity reports written as `report.json`.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};

/// How a residual is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Passes when `residual <= tolerance`.
    AtMost,
    /// Passes when `residual > tolerance`; used by negative controls.
    Exceeds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityEntry {
    pub name: String,
    pub anchor: String,
    /// `None` when the check could not be evaluated (serialized as null).
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl IdentityEntry {
    pub fn at_most(name: impl Into<String>, anchor: &str, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            residual: residual.is_finite().then_some(residual),
            tolerance,
            comparison: Comparison::AtMost,
            passed: residual <= tolerance,
            detail: None,
        }
    }

    pub fn exceeds(name: impl Into<String>, anchor: &str, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            residual: residual.is_finite().then_some(residual),
            tolerance,
            comparison: Comparison::Exceeds,
            passed: residual > tolerance,
            detail: None,
        }
    }

    /// Entry for a check that raised an error instead of producing a number.
    pub fn failed(name: impl Into<String>, anchor: &str, tolerance: f64, err: &Error) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            residual: None,
            tolerance,
            comparison: Comparison::AtMost,
            passed: false,
            detail: Some(err.to_string()),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Build fingerprint; contains nothing that varies between runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fingerprint {
    pub tool: &'static str,
    pub version: &'static str,
    pub os: &'static str,
    pub arch: &'static str,
    pub float: &'static str,
    pub parallelism: &'static str,
}

impl Fingerprint {
    pub fn current() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            float: "f64",
            parallelism: "sequential",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub entries: Vec<IdentityEntry>,
    pub environment: Fingerprint,
}

impl IdentityReport {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Self {
            scenario: scenario.into(),
            seed,
            passed: true,
            entries: Vec::new(),
            environment: Fingerprint::current(),
        }
    }

    /// Append entries; names must stay unique.
    pub fn extend(&mut self, entries: impl IntoIterator<Item = IdentityEntry>) -> Result<()> {
        let mut seen: BTreeSet<String> = self.entries.iter().map(|e| e.name.clone()).collect();
        for e in entries {
            if !seen.insert(e.name.clone()) {
                return Err(Error::Identity(format!("duplicate report entry {:?}", e.name)));
            }
            self.passed &= e.passed;
            self.entries.push(e);
        }
        Ok(())
    }

    pub fn failures(&self) -> impl Iterator<Item = &IdentityEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparisons() {
        assert!(IdentityEntry::at_most("a", "x", 0.0, 0.0).passed);
        assert!(!IdentityEntry::at_most("a", "x", f64::NAN, 1.0).passed);
        assert!(IdentityEntry::exceeds("a", "x", 2.0, 1.0).passed);
        assert!(!IdentityEntry::exceeds("a", "x", 1.0, 1.0).passed);
        assert_eq!(IdentityEntry::at_most("a", "x", f64::INFINITY, 1.0).residual, None);
    }

    #[test]
    fn duplicates_rejected_and_pass_flag_tracks_entries() {
        let mut r = IdentityReport::new("s", 1);
        r.extend([IdentityEntry::at_most("a", "x", 0.0, 0.0)]).unwrap();
        assert!(r.passed);
        assert!(r.extend([IdentityEntry::at_most("a", "x", 0.0, 0.0)]).is_err());
        r.extend([IdentityEntry::at_most("b", "x", 1.0, 0.0)]).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures().count(), 1);
        let j = r.to_json();
        assert!(j.contains("\"comparison\": \"at_most\""));
    }
}
