//! Report documents emitted by every command.

use serde::Serialize;
use serde_json::Value;

use crate::certcheck::ConditionReport;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Failed,
    Error,
}

impl Status {
    /// 0 when every check passed, 2 on a failed check, 1 on error.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Passed => 0,
            Status::Failed => 2,
            Status::Error => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub worst_point: Option<(i64, Vec<f64>)>,
    pub samples_checked: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckEntry {
    pub fn from_report(name: Option<&str>, rep: &ConditionReport) -> Self {
        let name = name.map(str::to_string).unwrap_or_else(|| {
            serde_json::to_value(rep.condition)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default()
        });
        Self {
            name,
            passed: rep.passed,
            margin: rep.worst_margin,
            worst_point: rep.worst_point.clone(),
            samples_checked: rep.samples_checked,
            note: rep.note.clone(),
        }
    }

    /// A single pass/fail fact with no sample location.
    pub fn scalar(name: &str, passed: bool, margin: f64, note: Option<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            margin,
            worst_point: None,
            samples_checked: 1,
            note,
        }
    }
}

/// One typed result: `{"type": ..., "data": ...}`.
#[derive(Debug, Clone, Serialize)]
pub struct ResultEntry {
    #[serde(rename = "type")]
    pub kind: String,
    pub data: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool_version: &'static str,
    pub config_digest: String,
    pub command: String,
    pub seed: u64,
    pub results: Vec<ResultEntry>,
    pub checks: Vec<CheckEntry>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Report {
    pub fn new(command: &str, digest: &str, seed: u64) -> Self {
        Self {
            tool_version: TOOL_VERSION,
            config_digest: digest.to_string(),
            command: command.to_string(),
            seed,
            results: Vec::new(),
            checks: Vec::new(),
            status: Status::Passed,
            error: None,
            timestamp: None,
        }
    }

    pub fn push_result<T: Serialize>(&mut self, kind: &str, data: &T) -> crate::Result<()> {
        self.results.push(ResultEntry {
            kind: kind.to_string(),
            data: serde_json::to_value(data)?,
        });
        Ok(())
    }

    pub fn push_check(&mut self, check: CheckEntry) {
        self.checks.push(check);
    }

    pub fn push_reports(&mut self, reps: &[ConditionReport]) {
        self.checks.extend(reps.iter().map(|r| CheckEntry::from_report(None, r)));
    }

    /// Sets the status from the checks unless an error was recorded.
    pub fn finish(&mut self) {
        if self.error.is_some() {
            self.status = Status::Error;
        } else if self.checks.iter().all(|c| c.passed) {
            self.status = Status::Passed;
        } else {
            self.status = Status::Failed;
        }
    }

    pub fn fail_with(&mut self, err: &crate::Error) {
        self.error = Some(err.to_string());
        self.status = Status::Error;
    }

    pub fn stamp_now(&mut self) {
        self.timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"));
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_and_exit_codes() {
        let mut r = Report::new("linear", "abc", 0);
        r.finish();
        assert_eq!(r.status.exit_code(), 0);
        r.push_check(CheckEntry::scalar("x", false, 1.0, None));
        r.finish();
        assert_eq!(r.status.exit_code(), 2);
        r.fail_with(&crate::Error::EmptyGrid);
        r.finish();
        assert_eq!(r.status.exit_code(), 1);
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["status"], "error");
        assert!(v.get("timestamp").is_none());
    }
}
