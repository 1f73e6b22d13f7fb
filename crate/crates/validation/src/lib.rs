//! A small runner for named acceptance criteria.
//!
//! Each criterion is a closure returning a [`Check`]. The runner times it,
//! turns panics into failures and prints exactly one `PASS` or `FAIL` line
//! per criterion as soon as it finishes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Outcome of one criterion, with a one-line description of the evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check {
            passed,
            detail: detail.into(),
        }
    }

    /// Fails the check if `elapsed` reached `budget`.
    pub fn within(mut self, elapsed: Duration, budget: Duration) -> Self {
        if elapsed >= budget {
            self.passed = false;
            self.detail = format!("{}; over budget of {:.0?}", self.detail, budget);
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub name: String,
    pub check: Check,
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
pub struct Suite {
    pub results: Vec<CriterionResult>,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

pub fn format_line(r: &CriterionResult) -> String {
    format!(
        "{} {:<24} {:>8.2}s  {}",
        if r.check.passed { "PASS" } else { "FAIL" },
        r.name,
        r.elapsed.as_secs_f64(),
        r.check.detail
    )
}

impl Suite {
    pub fn new() -> Self {
        Suite::default()
    }

    /// Runs `f`, handing it a clock started just before the call so the
    /// closure can apply its own runtime budget.
    pub fn run(&mut self, name: &str, f: impl FnOnce(Instant) -> Check) -> bool {
        let start = Instant::now();
        let check = match catch_unwind(AssertUnwindSafe(|| f(start))) {
            Ok(c) => c,
            Err(payload) => Check::new(false, format!("panicked: {}", panic_message(payload.as_ref()))),
        };
        let result = CriterionResult {
            name: name.to_string(),
            check,
            elapsed: start.elapsed(),
        };
        println!("{}", format_line(&result));
        let passed = result.check.passed;
        self.results.push(result);
        passed
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| !r.check.passed)
            .map(|r| r.name.as_str())
            .collect()
    }

    pub fn summary(&self) -> String {
        let failed = self.failures();
        format!(
            "{} criteria: {} passed, {} failed{}",
            self.results.len(),
            self.results.len() - failed.len(),
            failed.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" ({})", failed.join(", "))
            }
        )
    }
}

/// Share of `hits` among `n`, as a percentage string.
pub fn pct(hits: usize, n: usize) -> String {
    format!("{:.1}%", 100.0 * hits as f64 / n.max(1) as f64)
}
