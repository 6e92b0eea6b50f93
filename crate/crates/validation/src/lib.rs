//! Reporting for the acceptance suite.
//!
//! Each criterion collects named checks and a runtime budget, then prints a
//! single `PASS`/`FAIL` line on stderr. The line is written to the raw
//! handle so it shows even when the test harness captures output.

use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

#[derive(Clone, Debug)]
pub struct Check {
    pub label: String,
    pub passed: bool,
}

#[derive(Debug)]
pub struct Criterion {
    number: u32,
    title: &'static str,
    budget: Duration,
    started: Instant,
    checks: Vec<Check>,
}

impl Criterion {
    pub fn start(number: u32, title: &'static str, budget: Duration) -> Self {
        Self {
            number,
            title,
            budget,
            started: Instant::now(),
            checks: Vec::new(),
        }
    }

    pub fn check(&mut self, label: impl Into<String>, passed: bool) -> &mut Self {
        self.checks.push(Check {
            label: label.into(),
            passed,
        });
        self
    }

    /// `measured <= bound`.
    pub fn at_most(&mut self, what: &str, measured: f64, bound: f64) -> &mut Self {
        self.check(
            format!("{what} {measured:.3e} <= {bound:.0e}"),
            measured <= bound,
        )
    }

    /// `measured >= bound`.
    pub fn at_least(&mut self, what: &str, measured: f64, bound: f64) -> &mut Self {
        self.check(
            format!("{what} {measured:.3} >= {bound}"),
            measured >= bound,
        )
    }

    /// Adds the runtime check, prints the line and returns whether every
    /// check passed.
    pub fn finish(mut self) -> bool {
        let elapsed = self.started.elapsed();
        self.check(
            format!(
                "runtime {:.1} s < {:.0} s",
                elapsed.as_secs_f64(),
                self.budget.as_secs_f64()
            ),
            elapsed < self.budget,
        );
        let passed = self.checks.iter().all(|c| c.passed);
        let line = self.line(passed);
        let mut err = std::io::stderr().lock();
        let _ = err.write_all(line.as_bytes());
        let _ = err.flush();
        passed
    }

    fn line(&self, passed: bool) -> String {
        let mut line = format!(
            "ACCEPTANCE criterion {:>2} {} {}:",
            self.number,
            if passed { "PASS" } else { "FAIL" },
            self.title
        );
        for (i, c) in self.checks.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            let mark = if c.passed { "" } else { " [failed]" };
            let _ = write!(line, "{sep}{}{mark}", c.label);
        }
        line.push('\n');
        line
    }
}
