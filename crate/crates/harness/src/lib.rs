//! Experiment runner for the framecache engine: loads a JSON run config,
//! executes scenarios and writes their tables as CSV and aligned text.

pub mod config;
pub mod scenarios;
pub mod table;

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

pub use config::{RunConfig, Scenario};
pub use scenarios::{run_scenario, Check, ScenarioOutcome};
pub use table::Table;

/// Writes `<table>.csv` and `<table>.txt` for every table, plus
/// `<scenario>_checks.txt`.
pub fn write_outcome(outcome: &ScenarioOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for t in &outcome.tables {
        std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        std::fs::write(dir.join(format!("{}.txt", t.name)), t.to_text())?;
    }
    std::fs::write(
        dir.join(format!("{}_checks.txt", outcome.scenario.name())),
        render_checks(outcome),
    )?;
    Ok(())
}

pub fn render_checks(outcome: &ScenarioOutcome) -> String {
    let mut out = String::new();
    for c in &outcome.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "[{mark}] {}: {} ({})",
            outcome.scenario.name(),
            c.name,
            c.detail
        );
    }
    out
}
