//! Structured-text summaries with pass/fail bound lines.

use anyhow::{Context, Result};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct BoundLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A report: informational lines plus checked bounds. Any failed bound
/// makes the producing command exit with status 1.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub lines: Vec<String>,
    pub bounds: Vec<BoundLine>,
}

impl Summary {
    pub fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn bound(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.bounds.push(BoundLine {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.bounds.iter().all(|b| b.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        if !self.bounds.is_empty() {
            out.push('\n');
            for b in &self.bounds {
                out.push_str(&format!(
                    "[{}] {}: {}\n",
                    if b.passed { "PASS" } else { "FAIL" },
                    b.name,
                    b.detail
                ));
            }
            out.push_str(&format!(
                "\n{} of {} bounds passed\n",
                self.bounds.iter().filter(|b| b.passed).count(),
                self.bounds.len()
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f =
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(self.render().as_bytes())?;
        Ok(())
    }
}
