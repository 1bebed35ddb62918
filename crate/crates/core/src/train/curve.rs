use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    /// Mean combined training loss since the previous row.
    pub loss: f64,
    pub loss_mlc: f64,
    pub loss_plcp: f64,
    pub loss_clcp: f64,
    pub valid_micro_f1: f64,
    pub wall_secs: f64,
}

/// Convergence log, one row per validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveLog {
    pub rows: Vec<CurveRow>,
}

const HEADER: &str = "step,loss,loss_mlc,loss_plcp,loss_clcp,valid_micro_f1,wall_secs";

impl CurveLog {
    pub fn push(&mut self, row: CurveRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.step > last.step, "curve steps must increase");
        }
        self.rows.push(row);
    }

    /// CSV without the wall-clock column, the reproducible part of the log.
    pub fn to_csv_without_time(&self) -> String {
        self.csv(false)
    }

    pub fn to_csv(&self) -> String {
        self.csv(true)
    }

    fn csv(&self, wall: bool) -> String {
        let mut s = String::new();
        let header = if wall { HEADER } else { HEADER.trim_end_matches(",wall_secs") };
        let _ = writeln!(s, "{header}");
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.step, r.loss, r.loss_mlc, r.loss_plcp, r.loss_clcp, r.valid_micro_f1
            );
            if wall {
                let _ = write!(s, ",{:.3}", r.wall_secs);
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format {
                source_name: "curve".into(),
                line: i + 1,
                reason: format!("expected 7 numeric fields, got `{line}`"),
            };
            if f.len() != 7 {
                return Err(bad());
            }
            let n = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            log.rows.push(CurveRow {
                step: f[0].parse().map_err(|_| bad())?,
                loss: n(1)?,
                loss_mlc: n(2)?,
                loss_plcp: n(3)?,
                loss_clcp: n(4)?,
                valid_micro_f1: n(5)?,
                wall_secs: n(6)?,
            });
        }
        Ok(log)
    }
}
