//! Per-iteration primal-dual traces and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::fmt_f64;

/// Extra per-row value appended after the fixed columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extra {
    Int(u64),
    Float(f64),
}

impl Extra {
    fn render(self) -> String {
        match self {
            Extra::Int(i) => i.to_string(),
            Extra::Float(x) => fmt_f64(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub t: usize,
    pub v_r: f64,
    pub v_g: f64,
    pub lambda: f64,
    /// `(1/(t+1)) Σ_{k<=t} V_r^{(k)}(ρ)`.
    pub avg_v_r: f64,
    pub avg_v_g: f64,
    /// `V_r^* - avg_v_r`.
    pub gap: f64,
    /// `[b - avg_v_g]₊`.
    pub violation: f64,
    /// `[b - V_g^{(t)}(ρ)]₊` of this iterate alone.
    pub iterate_violation: f64,
    /// `min_s log Z^{(t)}(s)`; NaN for updates without a normaliser.
    pub log_z_min: f64,
    pub extra: Vec<Extra>,
}

/// Trace of one solver run, scored against a reference optimum `V_r^*` and
/// the offset the violation is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub v_r_star: f64,
    pub offset: f64,
    pub extra_columns: Vec<String>,
    pub records: Vec<IterateRecord>,
    #[serde(skip)]
    sum_v_r: f64,
    #[serde(skip)]
    sum_v_g: f64,
}

pub const CSV_HEADER: [&str; 8] = ["t", "v_r", "v_g", "lambda", "avg_v_r", "avg_v_g", "gap", "violation"];

impl IterateLog {
    pub fn new(v_r_star: f64, offset: f64) -> Self {
        Self { v_r_star, offset, extra_columns: Vec::new(), records: Vec::new(), sum_v_r: 0.0, sum_v_g: 0.0 }
    }

    pub fn with_extra_columns(mut self, names: &[&str]) -> Self {
        self.extra_columns = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Appends iterate `t = len()` and updates the running averages.
    pub fn push(&mut self, v_r: f64, v_g: f64, lambda: f64, log_z_min: f64, extra: Vec<Extra>) {
        let t = self.records.len();
        self.sum_v_r += v_r;
        self.sum_v_g += v_g;
        let n = (t + 1) as f64;
        let (avg_v_r, avg_v_g) = (self.sum_v_r / n, self.sum_v_g / n);
        self.records.push(IterateRecord {
            t,
            v_r,
            v_g,
            lambda,
            avg_v_r,
            avg_v_g,
            gap: self.v_r_star - avg_v_r,
            violation: (self.offset - avg_v_g).max(0.0),
            iterate_violation: (self.offset - v_g).max(0.0),
            log_z_min,
            extra,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterateRecord> {
        self.records.last()
    }

    /// Final averaged optimality gap, NaN for an empty log.
    pub fn final_gap(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.gap)
    }

    pub fn final_violation(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.violation)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        header.extend(self.extra_columns.iter().map(String::as_str));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend([r.v_r, r.v_g, r.lambda, r.avg_v_r, r.avg_v_g, r.gap, r.violation].map(fmt_f64));
            row.extend(r.extra.iter().map(|e| e.render()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_track_prefix_means() {
        let mut log = IterateLog::new(1.0, 0.5);
        log.push(0.2, 0.4, 0.0, f64::NAN, vec![]);
        log.push(0.6, 0.8, 0.1, f64::NAN, vec![]);
        let last = log.last().unwrap();
        assert!((last.avg_v_r - 0.4).abs() < 1e-15);
        assert!((last.gap - 0.6).abs() < 1e-15);
        assert_eq!(last.violation, 0.0);
        assert!((log.records[0].violation - 0.1).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let mut log = IterateLog::new(1.0, 0.5).with_extra_columns(&["K", "seed"]);
        log.push(0.5, 0.5, 0.0, f64::NAN, vec![Extra::Int(10), Extra::Int(3)]);
        let csv = log.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,v_r,v_g,lambda,avg_v_r,avg_v_g,gap,violation,K,seed");
        assert!(lines[1].starts_with("0,5.0000000000000000e-1,"));
        assert!(lines[1].ends_with(",10,3"));
    }
}
