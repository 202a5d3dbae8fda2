use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Topology;

pub const CSV_HEADER: &str = "epoch,arch,train_loss,train_acc,test_loss,test_acc,wall_time_s";

/// Measurements for one epoch of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub arch: Topology,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub wall_time_s: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.arch.arch_tag(),
            self.train_loss,
            self.train_acc,
            self.test_loss,
            self.test_acc,
            self.wall_time_s
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.csv_line());
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimal_rows_under_exact_header() {
        let row = MetricsRow {
            epoch: 3,
            arch: Topology::Dual,
            train_loss: 0.1234567,
            train_acc: 0.5,
            test_loss: 2.0,
            test_acc: 1.0 / 3.0,
            wall_time_s: 12.0,
        };
        assert_eq!(
            metrics_csv(&[row]),
            "epoch,arch,train_loss,train_acc,test_loss,test_acc,wall_time_s\n\
             3,dualpath,0.123457,0.500000,2.000000,0.333333,12.000000\n"
        );
    }
}
