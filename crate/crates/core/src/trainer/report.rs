use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};

pub const TRAIN_CSV_HEADER: &str = "update,mean_return,metric,L_I,L_F,grad_norm,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub update: usize,
    pub mean_return: f64,
    /// Mean terminal value of the reward metric on relevance labels.
    pub metric: f64,
    pub l_i: f64,
    pub l_f: f64,
    pub grad_norm: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<UpdateRow>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.3}",
                r.update, r.mean_return, r.metric, r.l_i, r.l_f, r.grad_norm, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&UpdateRow> {
        self.rows.last()
    }
}

/// Writes `config` as pretty JSON next to a checkpoint.
pub fn write_config_sidecar(path: &Path, config: &TrainConfig) -> Result<(), TrainError> {
    std::fs::write(path, serde_json::to_string_pretty(config)? + "\n")?;
    Ok(())
}

pub fn read_config_sidecar(path: &Path) -> Result<TrainConfig, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let config: TrainConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let row = UpdateRow {
            update: 1,
            mean_return: 0.5,
            metric: 0.25,
            l_i: 1.0,
            l_f: 0.0,
            grad_norm: 2.0,
            seconds: 0.1234,
        };
        let report = TrainReport { rows: vec![row, UpdateRow { update: 2, ..row }] };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRAIN_CSV_HEADER);
        assert_eq!(lines[1], "1,0.5,0.25,1,0,2,0.123");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let config = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        write_config_sidecar(&path, &config).unwrap();
        assert_eq!(read_config_sidecar(&path).unwrap(), config);
    }
}
