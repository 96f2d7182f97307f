//! Metrics CSV: one header row, then one row per epoch or evaluation.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    /// `train`, `adapt-<kind>` or `eval`.
    pub mode: String,
    pub strategy: String,
    /// Speaker id, or `all` for aggregates.
    pub speaker: String,
    pub n_adapt: Option<usize>,
    pub epoch: Option<usize>,
    pub split: String,
    pub mse: f64,
    pub seconds: f64,
}

pub const HEADER: &str = "run_id,mode,strategy,speaker,n_adapt,epoch,split,mse,seconds";

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record(HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_rows(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow {
                run_id: "r".into(),
                mode: "train".into(),
                strategy: "BaB".into(),
                speaker: "all".into(),
                n_adapt: None,
                epoch: Some(0),
                split: "valid".into(),
                mse: 0.25,
                seconds: 1.5,
            },
            MetricsRow {
                run_id: "r".into(),
                mode: "eval".into(),
                strategy: "BaB".into(),
                speaker: "spk1000".into(),
                n_adapt: Some(5),
                epoch: None,
                split: "test".into(),
                mse: 0.125,
                seconds: 0.0,
            },
        ];
        write_rows(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some(HEADER));
        assert_eq!(text.lines().nth(2), Some("r,eval,BaB,spk1000,5,,test,0.125,0.0"));
        assert_eq!(read_rows(&p).unwrap(), rows);
        write_rows(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim_end(), HEADER);
    }
}
