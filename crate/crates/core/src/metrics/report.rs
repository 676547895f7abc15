use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::MIN_RELIABLE_ERRORS;
use super::BitErrors;
use crate::error::{Error, Result};

/// One (launch power, method) point of a Q sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSweepRow {
    pub launch_power_dbm: f64,
    pub method: String,
    pub ber: f64,
    /// Empty when no errors were seen.
    pub q_db: Option<f64>,
    pub symbols_evaluated: u64,
    pub bit_errors: u64,
    /// Fewer than ten bit errors were observed.
    pub stats_weak: bool,
}

impl QSweepRow {
    pub fn from_errors(launch_power_dbm: f64, method: &str, e: BitErrors) -> Self {
        Self {
            launch_power_dbm,
            method: method.to_string(),
            ber: e.ber(),
            q_db: e.q_db(),
            symbols_evaluated: e.symbols,
            bit_errors: e.errors,
            stats_weak: e.errors < MIN_RELIABLE_ERRORS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QSweepReport {
    pub rows: Vec<QSweepRow>,
}

impl QSweepReport {
    pub fn new(rows: Vec<QSweepRow>) -> Self {
        Self { rows }
    }

    /// Rows of one method ordered by launch power.
    pub fn curve(&self, method: &str) -> Vec<&QSweepRow> {
        let mut v: Vec<&QSweepRow> = self.rows.iter().filter(|r| r.method == method).collect();
        v.sort_by(|a, b| a.launch_power_dbm.total_cmp(&b.launch_power_dbm));
        v
    }

    pub fn get(&self, method: &str, power_dbm: f64) -> Option<&QSweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.launch_power_dbm - power_dbm).abs() < 1e-9)
    }

    pub fn write_csv(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# config_digest: {config_digest}")?;
        let mut w = csv::Writer::from_writer(f);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "launch_power_dbm",
                "method",
                "ber",
                "q_db",
                "symbols_evaluated",
                "bit_errors",
                "stats_weak",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Self::write_csv`]; returns the rows and the
    /// digest from the comment line, if present.
    pub fn read_csv(path: &Path) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path)?;
        let digest = text
            .lines()
            .find_map(|l| l.strip_prefix("# config_digest: "))
            .map(|s| s.trim().to_string());
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<QSweepRow>, _>>()?;
        Ok((Self { rows }, digest))
    }

    /// Machine-readable summary.
    pub fn to_json(&self, config_digest: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            config_digest: &'a str,
            rows: &'a [QSweepRow],
        }
        serde_json::to_string_pretty(&Summary {
            config_digest,
            rows: &self.rows,
        })
        .map_err(Error::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        let rep = QSweepReport::new(vec![
            QSweepRow::from_errors(-1.0, "CDC", BitErrors { errors: 120, bits: 120_000, symbols: 20_000 }),
            QSweepRow::from_errors(0.0, "DBP1", BitErrors { errors: 0, bits: 600, symbols: 100 }),
        ]);
        rep.write_csv(&p, "abc").unwrap();
        let (back, digest) = QSweepReport::read_csv(&p).unwrap();
        assert_eq!(digest.as_deref(), Some("abc"));
        assert_eq!(back, rep);
        assert!(rep.rows[1].stats_weak && rep.rows[1].q_db.is_none());
        assert!(rep.to_json("abc").unwrap().contains("\"method\": \"CDC\""));
    }
}
