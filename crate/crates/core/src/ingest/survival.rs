use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tsv::{fmt_f64, Table, TsvWriter};
use crate::error::{PrlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    OverallSurvival,
    RecurrenceFree,
}

impl Endpoint {
    pub fn as_str(&self) -> &'static str {
        match self {
            Endpoint::OverallSurvival => "overall_survival",
            Endpoint::RecurrenceFree => "recurrence_free",
        }
    }

    pub fn short(&self) -> &'static str {
        match self {
            Endpoint::OverallSurvival => "os",
            Endpoint::RecurrenceFree => "rfs",
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Endpoint {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "overall_survival" | "os" => Ok(Endpoint::OverallSurvival),
            "recurrence_free" | "rfs" => Ok(Endpoint::RecurrenceFree),
            other => Err(format!("unknown endpoint '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurvivalTable {
    /// endpoint -> patient_id -> record
    pub records: BTreeMap<Endpoint, BTreeMap<String, SurvivalRecord>>,
}

impl SurvivalTable {
    pub fn insert(&mut self, patient_id: &str, endpoint: Endpoint, rec: SurvivalRecord) -> Result<()> {
        if !(rec.time > 0.0 && rec.time.is_finite()) {
            return Err(PrlError::Validation(format!(
                "patient '{patient_id}': survival time must be positive, got {}",
                rec.time
            )));
        }
        let slot = self.records.entry(endpoint).or_default();
        if slot.insert(patient_id.to_string(), rec).is_some() {
            return Err(PrlError::Validation(format!(
                "duplicate {endpoint} row for patient '{patient_id}'"
            )));
        }
        Ok(())
    }

    pub fn endpoint(&self, endpoint: Endpoint) -> Option<&BTreeMap<String, SurvivalRecord>> {
        self.records.get(&endpoint)
    }

    pub fn get(&self, patient_id: &str, endpoint: Endpoint) -> Option<SurvivalRecord> {
        self.records.get(&endpoint).and_then(|m| m.get(patient_id)).copied()
    }

    /// Every endpoint present must carry at least one observed event.
    pub fn validate(&self) -> Result<()> {
        for (ep, rows) in &self.records {
            if !rows.values().any(|r| r.event) {
                return Err(PrlError::NoEvents(format!("endpoint {ep} has no observed events")));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = TsvWriter::new(&["patient_id", "time_months", "event", "endpoint"]);
        for (ep, rows) in &self.records {
            for (pid, r) in rows {
                w.row(&[pid.clone(), fmt_f64(r.time), (r.event as u8).to_string(), ep.as_str().to_string()]);
            }
        }
        w.write(path)
    }
}

pub fn load_survival(path: &Path) -> Result<SurvivalTable> {
    let table = Table::read(path)?;
    let pid = table.require("patient_id")?;
    let time = table.require("time_months")?;
    let event = table.require("event")?;
    let endpoint = table.column("endpoint");
    let mut out = SurvivalTable::default();
    for (line, f) in &table.rows {
        let t: f64 = table.parse_field(*line, "time_months", &f[time])?;
        let e = match f[event].as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(table.parse_error(*line, format!("event must be 0 or 1, got '{other}'"))),
        };
        let ep = match endpoint {
            Some(c) => f[c].parse::<Endpoint>().map_err(|m| table.parse_error(*line, m))?,
            None => Endpoint::OverallSurvival,
        };
        out.insert(&f[pid], ep, SurvivalRecord { time: t, event: e })
            .map_err(|e| table.parse_error(*line, e.to_string()))?;
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tsv");
        std::fs::write(&p, "patient_id\ttime_months\tevent\tendpoint\np1\t12.5\t1\tos\np2\t3\t0\toverall_survival\n").unwrap();
        let t = load_survival(&p).unwrap();
        assert_eq!(t.get("p1", Endpoint::OverallSurvival).unwrap().time, 12.5);

        std::fs::write(&p, "patient_id\ttime_months\tevent\tendpoint\np1\t0\t1\tos\n").unwrap();
        assert!(load_survival(&p).is_err());
        std::fs::write(&p, "patient_id\ttime_months\tevent\tendpoint\np1\t4\t0\tos\n").unwrap();
        assert!(matches!(load_survival(&p), Err(PrlError::NoEvents(_))));
    }
}
