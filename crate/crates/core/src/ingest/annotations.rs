//! External per-tile and per-patient annotation tables.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tsv::{fmt_f64, Table, TsvWriter};
use crate::error::{PrlError, Result};

pub const CELL_TYPES: [&str; 4] = ["neoplastic", "connective", "inflammatory", "dead"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub neoplastic: u32,
    pub connective: u32,
    pub inflammatory: u32,
    pub dead: u32,
}

impl CellCounts {
    pub fn get(&self, cell_type: usize) -> u32 {
        match cell_type {
            0 => self.neoplastic,
            1 => self.connective,
            2 => self.inflammatory,
            3 => self.dead,
            _ => panic!("cell type index {cell_type} out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthPattern {
    Solid,
    Acinar,
    Papillary,
    Micropapillary,
    Lepidic,
}

impl GrowthPattern {
    pub const ALL: [GrowthPattern; 5] = [
        GrowthPattern::Solid,
        GrowthPattern::Acinar,
        GrowthPattern::Papillary,
        GrowthPattern::Micropapillary,
        GrowthPattern::Lepidic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GrowthPattern::Solid => "solid",
            GrowthPattern::Acinar => "acinar",
            GrowthPattern::Papillary => "papillary",
            GrowthPattern::Micropapillary => "micropapillary",
            GrowthPattern::Lepidic => "lepidic",
        }
    }
}

impl fmt::Display for GrowthPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GrowthPattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        GrowthPattern::ALL
            .into_iter()
            .find(|g| g.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown growth pattern '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExternalAnnotations {
    pub cell_counts: BTreeMap<String, CellCounts>,
    /// Signature names, in column order.
    pub signature_names: Vec<String>,
    /// patient_id -> one value per signature (NaN where missing).
    pub signatures: BTreeMap<String, Vec<f64>>,
    pub growth_patterns: BTreeMap<String, GrowthPattern>,
}

impl ExternalAnnotations {
    /// Every referenced tile and patient must exist in the cohort.
    pub fn check_references(&self, tile_ids: &HashSet<&str>, patient_ids: &HashSet<&str>) -> Result<()> {
        if let Some(t) = self
            .cell_counts
            .keys()
            .chain(self.growth_patterns.keys())
            .find(|t| !tile_ids.contains(t.as_str()))
        {
            return Err(PrlError::Referential(format!("annotation references unknown tile '{t}'")));
        }
        if let Some(p) = self.signatures.keys().find(|p| !patient_ids.contains(p.as_str())) {
            return Err(PrlError::Referential(format!("signature row references unknown patient '{p}'")));
        }
        Ok(())
    }
}

pub fn load_cell_counts(path: &Path) -> Result<BTreeMap<String, CellCounts>> {
    let table = Table::read(path)?;
    let id = table.require("tile_id")?;
    let cols: Vec<usize> = CELL_TYPES.iter().map(|c| table.require(c)).collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (line, f) in &table.rows {
        let v: Vec<u32> = CELL_TYPES
            .iter()
            .zip(&cols)
            .map(|(name, &c)| table.parse_field::<u32>(*line, name, &f[c]))
            .collect::<Result<_>>()?;
        let counts = CellCounts {
            neoplastic: v[0],
            connective: v[1],
            inflammatory: v[2],
            dead: v[3],
        };
        if out.insert(f[id].clone(), counts).is_some() {
            return Err(table.parse_error(*line, format!("duplicate tile_id '{}'", f[id])));
        }
    }
    Ok(out)
}

pub fn write_cell_counts(counts: &BTreeMap<String, CellCounts>, path: &Path) -> Result<()> {
    let mut header = vec!["tile_id"];
    header.extend(CELL_TYPES);
    let mut w = TsvWriter::new(&header);
    for (t, c) in counts {
        w.row(&[
            t.clone(),
            c.neoplastic.to_string(),
            c.connective.to_string(),
            c.inflammatory.to_string(),
            c.dead.to_string(),
        ]);
    }
    w.write(path)
}

/// Wide table: `patient_id` followed by one column per signature. `NA` or an
/// empty field is stored as NaN.
pub fn load_signatures(path: &Path) -> Result<(Vec<String>, BTreeMap<String, Vec<f64>>)> {
    let table = Table::read(path)?;
    let id = table.require("patient_id")?;
    let names: Vec<(usize, String)> = table
        .header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id)
        .map(|(i, h)| (i, h.clone()))
        .collect();
    let mut out = BTreeMap::new();
    for (line, f) in &table.rows {
        let vals = names
            .iter()
            .map(|(c, name)| match f[*c].as_str() {
                "" | "NA" | "nan" | "NaN" => Ok(f64::NAN),
                raw => table.parse_field::<f64>(*line, name, raw),
            })
            .collect::<Result<Vec<_>>>()?;
        if out.insert(f[id].clone(), vals).is_some() {
            return Err(table.parse_error(*line, format!("duplicate patient_id '{}'", f[id])));
        }
    }
    Ok((names.into_iter().map(|(_, n)| n).collect(), out))
}

pub fn write_signatures(names: &[String], rows: &BTreeMap<String, Vec<f64>>, path: &Path) -> Result<()> {
    let mut header = vec!["patient_id".to_string()];
    header.extend(names.iter().cloned());
    let mut w = TsvWriter::new(&header);
    for (p, v) in rows {
        let mut row = vec![p.clone()];
        row.extend(v.iter().map(|x| if x.is_nan() { "NA".into() } else { fmt_f64(*x) }));
        w.row(&row);
    }
    w.write(path)
}

pub fn load_growth_patterns(path: &Path) -> Result<BTreeMap<String, GrowthPattern>> {
    let table = Table::read(path)?;
    let id = table.require("tile_id")?;
    let pat = table.require("pattern")?;
    let mut out = BTreeMap::new();
    for (line, f) in &table.rows {
        if f[pat].is_empty() || f[pat] == "NA" {
            continue;
        }
        let g = f[pat].parse::<GrowthPattern>().map_err(|m| table.parse_error(*line, m))?;
        if out.insert(f[id].clone(), g).is_some() {
            return Err(table.parse_error(*line, format!("duplicate tile_id '{}'", f[id])));
        }
    }
    Ok(out)
}

pub fn write_growth_patterns(rows: &BTreeMap<String, GrowthPattern>, path: &Path) -> Result<()> {
    let mut w = TsvWriter::new(&["tile_id", "pattern"]);
    for (t, g) in rows {
        w.row(&[t.as_str(), g.as_str()]);
    }
    w.write(path)
}
