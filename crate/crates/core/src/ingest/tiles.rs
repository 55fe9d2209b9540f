use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tsv::{fmt_f64, Table, TsvWriter};
use crate::error::{PrlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: String,
    pub slide_id: String,
    pub row: u32,
    pub col: u32,
    pub tissue_fraction: f64,
    pub path: Option<String>,
}

pub fn validate_tiles(tiles: &[TileRecord]) -> Result<()> {
    let mut ids = HashSet::new();
    let mut cells = HashSet::new();
    for t in tiles {
        if !(0.0..=1.0).contains(&t.tissue_fraction) {
            return Err(PrlError::Validation(format!(
                "tile '{}' tissue_fraction {} outside [0,1]",
                t.tile_id, t.tissue_fraction
            )));
        }
        if !ids.insert(t.tile_id.as_str()) {
            return Err(PrlError::Validation(format!("duplicate tile_id '{}'", t.tile_id)));
        }
        if !cells.insert((t.slide_id.as_str(), t.row, t.col)) {
            return Err(PrlError::Validation(format!(
                "duplicate grid cell ({}, {}, {})",
                t.slide_id, t.row, t.col
            )));
        }
    }
    Ok(())
}

pub fn load_tiles(path: &Path) -> Result<Vec<TileRecord>> {
    let table = Table::read(path)?;
    let [id, slide, row, col, tf] = ["tile_id", "slide_id", "row", "col", "tissue_fraction"]
        .map(|c| table.require(c));
    let (id, slide, row, col, tf) = (id?, slide?, row?, col?, tf?);
    let pcol = table.column("path");
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, f) in &table.rows {
        out.push(TileRecord {
            tile_id: f[id].clone(),
            slide_id: f[slide].clone(),
            row: table.parse_field(*line, "row", &f[row])?,
            col: table.parse_field(*line, "col", &f[col])?,
            tissue_fraction: table.parse_field(*line, "tissue_fraction", &f[tf])?,
            path: pcol.map(|c| f[c].clone()).filter(|p| !p.is_empty()),
        });
    }
    validate_tiles(&out)?;
    Ok(out)
}

pub fn write_tiles(tiles: &[TileRecord], path: &Path) -> Result<()> {
    let mut w = TsvWriter::new(&["tile_id", "slide_id", "row", "col", "tissue_fraction", "path"]);
    for t in tiles {
        w.row(&[
            t.tile_id.clone(),
            t.slide_id.clone(),
            t.row.to_string(),
            t.col.to_string(),
            fmt_f64(t.tissue_fraction),
            t.path.clone().unwrap_or_default(),
        ]);
    }
    w.write(path)
}
