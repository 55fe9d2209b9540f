//! Cohort manifest: one row per slide with its patient and contributing institution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tsv::{Table, TsvWriter};
use crate::error::{PrlError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideEntry {
    pub slide_id: String,
    pub patient_id: String,
    pub institution_id: String,
    pub label: Option<String>,
    /// Site-specific columns, kept verbatim but not interpreted.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub cohort_id: String,
    pub slides: Vec<SlideEntry>,
    /// Closed set of admissible labels, sorted.
    pub label_set: Vec<String>,
}

const REQUIRED: [&str; 3] = ["slide_id", "patient_id", "institution_id"];

/// Loads a manifest TSV. The label set is taken from a `#labels=A,B` directive
/// when present, otherwise from the values observed in the file.
pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    load_manifest_with_labels(path, None)
}

/// Loads a manifest, rejecting any label outside `declared` when it is given.
pub fn load_manifest_with_labels(path: &Path, declared: Option<&[String]>) -> Result<CohortManifest> {
    let table = Table::read(path)?;
    let cols: Vec<usize> = REQUIRED
        .iter()
        .map(|c| table.require(c))
        .collect::<Result<_>>()?;
    let label_col = table.column("label");

    let mut cohort_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".into());
    let mut directive_labels: Option<Vec<String>> = None;
    for d in &table.directives {
        if let Some(v) = d.strip_prefix("labels=") {
            directive_labels = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
        } else if let Some(v) = d.strip_prefix("cohort=") {
            cohort_id = v.trim().to_string();
        }
    }
    let declared: Option<Vec<String>> = declared.map(|d| d.to_vec()).or(directive_labels);

    let mut slides = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        let get = |i: usize| fields[i].clone();
        let slide_id = get(cols[0]);
        let patient_id = get(cols[1]);
        let institution_id = get(cols[2]);
        for (name, v) in REQUIRED.iter().zip([&slide_id, &patient_id, &institution_id]) {
            if v.is_empty() {
                return Err(table.parse_error(*line, format!("empty {name}")));
            }
        }
        let label = label_col.map(|c| fields[c].clone()).filter(|l| !l.is_empty() && l != "NA");
        let extra = table
            .header
            .iter()
            .enumerate()
            .filter(|(i, h)| !cols.contains(i) && Some(*i) != label_col && !h.is_empty())
            .map(|(i, h)| (h.clone(), fields[i].clone()))
            .collect();
        slides.push(SlideEntry {
            slide_id,
            patient_id,
            institution_id,
            label,
            extra,
        });
    }
    CohortManifest::new(cohort_id, slides, declared)
}

impl CohortManifest {
    /// Validates and assembles a manifest.
    pub fn new(cohort_id: String, slides: Vec<SlideEntry>, declared: Option<Vec<String>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut patient_site: HashMap<&str, &str> = HashMap::new();
        for s in &slides {
            if s.slide_id.is_empty() || s.patient_id.is_empty() || s.institution_id.is_empty() {
                return Err(PrlError::Validation(format!("slide '{}' has an empty id field", s.slide_id)));
            }
            if !seen.insert(s.slide_id.as_str()) {
                return Err(PrlError::Validation(format!("duplicate slide_id '{}'", s.slide_id)));
            }
            match patient_site.get(s.patient_id.as_str()) {
                Some(site) if *site != s.institution_id => {
                    return Err(PrlError::Validation(format!(
                        "patient '{}' has slides from institutions '{}' and '{}'",
                        s.patient_id, site, s.institution_id
                    )))
                }
                _ => {
                    patient_site.insert(&s.patient_id, &s.institution_id);
                }
            }
        }
        let observed: BTreeSet<String> = slides.iter().filter_map(|s| s.label.clone()).collect();
        let label_set: Vec<String> = match declared {
            Some(d) => {
                let allowed: BTreeSet<String> = d.into_iter().collect();
                if let Some(bad) = observed.iter().find(|l| !allowed.contains(*l)) {
                    return Err(PrlError::Referential(format!("label '{bad}' not in declared set {allowed:?}")));
                }
                allowed.into_iter().collect()
            }
            None => observed.into_iter().collect(),
        };
        Ok(CohortManifest {
            cohort_id,
            slides,
            label_set,
        })
    }

    pub fn slide(&self, slide_id: &str) -> Option<&SlideEntry> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn slide_index(&self) -> HashMap<&str, usize> {
        self.slides.iter().enumerate().map(|(i, s)| (s.slide_id.as_str(), i)).collect()
    }

    /// Patient ids in first-appearance order.
    pub fn patients(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.slides
            .iter()
            .filter(|s| seen.insert(s.patient_id.as_str()))
            .map(|s| s.patient_id.as_str())
            .collect()
    }

    pub fn institutions(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.slides.iter().map(|s| s.institution_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Label for a patient, taken from its first labelled slide.
    pub fn patient_label(&self, patient_id: &str) -> Option<&str> {
        self.slides
            .iter()
            .find(|s| s.patient_id == patient_id && s.label.is_some())
            .and_then(|s| s.label.as_deref())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let extra_cols: BTreeSet<&String> = self.slides.iter().flat_map(|s| s.extra.keys()).collect();
        let mut header: Vec<String> = ["slide_id", "patient_id", "institution_id", "label"].map(String::from).to_vec();
        header.extend(extra_cols.iter().map(|s| s.to_string()));
        let mut w = TsvWriter::default();
        w.directive(&format!("cohort={}", self.cohort_id));
        if !self.label_set.is_empty() {
            w.directive(&format!("labels={}", self.label_set.join(",")));
        }
        w.row(&header);
        for s in &self.slides {
            let mut row = vec![
                s.slide_id.clone(),
                s.patient_id.clone(),
                s.institution_id.clone(),
                s.label.clone().unwrap_or_default(),
            ];
            row.extend(extra_cols.iter().map(|c| s.extra.get(*c).cloned().unwrap_or_default()));
            w.row(&row);
        }
        w.write(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows() {
        let f = write_tmp("slide_id\tpatient_id\tinstitution_id\tlabel\ns1\tp1\tA\tLUAD\ns2\tp2\tA\tLUSC\ns3\tp3\tB\tLUAD\n");
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.slides.len(), 3);
        assert_eq!(m.label_set, vec!["LUAD".to_string(), "LUSC".to_string()]);
    }

    #[test]
    fn duplicate_slide_rejected() {
        let f = write_tmp("slide_id\tpatient_id\tinstitution_id\ns1\tp1\tA\ns1\tp2\tA\n");
        assert!(matches!(load_manifest(f.path()), Err(PrlError::Validation(_))));
    }

    #[test]
    fn malformed_row_is_parse_error() {
        let f = write_tmp("slide_id\tpatient_id\tinstitution_id\ns1\tp1\n");
        assert!(matches!(load_manifest(f.path()), Err(PrlError::Parse { line: 2, .. })));
    }

    #[test]
    fn unknown_label_is_referential_error() {
        let f = write_tmp("#labels=LUAD,LUSC\nslide_id\tpatient_id\tinstitution_id\tlabel\ns1\tp1\tA\tMESO\n");
        assert!(matches!(load_manifest(f.path()), Err(PrlError::Referential(_))));
    }

    #[test]
    fn patient_across_institutions_rejected() {
        let f = write_tmp("slide_id\tpatient_id\tinstitution_id\ns1\tp1\tA\ns2\tp1\tB\n");
        assert!(matches!(load_manifest(f.path()), Err(PrlError::Validation(_))));
    }

    #[test]
    fn extra_columns_preserved() {
        let f = write_tmp("slide_id\tpatient_id\tinstitution_id\tstage\ns1\tp1\tA\tIB\n");
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.slides[0].extra.get("stage").map(String::as_str), Some("IB"));
        let out = tempfile::NamedTempFile::new().unwrap();
        m.write(out.path()).unwrap();
        let back = load_manifest(out.path()).unwrap();
        assert_eq!(back.slides, m.slides);
    }
}
