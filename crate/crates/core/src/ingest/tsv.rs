//! Minimal tab-separated reader/writer with a mandatory header row.
//!
//! Lines starting with `#` are directives or comments and are skipped by the
//! row iterator; they are exposed through [`Table::directives`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{PrlError, Result};

#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub directives: Vec<String>,
    /// (1-based source line, fields)
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PrlError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut header: Option<Vec<String>> = None;
        let mut directives = Vec::new();
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(d) = line.strip_prefix('#') {
                directives.push(d.trim().to_string());
                continue;
            }
            let fields: Vec<String> = line.split('\t').map(|s| s.trim().to_string()).collect();
            match &header {
                None => header = Some(fields),
                Some(h) => {
                    if fields.len() != h.len() {
                        return Err(PrlError::Parse {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: format!(
                                "expected {} fields, found {}",
                                h.len(),
                                fields.len()
                            ),
                        });
                    }
                    rows.push((line_no, fields));
                }
            }
        }
        let header = header.ok_or_else(|| PrlError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header row".into(),
        })?;
        Ok(Table {
            path: path.to_path_buf(),
            header,
            directives,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| PrlError::Parse {
            path: self.path.clone(),
            line: 1,
            message: format!("missing required column '{name}'"),
        })
    }

    pub fn parse_error(&self, line: usize, message: impl Into<String>) -> PrlError {
        PrlError::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn parse_field<T: std::str::FromStr>(&self, line: usize, col: &str, raw: &str) -> Result<T> {
        raw.parse::<T>()
            .map_err(|_| self.parse_error(line, format!("invalid value '{raw}' in column '{col}'")))
    }
}

/// Builds TSV text row by row; floats use Rust's shortest round-trip formatting.
#[derive(Debug, Default)]
pub struct TsvWriter {
    buf: String,
}

impl TsvWriter {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut w = TsvWriter { buf: String::new() };
        w.row(header);
        w
    }

    pub fn directive(&mut self, text: &str) {
        let _ = writeln!(self.buf, "#{text}");
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push('\t');
            }
            self.buf.push_str(f.as_ref());
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_text(path, &self.buf)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PrlError::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| PrlError::io(path, e))
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
