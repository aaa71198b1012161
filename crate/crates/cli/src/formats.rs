//! Signal matrices, CSV tables and dataset loading.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use mlcsc::LayerStack;

use crate::error::{CliError, Result};
use crate::idx;

pub const SIGNAL_MAGIC: &[u8; 4] = b"MLCS";
pub const SIGNAL_VERSION: u32 = 1;
const SIGNAL_HEADER: usize = 16;

/// Row-major f64 matrix, one signal per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMatrix {
    pub cols: usize,
    pub rows: Vec<Vec<f64>>,
}

impl SignalMatrix {
    pub fn new(cols: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(CliError::Argument(format!("row of length {} in a {cols}-column matrix", r.len())));
        }
        Ok(Self { cols, rows })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SIGNAL_HEADER + 8 * self.cols * self.rows.len());
        out.extend_from_slice(SIGNAL_MAGIC);
        out.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in self.rows.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SIGNAL_HEADER {
            return Err(CliError::parse(bytes.len(), "truncated signal header"));
        }
        if &bytes[..4] != SIGNAL_MAGIC {
            return Err(CliError::parse(0, "not an MLCS signal matrix"));
        }
        let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        if word(4) != SIGNAL_VERSION {
            return Err(CliError::parse(4, format!("unsupported version {}", word(4))));
        }
        let (rows, cols) = (word(8) as usize, word(12) as usize);
        let want = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CliError::parse(8, "matrix size overflows"))?;
        let body = &bytes[SIGNAL_HEADER..];
        if body.len() != want {
            return Err(CliError::parse(
                SIGNAL_HEADER + body.len().min(want),
                format!("expected {want} payload bytes, found {}", body.len()),
            ));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let rows = if cols == 0 {
            vec![Vec::new(); rows]
        } else {
            values.chunks(cols).map(<[f64]>::to_vec).collect()
        };
        Ok(Self { cols, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| CliError::io(path, e))?)
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// A CSV table with a single header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Index of a column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of column `name` parsed as numbers (blank cells become NaN).
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else { return Vec::new() };
        self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.render().as_bytes())
    }
}

pub fn cell(v: impl Display) -> String {
    v.to_string()
}

pub fn opt_cell<T: Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Stack dump: one row per stored coefficient.
pub fn stack_table<'a>(stacks: impl IntoIterator<Item = (usize, &'a LayerStack)>) -> Csv {
    let mut csv = Csv::new(&["sample", "layer", "index", "value"]);
    for (sample, stack) in stacks {
        for (i, rep) in stack.reps.iter().enumerate() {
            for (j, v) in rep.iter() {
                csv.push(vec![cell(sample), cell(i + 1), cell(j), cell(v)]);
            }
        }
    }
    csv
}

/// Signals loaded from disk, with the spatial/channel split they carry.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spatial_len: usize,
    pub channels: usize,
    pub signals: Vec<Vec<f64>>,
}

/// Loads an IDX image file (rows become the spatial axis, columns the
/// channels) or an MLCS matrix (one channel unless `channels` says otherwise).
pub fn load_dataset(path: &Path, center: bool, channels: Option<usize>, limit: Option<usize>) -> Result<Dataset> {
    let bytes = idx::read_maybe_gz(path)?;
    let (spatial_len, chans, mut signals) = if bytes.starts_with(SIGNAL_MAGIC) {
        let m = SignalMatrix::from_bytes(&bytes)?;
        let c = channels.unwrap_or(1);
        if c == 0 || m.cols % c != 0 {
            return Err(CliError::Argument(format!("{} columns do not split into {c} channels", m.cols)));
        }
        (m.cols / c, c, m.rows)
    } else {
        let imgs = idx::parse_images(&bytes)?;
        (imgs.rows, imgs.cols, imgs.images)
    };
    if let Some(n) = limit {
        signals.truncate(n);
    }
    let mut data = Dataset {
        spatial_len,
        channels: chans,
        signals,
    };
    if center {
        center_rows(&mut data.signals);
    }
    Ok(data)
}

/// Subtracts the mean row from every row.
pub fn center_rows(rows: &mut [Vec<f64>]) {
    let Some(first) = rows.first() else { return };
    let mut mean = vec![0.0; first.len()];
    for r in rows.iter() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    let n = rows.len() as f64;
    for r in rows.iter_mut() {
        r.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m / n);
    }
}
