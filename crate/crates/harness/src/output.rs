//! Append-only CSV logs and PGM image dumps.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};

/// A CSV file whose first line names the schema version and whose second
/// line holds the column names. Opening an existing file checks both.
pub struct CsvLog {
    path: PathBuf,
    file: File,
    rows: usize,
}

impl CsvLog {
    /// Opens `path` for appending, writing the header if the file is new.
    pub fn open(path: &Path, schema: &str, columns: &[&str]) -> Result<Self> {
        let header = format!("# {schema}\n{}\n", columns.join(","));
        let existing = match fs::read_to_string(path) {
            Ok(s) => Some(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(HarnessError::io(path)(e)),
        };
        let rows = match &existing {
            Some(s) if !s.is_empty() => {
                if !s.starts_with(&header) {
                    return Err(HarnessError::Config(format!(
                        "{} has a different header; expected schema {schema:?} with columns {}",
                        path.display(),
                        columns.join(",")
                    )));
                }
                s[header.len()..].lines().count()
            }
            _ => 0,
        };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(HarnessError::io(path))?;
        if rows == 0 && existing.as_deref().is_none_or(str::is_empty) {
            file.write_all(header.as_bytes()).map_err(HarnessError::io(path))?;
        }
        Ok(CsvLog { path: path.to_path_buf(), file, rows })
    }

    /// Data rows already in the file.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn append(&mut self, fields: &[String]) -> Result<()> {
        let line = format!("{}\n", fields.join(","));
        self.file.write_all(line.as_bytes()).map_err(HarnessError::io(&self.path))?;
        self.file.flush().map_err(HarnessError::io(&self.path))?;
        self.rows += 1;
        Ok(())
    }
}

/// Reads the data rows of a log written by [`CsvLog`].
pub fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
    Ok(text
        .lines()
        .skip(2)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

/// Writes a binary 8-bit grayscale PGM. `pixels` are intensities in
/// `[0, 1]`, row-major.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(HarnessError::Config(format!("image of {width}x{height} needs {} values", width * height)));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(HarnessError::io(path))
}

/// Lays `tiles` (each `h x w`, row-major) out as one grid of
/// `rows x cols` tiles with a one-pixel gap of value `gap`.
pub fn tile(tiles: &[Vec<f64>], h: usize, w: usize, cols: usize, gap: f64) -> (usize, usize, Vec<f64>) {
    let cols = cols.max(1);
    let rows = tiles.len().div_ceil(cols).max(1);
    let width = cols * w + (cols - 1);
    let height = rows * h + (rows - 1);
    let mut out = vec![gap; width * height];
    for (i, t) in tiles.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        for y in 0..h {
            let dst = (r * (h + 1) + y) * width + c * (w + 1);
            out[dst..dst + w].copy_from_slice(&t[y * w..(y + 1) * w]);
        }
    }
    (width, height, out)
}
