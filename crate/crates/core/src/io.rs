//! CSV persistence for datasets and sample batches.
//!
//! Both formats are plain text with optional leading `#` comment lines
//! (used to embed the resolved config and seed). Numbers are written with
//! Rust's shortest round-trip `f64` formatting, so save → load is bit-exact.
//!
//! Dataset file:
//!
//! ```text
//! # optional comments
//! d=2,N=3,seed=7,source=synthetic-gaussian
//! 0.5,-1.25
//! ...
//! ```
//!
//! Batch file (also accepted by [`load_dataset`]):
//!
//! ```text
//! # optional comments
//! x0,x1
//! 0.5,-1.25
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{Dataset, DatasetSource};
use crate::error::{Error, Result};
use crate::samplers::SampleBatch;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

struct Header {
    dim: usize,
    count: Option<usize>,
    seed: Option<u64>,
    source: Option<DatasetSource>,
}

fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<Header> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.first().is_some_and(|f| f.starts_with("d=")) {
        let mut header = Header {
            dim: 0,
            count: None,
            seed: None,
            source: None,
        };
        for f in fields {
            let (key, value) = f
                .split_once('=')
                .ok_or_else(|| parse_err(path, line_no, format!("malformed header field `{f}`")))?;
            let bad = |what: &str| parse_err(path, line_no, format!("invalid {what} `{value}`"));
            match key {
                "d" => header.dim = value.parse().map_err(|_| bad("dimension"))?,
                "N" => header.count = Some(value.parse().map_err(|_| bad("count"))?),
                "seed" => header.seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "source" => header.source = Some(DatasetSource::parse(value)),
                other => {
                    return Err(parse_err(path, line_no, format!("unknown header key `{other}`")))
                }
            }
        }
        if header.dim == 0 {
            return Err(parse_err(path, line_no, "dimension must be at least 1"));
        }
        Ok(header)
    } else if fields.iter().enumerate().all(|(i, f)| *f == format!("x{i}")) {
        Ok(Header {
            dim: fields.len(),
            count: None,
            seed: None,
            source: None,
        })
    } else {
        Err(parse_err(
            path,
            line_no,
            "expected a `d=..,N=..` header or an `x0,x1,...` column header",
        ))
    }
}

/// Parse dataset text; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "file has no header"))?;
    let header = parse_header(path, header_line, header)?;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (line_no, line) in lines {
        let row = rows + 1;
        let mut cols = 0;
        for (c, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    path,
                    line_no,
                    format!("row {row}, column {}: cannot parse `{}`", c + 1, field.trim()),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("row {row}, column {}: non-finite value", c + 1),
                ));
            }
            data.push(v);
            cols += 1;
        }
        if cols != header.dim {
            return Err(parse_err(
                path,
                line_no,
                format!("row {row} has {cols} columns, expected {}", header.dim),
            ));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, header_line, "dataset has no rows"));
    }
    if let Some(n) = header.count {
        if n != rows {
            return Err(parse_err(
                path,
                header_line,
                format!("header declares N={n} but file has {rows} rows"),
            ));
        }
    }
    let mut ds = Dataset::from_flat(header.dim, data, header.source.unwrap_or(DatasetSource::File))?;
    ds.seed = header.seed;
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// Load a batch file (or dataset file) as a [`SampleBatch`].
pub fn load_batch(path: impl AsRef<Path>) -> Result<SampleBatch> {
    let ds = load_dataset(path.as_ref())?;
    SampleBatch::from_flat(ds.dim(), ds.as_flat().to_vec(), "file")
}

fn push_comments(out: &mut String, comments: &[String]) {
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
}

fn push_rows<'a>(out: &mut String, rows: impl Iterator<Item = &'a [f64]>) {
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
}

pub fn dataset_to_string(dataset: &Dataset, comments: &[String]) -> String {
    let mut out = String::new();
    push_comments(&mut out, comments);
    let _ = write!(out, "d={},N={}", dataset.dim(), dataset.len());
    if let Some(seed) = dataset.seed {
        let _ = write!(out, ",seed={seed}");
    }
    let _ = writeln!(out, ",source={}", dataset.source);
    push_rows(&mut out, dataset.iter());
    out
}

pub fn batch_to_string(batch: &SampleBatch, comments: &[String]) -> String {
    let mut out = String::new();
    push_comments(&mut out, comments);
    let header: Vec<String> = (0..batch.dim()).map(|i| format!("x{i}")).collect();
    let _ = writeln!(out, "{}", header.join(","));
    push_rows(&mut out, batch.iter());
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    write_text(path, &dataset_to_string(dataset, comments))
}

pub fn save_batch(batch: &SampleBatch, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    write_text(path, &batch_to_string(batch, comments))
}

/// A CSV table with a header row; cells are already formatted.
pub fn table_to_string(comments: &[String], header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    push_comments(&mut out, comments);
    let _ = writeln!(out, "{}", header.join(","));
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dataset_header() {
        let text = "# hello\nd=2,N=3\n1,2\n3,4\n-0.5,1e-3\n";
        let ds = parse_dataset(text, Path::new("mem")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.point(2), &[-0.5, 1e-3]);
        assert_eq!(ds.source, DatasetSource::File);
    }

    #[test]
    fn nan_row_is_named() {
        let text = "d=1,N=3\n1\nNaN\n2\n";
        let err = parse_dataset(text, Path::new("mem")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("mem:3"), "{msg}");
    }

    #[test]
    fn count_and_width_mismatch() {
        assert!(parse_dataset("d=2,N=2\n1,2\n", Path::new("m")).is_err());
        let err = parse_dataset("d=2\n1,2\n1,2,3\n", Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("row 2 has 3 columns"));
        assert!(parse_dataset("d=2,N=0\n", Path::new("m")).is_err());
        assert!(parse_dataset("", Path::new("m")).is_err());
        assert!(parse_dataset("a,b\n1,2\n", Path::new("m")).is_err());
    }

    #[test]
    fn batch_header_accepted() {
        let ds = parse_dataset("# c\nx0,x1,x2\n1,2,3\n", Path::new("m")).unwrap();
        assert_eq!(ds.dim(), 3);
    }

    #[test]
    fn metadata_round_trip() {
        let ds = Dataset::from_points(&[vec![0.1, -0.0], vec![1e300, 5e-324]])
            .unwrap()
            .with_seed(99);
        let text = dataset_to_string(&ds, &["config".into()]);
        let back = parse_dataset(&text, Path::new("m")).unwrap();
        assert_eq!(back.seed, Some(99));
        assert_eq!(back.source, ds.source);
        for (a, b) in back.as_flat().iter().zip(ds.as_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
