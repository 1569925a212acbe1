//! Plain-text matrix format.
//!
//! ```text
//! rows cols
//! a11 a12 ... a1c
//! ...
//! ar1 ar2 ... arc
//! ```
//!
//! Entries are whitespace-separated decimal literals. Output uses 17
//! significant digits so values round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub fn parse_matrix(src: &str, origin: &str) -> Result<Mat> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = src.lines().enumerate();
    let (hdr_no, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty input, expected `rows cols` header".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(perr(hdr_no + 1, format!("expected `rows cols`, found {header:?}")));
    }
    let parse_dim = |tok: &str| -> Result<usize> {
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(perr(hdr_no + 1, format!("invalid dimension {tok:?}"))),
        }
    };
    let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);

    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (no, line) = lines
            .next()
            .ok_or_else(|| perr(r + 2, format!("expected {rows} data rows, found {r}")))?;
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(no + 1, format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(perr(no + 1, format!("non-finite value {tok:?}")));
            }
            data.push(v);
            count += 1;
        }
        if count != cols {
            return Err(perr(no + 1, format!("expected {cols} values, found {count}")));
        }
    }
    for (no, line) in lines {
        if !line.trim().is_empty() {
            return Err(perr(no + 1, "unexpected content after the last data row".into()));
        }
    }
    Ok(Mat::from_row_slice(rows, cols, &data))
}

pub fn format_matrix(m: &Mat) -> String {
    let mut out = String::new();
    writeln!(out, "{} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.16e}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_matrix(&src, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    std::fs::write(path, format_matrix(m)).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
