//! Tensor file formats.
//!
//! Binary: the magic bytes `DTEN1`, the order as little-endian `u32`, one
//! little-endian `u32` per dimension, then the values as little-endian
//! IEEE-754 `f64`, first index fastest.
//!
//! Text: a header line `dten <d1> <d2> ...` followed by whitespace-separated
//! values in the same order. Matrices use the same formats with order 2.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 5] = b"DTEN1";
const TEXT_TAG: &str = "dten";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorFormat {
    Binary,
    Text,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Format(format!("invalid dimensions {dims:?}")));
    }
    Ok(())
}

pub fn write_binary<S: Scalar, W: Write>(t: &DenseTensor<S>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let order = u32::try_from(t.order()).map_err(|_| Error::Format("order exceeds u32".into()))?;
    w.write_all(&order.to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &v in t.values() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text<S: Scalar, W: Write>(t: &DenseTensor<S>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    write!(w, "{TEXT_TAG}")?;
    for d in t.shape() {
        write!(w, " {d}")?;
    }
    writeln!(w)?;
    // One mode-1 fiber per line.
    let n0 = t.shape()[0];
    for fiber in t.values().chunks(n0) {
        let line: Vec<String> = fiber.iter().map(|v| format!("{:e}", v.to_f64_lossy())).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_binary_dims<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let order = read_u32(r)? as usize;
    let dims = (0..order)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    check_dims(&dims)?;
    Ok(dims)
}

fn parse_text_header(line: &str) -> Result<Vec<usize>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(TEXT_TAG) {
        return Err(Error::Format(format!(
            "expected header starting with '{TEXT_TAG}', got {line:?}"
        )));
    }
    let dims = parts
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| Error::Format(format!("bad dimension {p:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_dims(&dims)?;
    Ok(dims)
}

/// Reads either format, detected from the leading bytes.
pub fn read_tensor<S: Scalar, R: Read>(r: R) -> Result<DenseTensor<S>> {
    let mut r = BufReader::new(r);
    let head = r.fill_buf()?;
    if head.starts_with(MAGIC) {
        r.consume(MAGIC.len());
        let dims = read_binary_dims(&mut r)?;
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for i in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("expected {count} values, found {i}")))?;
            values.push(S::lit(f64::from_le_bytes(buf)));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after tensor payload".into()));
        }
        return DenseTensor::new(dims, values);
    }

    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines
        .by_ref()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Format("empty tensor file".into()))?;
    let dims = parse_text_header(header)?;
    let count: usize = dims.iter().product();
    let mut values = Vec::with_capacity(count);
    for (lineno, line) in lines.enumerate() {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| {
                Error::Format(format!("line {}: bad value {tok:?}: {e}", lineno + 2))
            })?;
            values.push(S::lit(v));
        }
    }
    if values.len() != count {
        return Err(Error::Format(format!(
            "header {dims:?} needs {count} values, found {}",
            values.len()
        )));
    }
    DenseTensor::new(dims, values)
}

pub fn read_tensor_path<S: Scalar>(path: impl AsRef<Path>) -> Result<DenseTensor<S>> {
    read_tensor(File::open(path)?)
}

/// Reads only the format and dimensions of a tensor file.
pub fn read_header(path: impl AsRef<Path>) -> Result<(TensorFormat, Vec<usize>)> {
    let mut r = BufReader::new(File::open(path)?);
    let head = r.fill_buf()?;
    if head.starts_with(MAGIC) {
        r.consume(MAGIC.len());
        return Ok((TensorFormat::Binary, read_binary_dims(&mut r)?));
    }
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("empty tensor file".into()));
        }
        if !line.trim().is_empty() {
            break;
        }
    }
    Ok((TensorFormat::Text, parse_text_header(&line)?))
}
