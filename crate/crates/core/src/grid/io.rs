//! Field persistence: raw little-endian `f64` binary plus a `key=value`
//! sidecar.
//!
//! For a base path `out/u` the pair is `out/u.bin` and `out/u.meta`. The
//! binary holds each component as one contiguous block in
//! `(level, y, x)` order. The sidecar carries the grid, the component names,
//! the support (`full` grid or `interior` residual nodes) and a SHA-256 of
//! the binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{GridSpec, ScalarField, VectorField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// Every node at levels `0..=nt`.
    Full,
    /// Interior nodes at levels `1..=nt`.
    Interior,
}

impl Support {
    fn points(self, g: &GridSpec) -> usize {
        match self {
            Support::Full => g.len(),
            Support::Interior => g.sample_count(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Support::Full => "full",
            Support::Interior => "interior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMeta {
    pub grid: GridSpec,
    pub components: Vec<String>,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub meta: FieldMeta,
    /// One block per component.
    pub data: Vec<Vec<f64>>,
}

impl FieldFile {
    pub fn scalar(name: &str, f: &ScalarField) -> Self {
        Self {
            meta: FieldMeta {
                grid: f.grid,
                components: vec![name.to_string()],
                support: Support::Full,
            },
            data: vec![f.values.clone()],
        }
    }

    pub fn vector(f: &VectorField) -> Self {
        Self {
            meta: FieldMeta {
                grid: f.grid,
                components: vec!["u1".into(), "u2".into()],
                support: Support::Full,
            },
            data: vec![f.u1.clone(), f.u2.clone()],
        }
    }

    /// Interleaved interior samples (`dim` values per sample) split into
    /// component blocks.
    pub fn samples(grid: GridSpec, names: &[&str], interleaved: &[f64]) -> Self {
        let dim = names.len();
        let data = (0..dim)
            .map(|c| interleaved.iter().skip(c).step_by(dim).copied().collect())
            .collect();
        Self {
            meta: FieldMeta {
                grid,
                components: names.iter().map(|s| s.to_string()).collect(),
                support: Support::Interior,
            },
            data,
        }
    }

    pub fn interleaved(&self) -> Vec<f64> {
        let dim = self.data.len();
        let n = self.data.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(dim * n);
        for s in 0..n {
            for c in &self.data {
                out.push(c[s]);
            }
        }
        out
    }

    pub fn into_vector(self) -> Result<VectorField> {
        if self.data.len() != 2 || self.meta.support != Support::Full {
            return Err(Error::Config("field file is not a full-grid vector field".into()));
        }
        let mut it = self.data.into_iter();
        VectorField::new(self.meta.grid, it.next().unwrap(), it.next().unwrap())
    }

    pub fn into_scalar(self) -> Result<ScalarField> {
        if self.data.len() != 1 || self.meta.support != Support::Full {
            return Err(Error::Config("field file is not a full-grid scalar field".into()));
        }
        ScalarField::new(self.meta.grid, self.data.into_iter().next().unwrap())
    }
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_field(base: &Path, file: &FieldFile) -> Result<()> {
    let g = &file.meta.grid;
    let points = file.meta.support.points(g);
    let mut bytes = Vec::with_capacity(points * 8 * file.data.len());
    for block in &file.data {
        if block.len() != points {
            return Err(Error::Config(format!(
                "component has {} values, support needs {points}",
                block.len()
            )));
        }
        for v in block {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    let mut meta = String::new();
    let _ = writeln!(meta, "nx={}", g.nx);
    let _ = writeln!(meta, "ny={}", g.ny);
    let _ = writeln!(meta, "nt={}", g.nt);
    let _ = writeln!(meta, "lx={:?}", g.lx);
    let _ = writeln!(meta, "ly={:?}", g.ly);
    let _ = writeln!(meta, "t_end={:?}", g.t_end);
    let _ = writeln!(meta, "components={}", file.meta.components.join(","));
    let _ = writeln!(meta, "layout=component,level,y,x");
    let _ = writeln!(meta, "support={}", file.meta.support.name());
    let _ = writeln!(meta, "dtype=f64le");
    let _ = writeln!(meta, "sha256={digest}");
    fs::write(with_ext(base, "bin"), bytes)?;
    fs::write(with_ext(base, "meta"), meta)?;
    Ok(())
}

pub fn read_field(base: &Path) -> Result<FieldFile> {
    let meta_path = with_ext(base, "meta");
    let text = fs::read_to_string(&meta_path)?;
    let bad = |reason: String| Error::Metadata {
        path: meta_path.clone(),
        reason,
    };
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line without '=': {line}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing key {k}")));
    let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
    let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
    let grid = GridSpec::new(
        int("nx")?,
        int("ny")?,
        int("nt")?,
        float("lx")?,
        float("ly")?,
        float("t_end")?,
    )?;
    if get("layout")? != "component,level,y,x" || get("dtype")? != "f64le" {
        return Err(bad("unsupported layout or dtype".into()));
    }
    let support = match get("support")?.as_str() {
        "full" => Support::Full,
        "interior" => Support::Interior,
        other => return Err(bad(format!("unknown support {other}"))),
    };
    let components: Vec<String> = get("components")?.split(',').map(str::to_string).collect();
    let expected = get("sha256")?;

    let bin_path = with_ext(base, "bin");
    let bytes = fs::read(&bin_path)?;
    let found = hex::encode(Sha256::digest(&bytes));
    if found != expected {
        return Err(Error::Checksum {
            path: bin_path,
            expected,
            found,
        });
    }
    let points = support.points(&grid);
    if bytes.len() != points * 8 * components.len() {
        return Err(bad(format!("binary has {} bytes", bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = values.chunks(points).map(<[f64]>::to_vec).collect();
    Ok(FieldFile {
        meta: FieldMeta {
            grid,
            components,
            support,
        },
        data,
    })
}

/// Writes a boolean node mask as rows of `0`/`1`, top row = `j = 0`.
pub fn write_mask(path: &Path, nx: usize, mask: &[bool]) -> Result<()> {
    let mut s = String::with_capacity(mask.len() + mask.len() / nx);
    for row in mask.chunks(nx) {
        s.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads a mask written by [`write_mask`]; returns `(nx, ny, mask)`.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let nx = rows.first().map_or(0, |r| r.len());
    let mut mask = Vec::with_capacity(nx * rows.len());
    for row in &rows {
        if row.len() != nx {
            return Err(Error::Metadata {
                path: path.to_path_buf(),
                reason: "ragged mask rows".into(),
            });
        }
        for ch in row.chars() {
            mask.push(match ch {
                '1' => true,
                '0' => false,
                c => {
                    return Err(Error::Metadata {
                        path: path.to_path_buf(),
                        reason: format!("unexpected mask character {c:?}"),
                    })
                }
            });
        }
    }
    Ok((nx, rows.len(), mask))
}
