//! Flat binary and CSV formats for ensembles, densities and derivative fields.
//!
//! Binary files start with the magic `NLAB`, a `u32` format version and a
//! `u8` kind tag, followed by a kind-specific header and a row-major
//! little-endian `f64` payload. CSV output renders every number with the
//! shortest decimal that round-trips exactly.

use std::io::{Read, Write};

use crate::density::{DensityField, GridSpec};
use crate::error::{Error, Result};
use crate::nelson::DerivativeField;
use crate::simulate::PathEnsemble;

const MAGIC: &[u8; 4] = b"NLAB";
const VERSION: u32 = 1;
const KIND_ENSEMBLE: u8 = 1;
const KIND_DENSITY: u8 = 2;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

fn write_preamble(w: &mut impl Write, kind: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    Ok(())
}

fn read_preamble(r: &mut impl Read, kind: u8) -> Result<()> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Io("not a nelsonlab binary file".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Io(format!("unsupported format version {version}")));
    }
    if head[8] != kind {
        return Err(Error::Io(format!("expected record kind {kind}, found {}", head[8])));
    }
    Ok(())
}

fn count(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Io(format!("count {v} does not fit in memory")))
}

/// Header and states of a binary ensemble file.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDump {
    pub dim: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub first_path: usize,
    pub seed: u64,
    pub dt: f64,
    /// Flat `n_paths × (n_steps + 1) × dim`.
    pub states: Vec<f64>,
}

/// Header `dim, n_paths, n_steps, first_path, seed` (`u64`), `dt` (`f64`),
/// then the states.
pub fn write_ensemble_binary(ensemble: &PathEnsemble, w: &mut impl Write) -> Result<()> {
    write_preamble(w, KIND_ENSEMBLE)?;
    for v in [
        ensemble.dim(),
        ensemble.n_paths(),
        ensemble.n_steps(),
        ensemble.first_path(),
    ] {
        put_u64(w, v as u64)?;
    }
    put_u64(w, ensemble.seed())?;
    put_f64s(w, &[ensemble.dt()])?;
    put_f64s(w, ensemble.states())
}

pub fn read_ensemble_binary(r: &mut impl Read) -> Result<EnsembleDump> {
    read_preamble(r, KIND_ENSEMBLE)?;
    let dim = count(get_u64(r)?)?;
    let n_paths = count(get_u64(r)?)?;
    let n_steps = count(get_u64(r)?)?;
    let first_path = count(get_u64(r)?)?;
    let seed = get_u64(r)?;
    let dt = get_f64(r)?;
    let len = n_paths
        .checked_mul(n_steps + 1)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Io("ensemble header overflows".into()))?;
    Ok(EnsembleDump {
        dim,
        n_paths,
        n_steps,
        first_path,
        seed,
        dt,
        states: get_f64s(r, len)?,
    })
}

/// One row per step: `t, mean_i..., cov_ij...` (row-major covariance).
pub fn write_ensemble_summary_csv(ensemble: &PathEnsemble, w: impl Write) -> Result<()> {
    let d = ensemble.dim();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("mean_{i}")));
    header.extend((0..d * d).map(|k| format!("cov_{}{}", k / d, k % d)));
    out.write_record(&header).map_err(csv_err)?;
    for step in 0..=ensemble.n_steps() {
        let mut row = vec![ensemble.time(step).to_string()];
        row.extend(ensemble.mean(step).iter().map(f64::to_string));
        row.extend(ensemble.covariance(step).iter().map(f64::to_string));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `dim` (`u64`), `t` (`f64`), then per axis `nodes` (`u64`),
/// `lower`, `upper` (`f64`); payload the values.
pub fn write_density_binary(density: &DensityField, w: &mut impl Write) -> Result<()> {
    let grid = density.grid();
    write_preamble(w, KIND_DENSITY)?;
    put_u64(w, grid.dim() as u64)?;
    put_f64s(w, &[density.t()])?;
    for a in 0..grid.dim() {
        put_u64(w, grid.nodes(a) as u64)?;
        put_f64s(w, &[grid.lower(a), grid.upper(a)])?;
    }
    put_f64s(w, density.values())
}

pub fn read_density_binary(r: &mut impl Read) -> Result<DensityField> {
    read_preamble(r, KIND_DENSITY)?;
    let dim = count(get_u64(r)?)?;
    if !(1..=16).contains(&dim) {
        return Err(Error::Io(format!("implausible dimension {dim}")));
    }
    let t = get_f64(r)?;
    let (mut nodes, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..dim {
        nodes.push(count(get_u64(r)?)?);
        lower.push(get_f64(r)?);
        upper.push(get_f64(r)?);
    }
    let grid = GridSpec::new(lower, upper, nodes)?;
    let values = get_f64s(r, grid.n_nodes())?;
    DensityField::new(grid, t, values)
}

/// Columns `x0.., p`, one row per node in grid order; `t` goes in the `t`
/// column of every row.
pub fn write_density_csv(density: &DensityField, w: impl Write) -> Result<()> {
    let grid = density.grid();
    let d = grid.dim();
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..d).map(|a| format!("x{a}")));
    header.push("p".into());
    out.write_record(&header).map_err(csv_err)?;
    for (node, v) in density.values().iter().enumerate() {
        let mut row = vec![density.t().to_string()];
        row.extend(grid.node_coords(node).iter().map(f64::to_string));
        row.push(v.to_string());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads [`write_density_csv`] output. Rows must list the nodes of a regular
/// grid in grid order (axis 0 slowest).
pub fn read_density_csv(r: impl Read) -> Result<DensityField> {
    let mut reader = csv::Reader::from_reader(r);
    let d = reader.headers().map_err(csv_err)?.len().saturating_sub(2);
    if d == 0 {
        return Err(Error::Io("density CSV needs columns t, x0.., p".into()));
    }
    let (mut t, mut coords, mut values) = (None, Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Io(format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if nums.len() != d + 2 {
            return Err(Error::Io(format!("expected {} columns, found {}", d + 2, nums.len())));
        }
        t.get_or_insert(nums[0]);
        coords.push(nums[1..=d].to_vec());
        values.push(nums[d + 1]);
    }
    let t = t.ok_or_else(|| Error::Io("density CSV has no rows".into()))?;
    let (mut lower, mut upper, mut nodes) = (Vec::new(), Vec::new(), Vec::new());
    for a in 0..d {
        let mut axis: Vec<f64> = coords.iter().map(|c| c[a]).collect();
        axis.sort_by(f64::total_cmp);
        axis.dedup();
        lower.push(axis[0]);
        upper.push(*axis.last().expect("non-empty"));
        nodes.push(axis.len());
    }
    let grid = GridSpec::new(lower, upper, nodes)?;
    if grid.n_nodes() != values.len() {
        return Err(Error::Io("rows do not form a full regular grid".into()));
    }
    for (node, c) in coords.iter().enumerate() {
        let expect = grid.node_coords(node);
        let tol: Vec<f64> = (0..d).map(|a| 1e-9 * grid.spacing(a)).collect();
        if c.iter().zip(&expect).zip(&tol).any(|((x, y), tl)| (x - y).abs() > *tl) {
            return Err(Error::Io(format!("row {node} is out of grid order")));
        }
    }
    DensityField::new(grid, t, values)
}

/// Columns `x0.., v0.., valid`; complex fields give `re_i, im_i` pairs.
pub fn write_field_csv(field: &DerivativeField, w: impl Write) -> Result<()> {
    let grid = field.grid();
    let (d, c) = (grid.dim(), field.components());
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
    if field.kind().is_complex() {
        header.extend((0..c).flat_map(|i| [format!("re_{i}"), format!("im_{i}")]));
    } else {
        header.extend((0..c).map(|i| format!("v{i}")));
    }
    header.push("valid".into());
    out.write_record(&header).map_err(csv_err)?;
    let width = field.width();
    for node in 0..grid.n_nodes() {
        let mut row: Vec<String> = grid.node_coords(node).iter().map(f64::to_string).collect();
        row.extend(
            field.values()[node * width..(node + 1) * width]
                .iter()
                .map(f64::to_string),
        );
        row.push(if field.mask()[node] { "1" } else { "0" }.into());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
