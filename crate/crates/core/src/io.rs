//! File formats. All indices are 1-based.
//!
//! * mechanism: JSON `{"A": [[..]], "B": [[..]], "s": [..]}`
//! * matrix-mechanism reports: CSV `owner_id,k,value`
//! * range-query reports: CSV `owner_id,dim,bits` with bits over `{+, -}`
//! * observations: CSV `flat_index,value`
//! * data: headerless CSV, `D` integer coordinates and an optional trailing weight; `#` starts a comment line

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{domain_err, shape_err, Error, Result};
use crate::matrix_mech::{MatrixMechanism, OwnerReport};
use crate::mdrq::{Observations, ReportMatrix};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MechanismFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    s: Vec<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(shape_err!("matrix {name} must be a non-empty rectangular array"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn mechanism_to_json(mech: &MatrixMechanism) -> Result<String> {
    let file = MechanismFile { a: to_rows(mech.strategy()), b: to_rows(mech.reconstruction()), s: mech.scales().to_vec() };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// The workload is taken to be `B * A`.
pub fn mechanism_from_json(text: &str) -> Result<MatrixMechanism> {
    let file: MechanismFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad mechanism file: {e}")))?;
    MatrixMechanism::from_factors(from_rows(&file.a, "A")?, from_rows(&file.b, "B")?, file.s)
}

#[derive(Debug, Serialize, Deserialize)]
struct OwnerValueRecord {
    owner_id: usize,
    k: usize,
    value: f64,
}

pub fn write_owner_reports<W: Write>(reports: &[OwnerReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, r) in reports.iter().enumerate() {
        for (k, &value) in r.values.iter().enumerate() {
            w.serialize(OwnerValueRecord { owner_id: i + 1, k: k + 1, value })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reports ordered by owner id; every owner must list `k = 1..p` exactly once.
pub fn read_owner_reports<R: Read>(input: R) -> Result<Vec<OwnerReport>> {
    let mut owners: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for rec in csv::Reader::from_reader(input).deserialize() {
        let rec: OwnerValueRecord = rec?;
        if owners.entry(rec.owner_id).or_default().insert(rec.k, rec.value).is_some() {
            return Err(domain_err!("owner {} reports k = {} twice", rec.owner_id, rec.k));
        }
    }
    owners
        .into_iter()
        .map(|(id, vals)| {
            if vals.keys().copied().ne(1..=vals.len()) {
                return Err(shape_err!("owner {id} does not report k = 1..{}", vals.len()));
            }
            Ok(OwnerReport { values: vals.into_values().collect() })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct BitsRecord {
    owner_id: usize,
    dim: usize,
    bits: String,
}

pub fn write_reports<W: Write>(reports: &[ReportMatrix], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, r) in reports.iter().enumerate() {
        for d in 1..=r.num_dims() {
            w.serialize(BitsRecord { owner_id: i + 1, dim: d, bits: r.bits(d) })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads reports and infers the domain from the bit-string lengths.
pub fn read_reports<R: Read>(input: R) -> Result<(Vec<ReportMatrix>, DomainSpec)> {
    let mut owners: BTreeMap<usize, BTreeMap<usize, Vec<i8>>> = BTreeMap::new();
    for rec in csv::Reader::from_reader(input).deserialize() {
        let rec: BitsRecord = rec?;
        let row = ReportMatrix::parse_bits(rec.bits.trim())?;
        if owners.entry(rec.owner_id).or_default().insert(rec.dim, row).is_some() {
            return Err(domain_err!("owner {} reports dimension {} twice", rec.owner_id, rec.dim));
        }
    }
    let first = owners.values().next().ok_or_else(|| Error::Config("report file has no rows".into()))?;
    let domain = DomainSpec::new(first.values().map(Vec::len).collect())?;
    let reports = owners
        .into_iter()
        .map(|(id, rows)| {
            if rows.keys().copied().ne(1..=rows.len()) {
                return Err(shape_err!("owner {id} does not report dimensions 1..{}", rows.len()));
            }
            ReportMatrix::from_rows(rows.into_values().collect(), &domain)
                .map_err(|e| shape_err!("owner {id}: {e}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, domain))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    flat_index: usize,
    value: i64,
}

pub fn write_observations<W: Write>(obs: &Observations, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, &value) in obs.values().iter().enumerate() {
        w.serialize(ObservationRecord { flat_index: i + 1, value })?;
    }
    w.flush()?;
    Ok(())
}

/// Every cell of `domain` must appear exactly once.
pub fn read_observations<R: Read>(input: R, domain: &DomainSpec, owner_count: Option<u64>) -> Result<Observations> {
    let total = domain.total_size();
    let mut values: Vec<Option<i64>> = vec![None; total];
    for rec in csv::Reader::from_reader(input).deserialize() {
        let rec: ObservationRecord = rec?;
        if rec.flat_index == 0 || rec.flat_index > total {
            return Err(domain_err!("flat index {} outside [1, {total}]", rec.flat_index));
        }
        if values[rec.flat_index - 1].replace(rec.value).is_some() {
            return Err(domain_err!("flat index {} listed twice", rec.flat_index));
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| shape_err!("observation for flat index {} missing", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    Observations::from_values(domain.clone(), values, owner_count)
}

/// Rows of `dims` coordinates, plus one weight column when present on every row.
pub fn read_data<R: Read>(input: R, dims: usize) -> Result<(Vec<Vec<usize>>, Option<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut values = Vec::new();
    let mut weights = Vec::new();
    let mut weighted: Option<bool> = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let has_weight = match rec.len() {
            n if n == dims => false,
            n if n == dims + 1 => true,
            n => return Err(shape_err!("data row {} has {n} columns, expected {dims} or {}", line + 1, dims + 1)),
        };
        if *weighted.get_or_insert(has_weight) != has_weight {
            return Err(shape_err!("data row {} disagrees with earlier rows about the weight column", line + 1));
        }
        let x = rec
            .iter()
            .take(dims)
            .map(|f| f.parse::<usize>().map_err(|_| domain_err!("data row {}: bad coordinate {f:?}", line + 1)))
            .collect::<Result<Vec<_>>>()?;
        values.push(x);
        if has_weight {
            let f = &rec[dims];
            weights.push(f.parse::<f64>().map_err(|_| domain_err!("data row {}: bad weight {f:?}", line + 1))?);
        }
    }
    Ok((values, weighted.unwrap_or(false).then_some(weights)))
}
