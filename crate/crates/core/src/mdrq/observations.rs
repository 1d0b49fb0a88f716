use rayon::prelude::*;

use super::encode::ReportMatrix;
use crate::domain::DomainSpec;
use crate::error::{domain_err, shape_err, Error, Result};

/// Largest number of cells a dense observation vector may have.
pub const MAX_DENSE_CELLS: usize = 1 << 24;

pub(crate) fn check_gate(domain: &DomainSpec) -> Result<()> {
    if domain.total_size() > MAX_DENSE_CELLS {
        return Err(Error::Capacity(format!(
            "domain has {} cells, dense storage is limited to {MAX_DENSE_CELLS}",
            domain.total_size()
        )));
    }
    Ok(())
}

/// `o_x = sum_i prod_d R_i[d, x_d]` for every cell, indexed by flat index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observations {
    domain: DomainSpec,
    values: Vec<i64>,
    owner_count: Option<u64>,
}

impl Observations {
    /// Wraps externally supplied values. Parity and magnitude are checked when `owner_count` is known.
    pub fn from_values(domain: DomainSpec, values: Vec<i64>, owner_count: Option<u64>) -> Result<Self> {
        check_gate(&domain)?;
        if values.len() != domain.total_size() {
            return Err(shape_err!("{} observations for a domain of {} cells", values.len(), domain.total_size()));
        }
        if let Some(n) = owner_count {
            let n = n as i64;
            if let Some(i) = values.iter().position(|&o| o.abs() > n || (o - n).rem_euclid(2) != 0) {
                return Err(domain_err!("observation {} = {} is inconsistent with n = {n}", i + 1, values[i]));
            }
        }
        Ok(Observations { domain, values, owner_count })
    }

    pub fn empty(domain: DomainSpec) -> Result<Self> {
        check_gate(&domain)?;
        let values = vec![0; domain.total_size()];
        Ok(Observations { domain, values, owner_count: Some(0) })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    /// `o` at a 1-based flat index.
    pub fn value(&self, flat_index: usize) -> i64 {
        self.values[flat_index - 1]
    }

    pub fn owner_count(&self) -> Option<u64> {
        self.owner_count
    }

    pub fn add_report(&mut self, report: &ReportMatrix) -> Result<()> {
        check_report(report, &self.domain)?;
        let mut scratch = Vec::new();
        add_products(&mut self.values, &mut scratch, report);
        self.owner_count = self.owner_count.map(|n| n + 1);
        Ok(())
    }

    /// Adds another aggregate over the same domain.
    pub fn merge(&mut self, other: &Observations) -> Result<()> {
        if self.domain != other.domain {
            return Err(shape_err!("cannot merge observations over different domains"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self.owner_count = self.owner_count.zip(other.owner_count).map(|(a, b)| a + b);
        Ok(())
    }
}

pub(crate) fn check_report(report: &ReportMatrix, domain: &DomainSpec) -> Result<()> {
    let ok = report.num_dims() == domain.num_dims()
        && report.rows().iter().zip(domain.dims()).all(|(r, &m)| r.len() == m);
    if ok {
        Ok(())
    } else {
        Err(shape_err!("report shape does not match domain {:?}", domain.dims()))
    }
}

/// Adds the outer product of the report rows into `acc` (dimension 1 fastest).
fn add_products(acc: &mut [i64], scratch: &mut Vec<i8>, report: &ReportMatrix) {
    let rows = report.rows();
    scratch.clear();
    scratch.extend_from_slice(&rows[rows.len() - 1]);
    let mut next = Vec::with_capacity(acc.len());
    for row in rows[..rows.len() - 1].iter().rev() {
        next.clear();
        for &outer in scratch.iter() {
            next.extend(row.iter().map(|&b| outer * b));
        }
        std::mem::swap(scratch, &mut next);
    }
    for (a, &p) in acc.iter_mut().zip(scratch.iter()) {
        *a += p as i64;
    }
}

/// Aggregates reports into observations. Integer partial sums make the parallel reduction exact.
pub fn accumulate_observations(reports: &[ReportMatrix], domain: &DomainSpec) -> Result<Observations> {
    check_gate(domain)?;
    for r in reports {
        check_report(r, domain)?;
    }
    let total = domain.total_size();
    let values = reports
        .par_iter()
        .fold(
            || (vec![0i64; total], Vec::new()),
            |(mut acc, mut scratch), r| {
                add_products(&mut acc, &mut scratch, r);
                (acc, scratch)
            },
        )
        .map(|(acc, _)| acc)
        .reduce(
            || vec![0i64; total],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(Observations { domain: domain.clone(), values, owner_count: Some(reports.len() as u64) })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The two report matrices of the worked example (n = 2, D = 2, m = 3).
    fn worked_example() -> (DomainSpec, Vec<ReportMatrix>) {
        let dom = DomainSpec::cube(3, 2).unwrap();
        let r1 = ReportMatrix::from_rows(vec![vec![1, -1, 1], vec![-1, -1, -1]], &dom).unwrap();
        let r2 = ReportMatrix::from_rows(vec![vec![1, 1, -1], vec![1, -1, -1]], &dom).unwrap();
        (dom, vec![r1, r2])
    }

    #[test]
    fn worked_example_cells() {
        let (dom, reports) = worked_example();
        let obs = accumulate_observations(&reports, &dom).unwrap();
        assert_eq!(obs.value(dom.flat_index(&[1, 1]).unwrap()), 0);
        assert_eq!(obs.value(dom.flat_index(&[2, 1]).unwrap()), 2);
        assert_eq!(obs.owner_count(), Some(2));
    }

    #[test]
    fn all_plus_report_gives_ones() {
        let dom = DomainSpec::new(vec![2, 3, 2]).unwrap();
        let r = ReportMatrix::threshold(&[1, 1, 1], &dom).unwrap();
        let obs = accumulate_observations(&[r], &dom).unwrap();
        assert!(obs.values().iter().all(|&o| o == 1));
    }

    #[test]
    fn dense_matches_cellwise_products() {
        let dom = DomainSpec::new(vec![3, 2, 4]).unwrap();
        let reports: Vec<ReportMatrix> = (0..7)
            .map(|i| {
                let rows = dom
                    .dims()
                    .iter()
                    .enumerate()
                    .map(|(d, &m)| (0..m).map(|j| if (i * 7 + d * 3 + j) % 3 == 0 { -1 } else { 1 }).collect())
                    .collect();
                ReportMatrix::from_rows(rows, &dom).unwrap()
            })
            .collect();
        let obs = accumulate_observations(&reports, &dom).unwrap();
        let mut inc = Observations::empty(dom.clone()).unwrap();
        for r in &reports {
            inc.add_report(r).unwrap();
        }
        assert_eq!(obs, inc);
        for x in dom.values() {
            let direct: i64 = reports.iter().map(|r| r.cell_product(&x) as i64).sum();
            assert_eq!(obs.value(dom.flat_index(&x).unwrap()), direct);
        }
    }

    #[test]
    fn gate_and_shape_errors() {
        let big = DomainSpec::cube(2, 25).unwrap();
        assert!(matches!(accumulate_observations(&[], &big), Err(Error::Capacity(_))));
        let dom = DomainSpec::line(3).unwrap();
        let other = DomainSpec::line(4).unwrap();
        let r = ReportMatrix::threshold(&[2], &other).unwrap();
        assert!(matches!(accumulate_observations(&[r], &dom), Err(Error::Shape(_))));
        assert!(Observations::from_values(dom.clone(), vec![1, 2, 3], Some(2)).is_err());
        assert!(Observations::from_values(dom.clone(), vec![2, 0, -2], Some(2)).is_ok());
        assert!(Observations::from_values(dom, vec![2, 0], None).is_err());
    }
}
