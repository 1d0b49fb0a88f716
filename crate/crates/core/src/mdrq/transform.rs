//! Rows of the inverse transform `B^-1` and their range sums, generated per
//! dimension and combined as a tensor product. Nothing is materialized.

use std::fmt;
use std::str::FromStr;

use crate::domain::DomainSpec;
use crate::error::{domain_err, Error, Result};

/// Sparse vector over flat indices (1-based, strictly increasing).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sum coef * o[index]` over dense observations (1-based indices).
    pub fn dot(&self, o: &[i64]) -> f64 {
        self.entries.iter().map(|&(i, c)| c * o[i - 1] as f64).sum()
    }
}

type Factor = Vec<(usize, f64)>;

/// Per-dimension row of the 1-D inverse.
fn binv_factor(x: usize, m: usize) -> Factor {
    match (x, m) {
        (_, 1) => vec![(1, 1.0)],
        (1, _) => vec![(1, 0.5), (m, 0.5)],
        _ => vec![(x - 1, -0.5), (x, 0.5)],
    }
}

/// Per-dimension sum of 1-D inverse rows `l..=r`; the interior rows telescope.
fn range_factor(l: usize, r: usize, m: usize) -> Factor {
    if l == 1 && r == m {
        vec![(m, 1.0)]
    } else if l == 1 {
        vec![(r, 0.5), (m, 0.5)]
    } else {
        vec![(l - 1, -0.5), (r, 0.5)]
    }
}

/// Tensor product of per-dimension factors. Iterating the last dimension
/// outermost keeps the flat indices increasing.
fn tensor(factors: &[Factor], domain: &DomainSpec) -> SparseRow {
    let strides = domain.strides();
    let mut entries: Vec<(usize, f64)> = vec![(1, 1.0)];
    for (d, f) in factors.iter().enumerate().rev() {
        let mut next = Vec::with_capacity(entries.len() * f.len());
        for &(idx, c) in &entries {
            for &(j, cj) in f {
                next.push((idx + strides[d] * (j - 1), c * cj));
            }
        }
        entries = next;
    }
    entries.sort_by_key(|e| e.0);
    SparseRow { entries }
}

/// Row `ind(x)` of `B^-1` (heterogeneous sizes allowed).
pub fn binv_row(x: &[usize], domain: &DomainSpec) -> Result<SparseRow> {
    domain.check(x)?;
    let factors: Vec<Factor> = x.iter().zip(domain.dims()).map(|(&xd, &m)| binv_factor(xd, m)).collect();
    Ok(tensor(&factors, domain))
}

/// `sum_{x in R}` of the rows of `B^-1`, with `2^{D_R}` entries.
pub fn range_row_sum(query: &RangeQuery, domain: &DomainSpec) -> Result<SparseRow> {
    query.check(domain)?;
    let factors: Vec<Factor> =
        query.bounds.iter().zip(domain.dims()).map(|(&(l, r), &m)| range_factor(l, r, m)).collect();
    Ok(tensor(&factors, domain))
}

/// Closed box `[l_1, r_1] x ... x [l_D, r_D]`, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeQuery {
    pub bounds: Vec<(usize, usize)>,
}

impl RangeQuery {
    pub fn new(bounds: Vec<(usize, usize)>, domain: &DomainSpec) -> Result<Self> {
        let q = RangeQuery { bounds };
        q.check(domain)?;
        Ok(q)
    }

    pub fn point(x: &[usize]) -> Self {
        RangeQuery { bounds: x.iter().map(|&v| (v, v)).collect() }
    }

    pub fn full(domain: &DomainSpec) -> Self {
        RangeQuery { bounds: domain.dims().iter().map(|&m| (1, m)).collect() }
    }

    pub fn num_dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn check(&self, domain: &DomainSpec) -> Result<()> {
        if self.bounds.len() != domain.num_dims() {
            return Err(domain_err!(
                "query has {} dimensions, domain has {}",
                self.bounds.len(),
                domain.num_dims()
            ));
        }
        for (d, (&(l, r), &m)) in self.bounds.iter().zip(domain.dims()).enumerate() {
            if l < 1 || l > r || r > m {
                return Err(domain_err!("interval [{l}, {r}] invalid in dimension {} of size {m}", d + 1));
            }
        }
        Ok(())
    }

    /// Number of dimensions whose interval is not the whole `[1, m_d]`.
    pub fn nontrivial_dims(&self, domain: &DomainSpec) -> usize {
        self.bounds.iter().zip(domain.dims()).filter(|(&(l, r), &m)| !(l == 1 && r == m)).count()
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(&v, &(l, r))| l <= v && v <= r)
    }

    /// Appends `[l, r]` as a new last dimension.
    pub fn with_extra_dim(&self, l: usize, r: usize) -> Self {
        let mut bounds = self.bounds.clone();
        bounds.push((l, r));
        RangeQuery { bounds }
    }

    /// All cells of the box, dimension 1 fastest.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for &(l, r) in self.bounds.iter().rev() {
            out = out
                .into_iter()
                .flat_map(|tail| {
                    (l..=r).map(move |v| {
                        let mut x = vec![v];
                        x.extend(&tail);
                        x
                    })
                })
                .collect();
        }
        out
    }
}

impl FromStr for RangeQuery {
    type Err = Error;

    /// Parses `"l1:r1,l2:r2,..."`; a bare `v` means `v:v`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| -> Result<usize> {
            t.trim().parse::<usize>().map_err(|_| domain_err!("bad range bound {t:?} in {s:?}"))
        };
        let bounds = s
            .split(',')
            .map(|part| match part.split_once(':') {
                Some((l, r)) => Ok((parse(l)?, parse(r)?)),
                None => parse(part).map(|v| (v, v)),
            })
            .collect::<Result<Vec<_>>>()?;
        if bounds.iter().any(|&(l, r)| l == 0 || l > r) {
            return Err(domain_err!("range {s:?} needs 1 <= l <= r in every dimension"));
        }
        Ok(RangeQuery { bounds })
    }
}

impl fmt::Display for RangeQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.bounds.iter().map(|(l, r)| format!("{l}:{r}")).collect();
        write!(f, "{}", parts.join(","))
    }
}
