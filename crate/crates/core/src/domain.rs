//! Finite multi-dimensional value domains `[m_1] x ... x [m_D]`.
//!
//! Values are 1-based coordinate slices. The flat index of a value is
//! `1 + sum_d (prod_{j<d} m_j) (x[d] - 1)`, so dimension 1 varies fastest.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct DomainSpec {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    dims: Vec<usize>,
}

impl TryFrom<DomainRepr> for DomainSpec {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        DomainSpec::new(r.dims)
    }
}

impl From<DomainSpec> for DomainRepr {
    fn from(d: DomainSpec) -> Self {
        DomainRepr { dims: d.dims }
    }
}

impl DomainSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(domain_err!("domain needs at least one dimension"));
        }
        if let Some(d) = dims.iter().position(|&m| m == 0) {
            return Err(domain_err!("dimension {} has size 0", d + 1));
        }
        let mut strides = Vec::with_capacity(dims.len());
        let mut total: usize = 1;
        for &m in &dims {
            strides.push(total);
            total = total
                .checked_mul(m)
                .ok_or_else(|| Error::Capacity(format!("domain {dims:?} overflows usize")))?;
        }
        Ok(DomainSpec { dims, strides, total })
    }

    /// One-dimensional domain `[m]`.
    pub fn line(m: usize) -> Result<Self> {
        Self::new(vec![m])
    }

    /// `[m]^d`.
    pub fn cube(m: usize, d: usize) -> Result<Self> {
        Self::new(vec![m; d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn total_size(&self) -> usize {
        self.total
    }

    pub(crate) fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Each dimension grown by one unused value.
    pub fn with_dummy(&self) -> Self {
        Self::new(self.dims.iter().map(|m| m + 1).collect()).expect("grown domain is valid")
    }

    /// Appends a trailing dimension of size `m`.
    pub fn with_extra_dim(&self, m: usize) -> Result<Self> {
        let mut dims = self.dims.clone();
        dims.push(m);
        Self::new(dims)
    }

    pub fn check(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dims.len() {
            return Err(domain_err!(
                "value has {} coordinates, domain has {} dimensions",
                x.len(),
                self.dims.len()
            ));
        }
        for (d, (&v, &m)) in x.iter().zip(&self.dims).enumerate() {
            if v < 1 || v > m {
                return Err(domain_err!("coordinate {} = {} outside [1, {}]", d + 1, v, m));
            }
        }
        Ok(())
    }

    /// 1-based flat index of `x`.
    pub fn flat_index(&self, x: &[usize]) -> Result<usize> {
        self.check(x)?;
        Ok(self.flat_index_unchecked(x))
    }

    pub(crate) fn flat_index_unchecked(&self, x: &[usize]) -> usize {
        1 + x
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| (v - 1) * s)
            .sum::<usize>()
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn coords(&self, index: usize) -> Result<Vec<usize>> {
        if index < 1 || index > self.total {
            return Err(domain_err!("flat index {} outside [1, {}]", index, self.total));
        }
        let mut rest = index - 1;
        Ok(self
            .dims
            .iter()
            .map(|&m| {
                let v = rest % m + 1;
                rest /= m;
                v
            })
            .collect())
    }

    /// All values in flat-index order.
    pub fn values(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (1..=self.total).map(move |i| self.coords(i).expect("index in range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_examples() {
        let cube = DomainSpec::cube(3, 2).unwrap();
        assert_eq!(cube.flat_index(&[2, 3]).unwrap(), 8);
        assert_eq!(cube.flat_index(&[1, 1]).unwrap(), 1);
        let het = DomainSpec::new(vec![2, 3]).unwrap();
        assert_eq!(het.flat_index(&[2, 3]).unwrap(), 6);
        assert_eq!(het.total_size(), 6);
    }

    #[test]
    fn flat_index_is_a_bijection() {
        let d = DomainSpec::new(vec![3, 1, 4, 2]).unwrap();
        let mut seen = vec![false; d.total_size()];
        for x in d.values() {
            let i = d.flat_index(&x).unwrap();
            assert!(!seen[i - 1]);
            seen[i - 1] = true;
            assert_eq!(d.coords(i).unwrap(), x);
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn rejects_bad_values() {
        let d = DomainSpec::cube(3, 2).unwrap();
        assert!(matches!(d.flat_index(&[0, 1]), Err(Error::Domain(_))));
        assert!(matches!(d.flat_index(&[4, 1]), Err(Error::Domain(_))));
        assert!(matches!(d.flat_index(&[1]), Err(Error::Domain(_))));
        assert!(DomainSpec::new(vec![]).is_err());
        assert!(DomainSpec::new(vec![2, 0]).is_err());
    }

    #[test]
    fn serde_roundtrip_validates() {
        let d: DomainSpec = serde_json::from_str(r#"{"dims":[2,5]}"#).unwrap();
        assert_eq!(d.total_size(), 10);
        assert!(serde_json::from_str::<DomainSpec>(r#"{"dims":[0]}"#).is_err());
    }
}
