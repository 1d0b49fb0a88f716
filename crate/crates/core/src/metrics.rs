//! Metric functions `E(x, x')` over finite domains.
//!
//! A mechanism satisfies E-LDP when, for every pair of inputs, output
//! likelihoods differ by at most a factor `exp(E(x, x'))`. Metrics here are
//! closed-form evaluators; only the explicit-table kind stores values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{domain_err, Error, Result};
use crate::rng::{stream, Lane};

/// Default absolute slack for the triangle inequality.
pub const TRIANGLE_TOLERANCE: f64 = 1e-9;
/// Largest domain validated by full triple enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 256;
/// Sampled triples above [`EXHAUSTIVE_LIMIT`].
pub const DEFAULT_SAMPLES: usize = 100_000;

/// Serializable metric description, not yet bound to a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    /// `epsilon` if either value is in `S`, `2 * epsilon` otherwise.
    SuperSensitive {
        epsilon: f64,
        #[serde(rename = "S")]
        sensitive: Vec<usize>,
    },
    /// `epsilon * ||x - x'||_1`.
    L1 { epsilon: f64 },
    Table { values: Vec<Vec<f64>> },
}

impl MetricSpec {
    pub fn bind(&self, domain: &DomainSpec) -> Result<Metric> {
        match self {
            MetricSpec::SuperSensitive { epsilon, sensitive } => {
                if domain.num_dims() != 1 {
                    return Err(domain_err!("super-sensitive metric needs a 1-dimensional domain"));
                }
                Metric::super_sensitive(domain.total_size(), *epsilon, sensitive)
            }
            MetricSpec::L1 { epsilon } => Metric::l1(domain.clone(), *epsilon),
            MetricSpec::Table { values } => {
                let metric = Metric::table(values.clone())?;
                if metric.domain != *domain {
                    return Err(domain_err!(
                        "table is {}x{} but the domain is {:?}",
                        values.len(),
                        values.len(),
                        domain.dims()
                    ));
                }
                Ok(metric)
            }
        }
    }

    /// Same metric family at a different privacy scale. Tables are unchanged.
    pub fn with_epsilon(&self, epsilon: f64) -> MetricSpec {
        match self {
            MetricSpec::SuperSensitive { sensitive, .. } => MetricSpec::SuperSensitive {
                epsilon,
                sensitive: sensitive.clone(),
            },
            MetricSpec::L1 { .. } => MetricSpec::L1 { epsilon },
            MetricSpec::Table { values } => MetricSpec::Table { values: values.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    SuperSensitive { epsilon: f64, sensitive: Vec<bool> },
    L1 { epsilon: f64 },
    Table { values: Vec<Vec<f64>> },
    Zero,
    Sum(Vec<Metric>),
}

/// A metric bound to its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    kind: Kind,
    domain: DomainSpec,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(domain_err!("epsilon must be positive and finite, got {epsilon}"))
    }
}

impl Metric {
    /// `E_S` on `[m]`. `sensitive` holds 1-based values.
    pub fn super_sensitive(m: usize, epsilon: f64, sensitive: &[usize]) -> Result<Self> {
        check_epsilon(epsilon)?;
        let domain = DomainSpec::line(m)?;
        let mut set = vec![false; m];
        for &v in sensitive {
            if v < 1 || v > m {
                return Err(domain_err!("sensitive value {v} outside [1, {m}]"));
            }
            set[v - 1] = true;
        }
        Ok(Metric {
            kind: Kind::SuperSensitive { epsilon, sensitive: set },
            domain,
        })
    }

    /// Every distinct pair at distance `epsilon`: `E_S` with `S = [m]`.
    pub fn uniform(m: usize, epsilon: f64) -> Result<Self> {
        let all: Vec<usize> = (1..=m).collect();
        Self::super_sensitive(m, epsilon, &all)
    }

    /// `E_L1` over `domain`.
    pub fn l1(domain: DomainSpec, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Metric { kind: Kind::L1 { epsilon }, domain })
    }

    /// Explicit `m x m` table over `[m]`.
    pub fn table(values: Vec<Vec<f64>>) -> Result<Self> {
        let m = values.len();
        if let Some(row) = values.iter().position(|r| r.len() != m) {
            return Err(Error::Shape(format!(
                "table row {} has {} entries, expected {m}",
                row + 1,
                values[row].len()
            )));
        }
        Ok(Metric {
            kind: Kind::Table { values },
            domain: DomainSpec::line(m)?,
        })
    }

    /// Identically zero on `domain`.
    pub fn zero(domain: DomainSpec) -> Self {
        Metric { kind: Kind::Zero, domain }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// Privacy scale for the parametric families.
    pub fn epsilon(&self) -> Option<f64> {
        match &self.kind {
            Kind::SuperSensitive { epsilon, .. } | Kind::L1 { epsilon } => Some(*epsilon),
            _ => None,
        }
    }

    /// 1-based members of `S` for `E_S`.
    pub fn sensitive_set(&self) -> Option<Vec<usize>> {
        match &self.kind {
            Kind::SuperSensitive { sensitive, .. } => Some(
                sensitive
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &s)| s.then_some(i + 1))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn spec(&self) -> Option<MetricSpec> {
        match &self.kind {
            Kind::SuperSensitive { epsilon, .. } => Some(MetricSpec::SuperSensitive {
                epsilon: *epsilon,
                sensitive: self.sensitive_set().unwrap_or_default(),
            }),
            Kind::L1 { epsilon } => Some(MetricSpec::L1 { epsilon: *epsilon }),
            Kind::Table { values } => Some(MetricSpec::Table { values: values.clone() }),
            Kind::Zero | Kind::Sum(_) => None,
        }
    }

    /// `E(x, x')` for 1-based coordinate values.
    pub fn eval(&self, x: &[usize], x_prime: &[usize]) -> Result<f64> {
        self.domain.check(x)?;
        self.domain.check(x_prime)?;
        Ok(self.eval_checked(x, x_prime))
    }

    /// `E` between two flat indices.
    pub fn eval_flat(&self, i: usize, j: usize) -> Result<f64> {
        let x = self.domain.coords(i)?;
        let y = self.domain.coords(j)?;
        Ok(self.eval_checked(&x, &y))
    }

    fn eval_checked(&self, x: &[usize], y: &[usize]) -> f64 {
        match &self.kind {
            Kind::SuperSensitive { epsilon, sensitive } => {
                if x[0] == y[0] {
                    0.0
                } else if sensitive[x[0] - 1] || sensitive[y[0] - 1] {
                    *epsilon
                } else {
                    2.0 * epsilon
                }
            }
            Kind::L1 { epsilon } => {
                let dist: usize = x.iter().zip(y).map(|(&a, &b)| a.abs_diff(b)).sum();
                epsilon * dist as f64
            }
            Kind::Table { values } => values[x[0] - 1][y[0] - 1],
            Kind::Zero => 0.0,
            Kind::Sum(parts) => parts.iter().map(|p| p.eval_checked(x, y)).sum(),
        }
    }

    /// Pointwise sum `self + other`, the metric satisfied by running two
    /// mechanisms with independent randomness on the same value.
    pub fn compose(&self, other: &Metric) -> Result<Metric> {
        if self.domain != other.domain {
            return Err(domain_err!(
                "cannot compose metrics on {:?} and {:?}",
                self.domain.dims(),
                other.domain.dims()
            ));
        }
        let mut parts = Vec::new();
        for m in [self, other] {
            match &m.kind {
                Kind::Sum(inner) => parts.extend(inner.iter().cloned()),
                _ => parts.push(m.clone()),
            }
        }
        Ok(Metric {
            kind: Kind::Sum(parts),
            domain: self.domain.clone(),
        })
    }

    /// Dense `total x total` table, row-major over flat indices.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<usize>> = self.domain.values().collect();
        values
            .iter()
            .map(|x| values.iter().map(|y| self.eval_checked(x, y)).collect())
            .collect()
    }

    /// Checks the metric axioms with the default tolerance and sampling gate.
    pub fn validate(&self) -> ValidationReport {
        self.validate_with(&ValidationOptions::default())
    }

    pub fn validate_with(&self, opts: &ValidationOptions) -> ValidationReport {
        let n = self.domain.total_size();
        if n <= opts.exhaustive_limit {
            validate_dense(&self.to_dense(), opts.tolerance)
        } else {
            self.validate_sampled(opts)
        }
    }

    fn validate_sampled(&self, opts: &ValidationOptions) -> ValidationReport {
        let n = self.domain.total_size();
        let mut rng = stream(opts.seed, 0, Lane::Data, 0);
        let mut report = ValidationReport::passing(false);
        let e = |i: usize, j: usize| self.eval_flat(i, j).expect("sampled index in range");
        for _ in 0..opts.samples {
            let x = rng.gen_range(1..=n);
            let y = rng.gen_range(1..=n);
            let z = rng.gen_range(1..=n);
            let (exy, eyx, exz, eyz, exx) = (e(x, y), e(y, x), e(x, z), e(y, z), e(x, x));
            report.observe(x, y, z, exx, exy, eyx, exz, eyz, opts.tolerance);
        }
        report
    }
}

/// Convenience form of [`Metric::compose`].
pub fn compose_metrics(e1: &Metric, e2: &Metric) -> Result<Metric> {
    e1.compose(e2)
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub tolerance: f64,
    pub exhaustive_limit: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            tolerance: TRIANGLE_TOLERANCE,
            exhaustive_limit: EXHAUSTIVE_LIMIT,
            samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub zero_diagonal: bool,
    pub symmetric: bool,
    pub triangle: bool,
    pub nonnegative_finite: bool,
    /// Whether every triple was checked (false when sampled).
    pub exhaustive: bool,
    /// First `(x, y, z)` (flat indices) with `E(x,z) > E(x,y) + E(y,z) + tol`.
    pub first_violation: Option<(usize, usize, usize)>,
}

impl ValidationReport {
    fn passing(exhaustive: bool) -> Self {
        ValidationReport {
            zero_diagonal: true,
            symmetric: true,
            triangle: true,
            nonnegative_finite: true,
            exhaustive,
            first_violation: None,
        }
    }

    pub fn is_metric(&self) -> bool {
        self.zero_diagonal && self.symmetric && self.triangle && self.nonnegative_finite
    }

    #[allow(clippy::too_many_arguments)]
    fn observe(&mut self, x: usize, y: usize, z: usize, exx: f64, exy: f64, eyx: f64, exz: f64, eyz: f64, tol: f64) {
        if exx != 0.0 {
            self.zero_diagonal = false;
        }
        if exy != eyx {
            self.symmetric = false;
        }
        if !(exy.is_finite() && exy >= 0.0) {
            self.nonnegative_finite = false;
        }
        if exz > exy + eyz + tol {
            self.triangle = false;
            self.first_violation.get_or_insert((x, y, z));
        }
    }
}

fn validate_dense(t: &[Vec<f64>], tol: f64) -> ValidationReport {
    let n = t.len();
    let mut report = ValidationReport::passing(true);
    for x in 0..n {
        if t[x][x] != 0.0 {
            report.zero_diagonal = false;
        }
        for y in 0..n {
            if t[x][y] != t[y][x] {
                report.symmetric = false;
            }
            if !(t[x][y].is_finite() && t[x][y] >= 0.0) {
                report.nonnegative_finite = false;
            }
        }
    }
    'outer: for x in 0..n {
        for y in 0..n {
            let exy = t[x][y];
            for z in 0..n {
                if t[x][z] > exy + t[y][z] + tol {
                    report.triangle = false;
                    report.first_violation = Some((x + 1, y + 1, z + 1));
                    break 'outer;
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn super_sensitive_values() {
        let e = Metric::super_sensitive(4, 1.0, &[3]).unwrap();
        assert_eq!(e.eval(&[1], &[2]).unwrap(), 2.0);
        assert_eq!(e.eval(&[3], &[3]).unwrap(), 0.0);
        assert_eq!(e.eval(&[3], &[1]).unwrap(), 1.0);
        assert_eq!(e.eval(&[1], &[3]).unwrap(), 1.0);
    }

    #[test]
    fn l1_value() {
        let e = Metric::l1(DomainSpec::cube(4, 2).unwrap(), 0.5).unwrap();
        assert_eq!(e.eval(&[1, 4], &[3, 1]).unwrap(), 2.5);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let e = Metric::super_sensitive(4, 1.0, &[3]).unwrap();
        assert!(matches!(e.eval(&[5], &[1]), Err(Error::Domain(_))));
        assert!(matches!(e.eval(&[1, 1], &[1]), Err(Error::Domain(_))));
        assert!(Metric::super_sensitive(4, 1.0, &[9]).is_err());
        assert!(Metric::l1(DomainSpec::line(3).unwrap(), 0.0).is_err());
    }

    #[test]
    fn table_triangle_violation_is_reported() {
        let e = Metric::table(vec![
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ])
        .unwrap();
        let r = e.validate();
        assert!(r.zero_diagonal && r.symmetric);
        assert!(!r.triangle);
        assert_eq!(r.first_violation, Some((1, 2, 3)));
    }

    #[test]
    fn asymmetric_and_negative_tables_fail() {
        let e = Metric::table(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(!e.validate().symmetric);
        let e = Metric::table(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(!e.validate().nonnegative_finite);
        let e = Metric::table(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!e.validate().zero_diagonal);
        assert!(Metric::table(vec![vec![0.0, 1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn families_are_metrics() {
        for eps in [0.1, 1.0, 4.0] {
            assert!(Metric::super_sensitive(8, eps, &[2, 5]).unwrap().validate().is_metric());
            assert!(Metric::l1(DomainSpec::line(10).unwrap(), eps).unwrap().validate().is_metric());
        }
    }

    #[test]
    fn large_domains_are_sampled() {
        let e = Metric::l1(DomainSpec::cube(12, 3).unwrap(), 1.0).unwrap();
        let r = e.validate_with(&ValidationOptions { samples: 5_000, ..Default::default() });
        assert!(!r.exhaustive);
        assert!(r.is_metric());
    }

    #[test]
    fn composition_adds_pointwise() {
        let d = DomainSpec::line(6).unwrap();
        let e1 = Metric::l1(d.clone(), 1.0).unwrap();
        let e2 = Metric::l1(d.clone(), 2.0).unwrap();
        let sum = compose_metrics(&e1, &e2).unwrap();
        assert_eq!(sum.eval(&[1], &[4]).unwrap(), 9.0);
        assert!(sum.validate().is_metric());

        let with_zero = e1.compose(&Metric::zero(d.clone())).unwrap();
        for x in 1..=6 {
            for y in 1..=6 {
                assert_eq!(with_zero.eval(&[x], &[y]).unwrap(), e1.eval(&[x], &[y]).unwrap());
            }
        }
        let other = Metric::l1(DomainSpec::line(5).unwrap(), 1.0).unwrap();
        assert!(matches!(e1.compose(&other), Err(Error::Domain(_))));
    }

    #[test]
    fn spec_json_forms() {
        let s: MetricSpec = serde_json::from_str(r#"{"kind":"super_sensitive","epsilon":1.0,"S":[3,7]}"#).unwrap();
        let e = s.bind(&DomainSpec::line(8).unwrap()).unwrap();
        assert_eq!(e.sensitive_set().unwrap(), vec![3, 7]);
        let s: MetricSpec = serde_json::from_str(r#"{"kind":"l1","epsilon":0.5}"#).unwrap();
        assert_eq!(s, MetricSpec::L1 { epsilon: 0.5 });
        let s: MetricSpec = serde_json::from_str(r#"{"kind":"table","values":[[0,1],[1,0]]}"#).unwrap();
        assert!(s.bind(&DomainSpec::line(2).unwrap()).is_ok());
        assert!(s.bind(&DomainSpec::line(3).unwrap()).is_err());
        assert!(serde_json::from_str::<MetricSpec>(r#"{"kind":"l2","epsilon":0.5}"#).is_err());
    }
}
