//! Seeded Monte-Carlo experiments comparing empirical error with the analytic bounds.

mod data;

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use data::{
    gen_weighted, gen_zipf, gen_zipf_trial, histogram, random_range, random_ranges, true_count, true_weighted_count,
    zipf_pmf, Dataset, WeightMode,
};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::matrix_mech::{optimal_prefix_scales, optimize_frequency_scales, MatrixMechanism};
use crate::mdrq::{
    encode_batch, encode_weighted_batch, estimate_weighted_nonprivate, estimate_weighted_private, group_by_weight,
    variance_bound_point, variance_bound_range, variance_bound_weighted_private, weighted_domain, Backend, Estimator,
    FlipChannel, RangeOracle, RangeQuery, ReportMatrix,
};
use crate::metrics::MetricSpec;
use crate::quantile::{quantile, quantile_error, quantile_error_bound, true_percentiles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[serde(alias = "freq")]
    Frequency,
    Range,
    Quantile,
    Weighted,
    #[serde(alias = "workload", alias = "linear-workload")]
    LinearWorkload,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Frequency => "frequency",
            Task::Range => "range",
            Task::Quantile => "quantile",
            Task::Weighted => "weighted",
            Task::LinearWorkload => "linear_workload",
        }
    }

    /// Range-style tasks extend the domain by a dummy value unless told otherwise.
    pub fn default_dummy_extension(&self) -> bool {
        matches!(self, Task::Range | Task::Weighted)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Workload answered by the matrix mechanism in the linear-workload task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    /// All ranges `[l, r]` through the prefix strategy `L_m`.
    #[default]
    Prefix,
    /// Single-value frequencies with optimized per-value scales.
    Frequency,
}

fn default_trials() -> usize {
    3
}
fn default_query_count() -> usize {
    100
}
fn default_zipf() -> f64 {
    1.1
}
fn default_delta() -> f64 {
    10.0
}
fn default_quantiles() -> Vec<f64> {
    vec![0.25, 0.5, 0.9]
}
fn default_quantile_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: Option<Task>,
    pub domain: DomainSpec,
    pub n: usize,
    pub epsilons: Vec<f64>,
    /// Metric for the linear-workload task; its epsilon is replaced by each swept value.
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_query_count")]
    pub query_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default)]
    pub dummy_extension: Option<bool>,
    /// Weight bound Δ.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    /// Failure probability in the quantile error bound.
    #[serde(default = "default_quantile_delta")]
    pub quantile_delta: f64,
    #[serde(default)]
    pub workload: Workload,
    /// Replace the domain and population by the large grid (D = 5 and 6, m = 10, n = 1000).
    #[serde(default)]
    pub full_scale: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<Task> {
        let task = self.task.ok_or_else(|| Error::Config("experiment config has no task".into()))?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config(format!("epsilons must be a non-empty list of positive numbers: {:?}", self.epsilons)));
        }
        if self.quantiles.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::Config(format!("quantiles must lie in (0, 1]: {:?}", self.quantiles)));
        }
        if matches!(task, Task::Quantile | Task::LinearWorkload) && self.domain.num_dims() != 1 && !self.full_scale {
            return Err(Error::Config(format!("the {} task needs a 1-dimensional domain", task.name())));
        }
        if matches!(task, Task::Quantile | Task::LinearWorkload) && self.full_scale {
            return Err(Error::Config(format!("--full-scale applies to multi-dimensional tasks, not {}", task.name())));
        }
        Ok(task)
    }

    fn dummy(&self, task: Task) -> bool {
        self.dummy_extension.unwrap_or(task.default_dummy_extension())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub task: &'static str,
    pub epsilon: f64,
    #[serde(rename = "D")]
    pub dims: usize,
    #[serde(rename = "D_R")]
    pub nontrivial: usize,
    pub m: String,
    pub n: usize,
    pub trials: usize,
    pub empirical_mse: f64,
    pub analytic_bound: f64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str = "task,epsilon,D,D_R,m,n,trials,empirical_mse,analytic_bound,wall_time_ms";

impl ExperimentResult {
    /// CSV text. Wall time is written as 0 unless `timing` is set, so that reruns are byte-identical.
    pub fn to_csv(&self, timing: bool) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(','))?;
        for row in &self.rows {
            let mut row = row.clone();
            if !timing {
                row.wall_time_ms = 0;
            }
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn dims_label(domain: &DomainSpec) -> String {
    let dims = domain.dims();
    if dims.iter().all(|&m| m == dims[0]) {
        dims[0].to_string()
    } else {
        dims.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("x")
    }
}

/// Squared errors and matching bounds, grouped by nontrivial-dimension count.
#[derive(Default)]
struct Tally(BTreeMap<usize, (f64, f64, usize)>);

impl Tally {
    fn add(&mut self, nontrivial: usize, sq_err: f64, bound: f64) {
        let e = self.0.entry(nontrivial).or_insert((0.0, 0.0, 0));
        e.0 += sq_err;
        e.1 += bound;
        e.2 += 1;
    }
}

struct Setting<'a> {
    cfg: &'a ExperimentConfig,
    task: Task,
    domain: &'a DomainSpec,
    n: usize,
    epsilon: f64,
}

impl Setting<'_> {
    fn encoding_domain(&self) -> DomainSpec {
        if self.cfg.dummy(self.task) {
            self.domain.with_dummy()
        } else {
            self.domain.clone()
        }
    }

    fn estimator(&self, reports: Vec<ReportMatrix>, domain: &DomainSpec, channel: &FlipChannel) -> Result<Estimator> {
        let dummy_dims = if self.cfg.dummy(self.task) { self.domain.num_dims() } else { 0 };
        Ok(Estimator::from_reports(reports, domain, channel, self.cfg.backend)?.with_dummy_dims(dummy_dims))
    }

    fn queries(&self, trial: u64) -> Vec<RangeQuery> {
        random_ranges(self.domain.dims(), self.cfg.query_count, self.cfg.seed, trial)
    }

    fn run(&self) -> Result<Tally> {
        let mut tally = Tally::default();
        for trial in 0..self.cfg.trials as u64 {
            match self.task {
                Task::Frequency => self.frequency_trial(trial, &mut tally)?,
                Task::Range => self.range_trial(trial, &mut tally)?,
                Task::Weighted => match self.cfg.weight_mode {
                    WeightMode::Private => self.weighted_private_trial(trial, &mut tally)?,
                    WeightMode::Nonprivate => self.weighted_public_trial(trial, &mut tally)?,
                },
                Task::Quantile => self.quantile_trial(trial, &mut tally)?,
                Task::LinearWorkload => self.workload_trial(trial, &mut tally)?,
            }
        }
        Ok(tally)
    }

    fn data(&self, trial: u64) -> Result<Vec<Vec<usize>>> {
        gen_zipf_trial(self.n, self.domain, self.cfg.zipf_exponent, self.cfg.seed, trial)
    }

    fn frequency_trial(&self, trial: u64, tally: &mut Tally) -> Result<()> {
        let values = self.data(trial)?;
        let enc = self.encoding_domain();
        let channel = FlipChannel::new(self.epsilon)?;
        let est = self.estimator(encode_batch(&values, &enc, &channel, self.cfg.seed, trial)?, &enc, &channel)?;
        let counts = histogram(&values, self.domain)?;
        let bound = variance_bound_point(self.epsilon, self.domain.num_dims(), self.n as u64);
        let dims = self.domain.num_dims();
        let mut sq = 0.0;
        for (i, x) in self.domain.values().enumerate() {
            sq += (est.estimate_point(&x)? - counts[i] as f64).powi(2);
        }
        tally.add(dims, sq / counts.len() as f64, bound);
        Ok(())
    }

    fn range_trial(&self, trial: u64, tally: &mut Tally) -> Result<()> {
        let values = self.data(trial)?;
        let enc = self.encoding_domain();
        let channel = FlipChannel::new(self.epsilon)?;
        let est = self.estimator(encode_batch(&values, &enc, &channel, self.cfg.seed, trial)?, &enc, &channel)?;
        let dims = self.domain.num_dims();
        for q in self.queries(trial) {
            let dr = q.nontrivial_dims(&enc);
            let err = est.estimate_range(&q)? - true_count(&values, &q) as f64;
            tally.add(dr, err * err, variance_bound_range(self.epsilon, dims, dr, self.n as u64));
        }
        Ok(())
    }

    fn weighted_private_trial(&self, trial: u64, tally: &mut Tally) -> Result<()> {
        let cfg = self.cfg;
        let data = gen_weighted(self.n, self.domain, cfg.zipf_exponent, cfg.delta, WeightMode::Private, cfg.seed, trial)?;
        let weights = data.weights.expect("weighted dataset");
        let enc = self.encoding_domain();
        let wdom = weighted_domain(&enc)?;
        let channel = FlipChannel::new(self.epsilon)?;
        let reports = encode_weighted_batch(&data.values, &weights, cfg.delta, &enc, &channel, cfg.seed, trial)?;
        let est = self.estimator(reports, &wdom, &channel)?;
        let dims = self.domain.num_dims();
        for q in self.queries(trial) {
            let dr = q.nontrivial_dims(&enc);
            let err = estimate_weighted_private(&est, &q, cfg.delta)? - true_weighted_count(&data.values, &weights, &q);
            let bound = variance_bound_weighted_private(self.epsilon, dims, dr, cfg.delta, self.n as u64);
            tally.add(dr, err * err, bound);
        }
        Ok(())
    }

    fn weighted_public_trial(&self, trial: u64, tally: &mut Tally) -> Result<()> {
        let cfg = self.cfg;
        let data = gen_weighted(self.n, self.domain, cfg.zipf_exponent, cfg.delta, WeightMode::Nonprivate, cfg.seed, trial)?;
        let weights = data.weights.expect("weighted dataset");
        let enc = self.encoding_domain();
        let channel = FlipChannel::new(self.epsilon)?;
        let mut reports: Vec<Option<ReportMatrix>> =
            encode_batch(&data.values, &enc, &channel, cfg.seed, trial)?.into_iter().map(Some).collect();
        let mut groups = Vec::new();
        for (w, idx) in group_by_weight(&weights)? {
            let part: Vec<ReportMatrix> = idx.iter().map(|&i| reports[i].take().expect("owner in one group")).collect();
            groups.push((w, idx.len() as u64, self.estimator(part, &enc, &channel)?));
        }
        let dims = self.domain.num_dims();
        let oracles: Vec<(f64, Estimator)> = groups.iter().map(|(w, _, e)| (*w, e.clone())).collect();
        for q in self.queries(trial) {
            let dr = q.nontrivial_dims(&enc);
            let err = estimate_weighted_nonprivate(&oracles, &q)? - true_weighted_count(&data.values, &weights, &q);
            let bound: f64 =
                groups.iter().map(|(w, size, _)| w * w * variance_bound_range(self.epsilon, dims, dr, *size)).sum();
            tally.add(dr, err * err, bound);
        }
        Ok(())
    }

    fn quantile_trial(&self, trial: u64, tally: &mut Tally) -> Result<()> {
        let values = self.data(trial)?;
        let m = self.domain.dims()[0];
        let enc = self.encoding_domain();
        let channel = FlipChannel::new(self.epsilon)?;
        let est = self.estimator(encode_batch(&values, &enc, &channel, self.cfg.seed, trial)?, &enc, &channel)?;
        let flat: Vec<usize> = values.iter().map(|x| x[0]).collect();
        let sigma = true_percentiles(&flat, m);
        let bound = quantile_error_bound(self.epsilon, self.n as u64, m, self.cfg.quantile_delta).powi(2);
        for &p in &self.cfg.quantiles {
            let r = quantile(&est, p, m, self.n as u64)?;
            tally.add(1, quantile_error(&sigma, r.value, p).powi(2), bound);
        }
        Ok(())
    }

    fn workload_trial(&self, trial: u64, tally: &mut Tally) -> Result<()> {
        let m = self.domain.dims()[0];
        let spec = self.cfg.metric.clone().unwrap_or(MetricSpec::L1 { epsilon: self.epsilon });
        let metric = spec.with_epsilon(self.epsilon).bind(self.domain)?;
        let mech = match self.cfg.workload {
            Workload::Prefix => MatrixMechanism::prefix(m, optimal_prefix_scales(self.epsilon, m)?)?,
            Workload::Frequency => optimize_frequency_scales(&metric)?.mechanism()?,
        };
        let check = mech.check_privacy(&metric)?;
        if !check.feasible {
            return Err(Error::Infeasible(format!("mechanism violates the metric at {:?}", check.worst_pair)));
        }
        let values: Vec<usize> = self.data(trial)?.into_iter().map(|x| x[0]).collect();
        let mut counts = vec![0.0; m];
        for &v in &values {
            counts[v - 1] += 1.0;
        }
        let truth = mech.true_answer(&counts)?;
        let est = mech.estimate_workload(&mech.encode_batch(&values, self.cfg.seed, trial)?)?;
        let sq: f64 = est.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum();
        tally.add(1, sq, mech.expected_total_sq_error(self.n as u64));
        Ok(())
    }
}

/// Runs every epsilon (and, at full scale, both large domains) and emits one row per `(epsilon, D_R)` group.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let task = config.validate()?;
    let grid: Vec<(DomainSpec, usize)> = if config.full_scale {
        vec![(DomainSpec::cube(10, 5)?, 1000), (DomainSpec::cube(10, 6)?, 1000)]
    } else {
        vec![(config.domain.clone(), config.n)]
    };
    let mut result = ExperimentResult::default();
    for (domain, n) in &grid {
        for &epsilon in &config.epsilons {
            let start = Instant::now();
            let tally = Setting { cfg: config, task, domain, n: *n, epsilon }.run()?;
            let wall_time_ms = start.elapsed().as_millis() as u64;
            for (nontrivial, (sq, bound, count)) in tally.0 {
                result.rows.push(ResultRow {
                    task: task.name(),
                    epsilon,
                    dims: domain.num_dims(),
                    nontrivial,
                    m: dims_label(domain),
                    n: *n,
                    trials: config.trials,
                    empirical_mse: sq / count as f64,
                    analytic_bound: bound / count as f64,
                    wall_time_ms,
                });
            }
        }
    }
    Ok(result)
}

/// Expected squared error of `Δ ĉ(R × [2, 2])` for a fixed dataset, computed
/// exactly from the per-bit flip model rather than by simulation.
///
/// Each owner contributes `Δ a^{D+1} Σ_k c_k prod_d b_{i,d}(k_d)` over the
/// `2^{D_R+1}` cells `k` of the range row; conditional on the rounded weight
/// the bits are independent, so the variance separates per owner.
pub fn weighted_private_expected_mse(
    values: &[Vec<usize>],
    weights: &[f64],
    delta: f64,
    query: &RangeQuery,
    domain: &DomainSpec,
    epsilon: f64,
) -> Result<f64> {
    let wdom = weighted_domain(domain)?;
    let row = crate::mdrq::range_row_sum(&query.with_extra_dim(2, 2), &wdom)?;
    let channel = FlipChannel::new(epsilon)?;
    let rho = 1.0 / channel.debias();
    let scale = delta * channel.debias().powi(wdom.num_dims() as i32);
    let cells: Vec<(Vec<usize>, f64)> =
        row.entries.iter().map(|&(i, c)| (wdom.coords(i).expect("row index"), c)).collect();
    let mut total = 0.0;
    for (x, &w) in values.iter().zip(weights) {
        let q = w / delta;
        // E[Y | rounded] and E[Y^2 | rounded] for Y = Σ_k c_k prod_d b_d(k_d)
        let mut moments = [(0.0, 0.0); 2];
        for (slot, rounded) in [1usize, 2].into_iter().enumerate() {
            let mut point = x.clone();
            point.push(rounded);
            let clean = ReportMatrix::threshold(&point, &wdom)?;
            let mean: f64 = cells
                .iter()
                .map(|(k, c)| c * k.iter().enumerate().map(|(d, &kd)| rho * clean.entry(d + 1, kd) as f64).product::<f64>())
                .sum();
            let mut second = 0.0;
            for (k, c) in &cells {
                for (l, cl) in &cells {
                    let mut prod = 1.0;
                    for d in 0..wdom.num_dims() {
                        prod *= if k[d] == l[d] {
                            1.0
                        } else {
                            rho * rho * (clean.entry(d + 1, k[d]) * clean.entry(d + 1, l[d])) as f64
                        };
                    }
                    second += c * cl * prod;
                }
            }
            moments[slot] = (mean, second);
        }
        let ey = (1.0 - q) * moments[0].0 + q * moments[1].0;
        let ey2 = (1.0 - q) * moments[0].1 + q * moments[1].1;
        total += ey2 - ey * ey;
    }
    Ok(scale * scale * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(task: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"task": "{task}", "domain": {{"dims": [4, 3]}}, "n": 200, "epsilons": [1.0, 2.0],
                "trials": 2, "query_count": 20, "seed": 11{extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = cfg("freq", "");
        assert_eq!(c.task, Some(Task::Frequency));
        assert_eq!(c.quantiles, vec![0.25, 0.5, 0.9]);
        assert!(!c.dummy(Task::Frequency));
        assert!(c.dummy(Task::Range));
        assert!(ExperimentConfig::from_json(r#"{"domain": {"dims": [4]}, "n": 1, "epsilons": [1], "bogus": 1}"#).is_err());
        let mut bad = cfg("range", "");
        bad.epsilons = vec![0.0];
        assert!(matches!(run_experiment(&bad), Err(Error::Config(_))));
        let bad = cfg("quantile", "");
        assert!(matches!(run_experiment(&bad), Err(Error::Config(_))));
        assert_eq!("workload".parse::<Task>().unwrap(), Task::LinearWorkload);
    }

    #[test]
    fn rows_are_well_formed_and_deterministic() {
        for (task, extra) in [
            ("frequency", ""),
            ("range", ""),
            ("range", r#", "dummy_extension": false"#),
            ("weighted", ""),
            ("weighted", r#", "weight_mode": "nonprivate""#),
        ] {
            let c = cfg(task, extra);
            let a = run_experiment(&c).unwrap();
            assert!(!a.rows.is_empty());
            assert!(a.rows.iter().all(|r| r.empirical_mse >= 0.0 && r.analytic_bound > 0.0));
            assert_eq!(a.to_csv(false).unwrap(), run_experiment(&c).unwrap().to_csv(false).unwrap());
        }
        let with_dummy = run_experiment(&cfg("range", "")).unwrap();
        assert!(with_dummy.rows.iter().all(|r| r.nontrivial == 2));
    }

    #[test]
    fn csv_layout() {
        let r = run_experiment(&cfg("frequency", "")).unwrap();
        let text = r.to_csv(false).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&first[..7], &["frequency", "1.0", "2", "2", "4x3", "200", "2"]);
        assert_eq!(first[9], "0");
    }

    #[test]
    fn one_dimensional_tasks_run() {
        let q = ExperimentConfig::from_json(
            r#"{"task": "quantile", "domain": {"dims": [32]}, "n": 300, "epsilons": [1], "trials": 2, "seed": 1}"#,
        )
        .unwrap();
        let rows = run_experiment(&q).unwrap().rows;
        assert_eq!(rows.len(), 1);
        assert!(rows[0].empirical_mse <= rows[0].analytic_bound);
        let w = ExperimentConfig::from_json(
            r#"{"task": "linear_workload", "domain": {"dims": [6]}, "n": 50, "epsilons": [1], "trials": 2}"#,
        )
        .unwrap();
        let rows = run_experiment(&w).unwrap().rows;
        assert!((rows[0].analytic_bound - 2.0 * 50.0 * 30.0).abs() < 1e-9);
    }

    #[test]
    fn exact_weighted_mse_matches_simulation_on_a_tiny_case() {
        // two owners over m = 2; Monte-Carlo over many encodings
        let dom = DomainSpec::line(2).unwrap();
        let values = vec![vec![1], vec![2]];
        let weights = vec![3.0, 7.0];
        let q: RangeQuery = "1:1".parse().unwrap();
        let exact = weighted_private_expected_mse(&values, &weights, 10.0, &q, &dom, 1.0).unwrap();
        let wdom = weighted_domain(&dom).unwrap();
        let ch = FlipChannel::new(1.0).unwrap();
        let truth = 3.0;
        let trials = 20_000u64;
        let mut sq = 0.0;
        for t in 0..trials {
            let reports = encode_weighted_batch(&values, &weights, 10.0, &dom, &ch, 99, t).unwrap();
            let est = Estimator::from_reports(reports, &wdom, &ch, Backend::Observations).unwrap();
            sq += (estimate_weighted_private(&est, &q, 10.0).unwrap() - truth).powi(2);
        }
        let mc = sq / trials as f64;
        assert!((mc - exact).abs() / exact < 0.05, "mc {mc} vs exact {exact}");
    }
}
