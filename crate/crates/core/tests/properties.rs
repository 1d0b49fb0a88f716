use eldp_core::matrix_mech::{optimal_prefix_scales, MatrixMechanism};
use eldp_core::mdrq::{
    accumulate_observations, binv_row, encode_batch, estimate_point, estimate_range, range_row_sum, Backend, Estimator,
    FlipChannel, Observations, RangeOracle, RangeQuery, ReportMatrix,
};
use eldp_core::quantile::{definitional_quantile, probe_budget, quantile, true_percentiles};
use eldp_core::rng::owner_stream;
use eldp_core::{DomainSpec, Metric};
use proptest::prelude::*;

fn domain_strategy(max_m: usize, max_d: usize) -> impl Strategy<Value = DomainSpec> {
    prop::collection::vec(1..=max_m, 1..=max_d).prop_map(|dims| DomainSpec::new(dims).unwrap())
}

fn point_in(domain: &DomainSpec) -> impl Strategy<Value = Vec<usize>> {
    domain.dims().iter().map(|&m| 1..=m).collect::<Vec<_>>()
}

fn query_in(domain: &DomainSpec) -> impl Strategy<Value = RangeQuery> {
    domain
        .dims()
        .iter()
        .map(|&m| (1..=m, 1..=m).prop_map(|(a, b)| (a.min(b), a.max(b))))
        .collect::<Vec<_>>()
        .prop_map(|bounds| RangeQuery { bounds })
}

fn reports_for(domain: &DomainSpec, n: usize, eps: f64, seed: u64) -> Vec<ReportMatrix> {
    let values: Vec<Vec<usize>> = (0..n)
        .map(|i| domain.dims().iter().enumerate().map(|(d, &m)| (i * (d + 3) + seed as usize) % m + 1).collect())
        .collect();
    encode_batch(&values, domain, &FlipChannel::new(eps).unwrap(), seed, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_families_are_symmetric_with_zero_diagonal(m in 1usize..12, eps in 0.05f64..3.0, s in prop::collection::btree_set(1usize..12, 0..5)) {
        let set: Vec<usize> = s.into_iter().filter(|&v| v <= m).collect();
        let es = Metric::super_sensitive(m, eps, &set).unwrap();
        let l1 = Metric::l1(DomainSpec::line(m).unwrap(), eps).unwrap();
        for metric in [&es, &l1] {
            for x in 1..=m {
                prop_assert_eq!(metric.eval(&[x], &[x]).unwrap(), 0.0);
                for y in 1..=m {
                    prop_assert_eq!(metric.eval(&[x], &[y]).unwrap(), metric.eval(&[y], &[x]).unwrap());
                }
            }
            prop_assert!(metric.validate().is_metric());
        }
    }

    #[test]
    fn composition_is_pointwise_sum(m in 1usize..8, e1 in 0.1f64..2.0, e2 in 0.1f64..2.0, k in 0usize..3) {
        let set: Vec<usize> = (1..=k.min(m)).collect();
        let a = Metric::super_sensitive(m, e1, &set).unwrap();
        let b = Metric::l1(DomainSpec::line(m).unwrap(), e2).unwrap();
        let c = a.compose(&b).unwrap();
        for x in 1..=m {
            for y in 1..=m {
                let want = a.eval(&[x], &[y]).unwrap() + b.eval(&[x], &[y]).unwrap();
                prop_assert!((c.eval(&[x], &[y]).unwrap() - want).abs() <= 1e-12);
            }
        }
        prop_assert!(c.validate().is_metric());
    }

    #[test]
    fn observations_have_parity_and_magnitude(dom in domain_strategy(4, 3), n in 0usize..40, seed in any::<u64>()) {
        let obs = accumulate_observations(&reports_for(&dom, n, 0.7, seed), &dom).unwrap();
        for &o in obs.values() {
            prop_assert!(o.unsigned_abs() as usize <= n);
            prop_assert_eq!((o - n as i64).rem_euclid(2), 0);
        }
    }

    #[test]
    fn binv_rows_have_two_to_the_d_entries(
        (dom, x) in domain_strategy(6, 3)
            .prop_filter("m >= 2", |d| d.dims().iter().all(|&m| m >= 2))
            .prop_flat_map(|d| { let x = point_in(&d); (Just(d), x) })
    ) {
        let row = binv_row(&x, &dom).unwrap();
        let d = dom.num_dims() as i32;
        prop_assert_eq!(row.len(), 1usize << d);
        prop_assert!(row.entries.iter().all(|&(_, c)| c.abs() == 0.5f64.powi(d)));
        prop_assert!(row.entries.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn range_rows_equal_summed_point_rows(
        (dom, q) in domain_strategy(5, 3).prop_flat_map(|d| { let q = query_in(&d); (Just(d), q) })
    ) {
        let row = range_row_sum(&q, &dom).unwrap();
        let mut dense = vec![0.0; dom.total_size()];
        for x in q.cells() {
            for (i, c) in binv_row(&x, &dom).unwrap().entries {
                dense[i - 1] += c;
            }
        }
        let brute: Vec<(usize, f64)> = dense.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(i, &c)| (i + 1, c)).collect();
        prop_assert_eq!(&row.entries, &brute);
        let dr = q.nontrivial_dims(&dom) as i32;
        prop_assert!(row.entries.iter().all(|&(_, c)| c.abs() == 0.5f64.powi(dr)));
    }

    #[test]
    fn range_estimate_is_the_sum_of_point_estimates(dom in domain_strategy(5, 3), n in 1usize..30, seed in any::<u64>()) {
        let ch = FlipChannel::new(0.9).unwrap();
        let obs = accumulate_observations(&reports_for(&dom, n, 0.9, seed), &dom).unwrap();
        let q = RangeQuery { bounds: dom.dims().iter().map(|&m| (1 + (seed as usize % m), m)).collect() };
        let total = estimate_range(&obs, &q, &ch).unwrap();
        let summed: f64 = q.cells().iter().map(|x| estimate_point(&obs, x, &ch).unwrap()).sum();
        prop_assert!((total - summed).abs() <= 1e-9 * (1.0 + total.abs()), "{} vs {}", total, summed);
    }

    #[test]
    fn backends_agree_exactly(dom in domain_strategy(4, 3), n in 1usize..25, seed in any::<u64>()) {
        let ch = FlipChannel::new(0.6).unwrap();
        let reports = reports_for(&dom, n, 0.6, seed);
        let ests: Vec<Estimator> = [Backend::Observations, Backend::Frequencies, Backend::PrefixSums, Backend::OnTheFly]
            .iter().map(|&b| Estimator::from_reports(reports.clone(), &dom, &ch, b).unwrap()).collect();
        let mut rng = owner_stream(seed, 1);
        for _ in 0..5 {
            let q = eldp_core::sim::random_range(dom.dims(), &mut rng);
            let first = ests[0].estimate_range(&q).unwrap();
            for e in &ests[1..] {
                prop_assert_eq!(e.estimate_range(&q).unwrap().to_bits(), first.to_bits());
            }
        }
    }

    #[test]
    fn dummy_extension_makes_every_dimension_nontrivial(dom in domain_strategy(6, 3), seed in any::<u64>()) {
        let ext = dom.with_dummy();
        let mut rng = owner_stream(seed, 2);
        for _ in 0..10 {
            let q = eldp_core::sim::random_range(dom.dims(), &mut rng);
            prop_assert_eq!(q.nontrivial_dims(&ext), dom.num_dims());
            prop_assert!(q.check(&ext).is_ok());
        }
    }

    #[test]
    fn laplace_privacy_loss_never_exceeds_pair_cost(m in 2usize..7, eps in 0.2f64..2.0, x in 1usize..7, y in 1usize..7, seed in any::<u64>()) {
        let (x, y) = (x.min(m), y.min(m));
        let mech = MatrixMechanism::prefix(m, optimal_prefix_scales(eps, m).unwrap()).unwrap();
        let cost = mech.pair_cost(x, y).unwrap();
        let mut rng = owner_stream(seed, 3);
        for _ in 0..20 {
            let report = mech.encode(x, &mut rng).unwrap();
            let loss = mech.privacy_loss(&report, x, y).unwrap();
            prop_assert!(loss <= cost * (1.0 + 1e-9) + 1e-12, "{} > {}", loss, cost);
        }
    }

    #[test]
    fn noiseless_quantile_is_definitional(m in 1usize..64, data in prop::collection::vec(1usize..64, 1..200), p_raw in 1u32..=1000) {
        let values: Vec<usize> = data.iter().map(|&v| (v - 1) % m + 1).collect();
        let dom = DomainSpec::line(m).unwrap();
        let rows: Vec<Vec<usize>> = values.iter().map(|&v| vec![v]).collect();
        let ch = FlipChannel::noiseless();
        let est = Estimator::from_reports(encode_batch(&rows, &dom, &ch, 0, 0).unwrap(), &dom, &ch, Backend::Observations).unwrap();
        let sigma = true_percentiles(&values, m);
        let p = p_raw as f64 / 1000.0;
        let got = quantile(&est, p, m, values.len() as u64).unwrap();
        prop_assert_eq!(Some(got.value), definitional_quantile(&sigma, p));
    }

    #[test]
    fn quantile_probes_stay_in_budget(m in 2usize..300, seed in any::<u64>(), p_raw in 1u32..=100) {
        let dom = DomainSpec::line(m).unwrap();
        let values: Vec<Vec<usize>> = (0..150).map(|i| vec![(i * 7 + seed as usize) % m + 1]).collect();
        let ch = FlipChannel::new(0.5).unwrap();
        let est = Estimator::from_reports(encode_batch(&values, &dom, &ch, seed, 0).unwrap(), &dom, &ch, Backend::Observations).unwrap();
        let r = quantile(&est, p_raw as f64 / 100.0, m, 150).unwrap();
        prop_assert!(r.probes <= probe_budget(m));
        prop_assert!((1..=m).contains(&r.value));
    }

    #[test]
    fn observations_merge_like_concatenation(dom in domain_strategy(4, 2), n1 in 0usize..10, n2 in 0usize..10, seed in any::<u64>()) {
        let a = reports_for(&dom, n1, 1.0, seed);
        let b = reports_for(&dom, n2, 1.0, seed ^ 1);
        let mut left = accumulate_observations(&a, &dom).unwrap();
        left.merge(&accumulate_observations(&b, &dom).unwrap()).unwrap();
        let all: Vec<ReportMatrix> = a.into_iter().chain(b).collect();
        let joint: Observations = accumulate_observations(&all, &dom).unwrap();
        prop_assert_eq!(left, joint);
    }

    #[test]
    fn noiseless_full_domain_counts_everyone(dom in domain_strategy(4, 2)) {
        let full = RangeQuery::full(&dom);
        let ch = FlipChannel::noiseless();
        let values: Vec<Vec<usize>> = dom.values().collect();
        let est = Estimator::from_reports(encode_batch(&values, &dom, &ch, 0, 0).unwrap(), &dom, &ch, Backend::Observations).unwrap();
        prop_assert_eq!(est.estimate_range(&full).unwrap(), dom.total_size() as f64);
        prop_assert_eq!(est.owner_count(), Some(dom.total_size() as u64));
    }
}
