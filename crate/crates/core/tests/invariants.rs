use proptest::prelude::*;
use qrnet::datasets::{ExampleFunction, SplitSizes};
use qrnet::distributions::ErrorDistribution;
use qrnet::linalg::Matrix;
use qrnet::losses::{self, QuantileGrid};
use qrnet::metrics;
use qrnet::models::{build_design_matrix, ModelFamily, ModelSpec, QuantileModel};
use qrnet::rng::{derive_seed, Rng};
use qrnet::sorting;

fn distribution() -> impl Strategy<Value = ErrorDistribution> {
    prop::sample::select(ErrorDistribution::benchmark_set().to_vec())
}

fn example() -> impl Strategy<Value = ExampleFunction> {
    prop::sample::select(ExampleFunction::ALL.to_vec())
}

proptest! {
    #[test]
    fn checker_is_nonnegative_and_zero_only_at_zero(u in -1e3f64..1e3, tau in 0.001f64..0.999) {
        let v = losses::checker(u, tau);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, u == 0.0);
    }

    #[test]
    fn huber_checker_bounds_the_checker(u in -10.0f64..10.0, tau in 0.01f64..0.99, eps in 1e-3f64..1.0) {
        let smooth = losses::huber_checker(u, tau, eps).unwrap();
        let exact = losses::checker(u, tau);
        prop_assert!(smooth >= 0.0);
        prop_assert!((smooth - exact).abs() <= eps / 2.0 + 1e-12);
    }

    #[test]
    fn sorting_never_increases_the_composite_loss(
        y in -5.0f64..5.0,
        pred in prop::collection::vec(-8.0f64..8.0, 19),
    ) {
        let grid = QuantileGrid::evenly_spaced(19).unwrap();
        let raw = Matrix::new(1, 19, pred).unwrap();
        let sorted = sorting::sort_rows_hard(&raw);
        let before = losses::composite_loss(&raw, &[y], &grid, None).unwrap();
        let after = losses::composite_loss(&sorted, &[y], &grid, None).unwrap();
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn quantile_is_monotone_and_inverts_cdf(dist in distribution(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (qa, qb) = (dist.quantile(lo).unwrap(), dist.quantile(hi).unwrap());
        prop_assert!(qa <= qb);
        prop_assert!((dist.cdf(qa) - lo).abs() < 1e-8);
    }

    #[test]
    fn observed_frequency_and_reliability_stay_in_unit_interval(
        t in 1usize..12,
        n in 1usize..30,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let grid = QuantileGrid::evenly_spaced(t).unwrap();
        let pred = Matrix::from_fn(n, t, |_, _| rng.standard_normal());
        let y: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let freq = metrics::observed_frequency(&pred, &y).unwrap();
        prop_assert!(freq.iter().all(|f| (0.0..=1.0).contains(f)));
        let r = metrics::overall_reliability(&freq, &grid).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn splits_partition_the_samples(n in 3usize..200, seed in any::<u64>()) {
        let data = ExampleFunction::Example0
            .generate::<f64>(n, ErrorDistribution::benchmark_set()[0], seed)
            .unwrap();
        let parts = data.split(SplitSizes::thirds(), seed).unwrap();
        prop_assert_eq!(parts.train.len() + parts.validation.len() + parts.test.len(), n);
        let mut ys: Vec<f64> = parts.train.y.iter().chain(&parts.validation.y).chain(&parts.test.y).copied().collect();
        let mut original = data.y.clone();
        ys.sort_by(f64::total_cmp);
        original.sort_by(f64::total_cmp);
        prop_assert_eq!(ys, original);
    }

    #[test]
    fn ideal_quantiles_are_nondecreasing(ex in example(), dist in distribution(), seed in any::<u64>()) {
        let mut data = ex.generate::<f64>(20, dist, seed).unwrap();
        data.attach_ideal(&QuantileGrid::evenly_spaced(9).unwrap()).unwrap();
        let ideal = data.ideal.unwrap();
        for row in ideal.row_iter() {
            prop_assert!(sorting::is_nondecreasing(row));
        }
    }

    #[test]
    fn design_matrix_is_level_major(n in 1usize..10, m in 1usize..4, t in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = Matrix::from_fn(n, m, |_, _| rng.uniform(-1.0, 1.0));
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grid = QuantileGrid::evenly_spaced(t).unwrap();
        let d = build_design_matrix(&x, &y, &grid).unwrap();
        prop_assert_eq!(d.x_tilde.shape(), (m + 1, t * n));
        for c in 0..t * n {
            prop_assert_eq!(d.x_tilde.get(0, c), grid.taus()[c / n]);
            for k in 0..m {
                prop_assert_eq!(d.x_tilde.get(k + 1, c), x.get(c % n, k));
            }
            prop_assert_eq!(d.y_tilde[c], y[c % n]);
        }
    }

    #[test]
    fn ordered_families_never_cross(
        family in prop::sample::select(vec![ModelFamily::Scqrnn, ModelFamily::CqrnnSe, ModelFamily::Mcqrnn]),
        seed in any::<u64>(),
    ) {
        let spec = ModelSpec::new(family, 2, vec![6, 4], QuantileGrid::evenly_spaced(7).unwrap());
        let model: QuantileModel<f64> = QuantileModel::new(spec, seed).unwrap();
        let mut rng = Rng::new(seed);
        let x = Matrix::from_fn(25, 2, |_, _| rng.uniform(-5.0, 5.0));
        let pred = model.predict(&x).unwrap();
        for row in pred.row_iter() {
            prop_assert!(row.windows(2).all(|p| p[0] <= p[1] + 1e-9));
        }
    }

    #[test]
    fn derived_seeds_are_distinct_per_index(base in any::<u64>()) {
        let seeds: Vec<u64> = (0..64).map(|i| derive_seed(base, i)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), seeds.len());
    }
}
