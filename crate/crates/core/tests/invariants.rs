use proptest::prelude::*;

use tiebout::costs::{indifference_gap_measure, CostModel};
use tiebout::geometry::project_capped_simplex;
use tiebout::measure::{
    build_grid_measure, build_monte_carlo_measure, measure_of, Population, SampledMeasure, TypeSpace,
};
use tiebout::partition::{assign, size_map, NominalState};

fn square() -> SampledMeasure {
    build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 30).unwrap()
}

fn three_towns() -> CostModel {
    CostModel::metric_fixed_share(vec![vec![0.2, 0.2], vec![0.8, 0.3], vec![0.4, 0.9]], 0.05, 1.0)
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_on_capped_simplex(v in prop::collection::vec(-2.0f64..2.0, 2..6), floor in 0.0f64..0.15) {
        let p = project_capped_simplex(&v, floor);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= floor - 1e-15));
        let again = project_capped_simplex(&p, floor);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_nearest(v in prop::collection::vec(-1.0f64..2.0, 3), w in simplex(3)) {
        let p = project_capped_simplex(&v, 0.0);
        let d = |a: &[f64]| a.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        prop_assert!(d(&p) <= d(&w) + 1e-12);
    }

    #[test]
    fn realized_sizes_conserve_mass(m in simplex(3)) {
        let mu = square();
        let f = size_map(&three_towns(), &mu, &NominalState::sizes(m, 1e-3));
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{:?}", f);
        prop_assert!(f.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn labels_follow_cheapest_community(m in simplex(3)) {
        let mu = square();
        let model = three_towns();
        let state = NominalState::sizes(m, 1e-3);
        let partition = assign(&model, &mu, &state);
        for s in mu.samples() {
            let costs: Vec<f64> = (0..3).map(|i| model.eval_cost(0, i, s.point, &state).unwrap()).collect();
            let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let pieces: Vec<_> = partition.pieces.iter().filter(|p| p.sample == s.index).collect();
            if pieces.len() == 1 {
                prop_assert!(costs[pieces[0].community] <= best + 1e-9);
            }
        }
    }

    #[test]
    fn gap_measure_grows_with_band(d1 in 1e-4f64..0.2, d2 in 1e-4f64..0.2, m in simplex(2)) {
        let mu = square();
        let model = CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.05, 1.0);
        let state = NominalState::sizes(m, 1e-3);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let a = indifference_gap_measure(&model, &mu, &state, 0, 1, lo);
        let b = indifference_gap_measure(&model, &mu, &state, 0, 1, hi);
        prop_assert!(a <= b + 1e-12);
        prop_assert!(b <= 1.0 + 1e-12);
    }

    #[test]
    fn measure_is_additive(cut in 0.0f64..1.0, seed in 0u64..1000) {
        let mu = build_monte_carlo_measure(&Population::single(TypeSpace::unit_cube(2)), 500, seed).unwrap();
        let left = measure_of(&mu, |_, x| x[0] < cut);
        let right = measure_of(&mu, |_, x| x[0] >= cut);
        prop_assert!((left + right - mu.total_mass()).abs() < 1e-12);
        prop_assert!((mu.total_mass() - 1.0).abs() < 1e-12);
    }
}
