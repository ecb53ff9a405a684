use jumplq::feedback::{gain_from_riccati, optimal_value};
use jumplq::montecarlo::{estimate_cost, map_paths, path_cost, sample_noise, smooth_direction, Control, McEstimate};
use jumplq::problem::{canned_problem, BenchmarkId};
use jumplq::riccati::{solve_direct, solve_lyapunov, solve_quasilinearization, GainSchedule, TimeGrid};
use nalgebra::DVector;
use proptest::prelude::*;

fn random_id() -> impl Strategy<Value = BenchmarkId> {
    (0u64..1000, 1usize..=3, 1usize..=2, 1usize..=2, 0usize..=2, 1usize..=2).prop_map(|(seed, n, m, d, k, r)| {
        BenchmarkId::RandomPsd {
            seed,
            n,
            m,
            d,
            k,
            regimes: if k == 0 { 1 } else { r },
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quasilinearization_limit_is_direct_solution(id in random_id()) {
        let p = canned_problem(&id);
        let grid = TimeGrid::for_problem(&p, 100);
        let direct = solve_direct(&p, &grid).unwrap();
        let (sol, trace) = solve_quasilinearization(&p, &grid, 1e-10, 60).unwrap();
        prop_assert!(sol.sup_deviation(&direct) <= 1e-8);
        prop_assert!(trace.certificates.iter().all(|&c| c >= -1e-8));
    }

    #[test]
    fn value_is_nonnegative_and_below_zero_control_cost(id in random_id()) {
        let p = canned_problem(&id);
        let grid = TimeGrid::for_problem(&p, 100);
        let sol = solve_direct(&p, &grid).unwrap();
        let v = optimal_value(&sol, &p.x0, p.r0);
        prop_assert!(v >= 0.0);
        let zero = optimal_value(&solve_lyapunov(&p, &grid, &GainSchedule::Zero).unwrap(), &p.x0, p.r0);
        prop_assert!(v <= zero + 1e-12);
    }

    #[test]
    fn pathwise_costs_are_nonnegative(id in random_id(), path in 0u64..50) {
        let p = canned_problem(&id);
        let grid = TimeGrid::for_problem(&p, 50);
        let law = gain_from_riccati(&p, &solve_direct(&p, &grid).unwrap()).unwrap();
        let noise = sample_noise(&p, &grid, path, 1);
        prop_assert!(path_cost(&p, &Control::Feedback(law), &noise, &grid).unwrap() >= 0.0);
        prop_assert!(path_cost(&p, &Control::zero(&p, &grid), &noise, &grid).unwrap() >= 0.0);
    }
}

#[test]
fn zero_control_is_no_better_than_feedback() {
    let p = canned_problem(&BenchmarkId::ScalarRiccati);
    let grid = TimeGrid::for_problem(&p, 1000);
    let est = estimate_cost(&p, &Control::zero(&p, &grid), &grid, 1000, 3).unwrap();
    assert!(est.mean >= 0.5 - 3.0 * est.stderr);
}

#[test]
fn cost_is_convex_along_common_bundles() {
    let id = BenchmarkId::RandomPsd {
        seed: 4,
        n: 2,
        m: 2,
        d: 2,
        k: 2,
        regimes: 2,
    };
    let p = canned_problem(&id);
    let grid = TimeGrid::for_problem(&p, 200);
    let u1 = smooth_direction(2, &grid, 1);
    let u2 = smooth_direction(2, &grid, 2);
    let mid: Vec<DVector<f64>> = u1.iter().zip(&u2).map(|(a, b)| (a + b) * 0.5).collect();
    let (u1, u2, mid) = (Control::OpenLoop(u1), Control::OpenLoop(u2), Control::OpenLoop(mid));
    let j = |c: &Control| estimate_cost(&p, c, &grid, 2000, 11).unwrap();
    let (a, b, m) = (j(&u1), j(&u2), j(&mid));
    assert!(m.mean <= 0.5 * (a.mean + b.mean) + 3.0 * m.stderr, "{m:?} {a:?} {b:?}");
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
    let grid = TimeGrid::for_problem(&p, 100);
    let law = gain_from_riccati(&p, &solve_direct(&p, &grid).unwrap()).unwrap();
    let ctrl = Control::Feedback(law);
    let with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| estimate_cost(&p, &ctrl, &grid, 3001, 17).unwrap())
    };
    let one = with(1);
    assert_eq!(one, with(3));
    assert_eq!(one, with(8));
}

#[test]
fn map_paths_preserves_path_order() {
    let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
    let grid = TimeGrid::for_problem(&p, 10);
    let idx = map_paths(&p, &grid, 257, 0, |n| Ok(n.path_index)).unwrap();
    assert_eq!(idx, (0..257).collect::<Vec<u64>>());
    let est = McEstimate::from_samples(&[1.0, 3.0]);
    assert_eq!((est.mean, est.stderr), (2.0, 1.0));
}
