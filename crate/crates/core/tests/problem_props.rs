use aircomp_dfl::linalg;
use aircomp_dfl::problems::{
    solve_centralized, solve_centralized_from, synthesize, FiniteSumObjective, DEFAULT_ORACLE_TOLERANCE,
};
use proptest::prelude::*;

const STEP: f64 = 1e-5;

fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], dir: &[f64]) -> f64 {
    let plus: Vec<f64> = theta.iter().zip(dir).map(|(t, v)| t + STEP * v).collect();
    let minus: Vec<f64> = theta.iter().zip(dir).map(|(t, v)| t - STEP * v).collect();
    (f(&plus) - f(&minus)) / (2.0 * STEP)
}

fn agrees(fd: f64, analytic: f64) -> bool {
    (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sample_gradient_matches_finite_difference(
        seed: u64,
        d in 1usize..12,
        theta in prop::collection::vec(-3.0f64..3.0, 12),
        dir in prop::collection::vec(-1.0f64..1.0, 12),
        device in 0usize..3,
        sample in 0usize..4,
    ) {
        let problem = synthesize(3, 4, d, seed);
        let (theta, dir) = (&theta[..d], &dir[..d]);
        let mut g = vec![0.0; d];
        problem.sample_grad_into(device, sample, theta, &mut g);
        let fd = central_difference(|t| problem.sample_loss(device, sample, t), theta, dir);
        prop_assert!(agrees(fd, linalg::dot(&g, dir)), "fd {} vs {}", fd, linalg::dot(&g, dir));
    }

    #[test]
    fn local_and_global_gradients_match_finite_difference(
        seed: u64,
        d in 1usize..12,
        theta in prop::collection::vec(-3.0f64..3.0, 12),
        dir in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let problem = synthesize(4, 5, d, seed);
        let (theta, dir) = (&theta[..d], &dir[..d]);
        let g = problem.global_grad(theta);
        let fd = central_difference(|t| problem.global_loss(t), theta, dir);
        prop_assert!(agrees(fd, linalg::dot(&g, dir)));
        let g1 = problem.local_grad(1, theta);
        let fd1 = central_difference(|t| problem.local_loss(1, t), theta, dir);
        prop_assert!(agrees(fd1, linalg::dot(&g1, dir)));
    }

    #[test]
    fn strong_convexity_and_smoothness_witnesses(
        seed: u64,
        d in 1usize..10,
        a in prop::collection::vec(-5.0f64..5.0, 10),
        b in prop::collection::vec(-5.0f64..5.0, 10),
    ) {
        let problem = synthesize(3, 6, d, seed);
        let (a, b) = (&a[..d], &b[..d]);
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let dist_sq = linalg::norm_sq(&diff);
        prop_assume!(dist_sq > 1e-6);
        let ga = problem.global_grad(a);
        let gb = problem.global_grad(b);
        let gdiff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
        let mu = problem.strong_convexity();
        let l = problem.smoothness();
        prop_assert!(linalg::dot(&gdiff, &diff) >= mu * dist_sq * (1.0 - 1e-9));
        prop_assert!(linalg::norm_sq(&gdiff) <= l * l * dist_sq * (1.0 + 1e-9));
        let fa = problem.global_loss(a);
        let fb = problem.global_loss(b);
        prop_assert!(fb >= fa + linalg::dot(&ga, &diff.iter().map(|x| -x).collect::<Vec<_>>()) + 0.5 * mu * dist_sq - 1e-9);
    }
}

#[test]
fn oracle_agrees_from_two_starts() {
    for seed in 0..5 {
        let problem = synthesize(5, 40, 10, seed);
        let a = solve_centralized(&problem, DEFAULT_ORACLE_TOLERANCE).unwrap();
        let far = vec![3.0; 10];
        let b = solve_centralized_from(&problem, &far, DEFAULT_ORACLE_TOLERANCE).unwrap();
        assert!((a.value - b.value).abs() <= 1e-12, "{} vs {}", a.value, b.value);
        assert!(linalg::dist_sq(&a.theta, &b.theta).sqrt() <= 1e-9);
        assert!(a.grad_norm < DEFAULT_ORACLE_TOLERANCE);
        // No probe near the optimum does better.
        for k in 0..10 {
            let mut probe = a.theta.clone();
            probe[k] += 1e-4;
            assert!(problem.global_loss(&probe) >= a.value);
        }
    }
}
