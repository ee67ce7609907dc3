use super::clt::{ensemble, oracle_pool};
use super::*;
use crate::error::Error;
use crate::rng::RngStream;

fn small_cfg() -> TheoryConfig {
    TheoryConfig {
        oracle_size: 1024,
        t_values: vec![64, 128, 256],
        trials_per_t: 8,
        ..TheoryConfig::default()
    }
}

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
}

fn random_point(seed: u64, dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = RngStream::root(seed).rng();
    (0..dim).map(|_| scale * rng.normal()).collect()
}

#[test]
fn sampling_is_deterministic_per_stream() {
    let cfg = TheoryConfig::default();
    let a = sample_model(&cfg, &mut RngStream::root(5).rng());
    let b = sample_model(&cfg, &mut RngStream::root(5).rng());
    let c = sample_model(&cfg, &mut RngStream::root(6).rng());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_jitter_family_is_degenerate() {
    let cfg = TheoryConfig {
        jitter: 0.0,
        ..TheoryConfig::default()
    };
    let models: Vec<PrototypeModel> = (0..6)
        .map(|i| sample_model(&cfg, &mut RngStream::root(i).rng()))
        .collect();
    assert!(models.iter().all(|m| m == &models[0]));
    let x = random_point(1, cfg.dim, 0.3);
    for t in [1, 2, 5] {
        let empirical = population_loss(&x, &models[..t], 0).unwrap();
        let population = population_loss(&x, &models, 0).unwrap();
        assert!((empirical - population).abs() <= 1e-15 * population.abs());
    }
}

#[test]
fn model_gradient_matches_finite_differences() {
    let cfg = TheoryConfig::default();
    let m = sample_model(&cfg, &mut RngStream::root(3).rng());
    for probe in 0..20 {
        let x = random_point(100 + probe, cfg.dim, 0.5);
        let y = probe as usize % cfg.num_classes;
        let analytic = m.loss_grad(&x, y).1;
        let numeric = fd_grad(|p| m.loss(p, y), &x, 1e-5);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-8, "probe {probe}: {err:e}");
    }
}

#[test]
fn population_of_one_is_that_model() {
    let cfg = TheoryConfig::default();
    let m = sample_model(&cfg, &mut RngStream::root(9).rng());
    let x = random_point(2, cfg.dim, 0.4);
    let (l, g) = m.loss_grad(&x, 1);
    let pool = [m];
    assert_eq!(population_loss(&x, &pool, 1).unwrap(), l);
    assert_eq!(population_grad(&x, &pool, 1).unwrap(), g);
}

#[test]
fn zero_jitter_pool_matches_any_member() {
    let cfg = TheoryConfig {
        jitter: 0.0,
        ..TheoryConfig::default()
    };
    let pool: Vec<PrototypeModel> = (0..8)
        .map(|i| sample_model(&cfg, &mut RngStream::root(i).rng()))
        .collect();
    let x = random_point(4, cfg.dim, 0.4);
    let (l, g) = pool[3].loss_grad(&x, 2);
    assert!((population_loss(&x, &pool, 2).unwrap() - l).abs() <= 1e-15 * l.abs());
    assert!(max_rel_err(&population_grad(&x, &pool, 2).unwrap(), &g) <= 1e-14);
}

#[test]
fn population_gradient_matches_finite_differences() {
    let cfg = TheoryConfig::default();
    let anchors = class_anchors(&cfg);
    let pool = oracle_pool(
        &TheoryConfig {
            oracle_size: 64,
            ..cfg.clone()
        },
        &anchors,
    );
    for probe in 0..5 {
        let x = random_point(200 + probe, cfg.dim, 0.5);
        let analytic = population_grad(&x, &pool, 0).unwrap();
        let numeric = fd_grad(|p| population_loss(p, &pool, 0).unwrap(), &x, 1e-5);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-8, "probe {probe}: {err:e}");
    }
}

#[test]
fn empty_pool_is_rejected() {
    let x = vec![0.0; 8];
    assert!(matches!(population_loss(&x, &[], 0), Err(Error::Contract(_))));
    assert!(matches!(population_grad(&x, &[], 0), Err(Error::Contract(_))));
}

#[test]
fn two_class_minimizer_lies_beyond_the_target_prototype() {
    let m = PrototypeModel::new(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], 1.0).unwrap();
    let pool = [m];
    let r = find_xhat(&pool, 0, 1e-10, 100_000).unwrap();
    assert!(r.grad_norm <= 1e-10);
    assert!(r.x[0] > 1.0, "{:?}", r.x);
    assert!(r.x[1].abs() < 1e-12 && r.x[2].abs() < 1e-12);
    assert!(r.loss < pool[0].loss(&[1.0, 0.0, 0.0], 0));
}

#[test]
fn zero_jitter_ensemble_minimizer_equals_population_minimizer() {
    let cfg = TheoryConfig {
        jitter: 0.0,
        oracle_size: 64,
        ..TheoryConfig::default()
    };
    let anchors = class_anchors(&cfg);
    let oracle = oracle_pool(&cfg, &anchors);
    let xstar = find_xstar(&oracle, 0, cfg.tol, cfg.max_iter).unwrap();
    for t in [1, 4, 16] {
        let xhat = find_xhat(&ensemble(&cfg, &anchors, t, 0), 0, cfg.tol, cfg.max_iter).unwrap();
        assert_eq!(xhat, xstar, "T={t}");
    }
}

#[test]
fn minimizer_is_independent_of_start() {
    let cfg = TheoryConfig::default();
    let oracle = oracle_pool(&cfg, &class_anchors(&cfg));
    let reference = find_xstar(&oracle, 0, cfg.tol, cfg.max_iter).unwrap();
    for start in 0..5 {
        let x0 = random_point(300 + start, cfg.dim, 1.0);
        let r = minimize_pool(&oracle, 0, x0, cfg.tol, cfg.max_iter).unwrap();
        let gap =
            r.x.iter()
                .zip(&reference.x)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-6, "start {start}: {gap:e}");
    }
}

#[test]
fn hessian_recovers_quadratic_form() {
    let a = [[4.0, 1.0, -0.5], [1.0, 3.0, 0.25], [-0.5, 0.25, 2.0]];
    let grad =
        |x: &[f64]| -> crate::Result<Vec<f64>> { Ok((0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect()) };
    let h = hessian_fd(grad, &[0.3, -0.2, 0.7], 1e-4).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((h[(i, j)] - a[i][j]).abs() < 1e-6);
        }
    }
}

#[test]
fn hessian_is_exactly_symmetric() {
    let cfg = TheoryConfig::default();
    let m = sample_model(&cfg, &mut RngStream::root(12).rng());
    let pool = [m];
    let x = random_point(13, cfg.dim, 0.5);
    let h = hessian_fd(|p| population_grad(p, &pool, 1), &x, 1e-4).unwrap();
    assert_eq!(h, h.transpose());
}

#[test]
fn population_hessian_is_psd_at_xstar() {
    let cfg = TheoryConfig::default();
    let oracle = oracle_pool(&cfg, &class_anchors(&cfg));
    let xstar = find_xstar(&oracle, 0, cfg.tol, cfg.max_iter).unwrap();
    let f = fisher_check(&oracle, &xstar.x, 0, cfg.hessian_step).unwrap();
    assert!(f.min_eigenvalue >= -1e-8, "{}", f.min_eigenvalue);
}

#[test]
fn fisher_error_shrinks_with_pool_size() {
    let mean_err = |m: usize| -> f64 {
        (0..5u64)
            .map(|seed| {
                let cfg = TheoryConfig {
                    oracle_size: m,
                    seed,
                    ..TheoryConfig::default()
                };
                let oracle = oracle_pool(&cfg, &class_anchors(&cfg));
                let xstar = find_xstar(&oracle, 0, cfg.tol, cfg.max_iter).unwrap();
                fisher_check(&oracle, &xstar.x, 0, cfg.hessian_step).unwrap().rel_err
            })
            .sum::<f64>()
            / 5.0
    };
    let (small, large) = (mean_err(256), mean_err(4096));
    assert!(large < small, "M=4096 {large} vs M=256 {small}");
}

fn per_t(points: &[(usize, f64)]) -> Vec<PerT> {
    points
        .iter()
        .map(|&(t, mean_dist)| PerT {
            t,
            delta_loss_stat: vec![],
            dist_l2: vec![],
            chi_mean: 0.0,
            chi_var: 0.0,
            mean_dist,
        })
        .collect()
}

#[test]
fn rate_fit_recovers_inverse_square_root() {
    let rows = per_t(&[(64, 0.8 / 8.0), (128, 0.8 / 128f64.sqrt()), (256, 0.8 / 16.0)]);
    let (slope, _) = convergence_rate_fit(&rows).unwrap();
    assert!((slope + 0.5).abs() < 1e-12, "{slope}");
}

#[test]
fn rate_fit_on_constant_means_is_flat() {
    let (slope, _) = convergence_rate_fit(&per_t(&[(64, 0.3), (128, 0.3), (256, 0.3)])).unwrap();
    assert!(slope.abs() < 1e-12);
}

#[test]
fn rate_fit_needs_three_sizes() {
    assert!(matches!(
        convergence_rate_fit(&per_t(&[(64, 0.3), (128, 0.2)])),
        Err(Error::DegenerateDesign(_))
    ));
}

#[test]
fn small_run_is_reproducible_and_complete() {
    let cfg = small_cfg();
    let a = verify_clt(&cfg).unwrap();
    let b = verify_clt(&cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(samples_csv(&a), samples_csv(&b));
    assert_eq!(a.chi_target_mean, 8.0);
    assert_eq!(a.chi_target_var, 16.0);
    for row in &a.per_t {
        assert_eq!(row.delta_loss_stat.len(), cfg.trials_per_t);
        assert_eq!(row.dist_l2.len(), cfg.trials_per_t);
        assert!(row.delta_loss_stat.iter().all(|s| *s >= -1e-9));
    }
    assert_eq!(samples_csv(&a).lines().count(), 1 + 3 * cfg.trials_per_t);
}

#[test]
fn ensembles_share_no_member_with_the_oracle() {
    let cfg = small_cfg();
    let anchors = class_anchors(&cfg);
    let oracle = oracle_pool(&cfg, &anchors);
    for &t in &cfg.t_values {
        for trial in 0..3 {
            for m in ensemble(&cfg, &anchors, t, trial) {
                assert!(!oracle.contains(&m));
            }
        }
    }
}

#[test]
fn zero_jitter_run_has_no_excess_loss() {
    let cfg = TheoryConfig {
        jitter: 0.0,
        ..small_cfg()
    };
    let r = verify_clt(&cfg).unwrap();
    for row in &r.per_t {
        assert!(
            row.delta_loss_stat.iter().all(|s| *s == 0.0),
            "{:?}",
            row.delta_loss_stat
        );
        assert!(row.dist_l2.iter().all(|d| *d == 0.0), "{:?}", row.dist_l2);
    }
}

#[test]
fn optimizer_failure_is_reported() {
    let cfg = TheoryConfig {
        max_iter: 1,
        ..small_cfg()
    };
    let err = verify_clt(&TheoryConfig { tol: 1e-300, ..cfg }).unwrap_err();
    assert!(
        matches!(err, Error::OptimizerFailed { .. } | Error::Trial { .. }),
        "{err}"
    );
}

#[test]
fn config_rejects_unknown_keys_and_small_oracles() {
    assert!(serde_json::from_str::<TheoryConfig>(r#"{"dimm": 3}"#).is_err());
    let cfg = TheoryConfig {
        oracle_size: 300,
        ..TheoryConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}
