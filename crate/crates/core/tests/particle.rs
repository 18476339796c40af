use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use warpdlm::dlm::{make_local_level, DlmSystem};
use warpdlm::inference::{filter, forecast_pmf, log_marginal_likelihood};
use warpdlm::mvn::RectProbOptions;
use warpdlm::particle::*;
use warpdlm::series::CountSeries;
use warpdlm::stats;
use warpdlm::warp::{Transformation, Warp};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn opts(s: usize) -> PfOptions {
    PfOptions {
        particles: s,
        ..PfOptions::default()
    }
}

fn bivariate() -> DlmSystem {
    DlmSystem::new(
        2,
        2,
        DMatrix::identity(2, 2).into(),
        DMatrix::identity(2, 2).into(),
        (DMatrix::identity(2, 2) * 0.5).into(),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.1, 0.2]).into(),
        DVector::from_element(2, 2.0),
        DMatrix::identity(2, 2),
    )
    .unwrap()
}

fn trivariate() -> DlmSystem {
    let w = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.1, 0.3, 0.1, 0.0, 0.1, 0.3]);
    DlmSystem::new(
        3,
        3,
        DMatrix::identity(3, 3).into(),
        DMatrix::identity(3, 3).into(),
        (DMatrix::identity(3, 3) * 0.6).into(),
        w.into(),
        DVector::from_element(3, 1.5),
        DMatrix::identity(3, 3),
    )
    .unwrap()
}

#[test]
fn missing_observation_leaves_weights_equal() {
    let sys = bivariate();
    let warp = Warp::identity(2);
    let cloud = ParticleCloud::from_prior(&sys, 500, &mut rng(1)).unwrap();
    let (next, s) = pf_step(&cloud, &sys, &warp, &[None, None], &opts(500), &mut rng(2)).unwrap();
    assert!((s.ess - 500.0).abs() < 1e-6);
    assert!(s.log_pred.abs() < 1e-12);
    assert_eq!(next.logml, 0.0);
    assert_eq!(next.t, 1);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let sys = bivariate();
    let warp = Warp::identity(2);
    let y = CountSeries::from_rows(&[vec![2, 3], vec![1, 2], vec![3, 3]]).unwrap();
    let run = |threads: usize| {
        let o = PfOptions {
            particles: 700,
            threads,
            ..PfOptions::default()
        };
        let mut r = rng(3);
        let init = ParticleCloud::from_prior(&sys, 700, &mut r).unwrap();
        pf_run(init, &sys, &warp, &y, &o, &mut r).unwrap()
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.cloud.particles, b.cloud.particles);
    assert_eq!(a.logml(), b.logml());
    assert_eq!(a.ess_trace(), b.ess_trace());
}

#[test]
fn snapshot_round_trip_resumes_identically() {
    let sys = make_local_level(1.0, 0.5, 2.0, 1.0).unwrap();
    let warp = Warp::identity(1);
    let y = CountSeries::univariate(&[2, 3, 1, 4, 2]);
    let mut r = rng(4);
    let init = ParticleCloud::from_prior(&sys, 300, &mut r).unwrap();
    let head = pf_run(init, &sys, &warp, &y.head(3), &opts(300), &mut r).unwrap();
    let restored = ParticleCloud::from_snapshot(&head.cloud.to_snapshot()).unwrap();
    assert_eq!(restored.t, head.cloud.t);
    assert_eq!(restored.particles, head.cloud.particles);
    assert_eq!(restored.logweights, head.cloud.logweights);
    assert_eq!(restored.logml, head.cloud.logml);
    let mut r1 = rng(5);
    let mut r2 = rng(5);
    let a = pf_run(head.cloud, &sys, &warp, &y, &opts(300), &mut r1).unwrap();
    let b = pf_run(restored, &sys, &warp, &y, &opts(300), &mut r2).unwrap();
    assert_eq!(a.cloud.particles, b.cloud.particles);
    assert_eq!(a.logml(), b.logml());
    assert!(ParticleCloud::from_snapshot("not a snapshot").is_err());
}

/// Mean and standard error of the filter's log marginal likelihood over
/// independent runs.
fn pf_logml(sys: &DlmSystem, warp: &Warp, y: &CountSeries, s: usize, reps: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            let init = ParticleCloud::from_prior(sys, s, &mut r).unwrap();
            pf_run(init, sys, warp, y, &opts(s), &mut r).unwrap().logml()
        })
        .collect();
    (stats::mean(&vals), (stats::variance(&vals) / reps as f64).sqrt())
}

#[test]
fn univariate_likelihood_matches_exact() {
    let sys = make_local_level(0.8, 0.3, 2.0, 2.0).unwrap();
    let warp = Warp::uniform(1, Transformation::Sqrt, None).unwrap();
    let y = CountSeries::univariate(&[2, 3, 1, 0, 4, 5, 3, 2]);
    let exact = log_marginal_likelihood(&sys, &warp, &y, &RectProbOptions::relative(1e-4), &mut rng(6))
        .unwrap()
        .log_prob;
    let (m, se) = pf_logml(&sys, &warp, &y, 2000, 20, 7);
    assert!((m - exact).abs() < 4.0 * se + 1e-3, "{m} +- {se} vs {exact}");
}

#[test]
fn bivariate_likelihood_matches_exact() {
    let sys = bivariate();
    let warp = Warp::identity(2);
    let y = CountSeries::from_rows(&[vec![2, 3], vec![1, 2], vec![3, 3], vec![2, 4]]).unwrap();
    let exact = log_marginal_likelihood(&sys, &warp, &y, &RectProbOptions::relative(1e-4), &mut rng(8))
        .unwrap()
        .log_prob;
    let (m, se) = pf_logml(&sys, &warp, &y, 2000, 20, 9);
    assert!((m - exact).abs() < 4.0 * se + 2e-3, "{m} +- {se} vs {exact}");
}

#[test]
fn trivariate_likelihood_matches_exact() {
    let sys = trivariate();
    let warp = Warp::identity(3);
    let y = CountSeries::from_rows(&[vec![1, 2, 1], vec![2, 2, 3], vec![1, 0, 2]]).unwrap();
    let exact = log_marginal_likelihood(&sys, &warp, &y, &RectProbOptions::relative(1e-4), &mut rng(10))
        .unwrap()
        .log_prob;
    let (m, se) = pf_logml(&sys, &warp, &y, 1000, 20, 11);
    assert!((m - exact).abs() < 4.0 * se + 2e-3, "{m} +- {se} vs {exact}");
}

#[test]
fn weights_come_from_the_ancestors() {
    for (sys, warp, y) in [
        (make_local_level(1.0, 0.5, 2.0, 1.0).unwrap(), Warp::identity(1), vec![Some(3)]),
        (bivariate(), Warp::identity(2), vec![Some(2), Some(1)]),
    ] {
        let mut r = rng(12);
        let cloud = ParticleCloud::from_prior(&sys, 400, &mut r).unwrap();
        let o = PfOptions {
            particles: 400,
            keep_weights: true,
            ..PfOptions::default()
        };
        let direct = pf_weights(&cloud, &sys, &warp, &y, &o, &mut r).unwrap();
        let (_, s) = pf_step(&cloud, &sys, &warp, &y, &o, &mut r).unwrap();
        let raw = s.raw_logweights.unwrap();
        for (a, b) in direct.iter().zip(&raw) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn filtered_mean_tracks_the_exact_filter() {
    let sys = make_local_level(1.0, 0.4, 1.0, 2.0).unwrap();
    let warp = Warp::identity(1);
    let y = CountSeries::univariate(&[2, 4, 3, 5]);
    let mut r = rng(13);
    let exact = filter(&sys, &warp, &y, 4).unwrap().pop().unwrap();
    let m = exact.sn.mean(&RectProbOptions::absolute(1e-7), &mut r).unwrap()[0];
    let init = ParticleCloud::from_prior(&sys, 20_000, &mut r).unwrap();
    let run = pf_run(init, &sys, &warp, &y, &opts(20_000), &mut r).unwrap();
    assert!((run.cloud.mean()[0] - m).abs() < 0.03, "{} vs {m}", run.cloud.mean()[0]);
}

#[test]
fn rao_blackwellized_pmf_matches_the_exact_forecast() {
    let sys = make_local_level(0.7, 0.3, 2.0, 1.0).unwrap();
    let warp = Warp::uniform(1, Transformation::Sqrt, Some(8)).unwrap();
    let y = CountSeries::univariate(&[2, 3, 3]);
    let mut r = rng(14);
    let fs = filter(&sys, &warp, &y, 3).unwrap().pop().unwrap();
    let exact = forecast_pmf(&fs, &sys, &warp, 1, 0, 8, &RectProbOptions::absolute(1e-7), &mut r).unwrap();
    let init = ParticleCloud::from_prior(&sys, 20_000, &mut r).unwrap();
    let run = pf_run(init, &sys, &warp, &y, &opts(20_000), &mut r).unwrap();
    let rb = predictive_pmf(&run.cloud, &sys, &warp, 0, 8).unwrap();
    assert!((rb.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for (a, b) in rb.pmf.iter().zip(&exact.pmf) {
        assert!((a - b).abs() < 0.01, "{a} vs {b}");
    }
    let paths = pf_forecast_sample(&run.cloud, &sys, &warp, 2, &mut r).unwrap();
    assert_eq!(paths.len(), 20_000);
    assert!(paths.iter().all(|p| p.len() == 2 && p.iter().all(|c| c[0] <= 8)));
}

#[test]
fn adaptive_resampling_skips_when_weights_are_even() {
    let sys = make_local_level(1.0, 0.5, 2.0, 1.0).unwrap();
    let warp = Warp::identity(1);
    let y = CountSeries::new(1, vec![vec![None], vec![Some(2)], vec![None]]).unwrap();
    let o = PfOptions {
        particles: 500,
        resampling: Resampling::Adaptive { threshold: 0.5 },
        ..PfOptions::default()
    };
    let mut r = rng(15);
    let init = ParticleCloud::from_prior(&sys, 500, &mut r).unwrap();
    let run = pf_run(init, &sys, &warp, &y, &o, &mut r).unwrap();
    assert!(!run.steps[0].resampled);
    assert!(!run.steps[2].resampled || run.steps[1].resampled);
    let never = PfOptions {
        resampling: Resampling::Adaptive { threshold: 0.0 },
        ..o
    };
    let init = ParticleCloud::from_prior(&sys, 500, &mut r).unwrap();
    let run = pf_run(init, &sys, &warp, &y, &never, &mut r).unwrap();
    assert!(run.steps.iter().all(|s| !s.resampled));
    let w = run.cloud.weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn bootstrap_error_shrinks_with_particles() {
    let sys = make_local_level(1.0, 0.5, 2.0, 1.0).unwrap();
    let warp = Warp::identity(1);
    let y = CountSeries::univariate(&[2, 3, 1, 4, 2, 3]);
    let se = |s: usize| {
        let mut r = rng(16);
        let o = PfOptions {
            particles: s,
            keep_weights: true,
            ..PfOptions::default()
        };
        let init = ParticleCloud::from_prior(&sys, s, &mut r).unwrap();
        let run = pf_run(init, &sys, &warp, &y, &o, &mut r).unwrap();
        let w: Vec<Vec<f64>> = run.steps.iter().map(|s| s.raw_logweights.clone().unwrap()).collect();
        bootstrap_logml_se(&w, 200, &mut r)
    };
    let (small, large) = (se(250), se(4000));
    assert!(small > 0.0 && large > 0.0);
    assert!(large < small / 2.0, "{large} vs {small}");
}
