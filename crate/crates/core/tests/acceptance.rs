//! Acceptance checks. Runs every criterion and prints one PASS/FAIL line each.
//!
//! Environment:
//! - `WARPDLM_FULL_ACCEPTANCE=1`: full-size calibration and score studies
//!   (30 series, variances refitted at every forecast origin). The default
//!   is the reduced run: 10 calibration series and one fit per series.
//! - `WARPDLM_ACCEPTANCE_ONLY=1,5,9`: run a subset.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use warpdlm::dlm::{make_linear_growth_sutse, make_local_level, DlmSystem};
use warpdlm::eval::{log_score, rpit, uniformity_pvalue, ForecastRecord, PmfSource};
use warpdlm::inference::{
    filter, filter_compact, gibbs, gibbs_warm_start, log_marginal_likelihood, smooth, fit_variances_ml,
    GibbsOptions, GibbsPriors, MlOptions, VarStructure, VarianceBlock, VariancePrior,
};
use warpdlm::linalg;
use warpdlm::mvn::{RectProbOptions, Rectangle};
use warpdlm::particle::{bootstrap_logml_se, pf_run, pf_step, predictive_pmf, ParticleCloud, PfOptions};
use warpdlm::selnorm::SelectionNormal;
use warpdlm::series::CountSeries;
use warpdlm::simgen::{gen_ingarch, gen_mpsb, gen_zip_bounded, IngarchParams, MpsbParams, ZipParams};
use warpdlm::stats;
use warpdlm::warp::{fit_nonparametric, Transformation, Warp};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn full_run() -> bool {
    std::env::var("WARPDLM_FULL_ACCEPTANCE").is_ok_and(|v| v == "1")
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("WARPDLM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "selection normal sampler vs rejection", c1_sampler),
        (2, "filter recursion vs compact form", c2_filter_algebra),
        (3, "total probability", c3_total_probability),
        (4, "Gibbs vs direct smoothing", c4_gibbs_vs_exact),
        (5, "particle filter vs exact", c5_particle_exactness),
        (6, "calibration under INGARCH", c6_calibration),
        (7, "ZIP-bounded score ordering", c7_zip_ordering),
        (8, "probit special case", c8_probit),
        (9, "constant-work streaming", c9_constant_work),
        (10, "MPSB long-run stability", c10_mpsb),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {id:>2} {}: {name}: {} [{secs:.1}s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn normal_vec<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

// ---------------------------------------------------------------- 1

fn random_instance<R: Rng>(rng: &mut R) -> SelectionNormal {
    loop {
        let d2 = rng.random_range(1..=2);
        let d1 = rng.random_range(1..=3 - d2);
        let d = d1 + d2;
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
        let mu = normal_vec(d, rng);
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in 0..d1 {
            let s = cov[(i, i)].sqrt();
            match rng.random_range(0..3) {
                0 => {
                    lower.push(mu[i] + s * rng.random_range(-1.0..1.0));
                    upper.push(f64::INFINITY);
                }
                1 => {
                    lower.push(f64::NEG_INFINITY);
                    upper.push(mu[i] + s * rng.random_range(-1.0..1.0));
                }
                _ => {
                    let lo = mu[i] + s * rng.random_range(-1.5..0.5);
                    lower.push(lo);
                    upper.push(lo + s * rng.random_range(0.5..2.0));
                }
            }
        }
        let sn = SelectionNormal::new(
            mu.rows(0, d1).into_owned(),
            mu.rows(d1, d2).into_owned(),
            cov.view((0, 0), (d1, d1)).into_owned(),
            cov.view((d1, d1), (d2, d2)).into_owned(),
            cov.view((0, d1), (d1, d2)).into_owned(),
            Rectangle::new(lower, upper).unwrap(),
        )
        .unwrap();
        // Keep the rejection oracle affordable.
        if sn.log_mass(&RectProbOptions::absolute(1e-5), rng).unwrap().prob() > 0.03 {
            return sn;
        }
    }
}

fn rejection_draws<R: Rng>(sn: &SelectionNormal, ndraws: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let (d1, d2) = (sn.d1(), sn.d2());
    let fac = linalg::cholesky(&sn.joint_cov()).unwrap();
    let mut mean = DVector::zeros(d1 + d2);
    mean.rows_mut(0, d1).copy_from(sn.mu_z());
    mean.rows_mut(d1, d2).copy_from(sn.mu_theta());
    let mut out = Vec::with_capacity(ndraws);
    while out.len() < ndraws {
        let x = linalg::sample_gaussian(&mean, &fac, rng);
        if sn.constraint().contains(&x.as_slice()[..d1]) {
            out.push(x.rows(d1, d2).into_owned());
        }
    }
    out
}

fn c1_sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ndraws = 100_000;
    let mut tests = 0;
    let mut fails = 0;
    let mut min_p: f64 = 1.0;
    for _ in 0..20 {
        let sn = random_instance(&mut rng);
        let oracle = rejection_draws(&sn, ndraws, &mut rng);
        // Thin the coordinate-wise chain so draws are close to independent.
        let mut sampler = sn.sampler().unwrap().with_thin(10);
        let alg: Vec<DVector<f64>> = (0..ndraws).map(|_| sampler.draw(&mut rng).unwrap()).collect();
        for j in 0..sn.d2() {
            let a: Vec<f64> = alg.iter().map(|v| v[j]).collect();
            let b: Vec<f64> = oracle.iter().map(|v| v[j]).collect();
            let p = stats::ks2_pvalue(&a, &b);
            tests += 1;
            min_p = min_p.min(p);
            if p < 0.01 {
                fails += 1;
            }
        }
    }
    outcome(fails == 0, format!("{tests} KS tests, {fails} below 0.01, min p = {min_p:.4}"))
}

// ---------------------------------------------------------------- 2

fn random_scalar_system<R: Rng>(rng: &mut R) -> DlmSystem {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    DlmSystem::new(
        1,
        1,
        m(rng.random_range(0.5..2.0)).into(),
        m(rng.random_range(0.5..1.2)).into(),
        m(rng.random_range(0.1..2.0)).into(),
        m(rng.random_range(0.05..1.0)).into(),
        DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)),
        m(rng.random_range(0.5..3.0)),
    )
    .unwrap()
}

fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c2_filter_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut bounds_ok = true;
    for _ in 0..50 {
        let sys = random_scalar_system(&mut rng);
        let tr = match rng.random_range(0..3) {
            0 => Transformation::Identity,
            1 => Transformation::Sqrt,
            _ => Transformation::Log,
        };
        let warp = Warp::uniform(1, tr, None).unwrap();
        let big_t = rng.random_range(1..=6);
        let rows: Vec<Vec<Option<u64>>> = (0..big_t)
            .map(|_| vec![if rng.random::<f64>() < 0.1 { None } else { Some(rng.random_range(0..7)) }])
            .collect();
        let y = CountSeries::new(1, rows).unwrap();
        let rec = filter(&sys, &warp, &y, big_t).unwrap();
        for t in 1..=big_t {
            let a = &rec[t - 1].sn;
            let b = filter_compact(&sys, &warp, &y, t).unwrap().sn;
            let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
            for d in [
                max_diff(&col(a.mu_z()), &col(b.mu_z())),
                max_diff(&col(a.mu_theta()), &col(b.mu_theta())),
                max_diff(a.sigma_z(), b.sigma_z()),
                max_diff(a.sigma_theta(), b.sigma_theta()),
                max_diff(a.sigma_ztheta(), b.sigma_ztheta()),
            ] {
                worst = worst.max(d);
            }
            bounds_ok &= a.constraint() == b.constraint();
        }
    }
    outcome(
        worst <= 1e-10 && bounds_ok,
        format!("max elementwise difference {worst:.2e}, constraints equal: {bounds_ok}"),
    )
}

// ---------------------------------------------------------------- 3

fn c3_total_probability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let sys = make_local_level(1.0, 0.5, 0.3, 1.0).unwrap();
    let warp = Warp::uniform(1, Transformation::Identity, Some(1)).unwrap();
    let opts = RectProbOptions::absolute(1e-7);
    let mut totals = Vec::new();
    for big_t in [2usize, 3] {
        let mut total = 0.0;
        for code in 0..(1u64 << big_t) {
            let ys: Vec<u64> = (0..big_t).map(|i| (code >> i) & 1).collect();
            let y = CountSeries::univariate(&ys);
            total += log_marginal_likelihood(&sys, &warp, &y, &opts, &mut rng).unwrap().prob();
        }
        totals.push(total);
    }
    let pass = (totals[0] - 1.0).abs() <= 1e-4 && (totals[1] - 1.0).abs() <= 1e-3;
    outcome(pass, format!("T=2 sum {:.8}, T=3 sum {:.8}", totals[0], totals[1]))
}

// ---------------------------------------------------------------- 4 and 8

/// Largest `|difference| / combined SE` over posterior means and sds of
/// every state, comparing Gibbs draws with direct smoothing draws.
fn compare_gibbs_direct(sys: &DlmSystem, warp: &Warp, y: &CountSeries, seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let big_t = y.len();
    let opts = GibbsOptions {
        niter: 25_000,
        burnin: 5_000,
        thin: 1,
        keep_states: true,
    };
    let g = gibbs(sys, warp, y, &GibbsPriors::fixed(), &opts, &mut rng).unwrap();
    let sm = smooth(sys, warp, y, &RectProbOptions::default(), &mut rng).unwrap();
    let direct = sm.sn.sample_n(20_000, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for t in 1..=big_t {
        let a = g.state_trace(0, t);
        let b: Vec<f64> = direct.iter().map(|v| v[t - 1]).collect();
        let (ma, mb) = (stats::mean(&a), stats::mean(&b));
        let se_m = (stats::batch_means_se(&a).powi(2) + stats::batch_means_se(&b).powi(2)).sqrt();
        worst = worst.max((ma - mb).abs() / se_m);
        let sq = |x: &[f64], m: f64| x.iter().map(|v| (v - m).powi(2)).collect::<Vec<f64>>();
        let (qa, qb) = (sq(&a, ma), sq(&b, mb));
        let (sa, sb) = (stats::mean(&qa).sqrt(), stats::mean(&qb).sqrt());
        // Delta method: se(s) = se(s^2) / (2 s).
        let se_s = ((stats::batch_means_se(&qa) / (2.0 * sa)).powi(2) + (stats::batch_means_se(&qb) / (2.0 * sb)).powi(2))
            .sqrt();
        worst = worst.max((sa - sb).abs() / se_s);
    }
    (worst, format!("largest |difference| = {worst:.2} combined MC SE over {} states", big_t))
}

fn c4_gibbs_vs_exact() -> Outcome {
    let sys = make_local_level(1.0, 0.5, 0.0, 3.0).unwrap();
    let warp = Warp::identity(1);
    let y = CountSeries::univariate(&[2, 0, 3, 5, 4]);
    let (worst, detail) = compare_gibbs_direct(&sys, &warp, &y, 404);
    outcome(worst <= 3.0, detail)
}

fn c8_probit() -> Outcome {
    let sys = make_local_level(1.0, 0.3, 0.0, 1.0).unwrap();
    let warp = Warp::uniform(1, Transformation::Identity, Some(1)).unwrap();
    // Cells are (-inf, 0) and (0, inf).
    assert_eq!(warp.interval(0, 0).unwrap(), (f64::NEG_INFINITY, 0.0));
    assert_eq!(warp.interval(0, 1).unwrap(), (0.0, f64::INFINITY));
    let y = CountSeries::univariate(&[1, 1, 0, 1, 0, 0, 1, 1, 1, 0]);
    let (worst, detail) = compare_gibbs_direct(&sys, &warp, &y, 808);
    outcome(worst <= 3.0, detail)
}

// ---------------------------------------------------------------- 5

fn c5_particle_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let sys = make_local_level(1.0, 0.5, 0.0, 3.0).unwrap();
    let warp = Warp::identity(1);
    let (_, z) = sys.simulate_latent(10, &mut rng).unwrap();
    let ys: Vec<u64> = z.iter().map(|&v| warp.latent_to_count_coord(0, v)).collect();
    let y = CountSeries::univariate(&ys);
    let tight = RectProbOptions::relative(1e-5);
    let exact_means: Vec<f64> = filter(&sys, &warp, &y, 10)
        .unwrap()
        .iter()
        .map(|fs| fs.sn.mean(&tight, &mut rng).unwrap()[0])
        .collect();
    let exact_logml = log_marginal_likelihood(&sys, &warp, &y, &tight, &mut rng).unwrap().log_prob;

    let s = 10_000;
    let reps = 50;
    let mut means = vec![Vec::with_capacity(reps); 10];
    let mut logmls = Vec::with_capacity(reps);
    let mut se_boot = f64::NAN;
    for r in 0..reps {
        let opts = PfOptions {
            particles: s,
            keep_weights: r == 0,
            ..PfOptions::default()
        };
        let init = ParticleCloud::from_prior(&sys, s, &mut rng).unwrap();
        let run = pf_run(init, &sys, &warp, &y, &opts, &mut rng).unwrap();
        for (t, st) in run.steps.iter().enumerate() {
            means[t].push(st.mean[0]);
        }
        if r == 0 {
            let raw: Vec<Vec<f64>> = run.steps.iter().map(|st| st.raw_logweights.clone().unwrap()).collect();
            se_boot = bootstrap_logml_se(&raw, 200, &mut rng);
        }
        logmls.push(run.logml());
    }
    // (a) first run against exact means; MC SE from the replicate spread.
    let worst_a = (0..10)
        .map(|t| (means[t][0] - exact_means[t]).abs() / stats::variance(&means[t]).sqrt())
        .fold(0.0, f64::max);
    // (b)
    let z_b = (logmls[0] - exact_logml).abs() / se_boot;
    // (c) ratio p^/p has mean one if the estimator is unbiased.
    let ratios: Vec<f64> = logmls.iter().map(|l| (l - exact_logml).exp()).collect();
    let z_c = (stats::mean(&ratios) - 1.0).abs() / (stats::variance(&ratios) / reps as f64).sqrt();
    outcome(
        worst_a <= 3.0 && z_b <= 3.0 && z_c <= 3.0,
        format!("(a) max {worst_a:.2} SE, (b) {z_b:.2} bootstrap SE, (c) {z_c:.2} SE"),
    )
}

// ---------------------------------------------------------------- 6 and 7

#[derive(Clone, Copy)]
enum Model {
    Identity,
    Sqrt,
    Nonparametric,
}

impl Model {
    fn warp(self, train: &CountSeries, y_max: Option<u64>) -> Warp {
        let tr = match self {
            Model::Identity => Transformation::Identity,
            Model::Sqrt => Transformation::Sqrt,
            Model::Nonparametric => fit_nonparametric(&train.column(0), y_max).unwrap(),
        };
        Warp::uniform(1, tr, y_max).unwrap()
    }
}

/// One-step forecasts at origins `100, 102, .., 198` for a local level
/// warpDLM: variances by marginal maximum likelihood with a Gibbs warm
/// start, refitted every `refit_every` origins; forecasts are
/// Rao-Blackwellized particle-filter pmfs.
fn rolling_forecasts(
    y: &CountSeries,
    model: Model,
    y_max: Option<u64>,
    refit_every: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ForecastRecord> {
    let origins: Vec<usize> = (0..50).map(|k| 100 + 2 * k).collect();
    let template = make_local_level(1.0, 1.0, 0.0, 3.0).unwrap();
    let pf_opts = PfOptions {
        particles: 2000,
        ..PfOptions::default()
    };
    let mut records = Vec::with_capacity(origins.len());
    for block in origins.chunks(refit_every) {
        let train = y.head(block[0]);
        let warp = model.warp(&train, y_max);
        let warm = gibbs_warm_start(&template, &warp, &train, &GibbsOptions::default(), rng).unwrap();
        let ml = MlOptions {
            seed: rng.random(),
            ..MlOptions::default()
        };
        let fit = fit_variances_ml(&warm, &warp, &train, VarStructure::Scalar, VarStructure::Scalar, &ml).unwrap();
        let sys = warm.with_variances(fit.v, fit.w).unwrap();
        let init = ParticleCloud::from_prior(&sys, pf_opts.particles, rng).unwrap();
        let mut cloud = pf_run(init, &sys, &warp, &train, &pf_opts, rng).unwrap().cloud;
        let enum_max = y_max.unwrap_or(4 * train.max_observed().unwrap_or(1) + 20);
        for &o in block {
            while cloud.t < o {
                cloud = pf_step(&cloud, &sys, &warp, y.row(cloud.t + 1), &pf_opts, rng).unwrap().0;
            }
            let pmf = predictive_pmf(&cloud, &sys, &warp, 0, enum_max).unwrap();
            records.push(ForecastRecord {
                t: o + 1,
                observed: y.row(o + 1)[0].unwrap(),
                pmf,
                source: PmfSource::Exact,
            });
        }
    }
    records
}

fn c6_calibration() -> Outcome {
    let full = full_run();
    let (nseries, refit_every) = if full { (30, 1) } else { (10, 50) };
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let series: Vec<CountSeries> = (0..nseries)
        .map(|_| gen_ingarch(&IngarchParams::default(), 200, &mut rng).unwrap().series)
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, model) in [("identity", Model::Identity), ("sqrt", Model::Sqrt), ("np", Model::Nonparametric)] {
        let mut ok = 0;
        for y in &series {
            let recs = rolling_forecasts(y, model, None, refit_every, &mut rng);
            let u: Vec<f64> = recs.iter().map(|r| rpit(r, &mut rng)).collect();
            if uniformity_pvalue(&u).unwrap() > 0.05 {
                ok += 1;
            }
        }
        let frac = ok as f64 / nseries as f64;
        pass &= frac >= 0.8;
        parts.push(format!("{name} {ok}/{nseries}"));
    }
    let mode = if full { "full" } else { "reduced" };
    outcome(pass, format!("{mode} run, series with p > 0.05: {}", parts.join(", ")))
}

fn c7_zip_ordering() -> Outcome {
    let refit_every = if full_run() { 1 } else { 50 };
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let nseries = 30;
    let mut wins = 0;
    let mut means: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for _ in 0..nseries {
        let y = gen_zip_bounded(&ZipParams::default(), 200, &mut rng).unwrap().series;
        let mut score = |model| {
            let recs = rolling_forecasts(&y, model, Some(24), refit_every, &mut rng);
            stats::mean(&recs.iter().map(log_score).collect::<Vec<f64>>())
        };
        let np = score(Model::Nonparametric);
        let id = score(Model::Identity);
        means.entry("np").or_default().push(np);
        means.entry("identity").or_default().push(id);
        if np <= id {
            wins += 1;
        }
    }
    let frac = wins as f64 / nseries as f64;
    outcome(
        frac >= 0.6,
        format!(
            "np <= identity on {wins}/{nseries} series; average log score np {:.4}, identity {:.4}",
            stats::mean(&means["np"]),
            stats::mean(&means["identity"])
        ),
    )
}

// ---------------------------------------------------------------- 9

fn c9_constant_work() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let n = 2;
    let eye = DMatrix::<f64>::identity(n, n);
    let w = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.1, 0.2]);
    let sys = DlmSystem::new(
        n,
        n,
        eye.clone().into(),
        eye.clone().into(),
        (eye.clone() * 0.5).into(),
        w.into(),
        DVector::from_element(n, 3.0),
        eye * 3.0,
    )
    .unwrap();
    let warp = Warp::identity(n);
    let (_, z) = sys.simulate_latent(500, &mut rng).unwrap();
    let rows: Vec<Vec<u64>> = z.column_iter().map(|c| warp.latent_to_count(c.as_slice())).collect();
    let y = CountSeries::from_rows(&rows).unwrap();
    let opts = PfOptions {
        particles: 5000,
        ..PfOptions::default()
    };
    let init = ParticleCloud::from_prior(&sys, opts.particles, &mut rng).unwrap();
    let run = pf_run(init, &sys, &warp, &y, &opts, &mut rng).unwrap();
    let ts: Vec<f64> = run.steps.iter().map(|s| s.t as f64).collect();
    let secs: Vec<f64> = run.steps.iter().map(|s| s.seconds).collect();
    let rho = stats::spearman(&ts, &secs);
    outcome(
        rho.abs() < 0.2,
        format!(
            "Spearman rho = {rho:.3}; median step {:.1} ms",
            1e3 * {
                let mut s = secs.clone();
                s.sort_by(f64::total_cmp);
                s[s.len() / 2]
            }
        ),
    )
}

// ---------------------------------------------------------------- 10

fn c10_mpsb() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let big_t = 4000;
    let offline = 1000;
    let tail = 400;
    let sim = gen_mpsb(&MpsbParams::default(), big_t, &mut rng).unwrap();
    let y = sim.series;
    let n = y.n();
    let tail_means: Vec<f64> = (0..n)
        .map(|j| {
            let col: Vec<f64> = y.column(j)[big_t - tail..].iter().map(|v| v.unwrap() as f64).collect();
            stats::mean(&col)
        })
        .collect();
    let positive = tail_means.iter().all(|&m| m > 0.0);

    // SUTSE linear growth with inverse-Wishart variance priors, fitted
    // offline on the first 1000 points; the filter starts from the offline
    // draws of theta_1000 and runs over the remaining points.
    let p = 2 * n;
    let template = make_linear_growth_sutse(
        n,
        DMatrix::identity(n, n),
        DMatrix::identity(n, n) * 0.01,
        DMatrix::identity(n, n) * 1e-4,
        DVector::from_fn(p, |i, _| if i < n { 3.0 } else { 0.0 }),
        DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| if i < n { 1.0 } else { 0.01 })),
    )
    .unwrap();
    let iw = |scale: f64| VariancePrior::InverseWishart {
        df: n as f64 + 2.0,
        scale: DMatrix::identity(n, n) * scale,
    };
    let priors = GibbsPriors {
        v: vec![VarianceBlock::new(0, n, iw(1.0))],
        w: vec![VarianceBlock::new(0, n, iw(0.01)), VarianceBlock::new(n, n, iw(1e-4))],
    };
    let warp = Warp::identity(n);
    let fit = gibbs(&template, &warp, &y.head(offline), &priors, &GibbsOptions::default(), &mut rng).unwrap();
    let sys = template.with_variances(fit.v_mean(), fit.w_mean()).unwrap();
    let opts = PfOptions {
        particles: 5000,
        ..PfOptions::default()
    };
    let init: Vec<DVector<f64>> = (0..opts.particles)
        .map(|_| fit.final_states[rng.random_range(0..fit.final_states.len())].clone())
        .collect();
    let mut cloud = ParticleCloud::from_draws(offline, init).unwrap();

    // One-step predictive means over the final stretch, for the tracking check.
    let mut pred_sum = vec![0.0; n];
    let mut min_ess = f64::INFINITY;
    let mut failure = None;
    for t in offline + 1..=big_t {
        if t > big_t - tail {
            for (j, acc) in pred_sum.iter_mut().enumerate() {
                let pmf = predictive_pmf(&cloud, &sys, &warp, j, 80).unwrap();
                *acc += pmf.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>();
            }
        }
        match pf_step(&cloud, &sys, &warp, y.row(t), &opts, &mut rng) {
            Ok((next, s)) => {
                min_ess = min_ess.min(s.ess);
                cloud = next;
            }
            Err(e) => {
                failure = Some(format!("t = {t}: {e}"));
                break;
            }
        }
    }
    let tails = tail_means.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(", ");
    if let Some(e) = failure {
        return outcome(false, format!("final-400 means [{tails}]; particle filter failed at {e}"));
    }
    let pred: Vec<f64> = pred_sum.iter().map(|s| s / tail as f64).collect();
    let gap = pred
        .iter()
        .zip(&tail_means)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let preds = pred.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(", ");
    outcome(
        positive && cloud.logml.is_finite() && gap < 0.5,
        format!(
            "final-400 means [{tails}], predictive means [{preds}] (max gap {gap:.2} < 0.5); \
             {} filter steps, min ESS {min_ess:.0}, logml {:.1}",
            big_t - offline,
            cloud.logml
        ),
    )
}
