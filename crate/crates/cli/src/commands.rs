use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use warpdlm::dlm::DlmSystem;
use warpdlm::eval::{
    log_score, rpit, rpit_plot_data, score_comparison, uniformity_pvalue, ForecastRecord, PmfSource, UNIFORMITY_TEST,
};
use warpdlm::inference::{
    empirical_pmf, filter, fit_variances_ml, forecast_from_states, forecast_pmf, gibbs, smooth, ForecastPmf,
    GibbsOptions, GibbsOutput, GibbsPriors, MlOptions, VarStructure,
};
use warpdlm::mvn::RectProbOptions;
use warpdlm::particle::{
    pf_forecast_sample, pf_step, predictive_pmf, ParticleCloud, PfOptions, Resampling, StepSummary,
};
use warpdlm::simgen::generate;
use warpdlm::warp::{fit_nonparametric, Transformation};
use warpdlm::{CountSeries, Warp};

use crate::config::{Method, RunConfig, Structure, TransformKind, VarianceFit};
use crate::io::{self, num, Table};
use crate::CliError;

/// Everything a command needs: the validated config, resolved seed, output
/// directory and the run summary being collected.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
    rng: ChaCha8Rng,
    summary: Vec<(String, String)>,
    started: Instant,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf, threads: usize, command: &'static str) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let summary = vec![
            ("command".into(), command.into()),
            ("seed".into(), cfg.seed.to_string()),
            ("config_hash".into(), cfg.hash()),
            ("version".into(), env!("CARGO_PKG_VERSION").into()),
        ];
        Ok(Self {
            cfg,
            out,
            threads: threads.max(1),
            rng,
            summary,
            started: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_owned(), value.to_string()));
    }

    /// Write `run_summary.toml`, including the resolved config for replay.
    pub fn finish(mut self) -> Result<(), CliError> {
        let secs = self.started.elapsed().as_secs_f64();
        self.note("wall_seconds", format!("{secs:.3}"));
        let mut table = toml::Table::new();
        let mut run = toml::Table::new();
        for (k, v) in &self.summary {
            run.insert(k.clone(), toml::Value::String(v.clone()));
        }
        table.insert("run".into(), toml::Value::Table(run));
        let cfg = toml::Value::try_from(&self.cfg).map_err(|e| CliError::Io(format!("serializing config: {e}")))?;
        table.insert("config".into(), cfg);
        let text = toml::to_string(&table).map_err(|e| CliError::Io(format!("run summary: {e}")))?;
        io::write_text(&self.path("run_summary.toml"), &text)
    }
}

fn rect_opts(cfg: &RunConfig) -> RectProbOptions {
    RectProbOptions::relative(cfg.inference.tolerance)
}

fn load_series(ctx: &mut Ctx) -> Result<CountSeries, CliError> {
    if let Some(p) = ctx.cfg.data.clone() {
        let y = io::read_series(&p)?;
        ctx.note("data", p.display());
        return Ok(y);
    }
    if let Some(spec) = ctx.cfg.simulate.clone() {
        let sim = generate(&spec.to_gen_config(), spec.length(), &mut ctx.rng)?;
        ctx.note("data", "simulated");
        return Ok(sim.series);
    }
    Err(CliError::Config("data: no input series (set `data` or a [simulate] table)".into()))
}

fn transformation(kind: TransformKind, column: &[Option<u64>], support_max: Option<u64>) -> Result<Transformation, CliError> {
    Ok(match kind {
        TransformKind::Identity => Transformation::Identity,
        TransformKind::Sqrt => Transformation::Sqrt,
        TransformKind::Log => Transformation::Log,
        TransformKind::Nonparametric => fit_nonparametric(column, support_max)?,
    })
}

/// The warp for `kind`; nonparametric transformations are read from the
/// knots directory when one is configured, else fitted to `fit_on`.
fn build_warp(cfg: &RunConfig, kind: TransformKind, fit_on: &CountSeries) -> Result<Warp, CliError> {
    let n = fit_on.n();
    let mut transforms = Vec::with_capacity(n);
    for j in 0..n {
        let tr = match (&cfg.warp.knots, kind) {
            (Some(dir), TransformKind::Nonparametric) => {
                let p = dir.join(format!("knots_y{}.txt", j + 1));
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Config(format!("warp.knots: {}: {e}", p.display())))?;
                Transformation::from_knot_table(&text)
                    .map_err(|e| CliError::Config(format!("warp.knots: {}: {e}", p.display())))?
            }
            _ => transformation(kind, &fit_on.column(j), cfg.warp.support_max)?,
        };
        transforms.push(tr);
    }
    Ok(Warp::new(transforms, cfg.warp.y_max)?)
}

fn build_system(cfg: &RunConfig, n: usize) -> Result<DlmSystem, CliError> {
    if let Some(m) = cfg.model.n {
        if m != n {
            return Err(CliError::Config(format!("model.n = {m} but the data have {n} columns")));
        }
    }
    cfg.model.build(n).map_err(CliError::Config)
}

fn check_exact(cfg: &RunConfig, y: &CountSeries, what: &str) -> Result<(), CliError> {
    let size = y.n() * y.len();
    if size > cfg.inference.exact_cap {
        return Err(CliError::Config(format!(
            "inference.exact_cap: {what} needs n*T = {size} latent dimensions, above the cap of {}; \
             use method = \"pf\" or \"gibbs\", or raise the cap",
            cfg.inference.exact_cap
        )));
    }
    Ok(())
}

fn structure(s: Structure) -> VarStructure {
    match s {
        Structure::Fixed => VarStructure::Fixed,
        Structure::Scalar => VarStructure::Scalar,
        Structure::Diagonal => VarStructure::Diagonal,
    }
}

fn gibbs_options(cfg: &RunConfig, keep_states: bool) -> GibbsOptions {
    GibbsOptions {
        niter: cfg.inference.burnin + cfg.inference.draws,
        burnin: cfg.inference.burnin,
        thin: 1,
        keep_states,
    }
}

fn learning_priors(cfg: &RunConfig, sys: &DlmSystem) -> GibbsPriors {
    GibbsPriors::uniform_sd(sys.n(), sys.p(), cfg.inference.sd_upper)
}

fn pf_options(cfg: &RunConfig, threads: usize) -> PfOptions {
    PfOptions {
        particles: cfg.inference.particles,
        resampling: match cfg.pf.resample_threshold {
            Some(threshold) => Resampling::Adaptive { threshold },
            None => Resampling::Always,
        },
        threads,
        ..PfOptions::default()
    }
}

/// Variance estimation as configured; returns the updated system.
fn fit_variances(ctx: &mut Ctx, sys: &DlmSystem, warp: &Warp, y: &CountSeries) -> Result<DlmSystem, CliError> {
    let cfg = ctx.cfg.clone();
    match cfg.inference.variances {
        VarianceFit::None => Ok(sys.clone()),
        VarianceFit::Gibbs => {
            let out = gibbs(sys, warp, y, &learning_priors(&cfg, sys), &gibbs_options(&cfg, false), &mut ctx.rng)?;
            Ok(sys.with_variances(out.v_mean(), out.w_mean())?)
        }
        VarianceFit::Ml => {
            check_exact(&cfg, y, "maximum likelihood")?;
            let opts = MlOptions {
                seed: ctx.rng.random(),
                ..MlOptions::default()
            };
            let fit = fit_variances_ml(sys, warp, y, structure(cfg.inference.v_structure), structure(cfg.inference.w_structure), &opts)?;
            ctx.note("logml", num(fit.logml));
            ctx.note("ml_evaluations", fit.evaluations);
            ctx.note("ml_converged", fit.converged);
            Ok(sys.with_variances(fit.v, fit.w)?)
        }
    }
}

fn write_variances(path: &Path, sys: &DlmSystem) -> Result<(), CliError> {
    let mut t = Table::create(path, &["matrix", "row", "col", "value"])?;
    for (name, m) in [("V", sys.v(1).into_owned()), ("W", sys.w(1).into_owned())] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                t.row(&[name.to_string(), (i + 1).to_string(), (j + 1).to_string(), num(m[(i, j)])])?;
            }
        }
    }
    t.finish()
}

fn read_variances(path: &Path, sys: &DlmSystem) -> Result<DlmSystem, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut v = DMatrix::zeros(sys.n(), sys.n());
    let mut w = DMatrix::zeros(sys.p(), sys.p());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let bad = || CliError::Io(format!("{}: malformed variance row", path.display()));
        let i: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let j: usize = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let x: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let m = match rec.get(0) {
            Some("V") => &mut v,
            Some("W") => &mut w,
            _ => return Err(bad()),
        };
        if i == 0 || j == 0 || i > m.nrows() || j > m.ncols() {
            return Err(bad());
        }
        m[(i - 1, j - 1)] = x;
    }
    Ok(sys.with_variances(v, w)?)
}

/// Quantile of sorted values by linear interpolation.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

const SUMMARY_HEADER: [&str; 7] = ["t", "coord", "mean", "median", "q025", "q975", "ndraws"];

fn summary_row(t: usize, coord: usize, values: &mut [f64]) -> Vec<String> {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    vec![
        t.to_string(),
        (coord + 1).to_string(),
        num(mean),
        num(quantile(values, 0.5)),
        num(quantile(values, 0.025)),
        num(quantile(values, 0.975)),
        values.len().to_string(),
    ]
}

/// State draws and count-scale predictive draws for one time point.
fn write_time_point(
    t: usize,
    states: &[DVector<f64>],
    sys: &DlmSystem,
    warp: &Warp,
    rng: &mut ChaCha8Rng,
    draws: &mut Table,
    summary: &mut Table,
    predictive: &mut Table,
) -> Result<(), CliError> {
    for (d, th) in states.iter().enumerate() {
        for (c, v) in th.iter().enumerate() {
            draws.row(&[(d + 1).to_string(), t.to_string(), (c + 1).to_string(), num(*v)])?;
        }
    }
    for c in 0..sys.p() {
        let mut vals: Vec<f64> = states.iter().map(|th| th[c]).collect();
        summary.row(&summary_row(t, c, &mut vals))?;
    }
    let counts = forecast_from_states(states, t, sys, warp, 0, rng)?;
    for c in 0..sys.n() {
        let mut vals: Vec<f64> = counts.iter().map(|p| p[0][c] as f64).collect();
        predictive.row(&summary_row(t, c, &mut vals))?;
    }
    Ok(())
}

struct PointTables {
    draws: Table,
    summary: Table,
    predictive: Table,
}

impl PointTables {
    fn create(ctx: &Ctx) -> Result<Self, CliError> {
        Ok(Self {
            draws: Table::create(&ctx.path("draws.csv"), &["draw", "t", "coord", "value"])?,
            summary: Table::create(&ctx.path("summary.csv"), &SUMMARY_HEADER)?,
            predictive: Table::create(&ctx.path("predictive.csv"), &SUMMARY_HEADER)?,
        })
    }

    fn write(
        &mut self,
        t: usize,
        states: &[DVector<f64>],
        sys: &DlmSystem,
        warp: &Warp,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), CliError> {
        write_time_point(t, states, sys, warp, rng, &mut self.draws, &mut self.summary, &mut self.predictive)
    }

    fn finish(self) -> Result<(), CliError> {
        self.draws.finish()?;
        self.summary.finish()?;
        self.predictive.finish()
    }
}

pub fn simulate(mut ctx: Ctx) -> Result<(), CliError> {
    let spec = ctx
        .cfg
        .simulate
        .clone()
        .ok_or_else(|| CliError::Config("simulate: the config has no [simulate] table".into()))?;
    let sim = generate(&spec.to_gen_config(), spec.length(), &mut ctx.rng)?;
    io::write_series(&ctx.path("series.csv"), &sim.series)?;
    let mut lat = Table::create(&ctx.path("latent.csv"), &["t", "latent"])?;
    for (t, v) in sim.latent.iter().enumerate() {
        lat.row(&[(t + 1).to_string(), num(*v)])?;
    }
    lat.finish()?;
    let mut meta = sim.metadata.clone();
    meta.push(("seed".into(), ctx.cfg.seed.to_string()));
    meta.push(("config_hash".into(), ctx.cfg.hash()));
    io::write_pairs(&ctx.path("series_meta.csv"), &meta)?;
    ctx.note("length", spec.length());
    ctx.finish()
}

pub fn fit(mut ctx: Ctx) -> Result<(), CliError> {
    let y = load_series(&mut ctx)?;
    let warp = build_warp(&ctx.cfg, ctx.cfg.warp.transform, &y)?;
    let knots_dir = ctx.path("knots");
    std::fs::create_dir_all(&knots_dir).map_err(|e| CliError::Io(format!("{}: {e}", knots_dir.display())))?;
    for (j, tr) in warp.transforms.iter().enumerate() {
        io::write_text(&knots_dir.join(format!("knots_y{}.txt", j + 1)), &tr.to_knot_table())?;
    }
    let sys = build_system(&ctx.cfg, y.n())?;
    let fitted = fit_variances(&mut ctx, &sys, &warp, &y)?;
    write_variances(&ctx.path("variances.csv"), &fitted)?;
    ctx.note("variance_method", format!("{:?}", ctx.cfg.inference.variances).to_lowercase());
    ctx.finish()
}

pub fn filter_cmd(mut ctx: Ctx) -> Result<(), CliError> {
    let y = load_series(&mut ctx)?;
    let warp = build_warp(&ctx.cfg, ctx.cfg.warp.transform, &y)?;
    let sys = build_system(&ctx.cfg, y.n())?;
    let mut tables = PointTables::create(&ctx)?;
    match ctx.cfg.inference.method {
        Method::Exact => {
            check_exact(&ctx.cfg, &y, "exact filtering")?;
            let states = filter(&sys, &warp, &y, y.len())?;
            for fs in &states {
                let mut sampler = fs.sn.sampler()?;
                let draws = (0..ctx.cfg.inference.draws)
                    .map(|_| sampler.draw(&mut ctx.rng))
                    .collect::<Result<Vec<_>, _>>()?;
                tables.write(fs.t, &draws, &sys, &warp, &mut ctx.rng)?;
            }
        }
        Method::Pf => {
            let opts = pf_options(&ctx.cfg, ctx.threads);
            let mut cloud = ParticleCloud::from_prior(&sys, opts.particles, &mut ctx.rng)?;
            for t in 1..=y.len() {
                cloud = pf_step(&cloud, &sys, &warp, y.row(t), &opts, &mut ctx.rng)?.0;
                let draws = cloud.equal_weight_draws(&mut ctx.rng);
                tables.write(t, &draws, &sys, &warp, &mut ctx.rng)?;
            }
            ctx.note("logml", num(cloud.logml));
        }
        Method::Gibbs => {
            return Err(CliError::Config(
                "inference.method: filtering supports \"exact\" and \"pf\"".into(),
            ))
        }
    }
    tables.finish()?;
    ctx.finish()
}

pub fn smooth_cmd(mut ctx: Ctx) -> Result<(), CliError> {
    let y = load_series(&mut ctx)?;
    let warp = build_warp(&ctx.cfg, ctx.cfg.warp.transform, &y)?;
    let sys = build_system(&ctx.cfg, y.n())?;
    let p = sys.p();
    let paths: Vec<DMatrix<f64>> = match ctx.cfg.inference.method {
        Method::Exact => {
            check_exact(&ctx.cfg, &y, "exact smoothing")?;
            let sm = smooth(&sys, &warp, &y, &rect_opts(&ctx.cfg), &mut ctx.rng)?;
            ctx.note("logml", num(sm.logml.log_prob));
            sm.sn
                .sample_n(ctx.cfg.inference.draws, &mut ctx.rng)?
                .into_iter()
                .map(|v| DMatrix::from_column_slice(p, y.len(), v.as_slice()))
                .collect()
        }
        Method::Gibbs => {
            let out: GibbsOutput = gibbs(&sys, &warp, &y, &GibbsPriors::fixed(), &gibbs_options(&ctx.cfg, true), &mut ctx.rng)?;
            out.state_draws
        }
        Method::Pf => {
            return Err(CliError::Config(
                "inference.method: smoothing supports \"exact\" and \"gibbs\"".into(),
            ))
        }
    };
    let mut tables = PointTables::create(&ctx)?;
    for t in 1..=y.len() {
        let states: Vec<DVector<f64>> = paths.iter().map(|m| m.column(t - 1).into_owned()).collect();
        tables.write(t, &states, &sys, &warp, &mut ctx.rng)?;
    }
    tables.finish()?;
    ctx.note("draws", paths.len());
    ctx.finish()
}

pub fn forecast_cmd(mut ctx: Ctx) -> Result<(), CliError> {
    let y = load_series(&mut ctx)?;
    let warp = build_warp(&ctx.cfg, ctx.cfg.warp.transform, &y)?;
    let sys = build_system(&ctx.cfg, y.n())?;
    let horizon = ctx.cfg.forecast.horizon;
    let enum_max = ctx.cfg.forecast.enum_max;
    let big_t = y.len();
    // pmfs[h - 1][coord]
    let mut pmfs: Vec<Vec<ForecastPmf>> = Vec::with_capacity(horizon);
    let mut paths: Option<Vec<Vec<Vec<u64>>>> = None;
    match ctx.cfg.inference.method {
        Method::Exact => {
            check_exact(&ctx.cfg, &y, "exact forecasting")?;
            let fs = filter(&sys, &warp, &y, big_t)?.pop().expect("non-empty series");
            let opts = rect_opts(&ctx.cfg);
            for h in 1..=horizon {
                let row = (0..y.n())
                    .map(|c| forecast_pmf(&fs, &sys, &warp, h, c, enum_max, &opts, &mut ctx.rng))
                    .collect::<Result<Vec<_>, _>>()?;
                pmfs.push(row);
            }
        }
        Method::Pf => {
            let opts = pf_options(&ctx.cfg, ctx.threads);
            let mut cloud = ParticleCloud::from_prior(&sys, opts.particles, &mut ctx.rng)?;
            for t in 1..=big_t {
                cloud = pf_step(&cloud, &sys, &warp, y.row(t), &opts, &mut ctx.rng)?.0;
            }
            let sample = pf_forecast_sample(&cloud, &sys, &warp, horizon, &mut ctx.rng)?;
            for h in 1..=horizon {
                let row = (0..y.n())
                    .map(|c| {
                        if h == 1 {
                            predictive_pmf(&cloud, &sys, &warp, c, enum_max).map_err(CliError::from)
                        } else {
                            Ok(empirical_pmf(&sample, h - 1, c, warp.enumeration_max(c, enum_max)))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                pmfs.push(row);
            }
            paths = Some(sample);
        }
        Method::Gibbs => {
            let out = gibbs(&sys, &warp, &y, &GibbsPriors::fixed(), &gibbs_options(&ctx.cfg, false), &mut ctx.rng)?;
            let sample = forecast_from_states(&out.final_states, big_t, &sys, &warp, horizon, &mut ctx.rng)?;
            for h in 1..=horizon {
                pmfs.push(
                    (0..y.n())
                        .map(|c| empirical_pmf(&sample, h - 1, c, warp.enumeration_max(c, enum_max)))
                        .collect(),
                );
            }
            paths = Some(sample);
        }
    }
    let mut pmf_t = Table::create(&ctx.path("pmf.csv"), &["t", "horizon", "coord", "count", "prob"])?;
    let mut sum_t = Table::create(
        &ctx.path("forecast_summary.csv"),
        &["t", "horizon", "coord", "mean", "median", "q025", "q975", "tail_mass"],
    )?;
    for (h, row) in pmfs.iter().enumerate() {
        for (c, pmf) in row.iter().enumerate() {
            let t = (big_t + h + 1).to_string();
            for (k, p) in pmf.pmf.iter().enumerate() {
                pmf_t.row(&[t.clone(), (h + 1).to_string(), (c + 1).to_string(), k.to_string(), num(*p)])?;
            }
            let q = |level: f64| -> String {
                (0..pmf.pmf.len())
                    .find(|&k| pmf.cdf(k as i64) >= level)
                    .map_or_else(|| "NA".to_string(), |k| k.to_string())
            };
            let mean: f64 = pmf.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            sum_t.row(&[
                t.clone(),
                (h + 1).to_string(),
                (c + 1).to_string(),
                num(mean),
                q(0.5),
                q(0.025),
                q(0.975),
                num(pmf.tail_mass),
            ])?;
        }
    }
    pmf_t.finish()?;
    sum_t.finish()?;
    if let Some(paths) = paths {
        let mut d = Table::create(&ctx.path("forecast_draws.csv"), &["draw", "t", "horizon", "coord", "count"])?;
        for (i, path) in paths.iter().enumerate() {
            for (h, counts) in path.iter().enumerate() {
                for (c, v) in counts.iter().enumerate() {
                    d.row(&[
                        (i + 1).to_string(),
                        (big_t + h + 1).to_string(),
                        (h + 1).to_string(),
                        (c + 1).to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        d.finish()?;
    }
    ctx.finish()
}

/// Per-step generator for the streaming filter: the stream depends only on
/// the seed and the step, so a resumed run repeats an uninterrupted one.
fn step_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(t as u64);
    r
}

fn steps_header(p: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=p).map(|j| format!("mean_{j}")));
    h.extend(["ess", "log_pred", "resampled", "logml"].map(String::from));
    h
}

fn steps_row(s: &StepSummary, logml: f64) -> Vec<String> {
    let mut r = vec![s.t.to_string()];
    r.extend(s.mean.iter().map(|v| num(*v)));
    r.extend([num(s.ess), num(s.log_pred), s.resampled.to_string(), num(logml)]);
    r
}

/// Keep the header and rows with `t <= upto`.
fn truncate_steps(path: &Path, upto: usize) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .is_some_and(|t| t <= upto);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    io::write_text(path, &kept)
}

fn write_snapshot(path: &Path, cloud: &ParticleCloud) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    io::write_text(&tmp, &cloud.to_snapshot())?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn pf_cmd(mut ctx: Ctx) -> Result<(), CliError> {
    let y = load_series(&mut ctx)?;
    let offline = ctx.cfg.pf.offline;
    if offline >= y.len() {
        return Err(CliError::Config(format!(
            "pf.offline = {offline} leaves no observations to filter (T = {})",
            y.len()
        )));
    }
    let fit_on = if offline > 0 { y.head(offline) } else { y.clone() };
    let warp = build_warp(&ctx.cfg, ctx.cfg.warp.transform, &fit_on)?;
    let template = build_system(&ctx.cfg, y.n())?;
    let opts = pf_options(&ctx.cfg, ctx.threads);
    let snap_path = ctx.path("snapshot.txt");
    let steps_path = ctx.path("steps.csv");
    let var_path = ctx.path("variances.csv");

    let (sys, mut cloud, mut steps) = if ctx.cfg.pf.resume {
        let text = std::fs::read_to_string(&snap_path)
            .map_err(|e| CliError::Config(format!("pf.resume: {}: {e}", snap_path.display())))?;
        let cloud = ParticleCloud::from_snapshot(&text).map_err(|e| CliError::Config(format!("pf.resume: {e}")))?;
        let sys = if var_path.exists() { read_variances(&var_path, &template)? } else { template };
        if cloud.particles[0].len() != sys.p() {
            return Err(CliError::Config("pf.resume: snapshot state dimension does not match the model".into()));
        }
        truncate_steps(&steps_path, cloud.t)?;
        ctx.note("resumed_from", cloud.t);
        (sys, cloud, Table::append(&steps_path)?)
    } else {
        let (sys, cloud) = if offline > 0 {
            let head = y.head(offline);
            let out = gibbs(&template, &warp, &head, &learning_priors(&ctx.cfg, &template), &gibbs_options(&ctx.cfg, false), &mut ctx.rng)?;
            let sys = template.with_variances(out.v_mean(), out.w_mean())?;
            let draws: Vec<DVector<f64>> = (0..opts.particles)
                .map(|_| out.final_states[ctx.rng.random_range(0..out.final_states.len())].clone())
                .collect();
            (sys, ParticleCloud::from_draws(offline, draws)?)
        } else {
            let cloud = ParticleCloud::from_prior(&template, opts.particles, &mut ctx.rng)?;
            (template, cloud)
        };
        write_variances(&var_path, &sys)?;
        let steps = Table::create(&steps_path, &steps_header(sys.p()))?;
        (sys, cloud, steps)
    };

    let mut timing = Table::create(&ctx.path("step_times.csv"), &["t", "seconds"])?;
    let every = ctx.cfg.pf.snapshot_every;
    let seed = ctx.cfg.seed;
    while cloud.t < y.len() {
        let t = cloud.t + 1;
        let mut r = step_rng(seed, t);
        let (next, s) = pf_step(&cloud, &sys, &warp, y.row(t), &opts, &mut r)?;
        cloud = next;
        steps.row(&steps_row(&s, cloud.logml))?;
        timing.row(&[t.to_string(), format!("{:.6}", s.seconds)])?;
        if every > 0 && t % every == 0 {
            write_snapshot(&snap_path, &cloud)?;
        }
    }
    steps.finish()?;
    timing.finish()?;
    write_snapshot(&snap_path, &cloud)?;
    ctx.note("logml", num(cloud.logml));
    ctx.note("particles", opts.particles);
    ctx.finish()
}

fn transform_name(kind: TransformKind) -> &'static str {
    match kind {
        TransformKind::Identity => "identity",
        TransformKind::Sqrt => "sqrt",
        TransformKind::Log => "log",
        TransformKind::Nonparametric => "nonparametric",
    }
}

pub fn evaluate(mut ctx: Ctx) -> Result<(), CliError> {
    let y = load_series(&mut ctx)?;
    let origin = ctx.cfg.evaluate.origin;
    if origin == 0 || origin >= y.len() {
        return Err(CliError::Config(format!(
            "evaluate.origin must lie in 1..{} (series length {})",
            y.len() - 1,
            y.len()
        )));
    }
    let train = y.head(origin);
    let n = y.n();
    let enum_max = ctx.cfg.forecast.enum_max;
    let mut scores = Table::create(
        &ctx.path("scores.csv"),
        &["model", "t", "coord", "observed", "log_score", "rpit"],
    )?;
    let mut unif = Table::create(&ctx.path("uniformity.csv"), &["model", "coord", "pvalue", "n", "test"])?;
    let mut by_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let kinds = ctx.cfg.evaluate.transforms.clone();
    for &kind in &kinds {
        let name = transform_name(kind).to_string();
        // The transformation and the variances use the training window only.
        let warp = build_warp(&ctx.cfg, kind, &train)?;
        let template = build_system(&ctx.cfg, n)?;
        let sys = fit_variances(&mut ctx, &template, &warp, &train)?;
        let opts = pf_options(&ctx.cfg, ctx.threads);
        let mut cloud = ParticleCloud::from_prior(&sys, opts.particles, &mut ctx.rng)?;
        for t in 1..=origin {
            cloud = pf_step(&cloud, &sys, &warp, y.row(t), &opts, &mut ctx.rng)?.0;
        }
        let mut u: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut model_scores = Vec::new();
        for t in origin + 1..=y.len() {
            for c in 0..n {
                let Some(obs) = y.row(t)[c] else { continue };
                let rec = ForecastRecord {
                    t,
                    observed: obs,
                    pmf: predictive_pmf(&cloud, &sys, &warp, c, warp.enumeration_max(c, enum_max).max(obs))?,
                    source: PmfSource::Exact,
                };
                let ls = log_score(&rec);
                let pit = rpit(&rec, &mut ctx.rng);
                scores.row(&[name.clone(), t.to_string(), (c + 1).to_string(), obs.to_string(), num(ls), num(pit)])?;
                u[c].push(pit);
                model_scores.push(ls);
            }
            cloud = pf_step(&cloud, &sys, &warp, y.row(t), &opts, &mut ctx.rng)?.0;
        }
        for (c, uc) in u.iter().enumerate() {
            let p = if uc.len() >= 10 { num(uniformity_pvalue(uc)?) } else { "NA".into() };
            unif.row(&[name.clone(), (c + 1).to_string(), p, uc.len().to_string(), UNIFORMITY_TEST.to_string()])?;
            if !uc.is_empty() {
                let plot = rpit_plot_data(uc, ctx.cfg.evaluate.envelope_reps, &mut ctx.rng);
                io::write_text(&ctx.path(&format!("rpit_plot_{name}_y{}.csv", c + 1)), &plot.to_csv())?;
            }
        }
        by_model.insert(name, model_scores);
    }
    scores.finish()?;
    unif.finish()?;
    let baseline = transform_name(kinds[0]);
    let cmp = score_comparison(&by_model, baseline)?;
    io::write_text(&ctx.path("comparison.csv"), &cmp.to_csv())?;
    ctx.note("baseline", baseline);
    ctx.note("uniformity_test", UNIFORMITY_TEST);
    ctx.finish()
}
