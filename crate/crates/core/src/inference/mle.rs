//! Marginal maximum likelihood for the observation and evolution variances.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::filter::log_marginal_likelihood;
use super::gibbs::{gibbs, GibbsOptions, GibbsPriors, DEFAULT_SD_UPPER};
use crate::dlm::DlmSystem;
use crate::error::{Error, Result};
use crate::mvn::RectProbOptions;
use crate::series::CountSeries;
use crate::warp::Warp;

/// Which entries of a variance matrix are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarStructure {
    Fixed,
    /// `sigma^2 I`.
    Scalar,
    /// `diag(sigma_1^2, ..)`.
    Diagonal,
}

impl VarStructure {
    fn nparams(self, d: usize) -> usize {
        match self {
            VarStructure::Fixed => 0,
            VarStructure::Scalar => 1,
            VarStructure::Diagonal => d,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlOptions {
    /// Nelder–Mead iteration cap per run.
    pub budget: usize,
    /// Smallest variance reachable by the log parameterization.
    pub floor: f64,
    /// Rectangle probabilities during the search. Every evaluation uses
    /// the same random shifts (`seed`) so the objective is a fixed
    /// function of the parameters.
    pub search: RectProbOptions,
    /// Error target for the reported log-likelihood at the optimum, as a
    /// fraction of `|ln p(y)|` (estimated first with `search`).
    pub report_tol: f64,
    pub seed: u64,
    /// Restart once from a perturbed optimum.
    pub restart: bool,
    /// Stop when the simplex's function values have this standard deviation.
    pub ftol: f64,
}

impl Default for MlOptions {
    fn default() -> Self {
        Self {
            budget: 200,
            floor: 1e-8,
            search: RectProbOptions::fixed(2048),
            report_tol: 1e-3,
            seed: 0x5eed,
            restart: true,
            ftol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlFit {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub logml: f64,
    pub evaluations: usize,
    /// False if a run stopped on the iteration cap.
    pub converged: bool,
    /// `(log-variance parameters, log-likelihood)` for each evaluation.
    pub trace: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Copy)]
struct Objective<'a> {
    sys: &'a DlmSystem,
    warp: &'a Warp,
    y: &'a CountSeries,
    v_struct: VarStructure,
    w_struct: VarStructure,
    opts: &'a MlOptions,
    trace: &'a RefCell<Vec<(Vec<f64>, f64)>>,
}

impl Objective<'_> {
    fn build(&self, x: &[f64]) -> Result<DlmSystem> {
        let lf = self.opts.floor.ln();
        let var = |v: f64| v.max(lf).exp();
        let nv = self.v_struct.nparams(self.sys.n());
        let v = expand(&self.sys.v(1), self.v_struct, &x[..nv], var);
        let w = expand(&self.sys.w(1), self.w_struct, &x[nv..], var);
        self.sys.with_variances(v, w)
    }

    fn loglik(&self, x: &[f64], opts: &RectProbOptions) -> Result<f64> {
        let sys = self.build(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        Ok(log_marginal_likelihood(&sys, self.warp, self.y, opts, &mut rng)?.log_prob)
    }

    fn report(&self, x: &[f64]) -> Result<f64> {
        let pilot = self.loglik(x, &self.opts.search)?;
        let tol = (self.opts.report_tol * pilot.abs()).max(1e-6);
        self.loglik(x, &RectProbOptions::relative(tol))
    }
}

fn expand(current: &DMatrix<f64>, s: VarStructure, x: &[f64], var: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let d = current.nrows();
    match s {
        VarStructure::Fixed => current.clone(),
        VarStructure::Scalar => DMatrix::identity(d, d) * var(x[0]),
        VarStructure::Diagonal => DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |i, _| var(x[i]))),
    }
}

fn initial_params(m: &DMatrix<f64>, s: VarStructure, floor: f64) -> Vec<f64> {
    let d = m.nrows();
    let lg = |v: f64| v.max(floor).ln();
    match s {
        VarStructure::Fixed => vec![],
        VarStructure::Scalar => vec![lg(m.trace() / d as f64)],
        VarStructure::Diagonal => (0..d).map(|i| lg(m[(i, i)])).collect(),
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let ll = match self.loglik(x, &self.opts.search) {
            Ok(v) if v.is_finite() => v,
            // Infeasible or underflowing regions are treated as very poor.
            _ => -1e300,
        };
        self.trace.borrow_mut().push((x.clone(), ll));
        Ok(-ll)
    }
}

fn run_nm(obj: &Objective<'_>, x0: &[f64], step: f64) -> Result<(Vec<f64>, bool)> {
    let k = x0.len();
    let mut simplex = vec![x0.to_vec()];
    for i in 0..k {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(obj.opts.ftol)
        .map_err(|e| Error::InvalidParameter(format!("optimizer setup: {e}")))?;
    let res = Executor::new(*obj, solver)
        .configure(|s| s.max_iters(obj.opts.budget as u64))
        .run()
        .map_err(|e| Error::InvalidParameter(format!("optimizer failed: {e}")))?;
    let state = res.state();
    let converged = state.get_iter() < obj.opts.budget as u64;
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::InvalidParameter("optimizer returned no parameters".into()))?;
    Ok((best, converged))
}

/// Maximize `ln p(y_{1:T})` over log-variances by Nelder–Mead. The
/// starting values are the variances in `sys`.
pub fn fit_variances_ml(
    sys: &DlmSystem,
    warp: &Warp,
    y: &CountSeries,
    v_struct: VarStructure,
    w_struct: VarStructure,
    opts: &MlOptions,
) -> Result<MlFit> {
    if !(sys.v_is_constant() && sys.w_is_constant()) {
        return Err(Error::InvalidParameter("variance fitting needs time-invariant V and W".into()));
    }
    let trace = RefCell::new(Vec::new());
    let obj = Objective {
        sys,
        warp,
        y,
        v_struct,
        w_struct,
        opts,
        trace: &trace,
    };
    let mut x0 = initial_params(&sys.v(1), v_struct, opts.floor);
    x0.extend(initial_params(&sys.w(1), w_struct, opts.floor));
    if x0.is_empty() {
        let logml = obj.report(&[])?;
        return Ok(MlFit {
            v: sys.v(1).into_owned(),
            w: sys.w(1).into_owned(),
            logml,
            evaluations: 1,
            converged: true,
            trace: vec![(vec![], logml)],
        });
    }
    let (mut best, mut converged) = run_nm(&obj, &x0, 0.5)?;
    if opts.restart {
        let perturbed: Vec<f64> = best
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { v + 0.3 } else { v - 0.3 })
            .collect();
        let (again, c2) = run_nm(&obj, &perturbed, 0.25)?;
        let f1 = obj.loglik(&best, &opts.search).unwrap_or(f64::NEG_INFINITY);
        let f2 = obj.loglik(&again, &opts.search).unwrap_or(f64::NEG_INFINITY);
        if f2 > f1 {
            best = again;
        }
        converged &= c2;
    }
    let fitted = obj.build(&best)?;
    let logml = obj.report(&best)?;
    let trace = trace.into_inner();
    Ok(MlFit {
        v: fitted.v(1).into_owned(),
        w: fitted.w(1).into_owned(),
        logml,
        evaluations: trace.len(),
        converged,
        trace,
    })
}

/// Posterior means of `V` and `W` from a short Gibbs run under uniform
/// standard-deviation priors: the default starting point for
/// [`fit_variances_ml`].
pub fn gibbs_warm_start<R: rand::Rng + ?Sized>(
    sys: &DlmSystem,
    warp: &Warp,
    y: &CountSeries,
    opts: &GibbsOptions,
    rng: &mut R,
) -> Result<DlmSystem> {
    let priors = GibbsPriors::uniform_sd(sys.n(), sys.p(), DEFAULT_SD_UPPER);
    let out = gibbs(sys, warp, y, &priors, opts, rng)?;
    sys.with_variances(out.v_mean(), out.w_mean())
}
