//! Run configuration: one TOML file, unknown keys rejected.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use warpdlm::dlm::{make_linear_growth_sutse, DlmSystem};
use warpdlm::simgen::{GenConfig, IngarchParams, MpsbParams, ZipParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Observed series, CSV with one column per coordinate.
    pub data: Option<PathBuf>,
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub warp: WarpSpec,
    #[serde(default)]
    pub inference: InferenceSpec,
    #[serde(default)]
    pub forecast: ForecastSpec,
    #[serde(default)]
    pub pf: PfSpec,
    #[serde(default)]
    pub evaluate: EvaluateSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "generator", rename_all = "snake_case")]
pub enum SimulateSpec {
    Zip {
        length: usize,
        #[serde(default = "zip_default")]
        params: ZipSpec,
    },
    Ingarch {
        length: usize,
        #[serde(default)]
        beta0: Option<f64>,
        #[serde(default)]
        betas: Option<Vec<f64>>,
        #[serde(default)]
        alphas: Option<Vec<f64>>,
        #[serde(default)]
        burn_in: Option<usize>,
    },
    Mpsb {
        length: usize,
        #[serde(default)]
        lambdas: Option<Vec<f64>>,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        alpha0: Option<f64>,
        #[serde(default)]
        beta0: Option<f64>,
        #[serde(default)]
        theta0: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipSpec {
    pub lambda_init: (f64, f64),
    pub rw_variance: f64,
    pub pi_range: (f64, f64),
    pub y_max: u64,
}

fn zip_default() -> ZipSpec {
    let d = ZipParams::default();
    ZipSpec {
        lambda_init: d.lambda_init,
        rw_variance: d.rw_variance,
        pi_range: d.pi_range,
        y_max: d.y_max,
    }
}

impl SimulateSpec {
    pub fn length(&self) -> usize {
        match self {
            SimulateSpec::Zip { length, .. } | SimulateSpec::Ingarch { length, .. } | SimulateSpec::Mpsb { length, .. } => {
                *length
            }
        }
    }

    pub fn to_gen_config(&self) -> GenConfig {
        match self {
            SimulateSpec::Zip { params, .. } => GenConfig::Zip(ZipParams {
                lambda_init: params.lambda_init,
                rw_variance: params.rw_variance,
                pi_range: params.pi_range,
                y_max: params.y_max,
            }),
            SimulateSpec::Ingarch {
                beta0,
                betas,
                alphas,
                burn_in,
                ..
            } => {
                let d = IngarchParams::default();
                GenConfig::Ingarch(IngarchParams {
                    beta0: beta0.unwrap_or(d.beta0),
                    betas: betas.clone().unwrap_or(d.betas),
                    alphas: alphas.clone().unwrap_or(d.alphas),
                    burn_in: burn_in.unwrap_or(d.burn_in),
                })
            }
            SimulateSpec::Mpsb {
                lambdas,
                gamma,
                alpha0,
                beta0,
                theta0,
                ..
            } => {
                let d = MpsbParams::default();
                GenConfig::Mpsb(MpsbParams {
                    lambdas: lambdas.clone().unwrap_or(d.lambdas),
                    gamma: gamma.unwrap_or(d.gamma),
                    alpha0: alpha0.unwrap_or(d.alpha0),
                    beta0: beta0.unwrap_or(d.beta0),
                    theta0: theta0.or(d.theta0),
                })
            }
        }
    }
}

/// A scalar (times the identity), a vector (diagonal) or a full matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, d: usize, key: &str) -> Result<DMatrix<f64>, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(d, d) * *s),
            MatrixSpec::Diagonal(v) => {
                if v.len() != d {
                    return Err(format!("{key}: expected {d} diagonal entries, got {}", v.len()));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            MatrixSpec::Full(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(format!("{key}: expected a {d}x{d} matrix"));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LocalLevel,
    LinearGrowth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Defaults to the number of data columns.
    pub n: Option<usize>,
    pub v: MatrixSpec,
    pub w: MatrixSpec,
    /// Slope evolution variance (linear growth only).
    pub w_slope: MatrixSpec,
    /// Prior mean of the levels; slopes start at zero.
    pub a0: f64,
    pub r0: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::LocalLevel,
            n: None,
            v: MatrixSpec::Scalar(1.0),
            w: MatrixSpec::Scalar(0.1),
            w_slope: MatrixSpec::Scalar(0.001),
            a0: 0.0,
            r0: 10.0,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, n: usize) -> Result<DlmSystem, String> {
        let v = self.v.to_matrix(n, "model.v")?;
        let w = self.w.to_matrix(n, "model.w")?;
        let res = match self.kind {
            ModelKind::LocalLevel => DlmSystem::new(
                n,
                n,
                DMatrix::identity(n, n).into(),
                DMatrix::identity(n, n).into(),
                v.into(),
                w.into(),
                DVector::from_element(n, self.a0),
                DMatrix::identity(n, n) * self.r0,
            ),
            ModelKind::LinearGrowth => {
                let ws = self.w_slope.to_matrix(n, "model.w_slope")?;
                let p = 2 * n;
                make_linear_growth_sutse(
                    n,
                    v,
                    w,
                    ws,
                    DVector::from_fn(p, |i, _| if i < n { self.a0 } else { 0.0 }),
                    DMatrix::identity(p, p) * self.r0,
                )
            }
        };
        res.map_err(|e| format!("model: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    Sqrt,
    Log,
    Nonparametric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpSpec {
    pub transform: TransformKind,
    /// Known upper bound of the counts.
    pub y_max: Option<u64>,
    /// Largest count kept in a fitted nonparametric transformation.
    pub support_max: Option<u64>,
    /// Knot table from a previous `fit`, used instead of refitting.
    pub knots: Option<PathBuf>,
}

impl Default for WarpSpec {
    fn default() -> Self {
        Self {
            transform: TransformKind::Identity,
            y_max: None,
            support_max: None,
            knots: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Gibbs,
    Pf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFit {
    None,
    Ml,
    Gibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Fixed,
    Scalar,
    Diagonal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSpec {
    pub method: Method,
    pub draws: usize,
    pub burnin: usize,
    pub particles: usize,
    /// Relative tolerance of rectangle probabilities.
    pub tolerance: f64,
    /// Largest `n * T` for exact (selection normal) computations.
    pub exact_cap: usize,
    /// How `fit` estimates the variances.
    pub variances: VarianceFit,
    pub v_structure: Structure,
    pub w_structure: Structure,
    /// Upper bound of the uniform priors on standard deviations.
    pub sd_upper: f64,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        Self {
            method: Method::Exact,
            draws: 1000,
            burnin: 500,
            particles: 5000,
            tolerance: 1e-3,
            exact_cap: 400,
            variances: VarianceFit::Ml,
            v_structure: Structure::Scalar,
            w_structure: Structure::Scalar,
            sd_upper: 1e4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSpec {
    pub horizon: usize,
    /// Largest count enumerated for unbounded pmfs.
    pub enum_max: u64,
}

impl Default for ForecastSpec {
    fn default() -> Self {
        Self {
            horizon: 1,
            enum_max: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfSpec {
    /// Fit variances and initial particles by Gibbs sampling on this many
    /// leading observations, then filter the rest.
    pub offline: usize,
    /// Write a particle snapshot every this many steps (0: only at the end).
    pub snapshot_every: usize,
    /// Resume from `snapshot.txt` in the output directory.
    pub resume: bool,
    /// Resample only when ESS falls below this fraction of the particles.
    pub resample_threshold: Option<f64>,
}

impl Default for PfSpec {
    fn default() -> Self {
        Self {
            offline: 0,
            snapshot_every: 0,
            resume: false,
            resample_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSpec {
    /// First forecast origin: one-step forecasts of `y_{origin+1}..y_T`.
    pub origin: usize,
    /// Warp transformations to compare; the first is the baseline.
    pub transforms: Vec<TransformKind>,
    /// Plot envelope resamples.
    pub envelope_reps: usize,
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        Self {
            origin: 50,
            transforms: vec![TransformKind::Identity, TransformKind::Sqrt, TransformKind::Nonparametric],
            envelope_reps: 100,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [&mut cfg.data, &mut cfg.warp.knots].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let inf = &self.inference;
        if inf.draws == 0 {
            return Err("inference.draws must be positive".into());
        }
        if inf.particles < 2 {
            return Err("inference.particles must be at least 2".into());
        }
        if !(inf.tolerance > 0.0) {
            return Err("inference.tolerance must be positive".into());
        }
        if !(inf.sd_upper > 0.0) {
            return Err("inference.sd_upper must be positive".into());
        }
        if self.forecast.horizon == 0 {
            return Err("forecast.horizon must be at least 1".into());
        }
        if let Some(th) = self.pf.resample_threshold {
            if !(0.0..=1.0).contains(&th) {
                return Err("pf.resample_threshold must lie in [0, 1]".into());
            }
        }
        if self.evaluate.transforms.is_empty() {
            return Err("evaluate.transforms must name at least one transformation".into());
        }
        if let Some(p) = &self.data {
            if !p.exists() {
                return Err(format!("data: file {} does not exist", p.display()));
            }
        }
        if let Some(p) = &self.warp.knots {
            if !p.exists() {
                return Err(format!("warp.knots: file {} does not exist", p.display()));
            }
        }
        if let Some(s) = &self.simulate {
            if s.length() == 0 {
                return Err("simulate.length must be positive".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form (after the seed override).
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
