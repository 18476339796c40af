//! Fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use warpdlm::dlm::{make_linear_growth_sutse, make_local_level};
use warpdlm::mvn::{MvnParams, Rectangle};
use warpdlm::simgen::{gen_zip_bounded, ZipParams};
use warpdlm::{CountSeries, DlmSystem, Transformation, Warp};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An equicorrelated `d`-dimensional normal and a box around its mean.
pub fn rect_problem(d: usize, rho: f64) -> (Rectangle, MvnParams) {
    let cov = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
    let p = MvnParams::new(DVector::zeros(d), cov).expect("positive definite");
    let rect = Rectangle::new(vec![-0.5; d], vec![1.5; d]).expect("valid box");
    (rect, p)
}

/// A bounded ZIP series of length `len` with a square-root local level model.
pub fn zip_problem(len: usize) -> (DlmSystem, Warp, CountSeries) {
    let sim = gen_zip_bounded(&ZipParams::default(), len, &mut rng(1)).expect("simulates");
    let sys = make_local_level(1.0, 0.05, 1.5, 1.0).expect("valid model");
    let warp = Warp::uniform(1, Transformation::Sqrt, Some(ZipParams::default().y_max)).expect("valid warp");
    (sys, warp, sim.series)
}

/// An `n`-variate linear growth model with counts near 5.
pub fn multivariate_problem(n: usize, len: usize) -> (DlmSystem, Warp, CountSeries) {
    let p = 2 * n;
    let sys = make_linear_growth_sutse(
        n,
        DMatrix::identity(n, n),
        DMatrix::identity(n, n) * 0.01,
        DMatrix::identity(n, n) * 1e-4,
        DVector::from_fn(p, |i, _| if i < n { 5.0 } else { 0.0 }),
        DMatrix::identity(p, p),
    )
    .expect("valid model");
    let rows: Vec<Vec<u64>> = (0..len).map(|t| (0..n).map(|j| ((t + 3 * j) % 5 + 3) as u64).collect()).collect();
    let y = CountSeries::from_rows(&rows).expect("rectangular");
    (sys, Warp::identity(n), y)
}
