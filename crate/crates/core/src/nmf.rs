//! Frobenius-norm NMF by multiplicative updates.
//!
//! The factorization state keeps `W` (rows x k) and `H^T` (cols x k) in
//! row-major buffers so both halves of an update stream over contiguous
//! memory. Everything crossing the public API is an `ndarray::Array2`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Objective evaluations and the convergence test happen every `STRIDE`
/// iterations.
pub const STRIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub max_iter: usize,
    /// Stop once the relative error changes by less than `tol` (relative)
    /// over one stride.
    pub tol: f64,
    /// Added to every multiplicative-update denominator.
    pub epsilon: f64,
    pub seed: u64,
    /// Random starts tried by [`nmf`]; each runs `pilot_iter` updates and
    /// the lowest-error one is carried on. One start means a plain random
    /// start from `seed`.
    pub n_starts: usize,
    pub pilot_iter: usize,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            max_iter: 1000,
            tol: 1e-6,
            epsilon: 1e-12,
            seed: 0,
            n_starts: 4,
            pilot_iter: 30,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.n_starts < 1 {
            return Err(Error::InvalidConfig("n_starts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// rows x k
    pub w: Array2<f64>,
    /// k x cols
    pub h: Array2<f64>,
    pub trace: Vec<TracePoint>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn relative_error(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |p| p.relative_error)
    }

    /// Scales every column of `W` to unit L2 norm and moves the norm into
    /// the matching row of `H`, leaving `WH` unchanged. Zero columns are left
    /// alone.
    pub fn normalize_columns(&mut self) {
        for (mut col, mut row) in self
            .w
            .axis_iter_mut(Axis(1))
            .zip(self.h.axis_iter_mut(Axis(0)))
        {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
                row.mapv_inplace(|v| v * norm);
            }
        }
    }
}

/// SplitMix64 finalizer over a base seed and a list of indices; used to give
/// every (rank, ensemble member) pair its own reproducible stream.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    // Scrambling the base first keeps (b, [p + 1]) apart from (b + 1, [p]).
    let mut z = splitmix(base);
    for &p in parts {
        z = splitmix(z.wrapping_add(p));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_nonnegative(a: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), &value) in a.indexed_iter() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::NonNegativityViolation { row, col, value });
        }
    }
    Ok(())
}

/// `a^T a` for a row-major `rows x k` buffer.
fn gram(a: &[f64], k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k * k];
    for row in a.chunks_exact(k) {
        for p in 0..k {
            let rp = row[p];
            if rp == 0.0 {
                continue;
            }
            let dst = &mut g[p * k..(p + 1) * k];
            for (d, &rq) in dst.iter_mut().zip(row) {
                *d += rp * rq;
            }
        }
    }
    g
}

/// One multiplicative step on a row-major factor `f` (rows x k):
/// `f <- f * numer / (f * gram + eps)`.
fn mu_step(f: &mut [f64], numer: &[f64], gram: &[f64], k: usize, eps: f64) {
    let mut denom = vec![0.0; k];
    for (row, num) in f.chunks_exact_mut(k).zip(numer.chunks_exact(k)) {
        denom.iter_mut().for_each(|d| *d = 0.0);
        for (p, &fp) in row.iter().enumerate() {
            if fp == 0.0 {
                continue;
            }
            for (d, &g) in denom.iter_mut().zip(&gram[p * k..(p + 1) * k]) {
                *d += fp * g;
            }
        }
        for ((v, &n), &d) in row.iter_mut().zip(num).zip(&denom) {
            *v *= n / (d + eps);
        }
    }
}

/// Squared residual `||X - W Ht^T||_F^2` with `W` rows x k and `Ht` cols x k.
///
/// Expands the norm through Gram matrices, and falls back to streaming the
/// dense product row by row when cancellation would dominate the result.
fn residual_sq(x: &SparseMatrix, w: &[f64], ht: &[f64], k: usize) -> f64 {
    let x_sq = x.frobenius_norm_sq();
    let mut cross = 0.0;
    for i in 0..x.n_rows() {
        let (cols, vals) = x.row(i);
        let wi = &w[i * k..(i + 1) * k];
        for (&j, &v) in cols.iter().zip(vals) {
            cross += v * dot(wi, &ht[j * k..(j + 1) * k]);
        }
    }
    let gw = gram(w, k);
    let gh = gram(ht, k);
    let model_sq: f64 = gw.iter().zip(&gh).map(|(a, b)| a * b).sum();
    let expanded = x_sq - 2.0 * cross + model_sq;
    let scale = x_sq.max(model_sq);
    if scale > 0.0 && expanded > 1e-8 * scale {
        return expanded;
    }
    let mut exact = 0.0;
    let mut row = vec![0.0; x.n_cols()];
    for i in 0..x.n_rows() {
        let wi = &w[i * k..(i + 1) * k];
        for (j, r) in row.iter_mut().enumerate() {
            *r = dot(wi, &ht[j * k..(j + 1) * k]);
        }
        let (cols, vals) = x.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            row[j] -= v;
        }
        exact += row.iter().map(|r| r * r).sum::<f64>();
    }
    exact
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||X - WH|| / ||X||`; for `X = 0` the unnormalized `||WH||` is returned.
fn relative_from_sq(x: &SparseMatrix, sq: f64) -> f64 {
    let x_norm = x.frobenius_norm_sq().sqrt();
    let r = sq.max(0.0).sqrt();
    if x_norm > 0.0 {
        r / x_norm
    } else {
        r
    }
}

fn row_major(a: ArrayView2<'_, f64>) -> Vec<f64> {
    a.as_standard_layout().iter().copied().collect()
}

fn check_shapes(x: &SparseMatrix, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>) -> Result<()> {
    if w.nrows() != x.n_rows() || h.ncols() != x.n_cols() || w.ncols() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, W is {}x{}, H is {}x{}",
            x.n_rows(),
            x.n_cols(),
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

/// `||X - WH||_F / ||X||_F` without densifying `X`.
pub fn relative_error(
    x: &SparseMatrix,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_shapes(x, w, h)?;
    let k = w.ncols();
    let sq = residual_sq(x, &row_major(w), &row_major(h.t()), k);
    Ok(relative_from_sq(x, sq))
}

/// Diagnostic joint objective `1/2 ||X - WH||^2 + alpha ||M - WG||^2`.
pub fn joint_objective(
    x: &SparseMatrix,
    m: &SparseMatrix,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<f64> {
    check_shapes(x, w, h)?;
    check_shapes(m, w, g)?;
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let k = w.ncols();
    let w_buf = row_major(w);
    let first = residual_sq(x, &w_buf, &row_major(h.t()), k);
    let second = if alpha == 0.0 {
        0.0
    } else {
        residual_sq(m, &w_buf, &row_major(g.t()), k)
    };
    Ok(0.5 * first + alpha * second)
}

fn random_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(Open01) * scale)
}

/// Factorizes `X ~ WH` with rank `k` from a seeded random start.
///
/// Entries of both factors start uniform in `(0, 1)` times
/// `sqrt(mean(X) / k)`, so the initial product has the scale of `X`. With
/// several starts, each gets `pilot_iter` updates first and the full run
/// continues from the one with the lowest error; plain multiplicative
/// updates from a single random start often settle in a local minimum that
/// merges two topics and splits a third. The trace covers the full run only.
pub fn nmf(x: &SparseMatrix, k: usize, config: &NmfConfig) -> Result<FactorPair> {
    config.validate()?;
    let max_rank = x.n_rows().min(x.n_cols());
    if k < 1 || k > max_rank {
        return Err(Error::InvalidRank { k, max: max_rank });
    }
    let scale = (x.mean() / k as f64).sqrt();
    let start = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_factor(&mut rng, x.n_rows(), k, scale);
        let h = random_factor(&mut rng, k, x.n_cols(), scale);
        (w, h)
    };
    if config.n_starts == 1 || config.pilot_iter == 0 {
        let (w, h) = start(config.seed);
        return nmf_with_init(x, w, h, config);
    }
    let pilot = NmfConfig {
        max_iter: config.pilot_iter,
        tol: f64::MIN_POSITIVE,
        ..*config
    };
    let mut best: Option<FactorPair> = None;
    for r in 0..config.n_starts as u64 {
        let (w, h) = start(mix_seed(config.seed, &[r]));
        let fit = nmf_with_init(x, w, h, &pilot)?;
        if best
            .as_ref()
            .is_none_or(|b| fit.relative_error() < b.relative_error())
        {
            best = Some(fit);
        }
    }
    let best = best.expect("at least one start");
    nmf_with_init(x, best.w, best.h, config)
}

/// Runs multiplicative updates from the given starting factors.
pub fn nmf_with_init(
    x: &SparseMatrix,
    w0: Array2<f64>,
    h0: Array2<f64>,
    config: &NmfConfig,
) -> Result<FactorPair> {
    config.validate()?;
    check_shapes(x, w0.view(), h0.view())?;
    check_nonnegative(w0.view())?;
    check_nonnegative(h0.view())?;
    let k = w0.ncols();
    let (m, n) = x.shape();
    let eps = config.epsilon;

    let mut w = row_major(w0.view());
    let mut ht = row_major(h0.t());

    let mut last = relative_from_sq(x, residual_sq(x, &w, &ht, k));
    let mut trace = vec![TracePoint {
        iteration: 0,
        relative_error: last,
    }];
    for it in 1..=config.max_iter {
        let xtw = x.transpose_mul(&w, k);
        mu_step(&mut ht, &xtw, &gram(&w, k), k, eps);
        let xh = x.mul_transposed(&ht, k);
        mu_step(&mut w, &xh, &gram(&ht, k), k, eps);

        if it % STRIDE == 0 || it == config.max_iter {
            let err = relative_from_sq(x, residual_sq(x, &w, &ht, k));
            trace.push(TracePoint {
                iteration: it,
                relative_error: err,
            });
            let converged = last == 0.0 || (last - err).abs() / last < config.tol;
            last = err;
            if converged {
                break;
            }
        }
    }

    let w = Array2::from_shape_vec((m, k), w).expect("shape");
    let h = Array2::from_shape_vec((n, k), ht)
        .expect("shape")
        .reversed_axes();
    Ok(FactorPair {
        w,
        h: h.as_standard_layout().to_owned(),
        trace,
    })
}

/// Non-negative least squares for `H` with `W` held fixed, solved by the
/// `H` half of the multiplicative update.
///
/// Starts from a seeded random `H` rescaled by the optimal scalar step.
pub fn solve_h(
    x: &SparseMatrix,
    w: ArrayView2<'_, f64>,
    config: &NmfConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    if w.nrows() != x.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "W has {} rows, X has {}",
            w.nrows(),
            x.n_rows()
        )));
    }
    check_nonnegative(w)?;
    let k = w.ncols();
    if k == 0 {
        return Err(Error::InvalidRank { k, max: x.n_rows() });
    }
    if let Some(c) = w
        .axis_iter(Axis(1))
        .position(|col| col.iter().all(|&v| v == 0.0))
    {
        return Err(Error::DegenerateBasis(c));
    }
    let n = x.n_cols();
    let w_buf = row_major(w);
    let g = gram(&w_buf, k);
    let xtw = x.transpose_mul(&w_buf, k);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ht: Vec<f64> = (0..n * k).map(|_| rng.sample::<f64, _>(Open01)).collect();
    // optimal alpha for H = alpha * H0: <X, W H0> / ||W H0||^2
    let cross = dot(&xtw, &ht);
    let model = {
        let gh = gram(&ht, k);
        dot(&g, &gh)
    };
    let alpha = if model > 0.0 { cross / model } else { 0.0 };
    ht.iter_mut().for_each(|v| *v *= alpha);

    let mut last = relative_from_sq(x, residual_sq(x, &w_buf, &ht, k));
    for it in 1..=config.max_iter {
        mu_step(&mut ht, &xtw, &g, k, config.epsilon);
        if it % STRIDE == 0 {
            let err = relative_from_sq(x, residual_sq(x, &w_buf, &ht, k));
            let converged = last == 0.0 || (last - err).abs() / last < config.tol;
            last = err;
            if converged {
                break;
            }
        }
    }
    let h = Array2::from_shape_vec((n, k), ht)
        .expect("shape")
        .reversed_axes();
    Ok(h.as_standard_layout().to_owned())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    Ok(())
}

fn noise_factor(rng: &mut ChaCha8Rng, delta: f64) -> f64 {
    1.0 - delta + 2.0 * delta * rng.random::<f64>()
}

/// Multiplies every stored entry by an independent draw from
/// `[1 - delta, 1 + delta]`. The sparsity pattern is unchanged.
pub fn perturb(x: &SparseMatrix, delta: f64, seed: u64) -> Result<SparseMatrix> {
    check_delta(delta)?;
    if delta == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.map_entries(|_, _, v| v * noise_factor(&mut rng, delta))
}

/// Like [`perturb`], but `(i, j)` and `(j, i)` share one draw so a symmetric
/// matrix stays symmetric.
pub fn perturb_symmetric(x: &SparseMatrix, delta: f64, seed: u64) -> Result<SparseMatrix> {
    check_delta(delta)?;
    if x.n_rows() != x.n_cols() {
        return Err(Error::DimensionMismatch(
            "symmetric perturbation needs a square matrix".into(),
        ));
    }
    if delta == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = std::collections::HashMap::new();
    for (i, j, _) in x.iter() {
        if i <= j {
            draws.insert((i, j), noise_factor(&mut rng, delta));
        }
    }
    x.map_entries(|i, j, v| {
        let key = (i.min(j), i.max(j));
        let f = *draws
            .entry(key)
            .or_insert_with(|| noise_factor(&mut rng, delta));
        v * f
    })
}
