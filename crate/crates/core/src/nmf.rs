//! Euclidean NMF with Lee–Seung multiplicative updates.
//!
//! `A (m×n) ≈ W (m×k) · H (k×n)` minimising `J = ½‖A − WH‖²_F`.
//!
//! Two iteration modes are provided:
//!
//! * [`NmfMode::Plain`] applies only the multiplicative updates. The cost is
//!   non-increasing and convergence is judged on the relative cost change.
//! * [`NmfMode::Paper`] additionally min-max normalizes every row of `H`
//!   before the first iteration and after each one. `W` is not rescaled to
//!   compensate, so the cost is no longer monotone and convergence is judged
//!   on the largest absolute entry change of `W` and `H`.
//!
//! Initial factors are drawn i.i.d. from `0.1 + U[0, 1)` using
//! `ChaCha8Rng::seed_from_u64(seed)`, filling `W` row-major and then `H`
//! row-major. No initial entry is zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{frobenius_sq_diff, matmul, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmfMode {
    Plain,
    Paper,
}

impl std::str::FromStr for NmfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(NmfMode::Plain),
            "paper" => Ok(NmfMode::Paper),
            other => Err(Error::Domain(format!("unknown mode {other:?} (expected plain or paper)"))),
        }
    }
}

impl std::fmt::Display for NmfMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NmfMode::Plain => "plain",
            NmfMode::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub max_iter: usize,
    /// Relative cost change (plain) or max entry change (paper) below which
    /// the iteration stops.
    pub tol: f64,
    /// Added to every update denominator.
    pub epsilon: f64,
    pub mode: NmfMode,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            max_iter: 500,
            tol: 1e-4,
            epsilon: 1e-12,
            mode: NmfMode::Plain,
            seed: 0,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Domain("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NmfConfig { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub w: Matrix,
    pub h: Matrix,
    pub k: usize,
    pub mode: NmfMode,
    pub seed: u64,
    pub iterations_run: usize,
    pub final_cost: f64,
    /// Cost after each iteration.
    pub cost_trace: Vec<f64>,
    /// False when `max_iter` was reached before the tolerance test passed.
    pub converged: bool,
}

impl FactorModel {
    pub fn reconstruct(&self) -> Matrix {
        matmul(&self.w, &self.h).expect("factor shapes are consistent")
    }
}

fn check_shapes(op: &'static str, a: &Matrix, w: &Matrix, h: &Matrix) -> Result<()> {
    if w.rows() != a.rows() {
        return Err(Error::shape(op, a.shape(), w.shape()));
    }
    if w.cols() != h.rows() {
        return Err(Error::shape(op, w.shape(), h.shape()));
    }
    if h.cols() != a.cols() {
        return Err(Error::shape(op, a.shape(), h.shape()));
    }
    Ok(())
}

/// `½‖A − WH‖²_F`.
pub fn cost(a: &Matrix, w: &Matrix, h: &Matrix) -> Result<f64> {
    check_shapes("cost", a, w, h)?;
    Ok(0.5 * frobenius_sq_diff(a, &matmul(w, h)?)?)
}

/// `W ← W ⊙ (AHᵀ) ⊘ (WHHᵀ + ε)`.
pub fn update_w(a: &Matrix, w: &Matrix, h: &Matrix, epsilon: f64) -> Result<Matrix> {
    check_shapes("update_w", a, w, h)?;
    let ht = h.transpose();
    let numer = matmul(a, &ht)?;
    let denom = matmul(w, &matmul(h, &ht)?)?;
    Ok(multiplicative_step(w, &numer, &denom, epsilon))
}

/// `H ← H ⊙ (WᵀA) ⊘ (WᵀWH + ε)`.
pub fn update_h(a: &Matrix, w: &Matrix, h: &Matrix, epsilon: f64) -> Result<Matrix> {
    check_shapes("update_h", a, w, h)?;
    let wt = w.transpose();
    let numer = matmul(&wt, a)?;
    let denom = matmul(&matmul(&wt, w)?, h)?;
    Ok(multiplicative_step(h, &numer, &denom, epsilon))
}

fn multiplicative_step(base: &Matrix, numer: &Matrix, denom: &Matrix, epsilon: f64) -> Matrix {
    let (rows, cols) = base.shape();
    Matrix::from_fn(rows, cols, |i, j| {
        let b = base.get(i, j);
        if b == 0.0 {
            // 0 · (x / 0) would be NaN with epsilon = 0.
            return 0.0;
        }
        b * numer.get(i, j) / (denom.get(i, j) + epsilon)
    })
}

/// `∂J/∂W = −AHᵀ + WHHᵀ`.
pub fn grad_w(a: &Matrix, w: &Matrix, h: &Matrix) -> Result<Matrix> {
    check_shapes("grad_w", a, w, h)?;
    let ht = h.transpose();
    matmul(w, &matmul(h, &ht)?)?.sub(&matmul(a, &ht)?)
}

/// `∂J/∂H = −WᵀA + WᵀWH`.
pub fn grad_h(a: &Matrix, w: &Matrix, h: &Matrix) -> Result<Matrix> {
    check_shapes("grad_h", a, w, h)?;
    let wt = w.transpose();
    matmul(&matmul(&wt, w)?, h)?.sub(&matmul(&wt, a)?)
}

/// Maps each row to `(x − min) / (max − min)`; a constant row becomes all ones.
pub fn normalize_rows_minmax(h: &Matrix) -> Matrix {
    let mut out = h.clone();
    for i in 0..h.rows() {
        let row = h.row(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (j, &x) in row.iter().enumerate() {
            let v = if lo < hi { (x - lo) / (hi - lo) } else { 1.0 };
            out.set(i, j, v);
        }
    }
    out
}

/// Checks `1 ≤ k < min(m, n)`.
pub fn check_rank(m: usize, n: usize, k: usize) -> Result<()> {
    let limit = m.min(n);
    if k == 0 || k >= limit {
        return Err(Error::Rank { k, limit });
    }
    Ok(())
}

fn check_non_negative(a: &Matrix) -> Result<()> {
    for i in 0..a.rows() {
        for (j, &v) in a.row(i).iter().enumerate() {
            if v < 0.0 {
                return Err(Error::NegativeEntry { row: i, col: j, value: v });
            }
        }
    }
    Ok(())
}

/// Seeded initial factors, see the module docs for the draw order.
pub fn random_init(m: usize, n: usize, k: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::from_fn(m, k, |_, _| 0.1 + rng.random::<f64>());
    let h = Matrix::from_fn(k, n, |_, _| 0.1 + rng.random::<f64>());
    (w, h)
}

/// Factorizes `a` at rank `k` from a seeded random start.
pub fn factorize(a: &Matrix, k: usize, config: &NmfConfig) -> Result<FactorModel> {
    config.validate()?;
    check_rank(a.rows(), a.cols(), k)?;
    check_non_negative(a)?;
    let (w0, h0) = random_init(a.rows(), a.cols(), k, config.seed);
    run(a, w0, h0, config)
}

/// Factorizes `a` starting from caller-supplied factors.
pub fn factorize_from(a: &Matrix, w0: Matrix, h0: Matrix, config: &NmfConfig) -> Result<FactorModel> {
    config.validate()?;
    check_shapes("factorize_from", a, &w0, &h0)?;
    check_rank(a.rows(), a.cols(), w0.cols())?;
    check_non_negative(a)?;
    check_non_negative(&w0)?;
    check_non_negative(&h0)?;
    run(a, w0, h0, config)
}

fn max_abs_delta(x: &Matrix, y: &Matrix) -> f64 {
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs()))
}

fn run(a: &Matrix, mut w: Matrix, mut h: Matrix, config: &NmfConfig) -> Result<FactorModel> {
    let k = w.cols();
    if config.mode == NmfMode::Paper {
        h = normalize_rows_minmax(&h);
    }
    let mut prev_cost = cost(a, &w, &h)?;
    let mut trace = Vec::with_capacity(config.max_iter.min(4096));
    let mut converged = false;

    for _ in 0..config.max_iter {
        let w_next = update_w(a, &w, &h, config.epsilon)?;
        let mut h_next = update_h(a, &w_next, &h, config.epsilon)?;
        if config.mode == NmfMode::Paper {
            h_next = normalize_rows_minmax(&h_next);
        }
        let c = cost(a, &w_next, &h_next)?;
        trace.push(c);
        converged = match config.mode {
            NmfMode::Plain => (prev_cost - c).abs() / prev_cost.max(1e-30) < config.tol,
            NmfMode::Paper => max_abs_delta(&w, &w_next).max(max_abs_delta(&h, &h_next)) < config.tol,
        };
        w = w_next;
        h = h_next;
        prev_cost = c;
        if converged {
            break;
        }
    }

    Ok(FactorModel {
        w,
        h,
        k,
        mode: config.mode,
        seed: config.seed,
        iterations_run: trace.len(),
        final_cost: prev_cost,
        cost_trace: trace,
        converged,
    })
}
