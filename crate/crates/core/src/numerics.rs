//! Dense linear-algebra kernel, parameter storage, and a finite-difference
//! gradient checker.
//!
//! Everything is `f64` and row-major. The kernel only covers what the model
//! needs: matrix-vector products in both orientations, rank-one updates for
//! weight gradients, and the two activations.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The generator used for every seeded draw in the crate.
///
/// ChaCha with 8 rounds; the stream for a given seed is fixed by the
/// `rand_chacha` 0.3 series, so runs reproduce across machines.
pub type Prng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape(format!("row of length {cols}"), row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform in `[-limit, limit]`, drawn row by row.
    pub fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut Prng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        Matrix { rows, cols, data }
    }

    /// Glorot/Xavier uniform for a `fan_out x fan_in` dense weight.
    pub fn glorot(fan_out: usize, fan_in: usize, rng: &mut Prng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Matrix::uniform(fan_out, fan_in, limit, rng)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += alpha * u v^T`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let a = alpha * ui;
            if a == 0.0 {
                continue;
            }
            for (w, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *w += a * vj;
            }
        }
    }
}

/// `y = W x`.
pub fn matvec(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::shape(format!("vector of length {}", w.cols), x.len()));
    }
    Ok((0..w.rows).map(|i| dot(w.row(i), x)).collect())
}

/// `y = W^T x`.
pub fn matvec_transposed(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.rows != x.len() {
        return Err(Error::shape(format!("vector of length {}", w.rows), x.len()));
    }
    let mut y = vec![0.0; w.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (yj, &wij) in y.iter_mut().zip(w.row(i)) {
            *yj += wij * xi;
        }
    }
    Ok(y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vector of length {}", a.len()), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn tanh_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, split by sign so `exp` never overflows. The result is
/// clamped into the open interval `(0, 1)`.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn sigmoid_forward(x: &[f64]) -> Vec<f64> {
    x.iter().copied().map(sigmoid).collect()
}

/// A learnable matrix with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows, value.cols);
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.data.is_empty()
    }
}

/// Anything that owns an ordered list of parameters.
///
/// The order must be stable: the optimizer keys its moment buffers by
/// position and checkpoints serialize in this order.
pub trait ParamSet {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.grad.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamSet for Vec<Param> {
    fn params(&self) -> Vec<&Param> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().collect()
    }
}

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(param index, flat offset, finite difference, analytic)` for the
    /// worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub const GRADCHECK_EPSILON: f64 = 1e-5;
pub const GRADCHECK_MIN_SAMPLES: usize = 200;

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-8)
}

/// Compares analytic gradients (already accumulated in each `Param::grad`)
/// against central differences of `f`.
///
/// When the parameter set holds more than `GRADCHECK_MIN_SAMPLES` values, a
/// seeded sample of that many coordinates is checked; otherwise all of them.
/// Parameter values are restored exactly after each probe.
pub fn finite_diff_check<P, F>(params: &mut P, mut f: F, epsilon: f64, tol: f64, seed: u64) -> GradCheckReport
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let sizes: Vec<usize> = params.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();

    let coords: Vec<usize> = if total <= GRADCHECK_MIN_SAMPLES {
        (0..total).collect()
    } else {
        let mut picked = sample(&mut seeded_rng(seed), total, GRADCHECK_MIN_SAMPLES).into_vec();
        picked.sort_unstable();
        picked
    };

    let locate = |mut flat: usize| {
        for (pi, &n) in sizes.iter().enumerate() {
            if flat < n {
                return (pi, flat);
            }
            flat -= n;
        }
        unreachable!("coordinate beyond parameter set")
    };

    let mut report = GradCheckReport {
        checked: coords.len(),
        max_rel_error: 0.0,
        worst: None,
        tolerance: tol,
        failures: 0,
    };
    for flat in coords {
        let (pi, off) = locate(flat);
        let (original, analytic) = {
            let p = &params.params()[pi];
            (p.value.as_slice()[off], p.grad.as_slice()[off])
        };
        params.params_mut()[pi].value.as_mut_slice()[off] = original + epsilon;
        let up = f(params);
        params.params_mut()[pi].value.as_mut_slice()[off] = original - epsilon;
        let down = f(params);
        params.params_mut()[pi].value.as_mut_slice()[off] = original;

        let fd = (up - down) / (2.0 * epsilon);
        let err = relative_error(fd, analytic);
        if err > tol {
            report.failures += 1;
        }
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((pi, off, fd, analytic));
        }
    }
    report
}
