//! Small deterministic dense-math kernel.
//!
//! Everything is `f32`. Matrix products accumulate each output element with
//! the inner index ascending, so results are bit-reproducible run to run.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TaeaError};

/// Row-major dense `f32` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}] ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)))
            .finish()
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TaeaError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TaeaError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Empty matrix with a known column count.
    pub fn empty(cols: usize) -> Self {
        Self::zeros(0, cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.cols {
            return Err(TaeaError::Shape(format!(
                "cannot append a length-{} row to a {}x{} matrix",
                row.len(),
                self.rows,
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Normalizes every row to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<Matrix> {
        let mut out = self.clone();
        for r in 0..out.rows {
            let unit = l2_normalize(out.row(r))?;
            out.row_mut(r).copy_from_slice(&unit);
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

fn check_finite(values: &[f32], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(TaeaError::Numeric(format!(
            "{what}: element {i} is {}",
            values[i]
        )));
    }
    Ok(())
}

/// Matrix product with each element accumulated over the inner index in ascending order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(TaeaError::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out.data[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (o, &bkj) in o_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(TaeaError::Shape(format!(
            "cannot multiply {}x{} by transpose of {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a.row(i), b.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(v: &[f32]) -> f32 {
    dot(v, v).sqrt()
}

/// Minimum norm accepted by [`l2_normalize`].
pub const MIN_NORM: f32 = 1e-12;

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    check_finite(v, "l2_normalize input")?;
    let n = norm(v);
    if !(n > MIN_NORM) {
        return Err(TaeaError::Degenerate {
            norm: n as f64,
            min: MIN_NORM as f64,
        });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Softmax of `scale · v` with max subtraction.
pub fn softmax(v: &[f32], scale: f32) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(TaeaError::Shape("softmax of an empty vector".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(TaeaError::Parameter(format!(
            "softmax scale must be positive, got {scale}"
        )));
    }
    check_finite(v, "softmax input")?;
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = v.iter().map(|x| ((x - max) * scale).exp()).collect();
    let sum: f32 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Rows whose norm is within this distance of 1 are treated as unit already.
pub const UNIT_SLACK: f32 = 1e-6;

/// Brings `row` to unit norm in place, leaving rows that are already unit
/// (within [`UNIT_SLACK`]) bit-for-bit unchanged.
pub fn renormalize_row(row: &mut [f32]) -> Result<()> {
    let n = norm(row);
    if (n - 1.0).abs() > UNIT_SLACK {
        let unit = l2_normalize(row)?;
        row.copy_from_slice(&unit);
    }
    Ok(())
}

/// Row-wise softmax of `scale · m`.
pub fn softmax_rows(m: &Matrix, scale: f32) -> Result<Matrix> {
    if m.rows == 0 || m.cols == 0 {
        return Err(TaeaError::Shape(format!(
            "softmax_rows of an empty {}x{} matrix",
            m.rows, m.cols
        )));
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let p = softmax(m.row(r), scale)?;
        out.row_mut(r).copy_from_slice(&p);
    }
    Ok(out)
}

/// Tolerance on the total mass accepted by [`entropy`].
pub const DISTRIBUTION_TOL: f32 = 1e-5;

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(p: &[f32]) -> Result<f32> {
    if p.is_empty() {
        return Err(TaeaError::Domain("empty distribution".into()));
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(TaeaError::Domain(format!("probability {x} is not in [0, 1]")));
    }
    let total: f64 = p.iter().map(|&x| x as f64).sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL as f64 {
        return Err(TaeaError::Domain(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let x = x as f64;
            -x * x.ln()
        })
        .sum();
    let cap = (p.len() as f64).ln();
    Ok(h.clamp(0.0, cap) as f32)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers and step count for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    lr: f32,
    hp: &AdamWParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len()
    {
        return Err(TaeaError::Shape(format!(
            "adamw: {} params, {} grads, moments {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if !(lr >= 0.0) {
        return Err(TaeaError::Parameter(format!("learning rate {lr} is negative")));
    }
    check_finite(grads, "adamw gradients")?;

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - lr * hp.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        params[i] *= decay;
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Cosine-annealed learning rate: `0.5 · lr0 · (1 + cos(π · step / total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f32) -> Result<f32> {
    if total_steps == 0 {
        return Err(TaeaError::Range("cosine schedule needs total_steps >= 1".into()));
    }
    if step > total_steps {
        return Err(TaeaError::Range(format!(
            "step {step} is past the end of a {total_steps}-step schedule"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok((0.5 * lr0 as f64 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32)
}

/// Seeded random source.
///
/// The stream is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), keyed via
/// `SeedableRng::seed_from_u64`. Uniform floats use `rand`'s standard
/// conversion and Gaussians use `rand_distr::StandardNormal` (ziggurat).
/// The same seed yields the same sequence on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f32 {
        self.inner.random()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f32 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Uniform direction on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f32> {
        loop {
            let v: Vec<f32> = (0..dim).map(|_| self.normal()).collect();
            if let Ok(u) = l2_normalize(&v) {
                return u;
            }
        }
    }

    pub fn matrix_uniform(&mut self, rows: usize, cols: usize, lo: f32, hi: f32) -> Matrix {
        let data = (0..rows * cols).map(|_| self.uniform_range(lo, hi)).collect();
        Matrix { rows, cols, data }
    }

    /// Matrix whose rows are independent uniform unit vectors.
    pub fn unit_rows(&mut self, rows: usize, cols: usize) -> Matrix {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.unit_vector(cols));
        }
        Matrix { rows, cols, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0f32;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        let six = matmul(
            &Matrix::new(1, 1, vec![2.0]).unwrap(),
            &Matrix::new(1, 1, vec![3.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(six.as_slice(), &[6.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = Rng::new(7);
        let a = rng.matrix_uniform(7, 5, -1.0, 1.0);
        let b = rng.matrix_uniform(5, 4, -1.0, 1.0);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("by 2x3"), "{msg}");
    }

    #[test]
    fn matmul_transposed_agrees_with_explicit_transpose() {
        let mut rng = Rng::new(3);
        let a = rng.matrix_uniform(4, 6, -1.0, 1.0);
        let b = rng.matrix_uniform(3, 6, -1.0, 1.0);
        let x = matmul_transposed(&a, &b).unwrap();
        let y = matmul(&a, &b.transpose()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[[0.0f32, 0.0]]).unwrap();
        assert_eq!(softmax_rows(&m, 1.0).unwrap().as_slice(), &[0.5, 0.5]);

        for x in [-1e4f32, -3.0, 0.0, 17.5, 1e4] {
            assert_eq!(softmax(&[x], 1.0).unwrap(), vec![1.0]);
        }

        let p = softmax(&[1f32.ln(), 2f32.ln(), 3f32.ln()], 1.0).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite_and_bad_scale() {
        assert!(matches!(
            softmax(&[0.0, f32::NAN], 1.0),
            Err(TaeaError::Numeric(_))
        ));
        assert!(softmax(&[0.0], 0.0).is_err());
        assert!(softmax_rows(&Matrix::zeros(0, 3), 1.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let u = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-7 && (u[1] - 0.8).abs() < 1e-7);
        let again = l2_normalize(&u).unwrap();
        for (a, b) in u.iter().zip(&again) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(TaeaError::Degenerate { .. })
        ));
    }

    #[test]
    fn entropy_examples() {
        let h = entropy(&[0.25; 4]).unwrap();
        assert!((h - 4f32.ln()).abs() < 1e-6);
        assert!((h - 1.386294).abs() < 1e-6);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5]).unwrap() - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_invalid_distributions() {
        assert!(matches!(entropy(&[0.5, 0.6]), Err(TaeaError::Domain(_))));
        assert!(matches!(entropy(&[-0.1, 1.1]), Err(TaeaError::Domain(_))));
        assert!(matches!(entropy(&[]), Err(TaeaError::Domain(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn adamw_zero_grad_without_decay_only_counts() {
        let hp = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![0.5, -2.0, 3.0];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut st, 0.001, &hp).unwrap();
        assert_eq!(p, vec![0.5, -2.0, 3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adamw_zero_grad_applies_decoupled_decay() {
        let hp = AdamWParams {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = vec![0.5f32, -2.0, 3.0];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut st, 0.01, &hp).unwrap();
        for (got, w) in p.iter().zip([0.5f32, -2.0, 3.0]) {
            assert_eq!(*got, w * (1.0 - 0.01 * 0.1));
        }
    }

    #[test]
    fn adamw_single_step_matches_reference_formula() {
        // Reference evaluated in f64 from the textbook update.
        let (w, g, lr, b1, b2, eps, wd) = (1.0f64, 1.0f64, 0.001f64, 0.9f64, 0.999f64, 1e-8f64, 0.01f64);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let expected = w * (1.0 - lr * wd) - lr * m_hat / (v_hat.sqrt() + eps);

        let mut p = vec![1.0f32];
        let mut st = AdamState::new(1);
        adamw_step(&mut p, &[1.0], &mut st, 0.001, &AdamWParams::default()).unwrap();
        assert!(
            (p[0] as f64 - expected).abs() < 1e-9,
            "{} vs {expected}",
            p[0]
        );
    }

    #[test]
    fn adamw_shape_mismatch() {
        let mut st = AdamState::new(2);
        let mut p = vec![0.0; 2];
        assert!(matches!(
            adamw_step(&mut p, &[0.0; 3], &mut st, 0.1, &AdamWParams::default()),
            Err(TaeaError::Shape(_))
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.001).unwrap(), 0.001);
        assert!(cosine_lr(10, 10, 0.001).unwrap().abs() < 1e-12);
        assert!((cosine_lr(5, 10, 0.001).unwrap() - 0.0005).abs() < 1e-10);
        assert!(matches!(cosine_lr(11, 10, 0.001), Err(TaeaError::Range(_))));
        assert!(cosine_lr(0, 0, 0.001).is_err());
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        let mut c = Rng::new(43);
        assert_ne!(Rng::new(42).next_u64(), c.next_u64());
    }
}
