//! Gated single-head attention adapter that re-aligns class text features
//! with test image features.
//!
//! Forward pass, for text features `ω` (N×D) and image features `F` (B×D):
//!
//! ```text
//! A  = softmax_rows((ω W_Wᵀ)(F W_Fᵀ)ᵀ / √D)      N×B
//! F̂  = A F                                       N×D
//! g  = ω w_g + b_g                                one scalar per class
//! ω̂  = ω + g ⊙ F̂
//! ```
//!
//! Adapter logits are `γ · cos(ω̂_c, f)`. Training minimizes the mean cross
//! entropy of `logit_scale · cos(ω̂_c, f_i)` against stored pseudo-labels;
//! gradients are derived by hand in [`train_backward`] and checked against
//! central differences by [`grad_check`].

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaeaError};
use crate::numerics::{
    adamw_step, argmax, cosine_lr, dot, l2_normalize, matmul, matmul_transposed, norm, renormalize_row,
    softmax, softmax_rows, AdamState, AdamWParams, Matrix, Rng, MIN_NORM,
};

/// Trainable adapter state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights {
    /// Query projection applied to text features.
    pub w_w: Matrix,
    /// Key projection applied to image features.
    pub w_f: Matrix,
    pub w_g: Vec<f32>,
    pub b_g: f32,
}

impl AdapterWeights {
    /// Identity projections and a zero gate, so `ω̂ == ω` exactly.
    pub fn identity(dim: usize) -> Self {
        Self {
            w_w: Matrix::identity(dim),
            w_f: Matrix::identity(dim),
            w_g: vec![0.0; dim],
            b_g: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_g.len()
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.dim())
    }

    pub fn param_count_for(dim: usize) -> usize {
        2 * dim * dim + dim + 1
    }

    /// Flat view in the order `W_W, W_F, w_g, b_g`.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.w_w.as_slice());
        v.extend_from_slice(self.w_f.as_slice());
        v.extend_from_slice(&self.w_g);
        v.push(self.b_g);
        v
    }

    pub fn from_flat(dim: usize, flat: &[f32]) -> Result<Self> {
        if flat.len() != Self::param_count_for(dim) {
            return Err(TaeaError::Shape(format!(
                "{} values for an adapter of dim {dim} (needs {})",
                flat.len(),
                Self::param_count_for(dim)
            )));
        }
        let dd = dim * dim;
        Ok(Self {
            w_w: Matrix::new(dim, dim, flat[..dd].to_vec())?,
            w_f: Matrix::new(dim, dim, flat[dd..2 * dd].to_vec())?,
            w_g: flat[2 * dd..2 * dd + dim].to_vec(),
            b_g: flat[2 * dd + dim],
        })
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let d = self.dim();
        if d != dim || self.w_w.shape() != (d, d) || self.w_f.shape() != (d, d) {
            return Err(TaeaError::Shape(format!(
                "adapter of dim {d} used with features of dim {dim}"
            )));
        }
        Ok(())
    }

    /// Gate value `⟨w_g, ω_c⟩ + b_g` for one text row.
    pub fn gate(&self, omega_row: &[f32]) -> f32 {
        dot(&self.w_g, omega_row) + self.b_g
    }
}

/// Gradients of the training loss, shaped like [`AdapterWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub d_w_w: Matrix,
    pub d_w_f: Matrix,
    pub d_w_g: Vec<f32>,
    pub d_b_g: f32,
}

impl AdapterGrads {
    pub fn to_flat(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(2 * self.d_w_w.as_slice().len() + self.d_w_g.len() + 1);
        v.extend_from_slice(self.d_w_w.as_slice());
        v.extend_from_slice(self.d_w_f.as_slice());
        v.extend_from_slice(&self.d_w_g);
        v.push(self.d_b_g);
        v
    }

    pub fn l2_norm(&self) -> f32 {
        norm(&self.to_flat())
    }
}

/// Low-entropy test features with their pseudo-labels. Carries no ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    features: Matrix,
    pseudo_labels: Vec<usize>,
    entropies: Vec<f32>,
}

impl SupportSet {
    pub fn new(features: Matrix, pseudo_labels: Vec<usize>, entropies: Vec<f32>) -> Result<Self> {
        if pseudo_labels.len() != features.rows() || entropies.len() != features.rows() {
            return Err(TaeaError::Shape(format!(
                "support set with {} features, {} labels, {} entropies",
                features.rows(),
                pseudo_labels.len(),
                entropies.len()
            )));
        }
        for (i, row) in features.row_iter().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > 1e-4 {
                return Err(TaeaError::Numeric(format!(
                    "support feature {i} has norm {n}, expected 1"
                )));
            }
        }
        // entropies must be nondecreasing within each pseudo-class
        let mut last: std::collections::HashMap<usize, f32> = Default::default();
        for (&c, &h) in pseudo_labels.iter().zip(&entropies) {
            if let Some(prev) = last.insert(c, h) {
                if h < prev {
                    return Err(TaeaError::Parameter(format!(
                        "support entropies for class {c} are not sorted ({prev} then {h})"
                    )));
                }
            }
        }
        Ok(Self {
            features,
            pseudo_labels,
            entropies,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::empty(dim),
            pseudo_labels: vec![],
            entropies: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    pub fn entropies(&self) -> &[f32] {
        &self.entropies
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> SupportSet {
        SupportSet {
            features: self.features.select_rows(idx),
            pseudo_labels: idx.iter().map(|&i| self.pseudo_labels[i]).collect(),
            entropies: idx.iter().map(|&i| self.entropies[i]).collect(),
        }
    }
}

fn check_pair(omega: &Matrix, f: &Matrix) -> Result<()> {
    if f.rows() == 0 {
        return Err(TaeaError::EmptySupport);
    }
    if omega.cols() != f.cols() {
        return Err(TaeaError::Shape(format!(
            "text features of dim {} with image features of dim {}",
            omega.cols(),
            f.cols()
        )));
    }
    Ok(())
}

/// Attention weights `softmax_rows((ω W_Wᵀ)(F W_Fᵀ)ᵀ / √D)` plus the projected queries and keys.
fn attention(omega: &Matrix, f: &Matrix, w: &AdapterWeights) -> Result<(Matrix, Matrix, Matrix)> {
    check_pair(omega, f)?;
    w.check_dim(omega.cols())?;
    let q = matmul_transposed(omega, &w.w_w)?;
    let k = matmul_transposed(f, &w.w_f)?;
    let scores = matmul_transposed(&q, &k)?;
    let a = softmax_rows(&scores, 1.0 / (omega.cols() as f32).sqrt())?;
    Ok((a, q, k))
}

/// Pools image features per class: `F̂ = softmax_rows(Q Kᵀ / √D) · F`.
pub fn attention_pool(omega: &Matrix, f: &Matrix, w: &AdapterWeights) -> Result<Matrix> {
    let (a, _, _) = attention(omega, f, w)?;
    matmul(&a, f)
}

/// `ω̂_c = ω_c + g_c · F̂_c` with `g_c = ⟨w_g, ω_c⟩ + b_g`.
pub fn gate_blend(omega: &Matrix, f_hat: &Matrix, w: &AdapterWeights) -> Result<Matrix> {
    if omega.shape() != f_hat.shape() {
        return Err(TaeaError::Shape(format!(
            "text features {:?} and pooled features {:?}",
            omega.shape(),
            f_hat.shape()
        )));
    }
    w.check_dim(omega.cols())?;
    let mut out = omega.clone();
    for c in 0..omega.rows() {
        let g = w.gate(omega.row(c));
        for (o, &p) in out.row_mut(c).iter_mut().zip(f_hat.row(c)) {
            *o += g * p;
        }
    }
    Ok(out)
}

/// `γ · cos(ω̂_c, f_test)` for every class.
pub fn adapter_logits(f_test: &[f32], omega_hat: &Matrix, gamma: f32) -> Result<Vec<f32>> {
    if f_test.len() != omega_hat.cols() {
        return Err(TaeaError::Shape(format!(
            "feature of dim {} against adapted text of dim {}",
            f_test.len(),
            omega_hat.cols()
        )));
    }
    let f_norm = norm(f_test);
    if !(f_norm > MIN_NORM) {
        return Err(TaeaError::Degenerate {
            norm: f_norm as f64,
            min: MIN_NORM as f64,
        });
    }
    omega_hat
        .row_iter()
        .map(|row| {
            let n = norm(row);
            if !(n > MIN_NORM) {
                return Err(TaeaError::Degenerate {
                    norm: n as f64,
                    min: MIN_NORM as f64,
                });
            }
            Ok(gamma * dot(row, f_test) / (n * f_norm))
        })
        .collect()
}

/// Adapted text features for image features `f`, rows brought to unit norm.
pub fn adapt_text(omega: &Matrix, f: &Matrix, w: &AdapterWeights) -> Result<Matrix> {
    let f_hat = attention_pool(omega, f, w)?;
    let mut omega_hat = gate_blend(omega, &f_hat, w)?;
    for c in 0..omega_hat.rows() {
        renormalize_row(omega_hat.row_mut(c))?;
    }
    Ok(omega_hat)
}

/// Activations kept from [`train_forward_loss`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    omega: Matrix,
    f: Matrix,
    labels: Vec<usize>,
    q: Matrix,
    k: Matrix,
    attn: Matrix,
    f_hat: Matrix,
    gate: Vec<f32>,
    /// `‖ω̂_c‖`
    hat_norms: Vec<f32>,
    /// `ω̂_c / ‖ω̂_c‖`
    hat_units: Matrix,
    /// unit image features
    f_units: Matrix,
    /// softmax over classes per sample
    probs: Matrix,
    logit_scale: f32,
}

/// Mean cross entropy of `logit_scale · cos(ω̂_c, f_i)` against the pseudo-labels,
/// with `ω̂` built from the support features themselves.
pub fn train_forward_loss(
    support: &SupportSet,
    omega: &Matrix,
    w: &AdapterWeights,
    logit_scale: f32,
) -> Result<(f32, ForwardCache)> {
    let f = support.features();
    let (attn, q, k) = attention(omega, f, w)?;
    let n_classes = omega.rows();
    if let Some(&bad) = support.pseudo_labels().iter().find(|&&c| c >= n_classes) {
        return Err(TaeaError::Range(format!(
            "pseudo label {bad} with only {n_classes} classes"
        )));
    }
    let f_hat = matmul(&attn, f)?;
    let gate: Vec<f32> = omega.row_iter().map(|row| w.gate(row)).collect();

    let mut hat_units = omega.clone();
    let mut hat_norms = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let row = hat_units.row_mut(c);
        for (o, &p) in row.iter_mut().zip(f_hat.row(c)) {
            *o += gate[c] * p;
        }
        let n = norm(row);
        if !(n > MIN_NORM) {
            return Err(TaeaError::Degenerate {
                norm: n as f64,
                min: MIN_NORM as f64,
            });
        }
        row.iter_mut().for_each(|x| *x /= n);
        hat_norms.push(n);
    }

    let mut f_units = f.clone();
    for i in 0..f.rows() {
        let u = l2_normalize(f.row(i))?;
        f_units.row_mut(i).copy_from_slice(&u);
    }

    let b = f.rows();
    let mut probs = Matrix::zeros(b, n_classes);
    let mut total = 0.0f64;
    for i in 0..b {
        let cos: Vec<f32> = hat_units.row_iter().map(|u| dot(u, f_units.row(i))).collect();
        let p = softmax(&cos, logit_scale)?;
        // log-sum-exp as ln_1p over the non-maximal terms, so confident
        // samples keep a tiny positive loss instead of rounding to zero
        let top = argmax(&cos);
        let max = cos[top];
        let rest: f64 = cos
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != top)
            .map(|(_, &z)| (((z - max) * logit_scale) as f64).exp())
            .sum();
        let y = support.pseudo_labels()[i];
        total += rest.ln_1p() - ((cos[y] - max) * logit_scale) as f64;
        probs.row_mut(i).copy_from_slice(&p);
    }
    let loss = (total / b as f64) as f32;

    Ok((
        loss,
        ForwardCache {
            omega: omega.clone(),
            f: f.clone(),
            labels: support.pseudo_labels().to_vec(),
            q,
            k,
            attn,
            f_hat,
            gate,
            hat_norms,
            hat_units,
            f_units,
            probs,
            logit_scale,
        },
    ))
}

/// Analytic gradients of the mean cross entropy through cosine, gate and attention.
pub fn train_backward(cache: &ForwardCache) -> AdapterGrads {
    let ForwardCache {
        omega,
        f,
        labels,
        q,
        k,
        attn,
        f_hat,
        gate,
        hat_norms,
        hat_units,
        f_units,
        probs,
        logit_scale,
    } = cache;
    let (n_classes, dim) = omega.shape();
    let b = f.rows();

    // d loss / d cosine, already scaled by logit_scale / B
    let mut d_cos = probs.clone();
    for i in 0..b {
        let row = d_cos.row_mut(i);
        row[labels[i]] -= 1.0;
        row.iter_mut().for_each(|x| *x *= logit_scale / b as f32);
    }

    // d loss / d unit(ω̂) = d_cosᵀ · F̄
    let d_units = matmul(&d_cos.transpose(), f_units).expect("shapes fixed by forward");

    // through the row normalization, then the gate blend
    let mut d_gate = vec![0.0f32; n_classes];
    let mut d_f_hat = Matrix::zeros(n_classes, dim);
    for c in 0..n_classes {
        let u = hat_units.row(c);
        let du = d_units.row(c);
        let radial = dot(u, du);
        let d_hat: Vec<f32> = u
            .iter()
            .zip(du)
            .map(|(&ui, &dui)| (dui - ui * radial) / hat_norms[c])
            .collect();
        d_gate[c] = dot(&d_hat, f_hat.row(c));
        for (o, &dh) in d_f_hat.row_mut(c).iter_mut().zip(&d_hat) {
            *o = gate[c] * dh;
        }
    }
    let mut d_w_g = vec![0.0f32; dim];
    for c in 0..n_classes {
        for (o, &x) in d_w_g.iter_mut().zip(omega.row(c)) {
            *o += d_gate[c] * x;
        }
    }
    let d_b_g: f32 = d_gate.iter().sum();

    // F̂ = A F  →  dA = dF̂ Fᵀ, then softmax and the 1/√D score scale
    let d_attn = matmul_transposed(&d_f_hat, f).expect("shapes fixed by forward");
    let inv_sqrt_d = 1.0 / (dim as f32).sqrt();
    let mut d_scores = Matrix::zeros(n_classes, b);
    for c in 0..n_classes {
        let a = attn.row(c);
        let da = d_attn.row(c);
        let inner = dot(a, da);
        for (j, o) in d_scores.row_mut(c).iter_mut().enumerate() {
            *o = a[j] * (da[j] - inner) * inv_sqrt_d;
        }
    }

    let d_q = matmul(&d_scores, k).expect("shapes fixed by forward");
    let d_k = matmul(&d_scores.transpose(), q).expect("shapes fixed by forward");
    let d_w_w = matmul(&d_q.transpose(), omega).expect("shapes fixed by forward");
    let d_w_f = matmul(&d_k.transpose(), f).expect("shapes fixed by forward");

    AdapterGrads {
        d_w_w,
        d_w_f,
        d_w_g,
        d_b_g,
    }
}

/// Denominator floor for [`grad_check`]'s relative error; below it the
/// comparison is effectively absolute.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// A random adapter problem used by [`grad_check`]: unit text rows, unit
/// support features with random pseudo-labels, and weights perturbed away
/// from the identity so every parameter receives gradient.
#[derive(Debug, Clone)]
pub struct GradCheckProblem {
    pub omega: Matrix,
    pub support: SupportSet,
    pub weights: AdapterWeights,
    pub logit_scale: f32,
}

impl GradCheckProblem {
    pub fn random(n_classes: usize, dim: usize, support_size: usize, seed: u64) -> Result<Self> {
        // Scale of the random offsets from the initial weights; a few times
        // larger than anything a default fit reaches.
        const PERTURBATION: f32 = 0.1;
        if n_classes == 0 || dim == 0 || support_size == 0 {
            return Err(TaeaError::Parameter(
                "grad check needs at least one class, dimension and support sample".into(),
            ));
        }
        let mut rng = Rng::new(seed);
        let omega = rng.unit_rows(n_classes, dim);
        let features = rng.unit_rows(support_size, dim);
        let labels: Vec<usize> = (0..support_size).map(|_| rng.below(n_classes)).collect();
        let mut weights = AdapterWeights::identity(dim);
        for x in weights.w_w.as_mut_slice() {
            *x += PERTURBATION * rng.normal();
        }
        for x in weights.w_f.as_mut_slice() {
            *x += PERTURBATION * rng.normal();
        }
        for x in &mut weights.w_g {
            *x = PERTURBATION * rng.normal();
        }
        weights.b_g = PERTURBATION * rng.normal();
        let support = SupportSet::new(features, labels, vec![0.0; support_size])?;
        Ok(Self {
            omega,
            support,
            weights,
            logit_scale: 100.0,
        })
    }
}

/// Worst relative error between [`train_backward`] and central differences
/// of the loss, `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
///
/// The finite differences use an `f64` evaluation of the same loss so that
/// `eps` can be small without drowning in `f32` rounding.
pub fn grad_check(
    n_classes: usize,
    dim: usize,
    support_size: usize,
    seed: u64,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(TaeaError::Parameter(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let problem = GradCheckProblem::random(n_classes, dim, support_size, seed)?;
    grad_check_problem(&problem, eps)
}

pub fn grad_check_problem(problem: &GradCheckProblem, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(TaeaError::Parameter(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let (_, cache) = train_forward_loss(
        &problem.support,
        &problem.omega,
        &problem.weights,
        problem.logit_scale,
    )?;
    let analytic = train_backward(&cache).to_flat();

    let dim = problem.omega.cols();
    let omega = to_f64_rows(&problem.omega);
    let f = to_f64_rows(problem.support.features());
    let labels = problem.support.pseudo_labels();
    let scale = problem.logit_scale as f64;
    let mut params: Vec<f64> = problem.weights.to_flat().iter().map(|&x| x as f64).collect();

    let mut worst = 0.0f64;
    for p in 0..params.len() {
        let orig = params[p];
        params[p] = orig + eps;
        let up = reference_loss(&omega, &f, labels, &params, dim, scale);
        params[p] = orig - eps;
        let down = reference_loss(&omega, &f, labels, &params, dim, scale);
        params[p] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[p] as f64;
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn to_f64_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|r| r.iter().map(|&x| x as f64).collect())
        .collect()
}

/// Straight-line `f64` evaluation of the training loss for flat parameters.
fn reference_loss(
    omega: &[Vec<f64>],
    f: &[Vec<f64>],
    labels: &[usize],
    params: &[f64],
    dim: usize,
    logit_scale: f64,
) -> f64 {
    let dd = dim * dim;
    let w_w = &params[..dd];
    let w_f = &params[dd..2 * dd];
    let w_g = &params[2 * dd..2 * dd + dim];
    let b_g = params[2 * dd + dim];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let project = |x: &[f64], w: &[f64]| -> Vec<f64> {
        (0..dim).map(|d| dot(x, &w[d * dim..(d + 1) * dim])).collect()
    };
    let q: Vec<Vec<f64>> = omega.iter().map(|o| project(o, w_w)).collect();
    let k: Vec<Vec<f64>> = f.iter().map(|x| project(x, w_f)).collect();
    let scale = 1.0 / (dim as f64).sqrt();

    let mut units = Vec::with_capacity(omega.len());
    for (c, o) in omega.iter().enumerate() {
        let s: Vec<f64> = k.iter().map(|kj| dot(&q[c], kj) * scale).collect();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let g = dot(w_g, o) + b_g;
        let mut hat = o.clone();
        for (j, fj) in f.iter().enumerate() {
            let a = e[j] / z;
            for d in 0..dim {
                hat[d] += g * a * fj[d];
            }
        }
        let n = dot(&hat, &hat).sqrt();
        units.push(hat.iter().map(|x| x / n).collect::<Vec<_>>());
    }

    let mut total = 0.0;
    for (i, x) in f.iter().enumerate() {
        let xn = dot(x, x).sqrt();
        let z: Vec<f64> = units.iter().map(|u| logit_scale * dot(u, x) / xn).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[labels[i]];
    }
    total / f.len() as f64
}

/// Adapter optimization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub logit_scale: f32,
    pub adamw: AdamWParams,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch: 3,
            lr: 0.001,
            logit_scale: 100.0,
            adamw: AdamWParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub weights: AdapterWeights,
    /// Adapted text features from the full support set, unit rows.
    pub omega_hat: Matrix,
    pub steps: usize,
    /// Minibatch loss at each optimizer step, before the update.
    pub step_losses: Vec<f32>,
    /// Full-support loss before and after training; `None` when disabled.
    pub initial_loss: Option<f32>,
    pub final_loss: Option<f32>,
    /// True when the support set was empty and the adapter fell back to `ω`.
    pub disabled: bool,
}

/// Trains the adapter on the support set with AdamW under a cosine schedule,
/// then computes `ω̂` once from the full support set.
pub fn fit(support: &SupportSet, omega: &Matrix, config: &FitConfig) -> Result<FitOutcome> {
    let dim = omega.cols();
    if config.batch == 0 {
        return Err(TaeaError::Parameter("batch size must be at least 1".into()));
    }
    if support.is_empty() {
        warn!("empty support set; adapter disabled, falling back to the original text features");
        let mut omega_hat = omega.clone();
        for c in 0..omega_hat.rows() {
            renormalize_row(omega_hat.row_mut(c))?;
        }
        return Ok(FitOutcome {
            weights: AdapterWeights::identity(dim),
            omega_hat,
            steps: 0,
            step_losses: vec![],
            initial_loss: None,
            final_loss: None,
            disabled: true,
        });
    }

    let mut weights = AdapterWeights::identity(dim);
    let (initial_loss, _) = train_forward_loss(support, omega, &weights, config.logit_scale)?;

    let per_epoch = support.len().div_ceil(config.batch);
    let total_steps = config.epochs * per_epoch;
    let mut rng = Rng::new(config.seed);
    let mut params = weights.to_flat();
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..support.len()).collect();
    let mut step_losses = Vec::with_capacity(total_steps);
    let mut step = 0;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch) {
            let batch = support.subset(chunk);
            let (loss, cache) = train_forward_loss(&batch, omega, &weights, config.logit_scale)?;
            let grads = train_backward(&cache).to_flat();
            let lr = cosine_lr(step, total_steps, config.lr)?;
            adamw_step(&mut params, &grads, &mut state, lr, &config.adamw)?;
            weights = AdapterWeights::from_flat(dim, &params)?;
            step_losses.push(loss);
            step += 1;
        }
    }
    if !params.iter().all(|x| x.is_finite()) {
        return Err(TaeaError::Numeric("adapter weights diverged".into()));
    }

    let (final_loss, _) = train_forward_loss(support, omega, &weights, config.logit_scale)?;
    let omega_hat = adapt_text(omega, support.features(), &weights)?;
    Ok(FitOutcome {
        weights,
        omega_hat,
        steps: step,
        step_losses,
        initial_loss: Some(initial_loss),
        final_loss: Some(final_loss),
        disabled: false,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TAW1";

/// Writes `TAW1`, `D: u32`, then `W_W`, `W_F`, `w_g`, `b_g` as little-endian `f32`.
pub fn write_checkpoint(path: impl AsRef<Path>, w: &AdapterWeights) -> Result<()> {
    let path = path.as_ref();
    let dim = u32::try_from(w.dim())
        .map_err(|_| TaeaError::Range(format!("dim {} exceeds u32", w.dim())))?;
    let flat = w.to_flat();
    if !flat.iter().all(|x| x.is_finite()) {
        return Err(TaeaError::Numeric("refusing to save non-finite weights".into()));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * flat.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&dim.to_le_bytes());
    for x in flat {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| TaeaError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<AdapterWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TaeaError::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(TaeaError::Format {
            path: path.into(),
            msg: "expected magic \"TAW1\"".into(),
        });
    }
    if bytes.len() < 8 {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: "header truncated".into(),
        });
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + 4 * AdapterWeights::param_count_for(dim);
    if bytes.len() != expected {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: format!("dim {dim} checkpoint needs {expected} bytes, found {}", bytes.len()),
        });
    }
    let flat: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if !flat.iter().all(|x| x.is_finite()) {
        return Err(TaeaError::Numeric(format!("{}: non-finite weight", path.display())));
    }
    AdapterWeights::from_flat(dim, &flat)
}

/// Serializable summary of a fit, surfaced in run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub steps: usize,
    pub initial_loss: Option<f32>,
    pub final_loss: Option<f32>,
    pub disabled: bool,
}

impl From<&FitOutcome> for FitSummary {
    fn from(o: &FitOutcome) -> Self {
        Self {
            steps: o.steps,
            initial_loss: o.initial_loss,
            final_loss: o.final_loss,
            disabled: o.disabled,
        }
    }
}
