//! Dense f64 kernels shared by the model, the pseudo-attention builder and
//! the feedback losses.
//!
//! Everything here is a pure function of its inputs. Probability vectors are
//! validated at construction so downstream code can rely on the simplex
//! invariant without re-checking.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Tolerance on `Σ p = 1` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A distribution over `S` slots: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid_arg("probability vector must be non-empty"));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(invalid_arg(format!(
                "probability entry {i} is {v}, expected finite and >= 0"
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid_arg(format!("probability vector sums to {total}, expected 1")));
        }
        Ok(ProbVector(values))
    }

    /// Uniform distribution over `n` slots.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid_arg("uniform distribution needs n >= 1"));
        }
        Ok(ProbVector(vec![1.0 / n as f64; n]))
    }

    /// Normalizes a nonnegative vector with positive mass.
    pub fn from_unnormalized(values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(invalid_arg(format!(
                "cannot normalize a vector with total mass {total}"
            )));
        }
        ProbVector::new(values.into_iter().map(|v| v / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.0
    }
}

/// Row-major `rows × cols` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid_arg(format!("grid dims must be positive, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(invalid_arg(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Grid2D { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature softmax `exp(v/T) / Σ exp(v'/T)` with max-subtraction.
pub fn softmax_temp(values: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(invalid_arg(format!("temperature must be > 0, got {temperature}")));
    }
    if values.is_empty() {
        return Err(invalid_arg("softmax of an empty vector"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(invalid_arg(format!("softmax input {v} is not finite")));
    }
    Ok(ProbVector(softmax_unchecked(values, temperature)))
}

/// Softmax for values already known to be finite. Used on hot paths.
pub(crate) fn softmax_unchecked(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Pullback of a gradient through `a = softmax(z)`: `dz = a ⊙ (da − ⟨a, da⟩)`.
pub(crate) fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(upstream).map(|(a, g)| a * g).sum();
    probs.iter().zip(upstream).map(|(a, g)| a * (g - inner)).collect()
}

/// Shannon entropy in nats with `0 · log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(invalid_arg(format!("entropy: entry {i} is {v}")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
    // -0.0 and tiny negative rounding on one-hot rows
    h.max(0.0)
}

/// `KL(p ‖ q) = Σ p (log p − log q)`; zero-mass entries of `p` contribute 0.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid_arg(format!(
            "kl_div length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if !(pi >= 0.0 && qi >= 0.0) {
            return Err(invalid_arg(format!("kl_div: negative entry at {i}")));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::DivergenceUndefined { index: i, p: pi });
        }
        total += pi * (pi.ln() - qi.ln());
    }
    Ok(total.max(0.0))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Normalized 3×3 Gaussian kernel, row-major, `w(dx,dy) ∝ exp(−(dx²+dy²)/(2σ²))`.
pub fn gaussian_kernel3(sigma: f64) -> Result<[f64; 9]> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid_arg(format!("sigma must be > 0, got {sigma}")));
    }
    let mut k = [0.0; 9];
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let r2 = f64::from(dx * dx + dy * dy);
            k[((dy + 1) * 3 + (dx + 1)) as usize] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = k.iter().sum();
    for w in &mut k {
        *w /= total;
    }
    Ok(k)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// 3×3 Gaussian smoothing with reflect padding at the borders.
///
/// The padding mirrors about the cell edge, so for this symmetric kernel the
/// total mass of the grid is preserved.
pub fn gaussian_smooth(grid: &Grid2D, sigma: f64) -> Result<Grid2D> {
    let kernel = gaussian_kernel3(sigma)?;
    let (rows, cols) = grid.dims();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for dy in -1isize..=1 {
                let rr = reflect(r as isize + dy, rows);
                for dx in -1isize..=1 {
                    let cc = reflect(c as isize + dx, cols);
                    acc += kernel[((dy + 1) * 3 + (dx + 1)) as usize] * grid.get(rr, cc);
                }
            }
            out[r * cols + c] = acc;
        }
    }
    Grid2D::new(rows, cols, out)
}

/// Compares an analytic gradient with central differences.
///
/// Returns `max_i |g_i − fd_i| / max(1, |g_i|)`.
pub fn fd_gradient_check<F>(f: F, theta: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid_arg(format!("eps must be > 0, got {eps}")));
    }
    if theta.len() != analytic.len() {
        return Err(invalid_arg(format!(
            "theta has {} coordinates but the analytic gradient has {}",
            theta.len(),
            analytic.len()
        )));
    }
    let mut x = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::CheckFailed(format!(
                "non-finite evaluation at coordinate {i}: f(+)={up}, f(-)={down}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
