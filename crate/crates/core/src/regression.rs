//! Least-squares projection on Hermite polynomials of the standardized
//! Brownian state `x = B(t_j) / sqrt(t_j)`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig {
    /// Total degree `p` of the basis.
    pub degree: usize,
    /// Ridge penalty on all non-intercept coefficients.
    pub ridge: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            degree: 3,
            ridge: 1e-10,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid("ridge", "must be non-negative"));
        }
        Ok(())
    }
}

/// Multi-indices of total degree `<= degree` in `dims` variables, ordered
/// by degree; the first one is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteBasis {
    dims: usize,
    degree: usize,
    exponents: Vec<Vec<usize>>,
    /// `1 / sqrt(k!)` for `k = 0..=degree`.
    norms: Vec<f64>,
}

impl HermiteBasis {
    pub fn new(dims: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut alpha = vec![0usize; dims];
            collect(&mut exponents, &mut alpha, 0, total);
        }
        let mut norms = vec![1.0; degree + 1];
        for k in 1..=degree {
            norms[k] = norms[k - 1] / (k as f64).sqrt();
        }
        HermiteBasis {
            dims,
            degree,
            exponents,
            norms,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Normalized probabilists' Hermite products at `x`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let p = self.degree;
        let mut he = vec![0.0; self.dims * (p + 1)];
        for (k, &xk) in x.iter().enumerate() {
            let row = &mut he[k * (p + 1)..(k + 1) * (p + 1)];
            row[0] = 1.0;
            if p >= 1 {
                row[1] = xk;
            }
            for n in 1..p {
                row[n + 1] = xk * row[n] - n as f64 * row[n - 1];
            }
        }
        for (o, alpha) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (k, &a) in alpha.iter().enumerate() {
                if a > 0 {
                    v *= he[k * (p + 1) + a] * self.norms[a];
                }
            }
            *o = v;
        }
    }
}

fn collect(out: &mut Vec<Vec<usize>>, alpha: &mut Vec<usize>, at: usize, left: usize) {
    if at + 1 == alpha.len() {
        alpha[at] = left;
        out.push(alpha.clone());
        alpha[at] = 0;
        return;
    }
    if alpha.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for a in (0..=left).rev() {
        alpha[at] = a;
        collect(out, alpha, at + 1, left - a);
    }
    alpha[at] = 0;
}

/// Cholesky factor of `G + ridge * D` where `D` is the identity without its
/// first diagonal entry. Retries with a larger ridge when `G` is not
/// numerically positive definite and reports how many retries it took.
#[derive(Debug, Clone)]
pub struct Factor {
    k: usize,
    l: Vec<f64>,
    pub ridge_used: f64,
    pub fallbacks: usize,
}

impl Factor {
    pub fn new(gram: &[f64], k: usize, ridge: f64) -> Result<Self> {
        let mut ridge_used = ridge;
        let mut fallbacks = 0;
        let scale = (0..k).map(|i| gram[i * k + i]).fold(0.0, f64::max).max(1.0);
        loop {
            if let Some(l) = cholesky(gram, k, ridge_used, scale) {
                return Ok(Factor {
                    k,
                    l,
                    ridge_used,
                    fallbacks,
                });
            }
            fallbacks += 1;
            ridge_used = (ridge_used * 100.0).max(1e-12 * scale);
            if fallbacks > 12 {
                return Err(Error::invalid(
                    "ridge",
                    "design matrix stays singular after ridge fallback",
                ));
            }
        }
    }

    /// Solves `(G + ridge D) beta = rhs` in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let (k, l) = (self.k, &self.l);
        for i in 0..k {
            let mut s = rhs[i];
            for j in 0..i {
                s -= l[i * k + j] * rhs[j];
            }
            rhs[i] = s / l[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = rhs[i];
            for j in i + 1..k {
                s -= l[j * k + i] * rhs[j];
            }
            rhs[i] = s / l[i * k + i];
        }
    }
}

fn cholesky(gram: &[f64], k: usize, ridge: f64, scale: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = gram[i * k + j];
            if i == j && i > 0 {
                s += ridge;
            }
            for q in 0..j {
                s -= l[i * k + q] * l[j * k + q];
            }
            if i == j {
                if !(s > 1e-13 * scale) {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Least-squares fit of several targets on one design matrix.
///
/// `design` is `rows x k` row-major; `targets` is `rows x t` row-major.
/// Returns the `k x t` coefficients row-major.
pub fn fit(design: &[f64], k: usize, targets: &[f64], t: usize, ridge: f64) -> Result<(Vec<f64>, Factor)> {
    let rows = design.len() / k;
    if targets.len() != rows * t {
        return Err(Error::ShapeMismatch(
            "regression targets do not match the design".into(),
        ));
    }
    let inv = 1.0 / rows as f64;
    let mut gram = vec![0.0; k * k];
    let mut cross = vec![0.0; k * t];
    for (row, y) in design.chunks_exact(k).zip(targets.chunks_exact(t)) {
        for a in 0..k {
            let ra = row[a];
            for b in 0..=a {
                gram[a * k + b] += ra * row[b];
            }
            for (c, &yc) in y.iter().enumerate() {
                cross[a * t + c] += ra * yc;
            }
        }
    }
    for a in 0..k {
        for b in 0..=a {
            let v = gram[a * k + b] * inv;
            gram[a * k + b] = v;
            gram[b * k + a] = v;
        }
    }
    cross.iter_mut().for_each(|v| *v *= inv);
    let factor = Factor::new(&gram, k, ridge)?;
    let mut coef = vec![0.0; k * t];
    let mut col = vec![0.0; k];
    for c in 0..t {
        for a in 0..k {
            col[a] = cross[a * t + c];
        }
        factor.solve(&mut col);
        for a in 0..k {
            coef[a * t + c] = col[a];
        }
    }
    Ok((coef, factor))
}

/// `out = row . coef` for a `k x t` coefficient block.
pub fn predict(row: &[f64], coef: &[f64], t: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (a, &ra) in row.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += ra * coef[a * t + c];
        }
    }
}
