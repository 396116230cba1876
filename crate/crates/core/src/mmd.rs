//! Multi-kernel maximum mean discrepancy with Gaussian kernels.
//!
//! For a kernel `k = Σ_u β_u k_u` the squared MMD between samples `S` (m rows)
//! and `T` (n rows) is estimated as
//!
//! ```text
//! mean k(s, s') - 2 mean k(s, t) + mean k(t, t')
//! ```
//!
//! The biased (V-statistic) form averages over all pairs including `s = s'`;
//! the unbiased (U-statistic) form drops the diagonal of the within-sample sums.
//! All kernels share one pairwise squared-distance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Biased,
    Unbiased,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Biased => "biased",
            Estimator::Unbiased => "unbiased",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Estimator::Biased),
            "unbiased" => Ok(Estimator::Unbiased),
            _ => Err(Error::arg(format!("unknown estimator `{s}` (biased|unbiased)"))),
        }
    }
}

/// Gaussian bandwidths with convex combination coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFamily {
    bandwidths: Vec<f64>,
    coefficients: Vec<f64>,
}

impl KernelFamily {
    pub fn new(bandwidths: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.len() != coefficients.len() {
            return Err(Error::arg("kernel family needs matching, non-empty bandwidth and coefficient lists"));
        }
        if bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::arg("kernel bandwidths must be positive and finite"));
        }
        if coefficients.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::arg("kernel coefficients must be non-negative"));
        }
        let total: f64 = coefficients.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("kernel coefficients sum to {total}, not 1")));
        }
        Ok(Self {
            bandwidths,
            coefficients,
        })
    }

    /// Equal coefficients `1/d`.
    pub fn uniform(bandwidths: Vec<f64>) -> Result<Self> {
        let d = bandwidths.len().max(1);
        Self::new(bandwidths, vec![1.0 / d as f64; d])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }
}

/// Squared MK-MMD estimate together with the per-kernel components.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdValue {
    /// `Σ_u β_u per_kernel[u]`
    pub value: f64,
    pub estimator: Estimator,
    pub per_kernel: Vec<f64>,
}

/// `exp(-‖x - y‖² / (2σ²))`
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "kernel arguments have {} and {} dimensions",
            x.len(),
            y.len()
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::arg("bandwidth must be positive"));
    }
    Ok((-squared_distance(x, y) / (2.0 * sigma * sigma)).exp())
}

fn check_inputs(source: &Matrix, target: &Matrix, estimator: Estimator) -> Result<()> {
    if source.cols() != target.cols() {
        return Err(Error::shape(format!(
            "source has {} features, target {}",
            source.cols(),
            target.cols()
        )));
    }
    let min = match estimator {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    };
    if source.rows() < min || target.rows() < min {
        return Err(Error::arg(format!(
            "{} estimator needs at least {min} samples per set (got {} and {})",
            estimator.name(),
            source.rows(),
            target.rows()
        )));
    }
    if !source.is_finite() || !target.is_finite() {
        return Err(Error::Numeric("non-finite sample value".into()));
    }
    Ok(())
}

/// Pairwise squared distances among the rows of `source` stacked over `target`.
fn pooled_sq_distances(source: &Matrix, target: &Matrix) -> Matrix {
    let m = source.rows();
    let total = m + target.rows();
    let row = |i: usize| if i < m { source.row(i) } else { target.row(i - m) };
    let mut d = Matrix::zeros(total, total);
    for i in 0..total {
        for j in i + 1..total {
            let v = squared_distance(row(i), row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Block weights `(a, b, c)` for the source-source, cross, target-target sums.
fn block_weights(m: usize, n: usize, estimator: Estimator) -> (f64, f64, f64) {
    let (m, n) = (m as f64, n as f64);
    match estimator {
        Estimator::Biased => (1.0 / (m * m), 2.0 / (m * n), 1.0 / (n * n)),
        Estimator::Unbiased => (1.0 / (m * (m - 1.0)), 2.0 / (m * n), 1.0 / (n * (n - 1.0))),
    }
}

pub fn mkmmd_sq(source: &Matrix, target: &Matrix, kernels: &KernelFamily, estimator: Estimator) -> Result<MmdValue> {
    check_inputs(source, target, estimator)?;
    let d = pooled_sq_distances(source, target);
    Ok(mmd_from_distances(&d, source.rows(), kernels, estimator))
}

fn mmd_from_distances(d: &Matrix, m: usize, kernels: &KernelFamily, estimator: Estimator) -> MmdValue {
    let total = d.rows();
    let n = total - m;
    let (wa, wb, wc) = block_weights(m, n, estimator);
    let include_diagonal = estimator == Estimator::Biased;
    let mut per_kernel = Vec::with_capacity(kernels.len());
    for &sigma in kernels.bandwidths() {
        let scale = -1.0 / (2.0 * sigma * sigma);
        let (mut ss, mut st, mut tt) = (0.0, 0.0, 0.0);
        for i in 0..total {
            for j in 0..total {
                if i == j && !include_diagonal {
                    continue;
                }
                let k = (d[(i, j)] * scale).exp();
                match (i < m, j < m) {
                    (true, true) => ss += k,
                    (false, false) => tt += k,
                    (true, false) => st += k,
                    (false, true) => {}
                }
            }
        }
        per_kernel.push(wa * ss - wb * st + wc * tt);
    }
    let value = per_kernel
        .iter()
        .zip(kernels.coefficients())
        .map(|(v, b)| b * v)
        .sum();
    MmdValue {
        value,
        estimator,
        per_kernel,
    }
}

/// Estimate plus its gradient with respect to every source and target row.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdGradient {
    pub value: MmdValue,
    pub source: Matrix,
    pub target: Matrix,
}

/// Gradient of [`mkmmd_sq`] using `∂k_u(x, y)/∂x = -k_u(x, y) (x - y) / σ_u²`.
pub fn mkmmd_grad(source: &Matrix, target: &Matrix, kernels: &KernelFamily, estimator: Estimator) -> Result<MmdGradient> {
    check_inputs(source, target, estimator)?;
    let m = source.rows();
    let n = target.rows();
    let total = m + n;
    let dim = source.cols();
    let d = pooled_sq_distances(source, target);
    let value = mmd_from_distances(&d, m, kernels, estimator);
    let (wa, wb, wc) = block_weights(m, n, estimator);

    // w[i][j] = Σ_u β_u k_u(i, j) / σ_u²
    let mut w = Matrix::zeros(total, total);
    for (&sigma, &beta) in kernels.bandwidths().iter().zip(kernels.coefficients()) {
        let s2 = sigma * sigma;
        let scale = -1.0 / (2.0 * s2);
        for (wv, &dv) in w.data_mut().iter_mut().zip(d.data()) {
            *wv += beta * (dv * scale).exp() / s2;
        }
    }

    let row = |i: usize| if i < m { source.row(i) } else { target.row(i - m) };
    let mut grads = Matrix::zeros(total, dim);
    for a in 0..total {
        let xa = row(a);
        let a_is_source = a < m;
        let mut g = vec![0.0; dim];
        for b in 0..total {
            if a == b {
                continue;
            }
            let b_is_source = b < m;
            // coefficient of k(a, b) in the estimate, counting both (a,b) and (b,a)
            let coeff = match (a_is_source, b_is_source) {
                (true, true) => 2.0 * wa,
                (false, false) => 2.0 * wc,
                _ => -wb,
            };
            let f = -coeff * w[(a, b)];
            for ((gv, &x), &y) in g.iter_mut().zip(xa).zip(row(b)) {
                *gv += f * (x - y);
            }
        }
        grads.row_mut(a).copy_from_slice(&g);
    }
    let (source_grad, target_grad) = grads.split_rows(m);
    Ok(MmdGradient {
        value,
        source: source_grad,
        target: target_grad,
    })
}

/// Median Euclidean distance over all distinct unordered pairs of rows (mean
/// of the two middle values for an even pair count). If more than half of
/// the pairs coincide, the median of the non-zero distances is used instead.
pub fn median_pairwise_distance(pooled: &Matrix) -> Result<f64> {
    let n = pooled.rows();
    if n < 2 {
        return Err(Error::arg("median heuristic needs at least 2 samples"));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(squared_distance(pooled.row(i), pooled.row(j)).sqrt());
        }
    }
    if dists.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite pairwise distance".into()));
    }
    let mut med = median(&mut dists);
    if med == 0.0 {
        let mut nonzero: Vec<f64> = dists.into_iter().filter(|&v| v > 0.0).collect();
        if nonzero.is_empty() {
            return Err(Error::DegenerateData("all pooled samples are identical".into()));
        }
        med = median(&mut nonzero);
    }
    Ok(med)
}

fn median(values: &mut [f64]) -> f64 {
    let len = values.len();
    let mid = len / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Bandwidth ladder `{median · s : s ∈ scales}` with uniform coefficients.
pub fn median_heuristic_bandwidths(pooled: &Matrix, scales: &[f64]) -> Result<KernelFamily> {
    if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::arg("kernel scales must be positive"));
    }
    let base = median_pairwise_distance(pooled)?;
    KernelFamily::uniform(scales.iter().map(|s| base * s).collect())
}
