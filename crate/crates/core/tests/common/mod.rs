//! Reference implementations written independently of the library code.
#![allow(dead_code)]

use grouplift::multilabel::{Label, ModelPass};
use grouplift::nn::{Activation, DenseNetwork, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn random_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    (0..n).map(|_| Label::from_positive(rng.random_bool(0.5))).collect()
}

/// Forward pass by explicit loops over units and inputs.
pub fn forward_loops(net: &DenseNetwork, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in net.layers() {
        let w = layer.weights();
        let mut out = vec![0.0; layer.out_dim()];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut z = layer.bias()[o];
            for (i, xi) in a.iter().enumerate() {
                z += w[(o, i)] * xi;
            }
            *slot = match layer.activation() {
                Activation::Identity => z,
                Activation::Relu => {
                    if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                }
            };
        }
        a = out;
    }
    a
}

fn k(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let mut d2 = 0.0;
    for i in 0..x.len() {
        d2 += (x[i] - y[i]) * (x[i] - y[i]);
    }
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// MK-MMD² by double loops over every pair. `unbiased` drops the diagonal
/// terms of the within-domain sums.
pub fn mmd_double_loop(s: &Matrix, t: &Matrix, sigmas: &[f64], betas: &[f64], unbiased: bool) -> f64 {
    let (m, n) = (s.rows(), t.rows());
    let mut total = 0.0;
    for (&sigma, &beta) in sigmas.iter().zip(betas) {
        let (mut ss, mut tt, mut st) = (0.0, 0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                if !(unbiased && i == j) {
                    ss += k(s.row(i), s.row(j), sigma);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !(unbiased && i == j) {
                    tt += k(t.row(i), t.row(j), sigma);
                }
            }
        }
        for i in 0..m {
            for j in 0..n {
                st += k(s.row(i), t.row(j), sigma);
            }
        }
        let (mm, nn) = (m as f64, n as f64);
        let value = if unbiased {
            ss / (mm * (mm - 1.0)) + tt / (nn * (nn - 1.0)) - 2.0 * st / (mm * nn)
        } else {
            ss / (mm * mm) + tt / (nn * nn) - 2.0 * st / (mm * nn)
        };
        total += beta * value;
    }
    total
}

/// Median of all pairwise Euclidean distances by full sort.
pub fn median_by_sort(x: &Matrix) -> f64 {
    let mut d = vec![];
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        (d[n / 2 - 1] + d[n / 2]) / 2.0
    }
}

/// Pearson correlation of two ±1 columns by the textbook formula.
pub fn pearson(a: &[Label], b: &[Label]) -> f64 {
    let x: Vec<f64> = a.iter().map(|l| l.sign()).collect();
    let y: Vec<f64> = b.iter().map(|l| l.sign()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// ReLU on/off pattern of every pre-activation in the given passes.
pub fn relu_pattern(passes: &[&ModelPass]) -> Vec<bool> {
    let mut v = vec![];
    for p in passes {
        for fp in std::iter::once(&p.trunk).chain(p.heads.iter()) {
            for z in fp.pre_activations() {
                v.extend(z.data().iter().map(|&x| x > 0.0));
            }
        }
    }
    v
}

/// Central differences of `f` at `x` with step `eps`. Coordinates whose
/// perturbation changes the pattern returned by `f` come back as `None`.
pub fn finite_differences<F>(mut f: F, x: &[f64], eps: f64) -> Vec<Option<f64>>
where
    F: FnMut(&[f64]) -> (f64, Vec<bool>),
{
    let (_, base) = f(x);
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + eps;
            let (hi, a) = f(&p);
            p[i] = x[i] - eps;
            let (lo, b) = f(&p);
            p[i] = x[i];
            (a == base && b == base).then(|| (hi - lo) / (2.0 * eps))
        })
        .collect()
}

/// `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖)` over the kept coordinates.
pub fn rel_err(analytic: &[f64], numeric: &[Option<f64>]) -> f64 {
    let (mut d, mut a, mut n) = (0.0, 0.0, 0.0);
    for (x, y) in analytic.iter().zip(numeric) {
        if let Some(y) = y {
            d += (x - y) * (x - y);
            a += x * x;
            n += y * y;
        }
    }
    let scale = a.max(n).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        d.sqrt() / scale
    }
}
