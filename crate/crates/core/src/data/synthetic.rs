//! Synthetic multi-attribute data with planted attribute groups and a
//! controllable source → target shift.
//!
//! Per sample, a global factor `w` and one factor `e_g` per group give group
//! latents `z_g = √c·w + √(1-c)·e_g`. Attribute `a` in group `g` has score
//! `u_a = √r·z_g + √(1-r)·η_a` and label `sign(u_a)`. Scores of two
//! attributes correlate with `r` inside a group and `r·c` across groups; for
//! sign labels the phi coefficient is `(2/π)·asin(score correlation)`, so `r`
//! and `c` are solved from the requested label correlations.
//!
//! Feature `j` carries attribute `j mod I`: `x_j = s_g·u_{j mod I} + σ·ε_j`,
//! where `s_g` is the signal amplitude of that attribute's group. With
//! `D ≥ 2I` every attribute appears in at least two features.
//!
//! Target samples come from the same process, then every plane `(j, j + ⌊D/2⌋)`
//! is rotated by `θ` and the first `⌈D/2⌉` features are shifted by `δ`.
//! Target labels follow the unshifted rule and are kept for evaluation only.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LabeledDomain, UnlabeledDomain};
use crate::error::{Error, Result};
use crate::multilabel::{Label, LabelMatrix};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    /// Planted group sizes; attributes are numbered group by group.
    pub group_sizes: Vec<usize>,
    /// Target label correlation inside a group.
    pub rho_in: f64,
    /// Target label correlation across groups.
    pub rho_out: f64,
    pub samples: usize,
    pub target_samples: usize,
    /// Mean shift added to the first half of the target features.
    pub shift: f64,
    /// Rotation angle of the target features, in degrees.
    pub rotation_deg: f64,
    pub feature_noise: f64,
    /// Per-group feature amplitude `s_g`; `None` means 1 for every group.
    pub group_signal: Option<Vec<f64>>,
    pub attribute_names: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            feature_dim: 12,
            group_sizes: vec![2, 3, 1],
            rho_in: 0.8,
            rho_out: 0.05,
            samples: 2000,
            target_samples: 1000,
            shift: 0.0,
            rotation_deg: 0.0,
            feature_noise: 0.3,
            group_signal: None,
            attribute_names: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn attribute_count(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn names(&self) -> Vec<String> {
        match &self.attribute_names {
            Some(n) => n.clone(),
            None => (0..self.attribute_count()).map(|i| format!("a{i}")).collect(),
        }
    }

    /// Group index of every attribute.
    pub fn planted_assignment(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &size)| std::iter::repeat_n(g, size))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let gen = |msg: String| Err(Error::Generation(msg));
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return gen("group_sizes must be non-empty positive counts".into());
        }
        let attrs = self.attribute_count();
        if self.feature_dim < attrs {
            return gen(format!(
                "feature_dim {} is smaller than the {attrs} attributes",
                self.feature_dim
            ));
        }
        for (name, v) in [("rho_in", self.rho_in), ("rho_out", self.rho_out)] {
            if !(0.0..=1.0).contains(&v) {
                return gen(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.rho_out > self.rho_in {
            return gen(format!(
                "rho_out {} exceeds rho_in {}; cross-group correlation cannot exceed within-group",
                self.rho_out, self.rho_in
            ));
        }
        if self.samples == 0 {
            return gen("samples must be positive".into());
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return gen("shift must be finite and non-negative".into());
        }
        if !self.rotation_deg.is_finite() {
            return gen("rotation_deg must be finite".into());
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return gen("feature_noise must be finite and non-negative".into());
        }
        if let Some(s) = &self.group_signal {
            if s.len() != self.group_sizes.len() || s.iter().any(|v| !v.is_finite()) {
                return gen("group_signal needs one finite amplitude per group".into());
            }
        }
        if let Some(n) = &self.attribute_names {
            if n.len() != attrs {
                return gen(format!("{} attribute names for {attrs} attributes", n.len()));
            }
        }
        Ok(())
    }
}

/// Score correlation whose sign labels have phi coefficient `rho`.
fn score_correlation(rho: f64) -> f64 {
    (FRAC_PI_2 * rho).sin()
}

struct Sampler<'a> {
    spec: &'a SyntheticSpec,
    group_of: Vec<usize>,
    within: f64,
    shared: f64,
}

impl Sampler<'_> {
    fn draw(&self, rows: usize, rng: &mut ChaCha8Rng) -> (Matrix, LabelMatrix) {
        let spec = self.spec;
        let attrs = self.group_of.len();
        let groups = spec.group_sizes.len();
        let dim = spec.feature_dim;
        let mut features = Matrix::zeros(rows, dim);
        let mut labels = Vec::with_capacity(rows * attrs);
        let mut z = vec![0.0; groups];
        let mut u = vec![0.0; attrs];
        for r in 0..rows {
            let w: f64 = rng.sample(StandardNormal);
            for zg in z.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *zg = self.shared.sqrt() * w + (1.0 - self.shared).sqrt() * e;
            }
            for (a, ua) in u.iter_mut().enumerate() {
                let eta: f64 = rng.sample(StandardNormal);
                *ua = self.within.sqrt() * z[self.group_of[a]] + (1.0 - self.within).sqrt() * eta;
                labels.push(Label::from_positive(*ua > 0.0));
            }
            let row = features.row_mut(r);
            for (j, x) in row.iter_mut().enumerate() {
                let a = j % attrs;
                let amp = spec.group_signal.as_ref().map_or(1.0, |s| s[self.group_of[a]]);
                let eps: f64 = rng.sample(StandardNormal);
                *x = amp * u[a] + spec.feature_noise * eps;
            }
        }
        let labels = LabelMatrix::new(rows, attrs, labels).expect("sized above");
        (features, labels)
    }
}

/// Rotates planes `(j, j + ⌊D/2⌋)` by `theta` radians, then adds `shift` to
/// the first `⌈D/2⌉` features.
pub(crate) fn shift_features(features: &mut Matrix, theta: f64, shift: f64) {
    let dim = features.cols();
    let half = dim / 2;
    let (sin, cos) = theta.sin_cos();
    let shifted = dim.div_ceil(2);
    for r in 0..features.rows() {
        let row = features.row_mut(r);
        for j in 0..half {
            let (a, b) = (row[j], row[j + half]);
            row[j] = cos * a - sin * b;
            row[j + half] = sin * a + cos * b;
        }
        for x in &mut row[..shifted] {
            *x += shift;
        }
    }
}

/// Draws a labeled source domain and a shifted target domain from `spec`.
/// Same spec, same output, bit for bit.
pub fn generate(spec: &SyntheticSpec) -> Result<(LabeledDomain, UnlabeledDomain)> {
    spec.validate()?;
    let within = score_correlation(spec.rho_in);
    let across = score_correlation(spec.rho_out);
    let shared = if within > 0.0 { across / within } else { 0.0 };
    if shared > 1.0 + 1e-12 {
        return Err(Error::Generation("correlation targets are infeasible".into()));
    }
    let sampler = Sampler {
        spec,
        group_of: spec.planted_assignment(),
        within,
        shared: shared.min(1.0),
    };
    let names = spec.names();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (features, labels) = sampler.draw(spec.samples, &mut rng);
    let source = LabeledDomain::new(features, labels, names.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let (mut features, labels) = sampler.draw(spec.target_samples, &mut rng);
    shift_features(&mut features, spec.rotation_deg.to_radians(), spec.shift);
    let target = UnlabeledDomain::with_eval_labels(features, labels, names)?;
    Ok((source, target))
}
