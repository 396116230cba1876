//! Labeled and unlabeled domains, synthetic generation, CSV persistence and splits.

mod csv_io;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use csv_io::{
    load_csv, read_csv, save_labeled_csv, save_unlabeled_csv, write_labeled_csv, write_unlabeled_csv, Dataset,
};
pub use synthetic::{generate, SyntheticSpec};

use crate::error::{Error, Result};
use crate::multilabel::LabelMatrix;
use crate::nn::Matrix;

/// Features with one binary label column per named attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDomain {
    pub features: Matrix,
    pub labels: LabelMatrix,
    pub names: Vec<String>,
}

impl LabeledDomain {
    pub fn new(features: Matrix, labels: LabelMatrix, names: Vec<String>) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::shape(format!(
                "{} feature rows but {} label rows",
                features.rows(),
                labels.rows()
            )));
        }
        if names.len() != labels.cols() {
            return Err(Error::shape("attribute names do not match label columns"));
        }
        check_unique(&names)?;
        Ok(Self {
            features,
            labels,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Same samples keeping only the listed attribute columns.
    pub fn with_attributes(&self, columns: &[usize]) -> Result<LabeledDomain> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.names.len()) {
            return Err(Error::arg(format!("attribute column {c} out of range")));
        }
        LabeledDomain::new(
            self.features.clone(),
            self.labels.select_columns(columns),
            columns.iter().map(|&c| self.names[c].clone()).collect(),
        )
    }
}

/// Features only. Evaluation labels may ride along but training code sees
/// the domain through [`UnlabeledDomain::training_view`], which exposes no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDomain {
    pub features: Matrix,
    eval: Option<(LabelMatrix, Vec<String>)>,
}

/// Label-free view of a target domain handed to training routines.
#[derive(Debug, Clone, Copy)]
pub struct TargetView<'a> {
    pub features: &'a Matrix,
}

impl UnlabeledDomain {
    pub fn new(features: Matrix) -> Self {
        Self { features, eval: None }
    }

    pub fn with_eval_labels(features: Matrix, labels: LabelMatrix, names: Vec<String>) -> Result<Self> {
        if labels.rows() != features.rows() {
            return Err(Error::shape("evaluation labels do not match feature rows"));
        }
        if names.len() != labels.cols() {
            return Err(Error::shape("evaluation names do not match label columns"));
        }
        check_unique(&names)?;
        Ok(Self {
            features,
            eval: Some((labels, names)),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn training_view(&self) -> TargetView<'_> {
        TargetView {
            features: &self.features,
        }
    }

    pub fn eval_labels(&self) -> Option<&LabelMatrix> {
        self.eval.as_ref().map(|(l, _)| l)
    }

    pub fn eval_names(&self) -> &[String] {
        self.eval.as_ref().map_or(&[], |(_, n)| n.as_slice())
    }

    /// Evaluation label column for `name`.
    pub fn eval_column(&self, name: &str) -> Option<Vec<crate::multilabel::Label>> {
        let (labels, names) = self.eval.as_ref()?;
        let c = names.iter().position(|n| n == name)?;
        Some(labels.column(c))
    }

    pub fn without_labels(&self) -> UnlabeledDomain {
        UnlabeledDomain::new(self.features.clone())
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::arg(format!("duplicate attribute name `{n}`")));
        }
    }
    Ok(())
}

/// Row subsetting shared by both domain kinds.
pub trait SelectRows: Sized {
    fn row_count(&self) -> usize;
    fn select(&self, indices: &[usize]) -> Self;
}

impl SelectRows for LabeledDomain {
    fn row_count(&self) -> usize {
        self.len()
    }

    fn select(&self, indices: &[usize]) -> Self {
        LabeledDomain {
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            names: self.names.clone(),
        }
    }
}

impl SelectRows for UnlabeledDomain {
    fn row_count(&self) -> usize {
        self.len()
    }

    fn select(&self, indices: &[usize]) -> Self {
        UnlabeledDomain {
            features: self.features.select_rows(indices),
            eval: self
                .eval
                .as_ref()
                .map(|(l, n)| (l.select_rows(indices), n.clone())),
        }
    }
}

/// Seeded disjoint partition of the rows by `fractions`.
///
/// Rows are shuffled, cut at `round(n · cumulative fraction)`, and each part
/// keeps its rows in their original order.
pub fn split<D: SelectRows>(domain: &D, fractions: &[f64], seed: u64) -> Result<Vec<D>> {
    if fractions.is_empty() {
        return Err(Error::arg("split needs at least one fraction"));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::arg("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split fractions sum to {total}, not 1")));
    }
    let n = domain.row_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    let mut cumulative = 0.0;
    for (k, f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((cumulative * n as f64).round() as usize).min(n)
        };
        if end <= start {
            return Err(Error::arg(format!("split part {k} would be empty")));
        }
        let mut idx = order[start..end].to_vec();
        idx.sort_unstable();
        parts.push(domain.select(&idx));
        start = end;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilabel::Label;

    fn toy(n: usize) -> LabeledDomain {
        let features = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let labels = LabelMatrix::new(n, 1, (0..n).map(|i| Label::from_positive(i % 2 == 0)).collect()).unwrap();
        LabeledDomain::new(features, labels, vec!["a".into()]).unwrap()
    }

    #[test]
    fn single_fraction_is_identity() {
        let d = toy(7);
        let parts = split(&d, &[1.0], 3).unwrap();
        assert_eq!(parts, vec![d]);
    }

    #[test]
    fn halves_are_disjoint_and_exhaustive() {
        let d = toy(10);
        let parts = split(&d, &[0.5, 0.5], 1).unwrap();
        assert_eq!(parts[0].len(), 5);
        assert_eq!(parts[1].len(), 5);
        let mut seen: Vec<f64> = parts.iter().flat_map(|p| p.features.data().to_vec()).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(split(&d, &[0.5, 0.5], 1).unwrap(), parts);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let d = toy(10);
        assert!(split(&d, &[0.5, 0.6], 0).is_err());
        assert!(split(&d, &[1.0, 0.0], 0).is_err());
        assert!(split(&d, &[0.99, 0.01], 0).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let f = Matrix::zeros(1, 1);
        let l = LabelMatrix::new(1, 2, vec![Label::Positive; 2]).unwrap();
        assert!(LabeledDomain::new(f, l, vec!["a".into(), "a".into()]).is_err());
    }
}
