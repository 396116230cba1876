//! Attribute correlation, clustering into groups, and group-balanced loss weights.
//!
//! Given a partition of `I` attributes into `G` groups where group `m` has
//! `g_m` members, every attribute of group `m` gets weight `1 / (G · g_m)`.
//! Each group then carries total weight `1/G` regardless of its size.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::multilabel::LabelMatrix;
use crate::nn::format_f64;

/// Symmetric attribute × attribute correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    size: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    /// Validates symmetry (1e-12), unit diagonal and the `[-1, 1]` range.
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::shape("correlation matrix must be square"));
        }
        for i in 0..size {
            if (values[i * size + i] - 1.0).abs() > 1e-12 {
                return Err(Error::arg(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..size {
                let v = values[i * size + j];
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::arg(format!("entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if (v - values[j * size + i]).abs() > 1e-12 {
                    return Err(Error::arg(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Same matrix with attributes reordered: new index `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.size {
            return Err(Error::shape("permutation length differs from matrix size"));
        }
        let n = self.size;
        let values = (0..n * n).map(|idx| self.get(perm[idx / n], perm[idx % n])).collect();
        Self::new(n, values)
    }
}

/// Pearson correlation between ±1-encoded label columns (the phi coefficient).
pub fn estimate_correlation(labels: &LabelMatrix, names: &[String]) -> Result<CorrelationMatrix> {
    let n = labels.rows();
    if n < 2 {
        return Err(Error::arg("correlation needs at least 2 samples"));
    }
    let cols = labels.cols();
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut norms = Vec::with_capacity(cols);
    for c in 0..cols {
        let col: Vec<f64> = labels.column(c).iter().map(|l| l.sign()).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss: f64 = dev.iter().map(|d| d * d).sum();
        if ss == 0.0 {
            return Err(Error::DegenerateAttribute {
                column: c,
                name: names.get(c).cloned().unwrap_or_else(|| format!("#{c}")),
            });
        }
        norms.push(ss.sqrt());
        centered.push(dev);
    }
    let mut values = vec![0.0; cols * cols];
    for i in 0..cols {
        values[i * cols + i] = 1.0;
        for j in i + 1..cols {
            let cov: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (cov / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i * cols + j] = r;
            values[j * cols + i] = r;
        }
    }
    CorrelationMatrix::new(cols, values)
}

/// Partition of attributes into non-empty groups.
///
/// Groups are numbered by their smallest member, so group 0 always contains
/// attribute 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeGrouping {
    assignment: Vec<usize>,
    group_sizes: Vec<usize>,
}

impl AttributeGrouping {
    /// Builds a grouping from an arbitrary assignment, renumbering groups in
    /// order of first appearance. Rejects gaps (empty groups are impossible
    /// after renumbering, but an empty assignment is rejected).
    pub fn from_assignment(assignment: &[usize]) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::arg("grouping must contain at least one attribute"));
        }
        let mut remap: Vec<Option<usize>> = Vec::new();
        let mut canonical = Vec::with_capacity(assignment.len());
        let mut sizes = Vec::new();
        for &g in assignment {
            if g >= remap.len() {
                remap.resize(g + 1, None);
            }
            let id = *remap[g].get_or_insert_with(|| {
                sizes.push(0);
                sizes.len() - 1
            });
            sizes[id] += 1;
            canonical.push(id);
        }
        Ok(Self {
            assignment: canonical,
            group_sizes: sizes,
        })
    }

    /// Groups given as lists of attribute indices covering `0..attribute_count` exactly once.
    pub fn from_groups(groups: &[Vec<usize>], attribute_count: usize) -> Result<Self> {
        let mut assignment = vec![usize::MAX; attribute_count];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::arg(format!("group {g} is empty")));
            }
            for &a in members {
                if a >= attribute_count {
                    return Err(Error::arg(format!("attribute {a} out of range")));
                }
                if assignment[a] != usize::MAX {
                    return Err(Error::arg(format!("attribute {a} appears in two groups")));
                }
                assignment[a] = g;
            }
        }
        if let Some(a) = assignment.iter().position(|&g| g == usize::MAX) {
            return Err(Error::arg(format!("attribute {a} belongs to no group")));
        }
        Self::from_assignment(&assignment)
    }

    pub fn group_count(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_of(&self, attribute: usize) -> Option<usize> {
        self.assignment.get(attribute).copied()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&a| self.assignment[a] == group)
            .collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        (0..self.group_count()).map(|g| self.members(g)).collect()
    }

    pub fn same_group(&self, a: usize, b: usize) -> Result<bool> {
        let ga = self
            .group_of(a)
            .ok_or_else(|| Error::arg(format!("attribute {a} is not in the grouping")))?;
        let gb = self
            .group_of(b)
            .ok_or_else(|| Error::arg(format!("attribute {b} is not in the grouping")))?;
        Ok(ga == gb)
    }
}

/// Average-linkage agglomerative clustering on `1 - |ρ|`, stopped at `groups` clusters.
///
/// At each merge the closest pair of clusters is joined; ties go to the pair
/// whose (smaller, larger) minimum attribute indices are lexicographically
/// lowest.
pub fn cluster_attributes(corr: &CorrelationMatrix, groups: usize) -> Result<AttributeGrouping> {
    let n = corr.size();
    if groups == 0 || groups > n {
        return Err(Error::arg(format!(
            "group count {groups} must lie in 1..={n}"
        )));
    }
    let dist = |i: usize, j: usize| 1.0 - corr.get(i, j).abs();
    // each cluster: sorted member list; clusters kept ordered by smallest member
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > groups {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += dist(i, j);
                    }
                }
                let d = sum / (clusters[a].len() * clusters[b].len()) as f64;
                // strict comparison keeps the earliest (lowest-index) pair on ties
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters remain");
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
    }
    AttributeGrouping::from_groups(&clusters, n)
}

/// Loss weights `λ_1..λ_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg("loss weights must be finite and non-negative"));
        }
        Ok(Self(values))
    }

    /// Every attribute weighted 1.
    pub fn equal(attributes: usize) -> Self {
        Self(vec![1.0; attributes])
    }

    /// Members of `group` get `high`, everyone else `low`.
    pub fn emphasized(grouping: &AttributeGrouping, group: usize, high: f64, low: f64) -> Result<Self> {
        if group >= grouping.group_count() {
            return Err(Error::arg(format!(
                "group {group} does not exist (there are {})",
                grouping.group_count()
            )));
        }
        Self::new(
            grouping
                .assignment()
                .iter()
                .map(|&g| if g == group { high } else { low })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `λ_i = 1 / (G · g_{m(i)})`.
pub fn assign_group_weights(grouping: &AttributeGrouping) -> LossWeights {
    let g = grouping.group_count() as f64;
    let per_group: Vec<f64> = grouping
        .group_sizes()
        .iter()
        .map(|&size| 1.0 / (g * size as f64))
        .collect();
    LossWeights(grouping.assignment().iter().map(|&m| per_group[m]).collect())
}

/// Grouping plus weights as read from or written to a grouping file.
///
/// ```text
/// [groups]
/// Male,No_Beard
/// Smiling
/// [weights]
/// Male=0.25
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingFile {
    pub names: Vec<String>,
    pub grouping: AttributeGrouping,
    /// Present when the file has a `[weights]` section.
    pub weights: Option<LossWeights>,
}

impl GroupingFile {
    pub fn to_text(&self) -> String {
        let mut s = String::from("[groups]\n");
        for members in self.grouping.groups() {
            let names: Vec<&str> = members.iter().map(|&a| self.names[a].as_str()).collect();
            let _ = writeln!(s, "{}", names.join(","));
        }
        if let Some(w) = &self.weights {
            s.push_str("[weights]\n");
            for (name, v) in self.names.iter().zip(w.as_slice()) {
                let _ = writeln!(s, "{name}={}", format_f64(*v));
            }
        }
        s
    }

    /// Parses a grouping file. Attribute order follows `names` when given,
    /// otherwise first appearance in the `[groups]` section.
    pub fn parse(text: &str, names: Option<&[String]>) -> Result<Self> {
        enum Section {
            None,
            Groups,
            Weights,
        }
        let mut section = Section::None;
        let mut groups: Vec<Vec<String>> = Vec::new();
        let mut weights: Vec<(String, f64, usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[groups]" => section = Section::Groups,
                "[weights]" => section = Section::Weights,
                _ => match section {
                    Section::None => return Err(Error::parse(ln, "content before `[groups]`")),
                    Section::Groups => {
                        let members: Vec<String> = line.split(',').map(|m| m.trim().to_string()).collect();
                        if members.iter().any(String::is_empty) {
                            return Err(Error::parse(ln, "empty attribute name"));
                        }
                        groups.push(members);
                    }
                    Section::Weights => {
                        let (k, v) = line
                            .split_once('=')
                            .ok_or_else(|| Error::parse(ln, "expected `name=weight`"))?;
                        let w: f64 = v
                            .trim()
                            .parse()
                            .map_err(|_| Error::parse(ln, format!("bad weight `{}`", v.trim())))?;
                        weights.push((k.trim().to_string(), w, ln));
                    }
                },
            }
        }
        let names: Vec<String> = match names {
            Some(n) => n.to_vec(),
            None => groups.iter().flatten().cloned().collect(),
        };
        let index_of = |name: &str| names.iter().position(|n| n == name);
        let mut index_groups = Vec::with_capacity(groups.len());
        for members in &groups {
            let idx = members
                .iter()
                .map(|m| index_of(m).ok_or_else(|| Error::parse(0, format!("unknown attribute `{m}`"))))
                .collect::<Result<Vec<_>>>()?;
            index_groups.push(idx);
        }
        let grouping = AttributeGrouping::from_groups(&index_groups, names.len())?;
        let weights = if weights.is_empty() {
            None
        } else {
            let mut values = vec![f64::NAN; names.len()];
            for (name, w, ln) in weights {
                let i = index_of(&name).ok_or_else(|| Error::parse(ln, format!("unknown attribute `{name}`")))?;
                values[i] = w;
            }
            if let Some(i) = values.iter().position(|v| v.is_nan()) {
                return Err(Error::parse(0, format!("no weight given for `{}`", names[i])));
            }
            Some(LossWeights::new(values)?)
        };
        Ok(Self {
            names,
            grouping,
            weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, names: Option<&[String]>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, names)
    }
}
