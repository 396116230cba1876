//! Dataset CSV: feature columns, then `attr:<name>` label columns holding `+1`
//! or `-1`. Target-domain files use `eval:<name>` for evaluation-only labels.
//! A file without label columns loads as an unlabeled domain.

use std::io::{Read, Write};
use std::path::Path;

use super::{LabeledDomain, UnlabeledDomain};
use crate::error::{Error, Result};
use crate::multilabel::{Label, LabelMatrix};
use crate::nn::{format_f64, Matrix};

const ATTR_PREFIX: &str = "attr:";
const EVAL_PREFIX: &str = "eval:";

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Labeled(LabeledDomain),
    Unlabeled(UnlabeledDomain),
}

impl Dataset {
    pub fn features(&self) -> &Matrix {
        match self {
            Dataset::Labeled(d) => &d.features,
            Dataset::Unlabeled(d) => &d.features,
        }
    }

    pub fn into_labeled(self) -> Result<LabeledDomain> {
        match self {
            Dataset::Labeled(d) => Ok(d),
            Dataset::Unlabeled(_) => Err(Error::shape("expected a labeled dataset (with attr: columns)")),
        }
    }

    /// Labeled files become unlabeled domains whose labels are kept for evaluation only.
    pub fn into_unlabeled(self) -> UnlabeledDomain {
        match self {
            Dataset::Unlabeled(d) => d,
            Dataset::Labeled(d) => UnlabeledDomain::with_eval_labels(d.features, d.labels, d.names)
                .expect("labeled domain invariants carry over"),
        }
    }
}

enum Column {
    Feature,
    Attr,
    Eval,
}

fn parse_label(s: &str) -> Option<Label> {
    match s.trim() {
        "+1" | "1" => Some(Label::Positive),
        "-1" => Some(Label::Negative),
        _ => None,
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    let mut kinds = Vec::with_capacity(headers.len());
    let mut names = Vec::new();
    for h in headers.iter() {
        let h = h.trim();
        let (kind, name) = if let Some(n) = h.strip_prefix(ATTR_PREFIX) {
            (Column::Attr, Some(n))
        } else if let Some(n) = h.strip_prefix(EVAL_PREFIX) {
            (Column::Eval, Some(n))
        } else {
            (Column::Feature, None)
        };
        if let Some(n) = name {
            if n.is_empty() {
                return Err(Error::parse(1, "empty attribute name"));
            }
            if names.iter().any(|m: &String| m == n) {
                return Err(Error::parse(1, format!("duplicate attribute name `{n}`")));
            }
            names.push(n.to_string());
        }
        kinds.push(kind);
    }
    let has_attr = kinds.iter().any(|k| matches!(k, Column::Attr));
    let has_eval = kinds.iter().any(|k| matches!(k, Column::Eval));
    if has_attr && has_eval {
        return Err(Error::parse(1, "file mixes attr: and eval: label columns"));
    }
    let feature_count = kinds.iter().filter(|k| matches!(k, Column::Feature)).count();
    if feature_count == 0 {
        return Err(Error::parse(1, "no feature columns"));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != kinds.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", kinds.len(), record.len()),
            ));
        }
        for (field, kind) in record.iter().zip(&kinds) {
            match kind {
                Column::Feature => {
                    let v: f64 = field
                        .trim()
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| Error::parse(line, format!("bad feature value `{field}`")))?;
                    features.push(v);
                }
                Column::Attr | Column::Eval => {
                    let l = parse_label(field)
                        .ok_or_else(|| Error::parse(line, format!("label must be +1 or -1, found `{field}`")))?;
                    labels.push(l);
                }
            }
        }
        rows += 1;
    }
    let features = Matrix::from_vec(rows, feature_count, features)?;
    if names.is_empty() {
        return Ok(Dataset::Unlabeled(UnlabeledDomain::new(features)));
    }
    let labels = LabelMatrix::new(rows, names.len(), labels)?;
    if has_attr {
        Ok(Dataset::Labeled(LabeledDomain::new(features, labels, names)?))
    } else {
        Ok(Dataset::Unlabeled(UnlabeledDomain::with_eval_labels(
            features, labels, names,
        )?))
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

fn write_rows<W: Write>(
    out: W,
    features: &Matrix,
    labels: Option<(&LabelMatrix, &[String], &str)>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..features.cols()).map(|j| format!("f{j}")).collect();
    if let Some((_, names, prefix)) = labels {
        header.extend(names.iter().map(|n| format!("{prefix}{n}")));
    }
    wtr.write_record(&header).map_err(csv_err)?;
    for r in 0..features.rows() {
        let mut rec: Vec<String> = features.row(r).iter().map(|&v| format_f64(v)).collect();
        if let Some((l, _, _)) = labels {
            rec.extend(l.row(r).iter().map(|x| match x {
                Label::Positive => "+1".to_string(),
                Label::Negative => "-1".to_string(),
            }));
        }
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_labeled_csv<W: Write>(out: W, domain: &LabeledDomain) -> Result<()> {
    write_rows(out, &domain.features, Some((&domain.labels, &domain.names, ATTR_PREFIX)))
}

pub fn write_unlabeled_csv<W: Write>(out: W, domain: &UnlabeledDomain) -> Result<()> {
    match domain.eval_labels() {
        Some(l) => write_rows(out, &domain.features, Some((l, domain.eval_names(), EVAL_PREFIX))),
        None => write_rows(out, &domain.features, None),
    }
}

pub fn save_labeled_csv(path: impl AsRef<Path>, domain: &LabeledDomain) -> Result<()> {
    write_labeled_csv(std::fs::File::create(path)?, domain)
}

pub fn save_unlabeled_csv(path: impl AsRef<Path>, domain: &UnlabeledDomain) -> Result<()> {
    write_unlabeled_csv(std::fs::File::create(path)?, domain)
}
