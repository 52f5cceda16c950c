//! Delimited-text datasets.
//!
//! Row and column numbers in errors are 1-based and count the header line,
//! so they match what a text editor shows.

use std::collections::HashMap;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};
use ndarray::Array2;

use crate::data::{Dataset, FeatureMatrix, LabelVector};
use crate::error::{DslError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// 0-based column position.
    Index(usize),
    /// Header name.
    Name(String),
}

impl LabelColumn {
    /// Header names win; otherwise a bare integer is a 0-based index.
    pub fn parse(s: &str) -> Self {
        match s.parse() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }

    fn resolve(&self, header: Option<&StringRecord>, width: usize) -> Result<usize> {
        if let (Some(h), LabelColumn::Name(name)) = (header, self) {
            if let Some(pos) = h.iter().position(|c| c.trim() == name) {
                return Ok(pos);
            }
        }
        if let (Some(h), LabelColumn::Index(i)) = (header, self) {
            if let Some(pos) = h.iter().position(|c| c.trim() == i.to_string()) {
                return Ok(pos);
            }
        }
        match self {
            LabelColumn::Index(i) if *i < width => Ok(*i),
            other => Err(DslError::Format(format!(
                "label column {other:?} not found"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// `None` reads every column as a feature.
    pub label_column: Option<LabelColumn>,
    pub has_header: bool,
    pub delimiter: u8,
    /// Fixed class encoding (class id = position). Labels outside it are
    /// errors. Without it classes are numbered by first appearance.
    pub class_names: Option<Vec<String>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: None,
            has_header: true,
            delimiter: b',',
            class_names: None,
        }
    }
}

pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: LabelColumn,
    has_header: bool,
) -> Result<Dataset> {
    load_csv_with(
        path,
        &CsvOptions {
            label_column: Some(label_column),
            has_header,
            ..Default::default()
        },
    )
}

struct ClassMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl ClassMap {
    fn new(fixed: Option<&Vec<String>>) -> Self {
        let names = fixed.cloned().unwrap_or_default();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            names,
            index,
            frozen: fixed.is_some(),
        }
    }

    fn id(&mut self, name: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(name) {
            return Some(i);
        }
        if self.frozen {
            return None;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        Some(i)
    }
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .delimiter(opts.delimiter)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let mut records = reader.records();
    let header = if opts.has_header {
        match records.next() {
            Some(r) => Some(r.map_err(csv_error)?),
            None => return Err(DslError::Format("empty file".into())),
        }
    } else {
        None
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut classes = ClassMap::new(opts.class_names.as_ref());
    let mut width = header.as_ref().map(StringRecord::len);
    let mut label_pos = None;
    let mut n = 0;
    for record in records {
        let record = record.map_err(csv_error)?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(DslError::Parse {
                row,
                col: record.len().min(w) + 1,
                msg: format!("expected {w} fields, found {}", record.len()),
            });
        }
        if label_pos.is_none() {
            if let Some(lc) = &opts.label_column {
                label_pos = Some(lc.resolve(header.as_ref(), w)?);
            }
        }
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == label_pos {
                let name = cell.trim();
                let id = classes.id(name).ok_or_else(|| DslError::Parse {
                    row,
                    col: c + 1,
                    msg: format!("unknown class '{name}'"),
                })?;
                labels.push(id);
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| DslError::Parse {
                row,
                col: c + 1,
                msg: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DslError::Parse {
                    row,
                    col: c + 1,
                    msg: format!("'{cell}' is not finite"),
                });
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(DslError::Format("file has no data rows".into()));
    }
    let l = values.len() / n;
    let features = FeatureMatrix::new(
        Array2::from_shape_vec((n, l), values).map_err(|e| DslError::Dimension(e.to_string()))?,
    )?;
    if label_pos.is_none() {
        return Ok(Dataset::unlabeled(features));
    }
    let labels = LabelVector::new(labels, classes.names.len())?;
    Ok(Dataset::labeled(features, labels)?.with_class_names(classes.names))
}

/// Reads a labeled text corpus: one document per row, tokenized.
/// Returns the token lists and the raw label strings.
pub fn load_text_csv(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    text_column: &LabelColumn,
    has_header: bool,
) -> Result<(Vec<Vec<String>>, Vec<String>)> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let mut records = reader.records();
    let header = if has_header {
        Some(
            records
                .next()
                .ok_or_else(|| DslError::Format("empty file".into()))?
                .map_err(csv_error)?,
        )
    } else {
        None
    };
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let w = header.as_ref().map_or(record.len(), StringRecord::len);
        let (lp, tp) = (
            label_column.resolve(header.as_ref(), w)?,
            text_column.resolve(header.as_ref(), w)?,
        );
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| {
            record.get(c).ok_or_else(|| DslError::Parse {
                row,
                col: c + 1,
                msg: "missing field".into(),
            })
        };
        labels.push(field(lp)?.trim().to_string());
        docs.push(super::tokenize(field(tp)?));
    }
    if docs.is_empty() {
        return Err(DslError::Format("file has no data rows".into()));
    }
    Ok((docs, labels))
}

fn csv_error(e: csv::Error) -> DslError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DslError::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => DslError::Parse {
            row,
            col: (len.min(expected_len) + 1) as usize,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        other => DslError::Format(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn small_file_with_named_label_column() {
        let f = file("x,y,label\n0,1,a\n1,0,b\n");
        let ds = load_csv(f.path(), LabelColumn::Name("label".into()), true).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.features.n_cols(), 2);
        assert_eq!(ds.labels.as_ref().unwrap().as_slice(), &[0, 1]);
        assert_eq!(ds.class_names, vec!["a", "b"]);
    }

    #[test]
    fn classes_numbered_by_first_appearance() {
        let f = file("v,c\n1,b\n2,a\n3,a\n");
        let ds = load_csv(f.path(), LabelColumn::parse("c"), true).unwrap();
        assert_eq!(ds.class_names, vec!["b", "a"]);
        assert_eq!(ds.labels.unwrap().as_slice(), &[0, 1, 1]);
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let f = file("a,b,c,label\n1,2,zz,0\n3,4,5,1\n");
        let err = load_csv(f.path(), LabelColumn::parse("label"), true).unwrap_err();
        assert!(
            matches!(err, DslError::Parse { row: 2, col: 3, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn missing_label_column_and_empty_file() {
        let f = file("x,y\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), LabelColumn::parse("label"), true),
            Err(DslError::Format(_))
        ));
        let empty = file("");
        assert!(load_csv(empty.path(), LabelColumn::Index(0), true).is_err());
        let header_only = file("x,label\n");
        assert!(load_csv(header_only.path(), LabelColumn::Index(1), true).is_err());
    }

    #[test]
    fn headerless_index_column_and_custom_delimiter() {
        let f = file("1;0.5;yes\n2;0.25;no\n");
        let ds = load_csv_with(
            f.path(),
            &CsvOptions {
                label_column: Some(LabelColumn::Index(2)),
                has_header: false,
                delimiter: b';',
                class_names: None,
            },
        )
        .unwrap();
        assert_eq!(ds.features.values()[[1, 1]], 0.25);
        assert_eq!(ds.class_names, vec!["yes", "no"]);
    }

    #[test]
    fn fixed_class_map_rejects_unknown_labels() {
        let f = file("x,label\n1,a\n2,c\n");
        let opts = CsvOptions {
            label_column: Some(LabelColumn::parse("label")),
            class_names: Some(vec!["b".into(), "a".into()]),
            ..Default::default()
        };
        assert!(matches!(
            load_csv_with(f.path(), &opts),
            Err(DslError::Parse { row: 3, col: 2, .. })
        ));
        let g = file("x,label\n1,a\n2,a\n");
        let ds = load_csv_with(g.path(), &opts).unwrap();
        assert_eq!(ds.labels.unwrap().as_slice(), &[1, 1]);
    }

    #[test]
    fn unlabeled_load_keeps_every_column() {
        let f = file("a,b\n1,2\n3,4\n");
        let ds = load_csv_with(f.path(), &CsvOptions::default()).unwrap();
        assert!(ds.labels.is_none());
        assert_eq!(ds.features.n_cols(), 2);
    }

    #[test]
    fn text_corpus_is_tokenized() {
        let f = file("label,text\npos,\"Great movie, great CAST!\"\nneg,awful\n");
        let (docs, labels) = load_text_csv(
            f.path(),
            &LabelColumn::parse("label"),
            &LabelColumn::parse("text"),
            true,
        )
        .unwrap();
        assert_eq!(labels, vec!["pos", "neg"]);
        assert_eq!(docs[0], vec!["great", "movie", "great", "cast"]);
    }
}
