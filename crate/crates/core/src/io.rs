//! File formats: MatrixMarket matrices, JSON-lines corpora, vocabulary lists
//! and objective traces.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nmf::TracePoint;
use crate::sparse::SparseMatrix;
use crate::text::{Corpus, Document, Vocabulary};

const MM_COORDINATE: &str = "%%MatrixMarket matrix coordinate real general";
const MM_ARRAY: &str = "%%MatrixMarket matrix array real general";

/// Formats a value with 17 significant digits, enough to round-trip any f64.
fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).at(path)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).at(path)
}

pub fn write_sparse_mtx<W: Write>(out: &mut W, m: &SparseMatrix) -> std::io::Result<()> {
    writeln!(out, "{MM_COORDINATE}")?;
    writeln!(out, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz())?;
    for (i, j, v) in m.iter() {
        writeln!(out, "{} {} {}", i + 1, j + 1, fmt_value(v))?;
    }
    Ok(())
}

pub fn write_dense_mtx<W: Write>(out: &mut W, a: ArrayView2<'_, f64>) -> std::io::Result<()> {
    writeln!(out, "{MM_ARRAY}")?;
    writeln!(out, "{} {}", a.nrows(), a.ncols())?;
    for col in a.columns() {
        for &v in col {
            writeln!(out, "{}", fmt_value(v))?;
        }
    }
    Ok(())
}

pub fn save_sparse(path: &Path, m: &SparseMatrix) -> Result<()> {
    let mut out = create(path)?;
    write_sparse_mtx(&mut out, m)
        .and_then(|_| out.flush())
        .at(path)
}

pub fn save_dense(path: &Path, a: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = create(path)?;
    write_dense_mtx(&mut out, a)
        .and_then(|_| out.flush())
        .at(path)
}

struct MtxLines<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::io::Lines<Box<dyn BufRead + 'a>>>,
}

impl<'a> MtxLines<'a> {
    fn parse_err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_owned(),
            line,
            message: message.into(),
        }
    }

    /// Next non-comment, non-blank line with its 1-based number.
    fn next_data(&mut self) -> Result<Option<(usize, String)>> {
        for (n, line) in self.lines.by_ref() {
            let line = line.at(self.path)?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            return Ok(Some((n + 1, t.to_owned())));
        }
        Ok(None)
    }

    fn numbers<T: std::str::FromStr>(&self, n: usize, line: &str, count: usize) -> Result<Vec<T>> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != count {
            return Err(
                self.parse_err(n, format!("expected {count} fields, found {}", parts.len()))
            );
        }
        parts
            .iter()
            .map(|p| {
                p.parse()
                    .map_err(|_| self.parse_err(n, format!("bad number {p:?}")))
            })
            .collect()
    }
}

enum MtxKind {
    Coordinate { symmetric: bool },
    Array,
}

fn read_header<'a>(
    path: &'a Path,
    reader: Box<dyn BufRead + 'a>,
) -> Result<(MtxLines<'a>, MtxKind)> {
    let mut lines = MtxLines {
        path,
        lines: reader.lines().enumerate(),
    };
    let header = match lines.lines.next() {
        Some((_, l)) => l.at(path)?,
        None => return Err(lines.parse_err(1, "empty file")),
    };
    let fields: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(lines.parse_err(1, "missing %%MatrixMarket matrix header"));
    }
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(lines.parse_err(1, format!("unsupported field type {}", fields[3])));
    }
    let kind = match (fields[2].as_str(), fields[4].as_str()) {
        ("coordinate", "general") => MtxKind::Coordinate { symmetric: false },
        ("coordinate", "symmetric") => MtxKind::Coordinate { symmetric: true },
        ("array", "general") => MtxKind::Array,
        (f, s) => return Err(lines.parse_err(1, format!("unsupported format {f} {s}"))),
    };
    Ok((lines, kind))
}

pub fn read_sparse_mtx<'a>(path: &'a Path, reader: impl BufRead + 'a) -> Result<SparseMatrix> {
    let (mut lines, kind) = read_header(path, Box::new(reader))?;
    let symmetric = match kind {
        MtxKind::Coordinate { symmetric } => symmetric,
        MtxKind::Array => {
            let dense = read_array_body(&mut lines)?;
            return SparseMatrix::from_dense(dense.view());
        }
    };
    let (n, size) = lines
        .next_data()?
        .ok_or_else(|| lines.parse_err(2, "missing size line"))?;
    let dims: Vec<usize> = lines.numbers(n, &size, 3)?;
    let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    for _ in 0..nnz {
        let (n, line) = lines
            .next_data()?
            .ok_or_else(|| lines.parse_err(0, "fewer entries than declared"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(lines.parse_err(n, "expected `row col value`"));
        }
        let idx = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(lines.parse_err(n, format!("bad index {s:?}"))),
            }
        };
        let (i, j) = (idx(parts[0])?, idx(parts[1])?);
        let v: f64 = parts[2]
            .parse()
            .map_err(|_| lines.parse_err(n, format!("bad value {:?}", parts[2])))?;
        triplets.push((i, j, v));
        if symmetric && i != j {
            triplets.push((j, i, v));
        }
    }
    SparseMatrix::from_triplets(rows, cols, triplets)
}

fn read_array_body(lines: &mut MtxLines<'_>) -> Result<Array2<f64>> {
    let (n, size) = lines
        .next_data()?
        .ok_or_else(|| lines.parse_err(2, "missing size line"))?;
    let dims: Vec<usize> = lines.numbers(n, &size, 2)?;
    let (rows, cols) = (dims[0], dims[1]);
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let (n, line) = lines
            .next_data()?
            .ok_or_else(|| lines.parse_err(0, "fewer values than declared"))?;
        values.push(lines.numbers::<f64>(n, &line, 1)?[0]);
    }
    // column-major on disk
    Ok(Array2::from_shape_vec((cols, rows), values)
        .expect("shape")
        .reversed_axes()
        .as_standard_layout()
        .to_owned())
}

pub fn read_dense_mtx<'a>(path: &'a Path, reader: impl BufRead + 'a) -> Result<Array2<f64>> {
    let (mut lines, kind) = read_header(path, Box::new(reader))?;
    match kind {
        MtxKind::Array => read_array_body(&mut lines),
        MtxKind::Coordinate { .. } => Err(lines.parse_err(1, "expected array format")),
    }
}

pub fn load_sparse(path: &Path) -> Result<SparseMatrix> {
    read_sparse_mtx(path, open(path)?)
}

pub fn load_dense(path: &Path) -> Result<Array2<f64>> {
    read_dense_mtx(path, open(path)?)
}

/// One line of an input corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

/// One line of a tokenized corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TokenizedDocument {
    id: String,
    tokens: Vec<String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Reads `{"id": ..., "text": ...}` lines and tokenizes every text.
pub fn read_raw_corpus(path: &Path) -> Result<Corpus> {
    let raw: Vec<RawDocument> = read_jsonl(path, open(path)?)?;
    Corpus::new(
        raw.into_iter()
            .map(|d| Document::from_text(d.id, &d.text))
            .collect(),
    )
}

pub fn save_tokenized_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut out = create(path)?;
    for doc in corpus.documents() {
        let line = serde_json::to_string(&TokenizedDocument {
            id: doc.id().to_owned(),
            tokens: doc.tokens().to_vec(),
        })
        .expect("serializable");
        writeln!(out, "{line}").at(path)?;
    }
    out.flush().at(path)
}

pub fn load_tokenized_corpus(path: &Path) -> Result<Corpus> {
    let docs: Vec<TokenizedDocument> = read_jsonl(path, open(path)?)?;
    Corpus::new(
        docs.into_iter()
            .map(|d| Document::new(d.id, d.tokens))
            .collect::<Result<_>>()?,
    )
}

pub fn save_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = create(path)?;
    for term in vocab.terms() {
        writeln!(out, "{term}").at(path)?;
    }
    out.flush().at(path)
}

/// Reads a one-term-per-line vocabulary. Document frequencies are recounted
/// on `corpus`.
pub fn load_vocabulary(path: &Path, corpus: &Corpus) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).at(path)?;
    let df = crate::text::document_frequencies(corpus);
    Vocabulary::from_terms(
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|t| (t.to_owned(), df.get(t).copied().unwrap_or(0)))
            .collect(),
    )
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::io("trace.csv", e.into());
    w.write_record(["iteration", "relative_error"])
        .map_err(wrap)?;
    for p in trace {
        w.write_record([p.iteration.to_string(), fmt_value(p.relative_error)])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("trace.csv", e))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(out).and_then(|_| out.flush()).at(path)
}
