//! Corpus ingestion: delimiter-separated files on disk become an in-memory
//! collection of [`DatasetTable`]s with stable identifiers.
//!
//! A collection is loaded from a directory (every readable delimited file
//! becomes one table) or from a manifest that pins ids, paths, and display
//! names. Unreadable or malformed files are skipped and reported in the
//! [`CollectionReport`] rather than aborting the load. A loaded collection is
//! immutable afterwards and safe to share across threads.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use thiserror::Error;
use walkdir::WalkDir;

/// Default cell texts treated as missing, compared case-insensitively.
pub const DEFAULT_MISSING_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "null", "None"];

/// Number of leading lines inspected when sniffing the field delimiter.
const SNIFF_LINES: usize = 50;

/// Candidate delimiters, in tie-break preference order.
const DELIMITERS: &[u8] = b",\t;";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus directory {0} contains no loadable tables")]
    EmptyCollection(PathBuf),
    #[error("corpus root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("manifest {path}:{line}: {reason}")]
    BadManifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate dataset id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single parsed cell value.
///
/// Parsing is total: any text that fails every typed parse is kept as
/// [`CellValue::Text`]. Missing-token matching happens before any typed parse.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Integer(i64),
    Real(f64),
    Boolean(bool),
    Datetime(NaiveDateTime),
    Text(String),
    Missing,
}

impl CellValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    /// Numeric view: integers widen to f64, everything else is `None`.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            CellValue::Integer(v) => Some(*v as f64),
            CellValue::Real(v) => Some(*v),
            _ => None,
        }
    }
}

/// One named column of raw text cells. `None` marks a cell that was absent in
/// the source row (short rows are padded to header width).
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub raw_values: Vec<Option<String>>,
}

/// An ingested table: the unit of retrieval.
#[derive(Debug, Clone)]
pub struct DatasetTable {
    pub id: String,
    pub name: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
    pub source_path: String,
}

/// Per-file outcome that did not produce a table, plus row-repair counters
/// for files that did.
#[derive(Debug, Clone)]
pub struct FileDiagnostic {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Default, Clone)]
pub struct CollectionReport {
    pub loaded: usize,
    pub skipped: Vec<FileDiagnostic>,
    /// (dataset id, rows padded or truncated to header width)
    pub repaired_rows: Vec<(String, usize)>,
}

/// A loaded, immutable collection ordered by dataset id.
#[derive(Debug, Clone)]
pub struct Collection {
    pub tables: Vec<DatasetTable>,
    pub report: CollectionReport,
}

impl Collection {
    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetTable> {
        self.tables.iter().find(|t| t.id == id)
    }
}

/// Date/datetime layouts attempted by [`parse_cell`], in order. The list is
/// fixed so parsing stays deterministic regardless of platform locale.
pub const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%d/%m/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M:%S",
    "%d-%m-%Y %H:%M:%S",
    "%Y%m%dT%H%M%S",
];

/// Date-only layouts attempted after [`DATETIME_FORMATS`].
pub const DATE_FORMATS: &[&str] = &[
    "%Y-%m-%d",
    "%Y/%m/%d",
    "%d/%m/%Y",
    "%m/%d/%Y",
    "%d-%m-%Y",
    "%d.%m.%Y",
    "%Y.%m.%d",
    "%d %b %Y",
    "%d %B %Y",
    "%b %d, %Y",
];

/// Parse one cell with the default missing-token list.
pub fn parse_cell(text: &str) -> CellValue {
    parse_cell_with(text, DEFAULT_MISSING_TOKENS)
}

/// Parse one cell. Order: missing token, integer, real, boolean, datetime,
/// text fallback. Real parses must be finite, so "inf"/"nan" spellings never
/// become numbers.
pub fn parse_cell_with(text: &str, missing_tokens: &[&str]) -> CellValue {
    let trimmed = text.trim();
    if missing_tokens.iter().any(|t| trimmed.eq_ignore_ascii_case(t)) {
        return CellValue::Missing;
    }
    if let Ok(v) = trimmed.parse::<i64>() {
        return CellValue::Integer(v);
    }
    if looks_numeric(trimmed) {
        if let Ok(v) = trimmed.parse::<f64>() {
            if v.is_finite() {
                return CellValue::Real(v);
            }
        }
    }
    if trimmed.eq_ignore_ascii_case("true") {
        return CellValue::Boolean(true);
    }
    if trimmed.eq_ignore_ascii_case("false") {
        return CellValue::Boolean(false);
    }
    if let Some(dt) = parse_datetime(trimmed) {
        return CellValue::Datetime(dt);
    }
    CellValue::Text(trimmed.to_string())
}

/// Guard against f64's "inf"/"infinity"/"nan" keyword spellings: a numeric
/// cell must contain a digit and only sign/exponent/decimal characters.
fn looks_numeric(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().any(|b| b.is_ascii_digit())
        && s.bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    for fmt in DATETIME_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    for fmt in DATE_FORMATS {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return d.and_hms_opt(0, 0, 0);
        }
    }
    None
}

/// Load every delimited file under `root` into a collection. When `manifest`
/// is given it is authoritative: only listed files load and ids come from it;
/// otherwise ids are relative paths. Tables come back sorted by id, so the
/// result does not depend on directory listing order.
pub fn load_collection(root: &Path, manifest: Option<&Path>) -> Result<Collection, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }

    // (id, path, display name) worklist
    let entries: Vec<(String, PathBuf, String)> = match manifest {
        Some(mpath) => read_manifest(mpath, root)?,
        None => {
            let mut found = Vec::new();
            for entry in WalkDir::new(root).sort_by_file_name() {
                let entry = entry.map_err(|e| {
                    CorpusError::Io(e.into_io_error().unwrap_or_else(|| {
                        std::io::Error::other("walk error")
                    }))
                })?;
                if !entry.file_type().is_file() {
                    continue;
                }
                let rel = entry
                    .path()
                    .strip_prefix(root)
                    .unwrap_or(entry.path())
                    .to_string_lossy()
                    .replace('\\', "/");
                let display = entry
                    .path()
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| rel.clone());
                found.push((rel, entry.path().to_path_buf(), display));
            }
            found
        }
    };

    let mut seen = HashSet::new();
    for (id, _, _) in &entries {
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id.clone()));
        }
    }

    let outcomes: Vec<(String, LoadOutcome)> = entries
        .par_iter()
        .map(|(id, path, name)| {
            let res = load_table(path, id, name);
            (path.to_string_lossy().into_owned(), res)
        })
        .collect();

    let mut tables = Vec::new();
    let mut report = CollectionReport::default();
    for (path, outcome) in outcomes {
        match outcome {
            Ok((table, repaired)) => {
                if repaired > 0 {
                    report.repaired_rows.push((table.id.clone(), repaired));
                }
                tables.push(table);
            }
            Err(reason) => report.skipped.push(FileDiagnostic { path, reason }),
        }
    }
    tables.sort_by(|a, b| a.id.cmp(&b.id));
    report.repaired_rows.sort();
    report.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    report.loaded = tables.len();

    if tables.is_empty() {
        return Err(CorpusError::EmptyCollection(root.to_path_buf()));
    }
    Ok(Collection { tables, report })
}

fn read_manifest(
    manifest: &Path,
    root: &Path,
) -> Result<Vec<(String, PathBuf, String)>, CorpusError> {
    let text = fs::read_to_string(manifest)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::BadManifest {
                path: manifest.to_path_buf(),
                line: lineno + 1,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(CorpusError::BadManifest {
                path: manifest.to_path_buf(),
                line: lineno + 1,
                reason: "dataset id must be non-empty and whitespace-free".into(),
            });
        }
        out.push((
            id.to_string(),
            root.join(fields[1].trim()),
            fields[2].trim().to_string(),
        ));
    }
    Ok(out)
}

/// Read one delimited file into a table. Returns the table plus the number of
/// rows that were padded or truncated to header width.
fn load_table(path: &Path, id: &str, name: &str) -> LoadOutcome {
    let bytes = fs::read(path).map_err(|e| format!("read failed: {e}"))?;
    let text = String::from_utf8(bytes).map_err(|_| "not valid UTF-8".to_string())?;
    if text.trim().is_empty() {
        return Err("file is empty".to_string());
    }

    let delimiter = sniff_delimiter(&text);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| format!("header parse failed: {e}"))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err("no header row or zero columns".to_string());
    }
    let names = disambiguate_names(&headers);
    let width = names.len();

    let mut columns: Vec<Column> = names
        .into_iter()
        .map(|name| Column {
            name,
            raw_values: Vec::new(),
        })
        .collect();

    let mut repaired = 0usize;
    let mut row_count = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| format!("row parse failed: {e}"))?;
        if record.len() != width {
            repaired += 1;
        }
        for (j, col) in columns.iter_mut().enumerate() {
            col.raw_values.push(record.get(j).map(|s| s.to_string()));
        }
        row_count += 1;
    }

    Ok((
        DatasetTable {
            id: id.to_string(),
            name: name.to_string(),
            columns,
            row_count,
            source_path: path.to_string_lossy().into_owned(),
        },
        repaired,
    ))
}

/// Pick the delimiter whose per-line field counts are most consistent over
/// the first 50 lines. Ties prefer more columns, then comma over tab over
/// semicolon.
pub fn sniff_delimiter(text: &str) -> u8 {
    let lines: Vec<&str> = text.lines().take(SNIFF_LINES).collect();
    if lines.is_empty() {
        return b',';
    }
    let mut best = (b',', 0.0f64, 0usize);
    let mut best_rank = usize::MAX;
    for (rank, &delim) in DELIMITERS.iter().enumerate() {
        let counts: Vec<usize> = lines
            .iter()
            .map(|l| l.split(delim as char).count())
            .collect();
        let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in &counts {
            *freq.entry(c).or_default() += 1;
        }
        let (&modal, &modal_n) = freq.iter().max_by_key(|(_, &n)| n).unwrap();
        if modal < 2 {
            continue; // delimiter absent from the file
        }
        let consistency = modal_n as f64 / counts.len() as f64;
        let better = consistency > best.1
            || (consistency == best.1 && modal > best.2)
            || (consistency == best.1 && modal == best.2 && rank < best_rank);
        if better {
            best = (delim, consistency, modal);
            best_rank = rank;
        }
    }
    best.0
}

/// Suffix duplicate column names with `_2`, `_3`, ... and replace empty names
/// with `column_{j}`.
fn disambiguate_names(headers: &[String]) -> Vec<String> {
    let mut used: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(headers.len());
    for (j, raw) in headers.iter().enumerate() {
        let base = if raw.is_empty() {
            format!("column_{}", j + 1)
        } else {
            raw.clone()
        };
        let mut candidate = base.clone();
        let mut n = 1usize;
        while !used.insert(candidate.clone()) {
            n += 1;
            candidate = format!("{base}_{n}");
        }
        out.push(candidate);
    }
    out
}

/// Serialize a table back to comma-separated text. Missing cells write as
/// empty fields; together with the missing-token list this makes
/// write-then-reload cell-equal.
pub fn write_table<W: Write>(table: &DatasetTable, writer: W) -> Result<(), CorpusError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(table.columns.iter().map(|c| c.name.as_str()))
        .map_err(io_of_csv)?;
    for row in 0..table.row_count {
        let record: Vec<&str> = table
            .columns
            .iter()
            .map(|c| c.raw_values[row].as_deref().unwrap_or(""))
            .collect();
        w.write_record(&record).map_err(io_of_csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-file load outcome: (table, repaired-row count) or a skip reason.
type LoadOutcome = Result<(DatasetTable, usize), String>;

fn io_of_csv(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}
