//! Categorical microdata: schemas, storage, CSV ingestion, discretization and
//! mixed-radix encoding of joint (Cartesian-product) categories.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Nominal,
    Ordinal,
}

impl AttributeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Nominal => "nominal",
            AttributeKind::Ordinal => "ordinal",
        }
    }
}

impl std::str::FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nominal" => Ok(AttributeKind::Nominal),
            "ordinal" => Ok(AttributeKind::Ordinal),
            other => Err(Error::Schema(format!("unknown attribute kind {other:?}"))),
        }
    }
}

/// One categorical attribute with an ordered, duplicate-free category list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    name: String,
    categories: Vec<String>,
    kind: AttributeKind,
}

impl AttributeSchema {
    pub fn new(name: impl Into<String>, categories: Vec<String>, kind: AttributeKind) -> Result<Self> {
        let name = name.into();
        if categories.is_empty() {
            return Err(Error::Schema(format!("attribute {name:?} has no categories")));
        }
        let mut seen = BTreeSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("attribute {name:?} repeats category {c:?}")));
            }
        }
        Ok(Self { name, categories, kind })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    /// Number of categories, `r` for this attribute.
    pub fn size(&self) -> usize {
        self.categories.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Column-major categorical data set: `n` records over `m` attributes.
///
/// Immutable after construction; each stored index is guaranteed to be in
/// range for its attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    schema: Vec<AttributeSchema>,
    columns: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn from_columns(schema: Vec<AttributeSchema>, columns: Vec<Vec<u32>>) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::Schema("a dataset needs at least one attribute".into()));
        }
        if schema.len() != columns.len() {
            return Err(Error::DimensionMismatch { expected: schema.len(), actual: columns.len() });
        }
        let n = columns[0].len();
        if n == 0 {
            return Err(Error::Schema("a dataset needs at least one record".into()));
        }
        for (j, (attr, col)) in schema.iter().zip(&columns).enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: col.len() });
            }
            if let Some(&bad) = col.iter().find(|&&v| v as usize >= attr.size()) {
                return Err(Error::OutOfRange { index: j, value: bad as usize, size: attr.size() });
            }
        }
        Ok(Self { schema, columns })
    }

    pub fn from_rows(schema: Vec<AttributeSchema>, rows: &[Vec<u32>]) -> Result<Self> {
        let m = schema.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); m];
        for row in rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch { expected: m, actual: row.len() });
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::from_columns(schema, columns)
    }

    /// Builds a dataset from label rows, deriving categories as `load_csv` would
    /// (lexicographic for nominal, numeric for ordinal).
    pub fn from_labels(names: &[&str], kinds: &[AttributeKind], rows: &[Vec<&str>]) -> Result<Self> {
        let mut schema = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for (j, (&name, &kind)) in names.iter().zip(kinds).enumerate() {
            let values: Vec<&str> = rows.iter().map(|r| r[j]).collect();
            let categories = derive_categories(name, kind, &values)?;
            let attr = AttributeSchema::new(name, categories, kind)?;
            let lookup: HashMap<&str, u32> =
                attr.categories().iter().enumerate().map(|(i, c)| (c.as_str(), i as u32)).collect();
            columns.push(values.iter().map(|v| lookup[v]).collect());
            schema.push(attr);
        }
        Self::from_columns(schema, columns)
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn attribute(&self, j: usize) -> &AttributeSchema {
        &self.schema[j]
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn m(&self) -> usize {
        self.schema.len()
    }

    pub fn column(&self, j: usize) -> &[u32] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn value(&self, row: usize, attr: usize) -> u32 {
        self.columns[attr][row]
    }

    pub fn row(&self, i: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.schema.iter().map(AttributeSchema::size).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name() == name)
    }

    /// Same schema, new columns (used for randomized versions of the data).
    pub fn with_columns(&self, columns: Vec<Vec<u32>>) -> Result<Self> {
        Self::from_columns(self.schema.clone(), columns)
    }

    /// Concatenates the records `times` times.
    pub fn repeat(&self, times: usize) -> Result<Self> {
        if times == 0 {
            return Err(Error::Schema("repeat factor must be at least 1".into()));
        }
        let columns = self.columns.iter().map(|c| c.repeat(times)).collect();
        Self::from_columns(self.schema.clone(), columns)
    }

    /// Joint codes of every record over `domain`.
    pub fn joint_codes(&self, domain: &JointDomain) -> Vec<usize> {
        let mut codes = vec![0usize; self.n()];
        for (&attr, &radix) in domain.attributes().iter().zip(domain.radices()) {
            for (code, &v) in codes.iter_mut().zip(&self.columns[attr]) {
                *code = *code * radix + v as usize;
            }
        }
        codes
    }

    /// Writes labels as CSV, optionally with a trailing `weight` column and a
    /// leading `#` comment line.
    pub fn write_csv<W: Write>(&self, out: W, weights: Option<&[f64]>, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::Io { path: "<output>".into(), source: e })?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.schema.iter().map(AttributeSchema::name).collect();
        if weights.is_some() {
            header.push("weight");
        }
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            for (attr, col) in self.schema.iter().zip(&self.columns) {
                record.push(attr.categories()[col[i] as usize].clone());
            }
            if let Some(ws) = weights {
                record.push(format!("{:.17e}", ws[i]));
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<output>".into(), source: e })?;
        Ok(())
    }
}

/// Ordered subset of attributes viewed as one categorical attribute over the
/// Cartesian product of their categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointDomain {
    attributes: Vec<usize>,
    radices: Vec<usize>,
    size: usize,
}

impl JointDomain {
    pub fn new(attributes: Vec<usize>, radices: Vec<usize>) -> Result<Self> {
        if attributes.len() != radices.len() {
            return Err(Error::DimensionMismatch { expected: attributes.len(), actual: radices.len() });
        }
        if attributes.is_empty() {
            return Err(Error::Schema("a joint domain needs at least one attribute".into()));
        }
        if radices.contains(&0) {
            return Err(Error::Schema("joint domain component with zero categories".into()));
        }
        let size = radices
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| Error::Schema("joint domain size overflows".into()))?;
        Ok(Self { attributes, radices, size })
    }

    pub fn of(dataset: &Dataset, attributes: &[usize]) -> Result<Self> {
        let radices = attributes
            .iter()
            .map(|&a| {
                dataset
                    .schema()
                    .get(a)
                    .map(AttributeSchema::size)
                    .ok_or(Error::OutOfRange { index: a, value: a, size: dataset.m() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(attributes.to_vec(), radices)
    }

    pub fn attributes(&self) -> &[usize] {
        &self.attributes
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Mixed-radix encoding, first attribute most significant.
    pub fn encode(&self, tuple: &[u32]) -> Result<usize> {
        if tuple.len() != self.radices.len() {
            return Err(Error::DimensionMismatch { expected: self.radices.len(), actual: tuple.len() });
        }
        let mut code = 0usize;
        for (i, (&v, &radix)) in tuple.iter().zip(&self.radices).enumerate() {
            if v as usize >= radix {
                return Err(Error::OutOfRange { index: i, value: v as usize, size: radix });
            }
            code = code * radix + v as usize;
        }
        Ok(code)
    }

    pub fn decode(&self, code: usize) -> Result<Vec<u32>> {
        if code >= self.size {
            return Err(Error::OutOfRange { index: 0, value: code, size: self.size });
        }
        let mut tuple = vec![0u32; self.radices.len()];
        let mut rest = code;
        for (slot, &radix) in tuple.iter_mut().zip(&self.radices).rev() {
            *slot = (rest % radix) as u32;
            rest /= radix;
        }
        Ok(tuple)
    }
}

/// Half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn label(&self) -> String {
        format!("[{},{})", self.lo, self.hi)
    }
}

/// Contiguous intervals from a sorted list of edges.
pub fn bins_from_edges(edges: &[f64]) -> Result<Vec<Interval>> {
    if edges.len() < 2 {
        return Err(Error::Schema("bin edges need at least two values".into()));
    }
    let bins: Vec<Interval> = edges.windows(2).map(|w| Interval { lo: w[0], hi: w[1] }).collect();
    validate_bins(&bins)?;
    Ok(bins)
}

fn validate_bins(bins: &[Interval]) -> Result<()> {
    for b in bins {
        if !(b.lo < b.hi) {
            return Err(Error::Schema(format!("empty or inverted bin [{}, {})", b.lo, b.hi)));
        }
    }
    for w in bins.windows(2) {
        if w[1].lo < w[0].hi {
            return Err(Error::Schema("bins must be ordered and non-overlapping".into()));
        }
    }
    Ok(())
}

/// Maps each value to the index of the half-open bin containing it.
pub fn discretize(values: &[f64], bins: &[Interval]) -> Result<Vec<u32>> {
    validate_bins(bins)?;
    values
        .iter()
        .map(|&x| {
            // bins are sorted: the candidate is the last bin with lo <= x
            let idx = bins.partition_point(|b| b.lo <= x);
            match idx.checked_sub(1) {
                Some(i) if bins[i].contains(x) => Ok(i as u32),
                _ => Err(Error::OutOfBins { value: x }),
            }
        })
        .collect()
}

/// Per-column ingestion rules.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColumnSpec {
    pub kind: Option<AttributeKind>,
    pub bins: Option<Vec<Interval>>,
    /// Fixed category list, in index order.
    pub categories: Option<Vec<String>>,
}

/// Ingestion configuration, read from a small key/value text file:
///
/// ```text
/// # comment
/// column.age = ordinal
/// bins.age = 0, 50, 100
/// column.workclass = nominal
/// categories.workclass = Private, State-gov, ?
/// missing = NA
/// ```
///
/// With no `column.*` entries every CSV column is loaded as nominal. Empty
/// fields are always treated as missing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SchemaSpec {
    pub columns: BTreeMap<String, ColumnSpec>,
    pub missing: Vec<String>,
}

impl SchemaSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SchemaSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                context: format!("dataset: schema spec line {}", lineno + 1),
                message: msg.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            if key == "missing" {
                spec.missing = split_list(value);
                continue;
            }
            let (field, column) = key.split_once('.').ok_or_else(|| bad("expected `field.column`"))?;
            let entry = spec.columns.entry(column.trim().to_string()).or_default();
            match field.trim() {
                "column" => entry.kind = Some(value.parse()?),
                "bins" => {
                    let edges = split_list(value)
                        .iter()
                        .map(|e| e.parse::<f64>().map_err(|_| bad("bin edges must be numbers")))
                        .collect::<Result<Vec<_>>>()?;
                    entry.bins = Some(bins_from_edges(&edges)?);
                }
                "categories" => entry.categories = Some(split_list(value)),
                other => return Err(bad(&format!("unknown field {other:?}"))),
            }
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        Self::parse(&text)
    }

    /// A spec pinning every attribute of `dataset` to its exact category list,
    /// so derived files (e.g. randomized data) re-load with identical indices.
    pub fn pinned(dataset: &Dataset) -> Self {
        let columns = dataset
            .schema()
            .iter()
            .map(|a| {
                let spec = ColumnSpec {
                    kind: Some(a.kind()),
                    bins: None,
                    categories: Some(a.categories().to_vec()),
                };
                (a.name().to_string(), spec)
            })
            .collect();
        SchemaSpec { columns, missing: Vec::new() }
    }

    pub fn to_text(&self, order: &[&str]) -> String {
        let mut out = String::new();
        if !self.missing.is_empty() {
            out.push_str(&format!("missing = {}\n", self.missing.join(", ")));
        }
        for name in order {
            if let Some(c) = self.columns.get(*name) {
                if let Some(kind) = c.kind {
                    out.push_str(&format!("column.{name} = {}\n", kind.as_str()));
                }
                if let Some(bins) = &c.bins {
                    let mut edges: Vec<String> = bins.iter().map(|b| b.lo.to_string()).collect();
                    if let Some(last) = bins.last() {
                        edges.push(last.hi.to_string());
                    }
                    out.push_str(&format!("bins.{name} = {}\n", edges.join(", ")));
                }
                if let Some(cats) = &c.categories {
                    out.push_str(&format!("categories.{name} = {}\n", cats.join(", ")));
                }
            }
        }
        out
    }

    fn selects(&self, column: &str) -> Option<ColumnSpec> {
        if self.columns.is_empty() {
            Some(ColumnSpec::default())
        } else {
            self.columns.get(column).cloned()
        }
    }
}

fn split_list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

/// Effective size of an ingested data set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub n: usize,
    pub m: usize,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows_read = {}\nrows_dropped_missing = {}\nn = {}\nm = {}",
            self.rows_read, self.rows_dropped, self.n, self.m
        )
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub report: IngestReport,
}

pub fn load_csv(path: &Path, spec: &SchemaSpec) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    read_csv(file, spec)
}

/// Reads categorical CSV (header row, comma separated, quoted fields and `#`
/// comment lines allowed). Rows with a missing value in any selected column
/// are dropped and counted in the report.
pub fn read_csv<R: Read>(input: R, spec: &SchemaSpec) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let selected: Vec<(usize, String, ColumnSpec)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| spec.selects(h).map(|c| (i, h.to_string(), c)))
        .collect();
    for name in spec.columns.keys() {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Schema(format!("column {name:?} not found in header")));
        }
    }
    if selected.is_empty() {
        return Err(Error::Schema("no columns selected".into()));
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); selected.len()];
    let mut rows_read = 0usize;
    let mut rows_dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        rows_read += 1;
        let missing = selected.iter().any(|(i, _, _)| {
            let v = record.get(*i).unwrap_or("");
            v.is_empty() || spec.missing.iter().any(|m| m == v)
        });
        if missing {
            rows_dropped += 1;
            continue;
        }
        for (slot, (i, _, _)) in raw.iter_mut().zip(&selected) {
            slot.push(record[*i].to_string());
        }
    }

    let mut schema = Vec::with_capacity(selected.len());
    let mut columns = Vec::with_capacity(selected.len());
    for ((_, name, col), values) in selected.iter().zip(raw) {
        let (attr, indices) = build_column(name, col, &values)?;
        schema.push(attr);
        columns.push(indices);
    }
    let dataset = Dataset::from_columns(schema, columns)?;
    let report = IngestReport { rows_read, rows_dropped, n: dataset.n(), m: dataset.m() };
    Ok(Ingested { dataset, report })
}

fn build_column(name: &str, spec: &ColumnSpec, values: &[String]) -> Result<(AttributeSchema, Vec<u32>)> {
    if let Some(bins) = &spec.bins {
        let numeric = values
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    context: format!("dataset: column {name:?}"),
                    message: format!("value {v:?} is not numeric"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let indices = discretize(&numeric, bins)?;
        let categories = bins.iter().map(Interval::label).collect();
        let attr = AttributeSchema::new(name, categories, spec.kind.unwrap_or(AttributeKind::Ordinal))?;
        return Ok((attr, indices));
    }
    let kind = spec.kind.unwrap_or(AttributeKind::Nominal);
    let categories = match &spec.categories {
        Some(fixed) => fixed.clone(),
        None => {
            let refs: Vec<&str> = values.iter().map(String::as_str).collect();
            derive_categories(name, kind, &refs)?
        }
    };
    let attr = AttributeSchema::new(name, categories, kind)?;
    let lookup: HashMap<&str, u32> =
        attr.categories().iter().enumerate().map(|(i, c)| (c.as_str(), i as u32)).collect();
    let indices = values
        .iter()
        .map(|v| {
            lookup.get(v.as_str()).copied().ok_or_else(|| Error::Parse {
                context: format!("dataset: column {name:?}"),
                message: format!("value {v:?} is not a declared category"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((attr, indices))
}

fn derive_categories(name: &str, kind: AttributeKind, values: &[&str]) -> Result<Vec<String>> {
    let distinct: BTreeSet<&str> = values.iter().copied().collect();
    match kind {
        AttributeKind::Nominal => Ok(distinct.into_iter().map(str::to_string).collect()),
        AttributeKind::Ordinal => {
            let mut keyed = distinct
                .into_iter()
                .map(|v| {
                    v.parse::<f64>().map(|x| (x, v)).map_err(|_| {
                        Error::Schema(format!(
                            "ordinal column {name:?} has non-numeric value {v:?}; declare its categories explicitly"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            Ok(keyed.into_iter().map(|(_, v)| v.to_string()).collect())
        }
    }
}
