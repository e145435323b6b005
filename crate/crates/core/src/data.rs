//! Tabular dataset model, CSV ingestion and the preprocessing chain.
//!
//! A [`Table`] is immutable once built; every operation here returns a new
//! value. Missing numeric cells are stored as `NaN`, missing categorical or
//! auxiliary cells as `None`, and [`clean`] drops every row carrying one.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// The multiclass target.
    Label,
    /// Carried through ingestion (row ids, the binary label) and dropped by [`clean`].
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
    label_classes: Vec<String>,
}

impl Schema {
    pub fn new(columns: Vec<Column>, label_classes: Vec<String>) -> Result<Self> {
        let labels = columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one label column, found {labels}"
            )));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", c.name)));
            }
        }
        let mut seen = HashSet::new();
        for class in &label_classes {
            if !seen.insert(class.as_str()) {
                return Err(Error::Schema(format!("duplicate class '{class}'")));
            }
        }
        if label_classes.is_empty() {
            return Err(Error::Schema("no label classes declared".into()));
        }
        Ok(Self {
            columns,
            label_classes,
        })
    }

    /// The UNSW-NB15 10% partition layout: 39 numeric and 3 categorical
    /// features, `attack_cat` as the multiclass label, with `id` and the
    /// binary `label` carried as auxiliary columns.
    pub fn unsw_nb15() -> Self {
        let mut columns = vec![Column {
            name: "id".into(),
            kind: ColumnKind::Auxiliary,
        }];
        for name in UNSW_FEATURES {
            let kind = if UNSW_CATEGORICAL.contains(name) {
                ColumnKind::Categorical
            } else {
                ColumnKind::Numeric
            };
            columns.push(Column {
                name: (*name).into(),
                kind,
            });
        }
        columns.push(Column {
            name: "attack_cat".into(),
            kind: ColumnKind::Label,
        });
        columns.push(Column {
            name: "label".into(),
            kind: ColumnKind::Auxiliary,
        });
        let classes = UNSW_CLASSES.iter().map(|s| (*s).to_string()).collect();
        Self::new(columns, classes).expect("static schema is valid")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn label_classes(&self) -> &[String] {
        &self.label_classes
    }

    pub fn n_classes(&self) -> usize {
        self.label_classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.label_classes.iter().position(|c| c == name)
    }

    pub fn label_name(&self) -> &str {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .map(|c| c.name.as_str())
            .expect("validated at construction")
    }

    fn names_of(&self, kind: ColumnKind) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn numeric_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Numeric)
    }

    pub fn categorical_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Categorical)
    }

    pub fn auxiliary_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Auxiliary)
    }

    /// Feature columns (numeric and categorical) in schema order.
    pub fn feature_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Numeric | ColumnKind::Categorical))
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.kind)
    }
}

pub const UNSW_CLASSES: &[&str] = &[
    "Normal",
    "Generic",
    "Exploits",
    "Fuzzers",
    "DoS",
    "Reconnaissance",
    "Analysis",
    "Backdoor",
    "Shellcode",
    "Worms",
];

pub const UNSW_MINORITY: &[&str] = &["Analysis", "Backdoor", "Shellcode", "Worms"];

const UNSW_CATEGORICAL: &[&str] = &["proto", "service", "state"];

const UNSW_FEATURES: &[&str] = &[
    "dur",
    "proto",
    "service",
    "state",
    "spkts",
    "dpkts",
    "sbytes",
    "dbytes",
    "rate",
    "sttl",
    "dttl",
    "sload",
    "dload",
    "sloss",
    "dloss",
    "sinpkt",
    "dinpkt",
    "sjit",
    "djit",
    "swin",
    "stcpb",
    "dtcpb",
    "dwin",
    "tcprtt",
    "synack",
    "ackdat",
    "smean",
    "dmean",
    "trans_depth",
    "response_body_len",
    "ct_srv_src",
    "ct_state_ttl",
    "ct_dst_ltm",
    "ct_src_dport_ltm",
    "ct_dst_sport_ltm",
    "ct_dst_src_ltm",
    "is_ftp_login",
    "ct_ftp_cmd",
    "ct_flw_http_mthd",
    "ct_src_ltm",
    "ct_srv_dst",
    "is_sm_ips_ports",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    pub vocab: Vec<String>,
    pub codes: Vec<Option<u32>>,
}

impl CategoricalColumn {
    pub fn value(&self, row: usize) -> Option<&str> {
        self.codes[row].map(|c| self.vocab[c as usize].as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    n_numeric: usize,
    /// Row-major; `NaN` marks a missing cell.
    numeric: Vec<f64>,
    categorical: Vec<CategoricalColumn>,
    auxiliary: Vec<Vec<Option<String>>>,
    labels: Vec<usize>,
}

impl Table {
    /// Builds a table from already-typed columns. `numeric` is row-major in
    /// the schema's numeric column order.
    pub fn from_parts(
        schema: Schema,
        numeric: Vec<f64>,
        categorical: Vec<CategoricalColumn>,
        auxiliary: Vec<Vec<Option<String>>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let rows = labels.len();
        let n_numeric = schema.numeric_names().len();
        if numeric.len() != rows * n_numeric {
            return Err(Error::Shape(format!(
                "numeric block has {} cells, expected {}",
                numeric.len(),
                rows * n_numeric
            )));
        }
        if categorical.len() != schema.categorical_names().len()
            || categorical.iter().any(|c| c.codes.len() != rows)
        {
            return Err(Error::Shape("categorical columns do not match schema".into()));
        }
        if auxiliary.len() != schema.auxiliary_names().len()
            || auxiliary.iter().any(|c| c.len() != rows)
        {
            return Err(Error::Shape("auxiliary columns do not match schema".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= schema.n_classes()) {
            return Err(Error::Data(format!("label index {bad} out of range")));
        }
        Ok(Self {
            schema,
            n_numeric,
            numeric,
            categorical,
            auxiliary,
            labels,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.labels.len()
    }

    pub fn n_numeric(&self) -> usize {
        self.n_numeric
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn numeric_row(&self, row: usize) -> &[f64] {
        &self.numeric[row * self.n_numeric..(row + 1) * self.n_numeric]
    }

    pub fn numeric_column(&self, col: usize) -> Vec<f64> {
        (0..self.row_count())
            .map(|r| self.numeric[r * self.n_numeric + col])
            .collect()
    }

    /// Row-major numeric block.
    pub fn numeric_values(&self) -> &[f64] {
        &self.numeric
    }

    pub fn categorical(&self) -> &[CategoricalColumn] {
        &self.categorical
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn row_has_missing(&self, row: usize) -> bool {
        self.numeric_row(row).iter().any(|v| !v.is_finite())
            || self.categorical.iter().any(|c| c.codes[row].is_none())
            || self.auxiliary.iter().any(|c| c[row].is_none())
    }

    /// Number of missing cells across all columns.
    pub fn missing_count(&self) -> usize {
        let numeric = self.numeric.iter().filter(|v| !v.is_finite()).count();
        let cat: usize = self
            .categorical
            .iter()
            .map(|c| c.codes.iter().filter(|v| v.is_none()).count())
            .sum();
        let aux: usize = self
            .auxiliary
            .iter()
            .map(|c| c.iter().filter(|v| v.is_none()).count())
            .sum();
        numeric + cat + aux
    }

    /// New table holding the given rows, in the given order (duplicates allowed).
    pub fn take_rows(&self, rows: &[usize]) -> Table {
        let mut numeric = Vec::with_capacity(rows.len() * self.n_numeric);
        for &r in rows {
            numeric.extend_from_slice(self.numeric_row(r));
        }
        Table {
            schema: self.schema.clone(),
            n_numeric: self.n_numeric,
            numeric,
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalColumn {
                    vocab: c.vocab.clone(),
                    codes: rows.iter().map(|&r| c.codes[r]).collect(),
                })
                .collect(),
            auxiliary: self
                .auxiliary
                .iter()
                .map(|c| rows.iter().map(|&r| c[r].clone()).collect())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Writes the table as CSV in schema column order, labels as class names.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let mut record = Vec::with_capacity(self.schema.columns.len());
        for row in 0..self.row_count() {
            record.clear();
            let (mut n, mut c, mut a) = (0, 0, 0);
            for col in &self.schema.columns {
                match col.kind {
                    ColumnKind::Numeric => {
                        let v = self.numeric[row * self.n_numeric + n];
                        record.push(if v.is_finite() { v.to_string() } else { String::new() });
                        n += 1;
                    }
                    ColumnKind::Categorical => {
                        record.push(self.categorical[c].value(row).unwrap_or("").to_string());
                        c += 1;
                    }
                    ColumnKind::Auxiliary => {
                        record.push(self.auxiliary[a][row].clone().unwrap_or_default());
                        a += 1;
                    }
                    ColumnKind::Label => {
                        record.push(self.schema.label_classes[self.labels[row]].clone());
                    }
                }
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads an RFC-4180 CSV file with a header row matching `schema` (in any order).
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if schema.kind_of(h).is_none() {
            return Err(Error::Schema(format!("unknown column '{h}'")));
        }
        if position.insert(h, i).is_some() {
            return Err(Error::Schema(format!("column '{h}' appears twice")));
        }
    }
    for c in &schema.columns {
        if !position.contains_key(c.name.as_str()) {
            return Err(Error::Schema(format!("missing column '{}'", c.name)));
        }
    }

    let numeric_pos: Vec<usize> = schema.numeric_names().iter().map(|n| position[n]).collect();
    let cat_pos: Vec<usize> = schema
        .categorical_names()
        .iter()
        .map(|n| position[n])
        .collect();
    let aux_pos: Vec<usize> = schema.auxiliary_names().iter().map(|n| position[n]).collect();
    let label_pos = position[schema.label_name()];

    let mut numeric = Vec::new();
    let mut categorical: Vec<(HashMap<String, u32>, CategoricalColumn)> = cat_pos
        .iter()
        .map(|_| {
            (
                HashMap::new(),
                CategoricalColumn {
                    vocab: Vec::new(),
                    codes: Vec::new(),
                },
            )
        })
        .collect();
    let mut auxiliary: Vec<Vec<Option<String>>> = vec![Vec::new(); aux_pos.len()];
    let mut labels = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        for &p in &numeric_pos {
            let v = record[p].trim().parse::<f64>().unwrap_or(f64::NAN);
            numeric.push(if v.is_finite() { v } else { f64::NAN });
        }
        for (&p, (index, col)) in cat_pos.iter().zip(categorical.iter_mut()) {
            let cell = record[p].trim();
            if cell.is_empty() {
                col.codes.push(None);
            } else {
                let code = *index.entry(cell.to_string()).or_insert_with(|| {
                    col.vocab.push(cell.to_string());
                    (col.vocab.len() - 1) as u32
                });
                col.codes.push(Some(code));
            }
        }
        for (&p, col) in aux_pos.iter().zip(auxiliary.iter_mut()) {
            let cell = record[p].trim();
            col.push((!cell.is_empty()).then(|| cell.to_string()));
        }
        let cell = record[label_pos].trim();
        let label = schema.class_index(cell).ok_or_else(|| Error::Row {
            row,
            msg: format!("unrecognised class '{cell}'"),
        })?;
        labels.push(label);
    }

    Table::from_parts(
        schema.clone(),
        numeric,
        categorical.into_iter().map(|(_, c)| c).collect(),
        auxiliary,
        labels,
    )
}

/// Drops every row with a missing cell and removes the auxiliary columns.
pub fn clean(t: &Table) -> Table {
    let keep: Vec<usize> = (0..t.row_count()).filter(|&r| !t.row_has_missing(r)).collect();
    let mut out = t.take_rows(&keep);
    out.schema.columns.retain(|c| c.kind != ColumnKind::Auxiliary);
    out.auxiliary.clear();
    out
}

/// Removes all rows of the named classes and re-indexes the remaining classes
/// to `0..k` preserving their order.
pub fn remove_minority(t: &Table, drop: &[&str]) -> Result<Table> {
    let mut dropped = BTreeSet::new();
    for name in drop {
        let idx = t
            .schema
            .class_index(name)
            .ok_or_else(|| Error::Schema(format!("cannot drop unknown class '{name}'")))?;
        dropped.insert(idx);
    }
    if dropped.is_empty() {
        return Ok(t.clone());
    }
    let mut remap = vec![usize::MAX; t.schema.n_classes()];
    let mut classes = Vec::new();
    for (i, name) in t.schema.label_classes.iter().enumerate() {
        if !dropped.contains(&i) {
            remap[i] = classes.len();
            classes.push(name.clone());
        }
    }
    if classes.is_empty() {
        return Err(Error::Schema("cannot drop every class".into()));
    }
    let keep: Vec<usize> = (0..t.row_count())
        .filter(|&r| !dropped.contains(&t.labels[r]))
        .collect();
    let mut out = t.take_rows(&keep);
    for l in &mut out.labels {
        *l = remap[*l];
    }
    out.schema.label_classes = classes;
    Ok(out)
}

/// Appends `factor - 1` extra copies of every row of `class` after the originals.
pub fn oversample_class(t: &Table, class: &str, factor: usize) -> Result<Table> {
    let idx = t
        .schema
        .class_index(class)
        .ok_or_else(|| Error::Data(format!("class '{class}' not in schema")))?;
    let members: Vec<usize> = (0..t.row_count()).filter(|&r| t.labels[r] == idx).collect();
    if members.is_empty() {
        return Err(Error::Data(format!("no rows of class '{class}' to oversample")));
    }
    if factor == 0 {
        return Err(Error::Config("oversampling factor must be at least 1".into()));
    }
    let mut rows: Vec<usize> = (0..t.row_count()).collect();
    for _ in 1..factor {
        rows.extend_from_slice(&members);
    }
    Ok(t.take_rows(&rows))
}

/// Duplicates every `Normal` row once.
pub fn oversample_normal(t: &Table) -> Result<Table> {
    oversample_class(t, "Normal", 2)
}

/// Collapses rows equal in every feature column and the label onto their
/// first occurrence.
pub fn deduplicate(t: &Table) -> Table {
    let mut seen = HashSet::with_capacity(t.row_count());
    let mut keep = Vec::new();
    for r in 0..t.row_count() {
        let mut key: Vec<u64> = t
            .numeric_row(r)
            .iter()
            // -0.0 and 0.0 compare equal
            .map(|&v| if v == 0.0 { 0 } else { v.to_bits() })
            .collect();
        key.extend(
            t.categorical
                .iter()
                .map(|c| c.codes[r].map_or(u64::MAX, u64::from)),
        );
        key.push(t.labels[r] as u64);
        if seen.insert(key) {
            keep.push(r);
        }
    }
    t.take_rows(&keep)
}

/// Stratified holdout split of `t` into `(validation, test)`.
///
/// The validation set gets `floor(n * ratio)` rows overall. Each class gets
/// the floor of its quota, and the rows left over go to the classes with the
/// largest fractional quota (ties: larger class first, then lower class
/// index). Which rows of a class go where is decided by a seeded shuffle;
/// both outputs keep the input row order.
pub fn split_holdout(t: &Table, ratio: f64, seed: u64) -> Result<(Table, Table)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let counts = t.class_counts();
    let quotas = apportion(&counts, ratio);

    let mut rng = seeded(seed);
    let mut in_validation = vec![false; t.row_count()];
    for (class, &quota) in quotas.iter().enumerate() {
        let mut members: Vec<usize> = (0..t.row_count()).filter(|&r| t.labels[r] == class).collect();
        members.shuffle(&mut rng);
        for &r in &members[..quota] {
            in_validation[r] = true;
        }
    }
    let val: Vec<usize> = (0..t.row_count()).filter(|&r| in_validation[r]).collect();
    let test: Vec<usize> = (0..t.row_count()).filter(|&r| !in_validation[r]).collect();
    Ok((t.take_rows(&val), t.take_rows(&test)))
}

/// Largest-remainder allocation of `floor(total * ratio)` slots across classes.
pub fn apportion(counts: &[usize], ratio: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * ratio).floor() as usize;
    let mut quotas: Vec<usize> = counts
        .iter()
        .map(|&c| (c as f64 * ratio).floor() as usize)
        .collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let frac = |i: usize| counts[i] as f64 * ratio - quotas[i] as f64;
    order.sort_by(|&a, &b| {
        frac(b)
            .partial_cmp(&frac(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        if quotas[i] < counts[i] {
            quotas[i] += 1;
        }
    }
    quotas
}

/// One original feature and the encoded columns it expands to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: ColumnKind,
    pub columns: Vec<usize>,
}

/// Dense, fully numeric view of a table ready for the MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub feature_names: Vec<String>,
    pub values: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
}

impl EncodedMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn group(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Original feature names in schema order.
    pub fn original_features(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    /// Sorted encoded column indices covering the named original features.
    pub fn columns_for(&self, features: &[String]) -> Result<Vec<usize>> {
        let mut cols = Vec::new();
        for f in features {
            let g = self
                .group(f)
                .ok_or_else(|| Error::Data(format!("unknown feature '{f}'")))?;
            cols.extend_from_slice(&g.columns);
        }
        cols.sort_unstable();
        cols.dedup();
        Ok(cols)
    }

    /// Restriction to the named original features. Column order follows the
    /// encoded order, so the order of `features` does not matter.
    pub fn select_features(&self, features: &[String]) -> Result<EncodedMatrix> {
        let cols = self.columns_for(features)?;
        let values = self.values.select(ndarray::Axis(1), &cols);
        let position: HashMap<usize, usize> =
            cols.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let groups = self
            .groups
            .iter()
            .filter(|g| features.contains(&g.name))
            .map(|g| FeatureGroup {
                name: g.name.clone(),
                kind: g.kind,
                columns: g.columns.iter().map(|c| position[c]).collect(),
            })
            .collect();
        Ok(EncodedMatrix {
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            values,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            groups,
        })
    }

    /// Writes `feature_names..., label` rows with labels as class names.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
        for (row, &label) in self.values.outer_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.class_names[label].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); groups and classes come
    /// from the encoding metadata saved next to the matrix.
    pub fn read_csv<R: Read>(
        reader: R,
        class_names: &[String],
        groups: &[FeatureGroup],
    ) -> Result<EncodedMatrix> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let width = headers.len().saturating_sub(1);
        if headers.get(width) != Some("label") {
            return Err(Error::Schema("encoded matrix must end with a 'label' column".into()));
        }
        let feature_names: Vec<String> = headers.iter().take(width).map(String::from).collect();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for cell in rec.iter().take(width) {
                values.push(cell.parse::<f64>().map_err(|_| Error::Row {
                    row: i + 1,
                    msg: format!("bad value '{cell}'"),
                })?);
            }
            let cls = &rec[width];
            labels.push(
                class_names
                    .iter()
                    .position(|c| c == cls)
                    .ok_or_else(|| Error::Row {
                        row: i + 1,
                        msg: format!("unrecognised class '{cls}'"),
                    })?,
            );
        }
        let values = Array2::from_shape_vec((labels.len(), width), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(EncodedMatrix {
            feature_names,
            values,
            labels,
            class_names: class_names.to_vec(),
            groups: groups.to_vec(),
        })
    }
}

/// Expands categorical columns into one binary column per category seen in
/// `vocabulary_source` (sorted by category name); numeric columns pass
/// through. Categories absent from the source encode as an all-zero group.
pub fn one_hot(t: &Table, vocabulary_source: &Table) -> Result<EncodedMatrix> {
    if t.schema.feature_names() != vocabulary_source.schema.feature_names() {
        return Err(Error::Schema("tables have different feature columns".into()));
    }
    let vocabs: Vec<Vec<String>> = vocabulary_source
        .categorical
        .iter()
        .map(|c| {
            let present: BTreeSet<&str> = c
                .codes
                .iter()
                .flatten()
                .map(|&code| c.vocab[code as usize].as_str())
                .collect();
            present.into_iter().map(String::from).collect()
        })
        .collect();

    let mut feature_names = Vec::new();
    let mut groups = Vec::new();
    let (mut n, mut c) = (0usize, 0usize);
    // (source kind, index within kind, target column or vocab offset)
    let mut plan: Vec<(ColumnKind, usize, usize)> = Vec::new();
    for col in &t.schema.columns {
        match col.kind {
            ColumnKind::Numeric => {
                groups.push(FeatureGroup {
                    name: col.name.clone(),
                    kind: ColumnKind::Numeric,
                    columns: vec![feature_names.len()],
                });
                plan.push((ColumnKind::Numeric, n, feature_names.len()));
                feature_names.push(col.name.clone());
                n += 1;
            }
            ColumnKind::Categorical => {
                let start = feature_names.len();
                for v in &vocabs[c] {
                    feature_names.push(format!("{}={}", col.name, v));
                }
                groups.push(FeatureGroup {
                    name: col.name.clone(),
                    kind: ColumnKind::Categorical,
                    columns: (start..feature_names.len()).collect(),
                });
                plan.push((ColumnKind::Categorical, c, start));
                c += 1;
            }
            _ => {}
        }
    }

    let lookups: Vec<HashMap<&str, usize>> = vocabs
        .iter()
        .map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
        .collect();
    let width = feature_names.len();
    let mut values = Array2::<f64>::zeros((t.row_count(), width));
    for r in 0..t.row_count() {
        let numeric = t.numeric_row(r);
        for &(kind, idx, target) in &plan {
            match kind {
                ColumnKind::Numeric => values[[r, target]] = numeric[idx],
                _ => {
                    if let Some(pos) = t.categorical[idx]
                        .value(r)
                        .and_then(|v| lookups[idx].get(v))
                    {
                        values[[r, target + pos]] = 1.0;
                    }
                }
            }
        }
    }
    Ok(EncodedMatrix {
        feature_names,
        values,
        labels: t.labels.clone(),
        class_names: t.schema.label_classes.clone(),
        groups,
    })
}

/// Per-column min-max scaling fitted on one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(m: &EncodedMatrix) -> Self {
        let mut mins = vec![f64::INFINITY; m.width()];
        let mut maxs = vec![f64::NEG_INFINITY; m.width()];
        for row in m.values.outer_iter() {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        if m.rows() == 0 {
            mins.fill(0.0);
            maxs.fill(0.0);
        }
        Self { mins, maxs }
    }

    /// Scales into `[0, 1]`, clipping values outside the fitted range.
    /// Constant columns map to 0.
    pub fn transform(&self, m: &EncodedMatrix) -> Result<EncodedMatrix> {
        if m.width() != self.mins.len() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, scaler fitted on {}",
                m.width(),
                self.mins.len()
            )));
        }
        let mut out = m.clone();
        for mut row in out.values.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.maxs[j] - self.mins[j];
                *v = if span > 0.0 {
                    ((*v - self.mins[j]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Fits min-max on `train` and applies it to `train` and every matrix in `others`.
pub fn minmax_fit_transform(
    train: &EncodedMatrix,
    others: &[EncodedMatrix],
) -> Result<(EncodedMatrix, Vec<EncodedMatrix>, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(train);
    let t = scaler.transform(train)?;
    let o = others
        .iter()
        .map(|m| scaler.transform(m))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, o, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(
            vec![
                Column { name: "a".into(), kind: ColumnKind::Numeric },
                Column { name: "proto".into(), kind: ColumnKind::Categorical },
                Column { name: "b".into(), kind: ColumnKind::Numeric },
                Column { name: "cls".into(), kind: ColumnKind::Label },
                Column { name: "flag".into(), kind: ColumnKind::Auxiliary },
            ],
            vec!["Normal".into(), "DoS".into(), "Generic".into()],
        )
        .unwrap()
    }

    fn parse(text: &str) -> Table {
        read_csv(text.as_bytes(), &schema()).unwrap()
    }

    #[test]
    fn header_order_is_free() {
        let t = parse("cls,b,flag,proto,a\nDoS,2,1,tcp,1\nNormal,4,0,udp,3\n");
        assert_eq!(t.row_count(), 2);
        assert_eq!(t.numeric_row(0), &[1.0, 2.0]);
        assert_eq!(t.labels(), &[1, 0]);
    }

    #[test]
    fn unknown_column_is_named() {
        let err = read_csv("a,proto,b,cls,flag,extra\n".as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("'extra'"), "{err}");
    }

    #[test]
    fn bad_label_reports_row() {
        let err =
            read_csv("a,proto,b,cls,flag\n1,tcp,2,DoS,0\n1,tcp,2,Nope,0\n".as_bytes(), &schema())
                .unwrap_err();
        match err {
            Error::Row { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_file_with_header() {
        let t = parse("a,proto,b,cls,flag\n");
        assert_eq!(t.row_count(), 0);
    }

    #[test]
    fn blank_numeric_cell_is_one_missing_marker() {
        let t = parse("a,proto,b,cls,flag\n1,tcp,2,DoS,0\n,udp,2,DoS,0\n3,tcp,4,Normal,1\n");
        assert_eq!(t.missing_count(), 1);
    }

    #[test]
    fn clean_drops_marked_rows_and_auxiliary() {
        let t = parse(
            "a,proto,b,cls,flag\n1,tcp,2,DoS,0\n,udp,2,DoS,0\n3,tcp,4,Normal,1\n5,,6,Normal,1\n7,tcp,x,Generic,0\n",
        );
        let c = clean(&t);
        assert_eq!(c.row_count(), 2);
        assert_eq!(c.schema().auxiliary_names().len(), 0);
        assert_eq!(c.missing_count(), 0);
        // cleaning is idempotent
        assert_eq!(clean(&c), c);
    }

    #[test]
    fn remove_minority_reindexes() {
        let mut text = String::from("a,proto,b,cls,flag\n");
        let classes = ["Normal", "DoS", "Generic", "DoS", "Normal", "Generic", "DoS", "Normal", "Normal", "Generic"];
        for (i, c) in classes.iter().enumerate() {
            text.push_str(&format!("{i},tcp,0,{c},0\n"));
        }
        let t = clean(&parse(&text));
        let r = remove_minority(&t, &["DoS"]).unwrap();
        assert_eq!(r.row_count(), 7);
        assert_eq!(r.schema().label_classes(), &["Normal".to_string(), "Generic".to_string()]);
        assert!(r.labels().iter().all(|&l| l < 2));
        assert_eq!(r.class_counts(), vec![4, 3]);
        assert_eq!(remove_minority(&t, &[]).unwrap(), t);
        assert!(remove_minority(&t, &["Worms"]).is_err());
    }

    #[test]
    fn oversample_duplicates_normal_after_originals() {
        let t = clean(&parse("a,proto,b,cls,flag\n1,tcp,0,DoS,0\n2,tcp,0,Normal,0\n3,tcp,0,DoS,0\n4,tcp,0,Generic,0\n"));
        let o = oversample_normal(&t).unwrap();
        assert_eq!(o.row_count(), 5);
        assert_eq!(o.class_counts()[0], 2);
        assert_eq!(o.numeric_row(4), &[2.0, 0.0]);
        let no_normal = remove_minority(&t, &["Normal"]).unwrap();
        assert!(oversample_normal(&no_normal).is_err());
    }

    #[test]
    fn unseen_category_encodes_to_zero_group() {
        let train = clean(&parse("a,proto,b,cls,flag\n1,tcp,0,DoS,0\n2,udp,0,Normal,0\n"));
        let val = clean(&parse("a,proto,b,cls,flag\n1,icmp,0,DoS,0\n2,udp,0,Normal,0\n"));
        let enc = one_hot(&val, &train).unwrap();
        assert_eq!(enc.feature_names, vec!["a", "proto=tcp", "proto=udp", "b"]);
        let g = enc.group("proto").unwrap();
        let sum0: f64 = g.columns.iter().map(|&c| enc.values[[0, c]]).sum();
        let sum1: f64 = g.columns.iter().map(|&c| enc.values[[1, c]]).sum();
        assert_eq!((sum0, sum1), (0.0, 1.0));
    }

    fn single_column(values: &[f64]) -> EncodedMatrix {
        EncodedMatrix {
            feature_names: vec!["x".into()],
            values: Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(),
            labels: vec![0; values.len()],
            class_names: vec!["c".into()],
            groups: vec![FeatureGroup { name: "x".into(), kind: ColumnKind::Numeric, columns: vec![0] }],
        }
    }

    #[test]
    fn minmax_examples() {
        let (t, _, _) = minmax_fit_transform(&single_column(&[2.0, 4.0, 6.0]), &[]).unwrap();
        assert_eq!(t.values.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        let (t, _, _) = minmax_fit_transform(&single_column(&[7.0, 7.0, 7.0]), &[]).unwrap();
        assert_eq!(t.values.column(0).to_vec(), vec![0.0, 0.0, 0.0]);
        let (_, o, _) =
            minmax_fit_transform(&single_column(&[2.0, 6.0]), &[single_column(&[10.0, -3.0])]).unwrap();
        assert_eq!(o[0].values.column(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn apportion_reproduces_holdout_counts() {
        // Normal, Generic, Exploits, Fuzzers, DoS, Reconnaissance test-set counts
        let counts = [37000, 18871, 11132, 6062, 4089, 3496];
        let val = apportion(&counts, 0.5);
        assert_eq!(val, vec![18500, 9436, 5566, 3031, 2044, 1748]);
        let test: Vec<usize> = counts.iter().zip(&val).map(|(c, v)| c - v).collect();
        assert_eq!(test, vec![18500, 9435, 5566, 3031, 2045, 1748]);
        assert_eq!(val.iter().sum::<usize>(), 40325);
    }

    #[test]
    fn split_fixture_and_determinism() {
        let mut text = String::from("a,proto,b,cls,flag\n");
        for i in 0..10 {
            let c = if i < 6 { "Normal" } else { "DoS" };
            text.push_str(&format!("{i},tcp,0,{c},0\n"));
        }
        let t = clean(&parse(&text));
        let (v, te) = split_holdout(&t, 0.5, 7).unwrap();
        assert_eq!(v.class_counts(), vec![3, 2, 0]);
        assert_eq!(te.class_counts(), vec![3, 2, 0]);
        let (v2, te2) = split_holdout(&t, 0.5, 7).unwrap();
        assert_eq!((v, te), (v2, te2));
        assert!(split_holdout(&t, 1.0, 7).is_err());
    }

    #[test]
    fn dedup_fixture() {
        let t = clean(&parse("a,proto,b,cls,flag\n1,tcp,2,DoS,0\n3,tcp,4,DoS,0\n1,tcp,2,DoS,9\n5,udp,6,Normal,0\n"));
        let d = deduplicate(&t);
        assert_eq!(d.row_count(), 3);
        assert_eq!(d.numeric_row(0), &[1.0, 2.0]);
        assert_eq!(d.numeric_row(1), &[3.0, 4.0]);

        let t = clean(&parse("a,proto,b,cls,flag\n1,tcp,2,DoS,0\n1,tcp,2,Normal,0\n"));
        assert_eq!(deduplicate(&t).row_count(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let t = parse("a,proto,b,cls,flag\n1.5,tcp,2,DoS,0\n,\"u,dp\",2,Normal,1\n");
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(back.row_count(), 2);
        assert_eq!(back.missing_count(), 1);
        assert_eq!(back.categorical()[0].value(1), Some("u,dp"));
    }

    #[test]
    fn unsw_schema_shape() {
        let s = Schema::unsw_nb15();
        assert_eq!(s.numeric_names().len(), 39);
        assert_eq!(s.categorical_names(), vec!["proto", "service", "state"]);
        assert_eq!(s.label_name(), "attack_cat");
        assert_eq!(s.feature_names().len(), 42);
    }
}
