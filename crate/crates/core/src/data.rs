//! Dataset ingestion, the feature schema, scaling into the explanation space,
//! and group assignment.
//!
//! Raw tables keep values in the units of the CSV. [`preprocess`] expands
//! categorical features one-hot and min-max scales every resulting column
//! using statistics over source and target together, so both datasets share
//! one metric space. Group identifiers are 1-based and shared between roles.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Real,
    Integer,
    Boolean,
    Categorical,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Real => "real",
            FeatureKind::Integer => "integer",
            FeatureKind::Boolean => "boolean",
            FeatureKind::Categorical => "categorical",
        }
    }

    /// Kinds whose values are whole numbers in raw units.
    pub fn is_discrete(self) -> bool {
        !matches!(self, FeatureKind::Real)
    }
}

fn default_actionable() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default = "default_actionable")]
    pub actionable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Feature {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Self {
            name: name.into(),
            kind,
            actionable: true,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            actionable: true,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn unactionable(mut self) -> Self {
        self.actionable = false;
        self
    }

    /// Number of explanation-space columns this feature expands into.
    pub fn width(&self) -> usize {
        match self.kind {
            FeatureKind::Categorical => self.categories.len(),
            _ => 1,
        }
    }
}

#[derive(Deserialize)]
struct SchemaFile {
    #[serde(rename = "feature")]
    features: Vec<Feature>,
}

/// Ordered, validated feature descriptions. Feature order is the column order
/// of every matrix derived from data under this schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile")]
pub struct FeatureSchema {
    #[serde(rename = "feature")]
    features: Vec<Feature>,
}

impl TryFrom<SchemaFile> for FeatureSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        FeatureSchema::new(file.features)
    }
}

/// One column of the explanation space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub feature: usize,
    pub category: Option<usize>,
    pub name: String,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &features {
            if f.name.trim().is_empty() {
                return Err(Error::Schema("feature names must be non-empty".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
            match f.kind {
                FeatureKind::Categorical => {
                    if f.categories.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical feature `{}` needs at least 2 categories",
                            f.name
                        )));
                    }
                    let distinct: BTreeSet<_> = f.categories.iter().collect();
                    if distinct.len() != f.categories.len() {
                        return Err(Error::Schema(format!(
                            "categorical feature `{}` repeats a category",
                            f.name
                        )));
                    }
                }
                _ if !f.categories.is_empty() => {
                    return Err(Error::Schema(format!(
                        "feature `{}` lists categories but is not categorical",
                        f.name
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { features })
    }

    /// Parse a schema from its TOML form (a `[[feature]]` array of tables).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Explanation-space columns in canonical order.
    pub fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::new();
        for (fi, f) in self.features.iter().enumerate() {
            match f.kind {
                FeatureKind::Categorical => {
                    for (ci, cat) in f.categories.iter().enumerate() {
                        cols.push(Column {
                            feature: fi,
                            category: Some(ci),
                            name: format!("{}={}", f.name, cat),
                        });
                    }
                }
                _ => cols.push(Column {
                    feature: fi,
                    category: None,
                    name: f.name.clone(),
                }),
            }
        }
        cols
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(Feature::width).sum()
    }

    /// Range of explanation-space columns occupied by feature `index`.
    pub fn column_span(&self, index: usize) -> std::ops::Range<usize> {
        let start: usize = self.features[..index].iter().map(Feature::width).sum();
        start..start + self.features[index].width()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

/// Values of one feature in raw units. Categorical cells hold the category index.
#[derive(Clone, Debug, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>),
}

impl RawColumn {
    fn len(&self) -> usize {
        match self {
            RawColumn::Numeric(v) => v.len(),
            RawColumn::Categorical(v) => v.len(),
        }
    }
}

/// A loaded but unscaled table, one column per schema feature.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub schema: FeatureSchema,
    pub role: Role,
    pub columns: Vec<RawColumn>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, RawColumn::len)
    }

    /// Cell rendered back to its CSV text.
    pub fn cell_text(&self, row: usize, feature: usize) -> String {
        let f = &self.schema.features[feature];
        match &self.columns[feature] {
            RawColumn::Categorical(v) => f.categories[v[row]].clone(),
            RawColumn::Numeric(v) => format_number(v[row], f.kind),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io {
            path: "<csv writer>".into(),
            message: e.to_string(),
        };
        w.write_record(self.schema.features.iter().map(|f| f.name.as_str()))
            .map_err(io)?;
        for r in 0..self.n_rows() {
            let rec: Vec<String> = (0..self.schema.len()).map(|c| self.cell_text(r, c)).collect();
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            message: e.to_string(),
        })
    }
}

fn format_number(v: f64, kind: FeatureKind) -> String {
    match kind {
        FeatureKind::Integer | FeatureKind::Boolean => format!("{}", v as i64),
        _ => format!("{v}"),
    }
}

fn parse_cell(text: &str, feature: &Feature) -> Option<f64> {
    let t = text.trim();
    match feature.kind {
        FeatureKind::Real => t.parse::<f64>().ok(),
        FeatureKind::Integer => t.parse::<i64>().ok().map(|v| v as f64),
        FeatureKind::Boolean => match t.to_ascii_lowercase().as_str() {
            "0" | "false" => Some(0.0),
            "1" | "true" => Some(1.0),
            _ => None,
        },
        FeatureKind::Categorical => feature.categories.iter().position(|c| c == t).map(|i| i as f64),
    }
}

/// Load a CSV with a header row. Columns are matched to the schema by name;
/// row order is preserved.
pub fn ingest_csv(path: &Path, schema: &FeatureSchema, role: Role) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_csv(file, schema, role).map_err(|e| match e {
        Error::EmptyFile { .. } => Error::EmptyFile {
            path: path.to_path_buf(),
        },
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema, role: Role) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::EmptyFile { path: "<csv>".into() });
    }
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    for name in &names {
        if schema.index_of(name).is_none() {
            return Err(Error::UnexpectedColumn {
                column: name.to_string(),
            });
        }
    }
    let mut position = Vec::with_capacity(schema.len());
    for f in &schema.features {
        match names.iter().position(|n| *n == f.name) {
            Some(p) => position.push(p),
            None => {
                return Err(Error::MissingColumn {
                    column: f.name.clone(),
                })
            }
        }
    }

    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (fi, f) in schema.features.iter().enumerate() {
            let text = record.get(position[fi]).unwrap_or("");
            let value = parse_cell(text, f).ok_or_else(|| Error::Parse {
                row,
                column: f.name.clone(),
                value: text.to_string(),
                kind: f.kind.as_str(),
            })?;
            numeric[fi].push(value);
        }
    }
    if numeric[0].is_empty() {
        return Err(Error::EmptyFile { path: "<csv>".into() });
    }
    let columns = schema
        .features
        .iter()
        .zip(numeric)
        .map(|(f, vals)| match f.kind {
            FeatureKind::Categorical => {
                RawColumn::Categorical(vals.into_iter().map(|v| v as usize).collect())
            }
            _ => RawColumn::Numeric(vals),
        })
        .collect();
    Ok(RawTable {
        schema: schema.clone(),
        role,
        columns,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn scale(&self, raw: f64) -> f64 {
        if self.max > self.min {
            (raw - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn unscale(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }

    /// Convert a displacement in scaled units to raw units.
    pub fn unscale_delta(&self, delta: f64) -> f64 {
        delta * (self.max - self.min)
    }
}

/// Per-column min/max recorded at preprocessing time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub columns: Vec<ColumnScale>,
}

impl Scaling {
    /// Unit scaling: raw values already live in the explanation space.
    pub fn identity(schema: &FeatureSchema) -> Self {
        Self {
            columns: schema
                .columns()
                .into_iter()
                .map(|c| ColumnScale {
                    name: c.name,
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
        }
    }

    pub fn unscale_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let s = &self.columns[j];
            col.mapv_inplace(|v| s.unscale(v));
        }
        out
    }
}

/// A dataset in the explanation space together with its group labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub schema: FeatureSchema,
    pub role: Role,
    pub scaling: Scaling,
    pub rows: Array2<f64>,
    /// 1-based group id per row.
    pub group_of: Vec<usize>,
    /// Size of the group universe shared with the paired dataset.
    pub num_groups: usize,
}

impl LabeledDataset {
    /// Assemble a dataset whose rows are already in the explanation space.
    /// All rows start in group 1.
    pub fn from_scaled(
        schema: FeatureSchema,
        role: Role,
        scaling: Scaling,
        rows: Array2<f64>,
    ) -> Result<Self> {
        if rows.ncols() != schema.width() || scaling.columns.len() != schema.width() {
            return Err(Error::Dimension(format!(
                "schema expands to {} columns, rows have {}, scaling has {}",
                schema.width(),
                rows.ncols(),
                scaling.columns.len()
            )));
        }
        let n = rows.nrows();
        Ok(Self {
            schema,
            role,
            scaling,
            rows,
            group_of: vec![1; n],
            num_groups: 1,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Rows mapped back to raw units (one-hot columns stay 0/1).
    pub fn raw_rows(&self) -> Array2<f64> {
        self.scaling.unscale_rows(&self.rows)
    }

    /// Raw values of a numeric feature, or category indices of a categorical one.
    pub fn raw_feature(&self, feature: usize) -> Vec<f64> {
        let span = self.schema.column_span(feature);
        match self.schema.features[feature].kind {
            FeatureKind::Categorical => self
                .rows
                .rows()
                .into_iter()
                .map(|r| argmax(r.slice(ndarray::s![span.clone()])) as f64)
                .collect(),
            _ => {
                let s = &self.scaling.columns[span.start];
                self.rows.column(span.start).iter().map(|&v| s.unscale(v)).collect()
            }
        }
    }

    /// Same dataset with different explanation-space rows (e.g. mapped or perturbed).
    pub fn with_rows(&self, rows: Array2<f64>) -> Self {
        assert_eq!(rows.dim(), self.rows.dim(), "row shape must be preserved");
        Self {
            rows,
            ..self.clone()
        }
    }

    /// Replace group labels. Ids must lie in `1..=num_groups`.
    pub fn with_groups(&self, group_of: Vec<usize>, num_groups: usize) -> Result<Self> {
        if group_of.len() != self.n_rows() {
            return Err(Error::Dimension(format!(
                "{} group labels for {} rows",
                group_of.len(),
                self.n_rows()
            )));
        }
        if let Some(&bad) = group_of.iter().find(|&&g| g == 0 || g > num_groups) {
            return Err(Error::Grouping(format!("group id {bad} outside 1..={num_groups}")));
        }
        Ok(Self {
            group_of,
            num_groups,
            ..self.clone()
        })
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: self.rows.select(Axis(0), indices),
            group_of: indices.iter().map(|&i| self.group_of[i]).collect(),
            ..self.clone()
        }
    }
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One-hot expand and jointly min-max scale source and target.
pub fn preprocess(source: &RawTable, target: &RawTable) -> Result<(LabeledDataset, LabeledDataset)> {
    if source.schema != target.schema {
        return Err(Error::Schema("source and target schemas differ".into()));
    }
    let schema = &source.schema;
    for table in [source, target] {
        for (fi, col) in table.columns.iter().enumerate() {
            if let RawColumn::Numeric(v) = col {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        row,
                        column: schema.features[fi].name.clone(),
                    });
                }
            }
        }
    }

    let expand = |table: &RawTable| -> Array2<f64> {
        let mut m = Array2::zeros((table.n_rows(), schema.width()));
        let mut c = 0;
        for (f, col) in schema.features.iter().zip(&table.columns) {
            match col {
                RawColumn::Numeric(v) => {
                    for (r, &x) in v.iter().enumerate() {
                        m[[r, c]] = x;
                    }
                }
                RawColumn::Categorical(v) => {
                    for (r, &k) in v.iter().enumerate() {
                        m[[r, c + k]] = 1.0;
                    }
                }
            }
            c += f.width();
        }
        m
    };
    let mut src = expand(source);
    let mut tgt = expand(target);

    let scales: Vec<ColumnScale> = schema
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let values = src.column(j).into_iter().chain(tgt.column(j)).copied();
            let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
            ColumnScale {
                name: col.name,
                min,
                max,
            }
        })
        .collect();
    for m in [&mut src, &mut tgt] {
        for (j, mut col) in m.axis_iter_mut(Axis(1)).enumerate() {
            let s = &scales[j];
            col.mapv_inplace(|v| s.scale(v));
        }
    }
    let scaling = Scaling { columns: scales };
    Ok((
        LabeledDataset::from_scaled(schema.clone(), Role::Source, scaling.clone(), src)?,
        LabeledDataset::from_scaled(schema.clone(), Role::Target, scaling, tgt)?,
    ))
}

/// How rows are partitioned into groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum GroupingRule {
    /// One group per distinct raw value of a feature, ordered by value.
    ByAttribute { feature: String },
    /// Three groups from the quartiles of `numerator^2 / denominator`.
    ByMetafeatureQuartiles {
        numerator: String,
        denominator: String,
    },
    /// k-means over source and target rows together.
    ByClustering { k: usize, seed: u64 },
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Three groups: `<= q1`, `(q1, q3]`, `> q3`, with quartiles taken over `values`.
pub fn quartile_groups(values: &[f64]) -> (f64, f64, Vec<usize>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let groups = values
        .iter()
        .map(|&v| {
            if v <= q1 {
                1
            } else if v <= q3 {
                2
            } else {
                3
            }
        })
        .collect();
    (q1, q3, groups)
}

/// Label every row of both datasets according to `rule`.
pub fn assign_groups(
    source: &LabeledDataset,
    target: &LabeledDataset,
    rule: &GroupingRule,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if source.schema != target.schema || source.dim() != target.dim() {
        return Err(Error::Schema("source and target schemas differ".into()));
    }
    let schema = &source.schema;
    let n_src = source.n_rows();
    let (labels, num_groups) = match rule {
        GroupingRule::ByAttribute { feature } => {
            let fi = schema
                .index_of(feature)
                .ok_or_else(|| Error::Grouping(format!("unknown feature `{feature}`")))?;
            let mut values = source.raw_feature(fi);
            values.extend(target.raw_feature(fi));
            let distinct: Vec<f64> = {
                let mut v = values.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            };
            let labels = values
                .iter()
                .map(|x| distinct.partition_point(|d| d < x) + 1)
                .collect::<Vec<_>>();
            (labels, distinct.len())
        }
        GroupingRule::ByMetafeatureQuartiles {
            numerator,
            denominator,
        } => {
            let mut idx = [0usize; 2];
            for (slot, name) in idx.iter_mut().zip([numerator, denominator]) {
                let fi = schema
                    .index_of(name)
                    .ok_or_else(|| Error::Grouping(format!("unknown feature `{name}`")))?;
                if schema.features[fi].kind != FeatureKind::Real {
                    return Err(Error::Grouping(format!("meta-feature input `{name}` must be real")));
                }
                *slot = fi;
            }
            let mut num = source.raw_feature(idx[0]);
            num.extend(target.raw_feature(idx[0]));
            let mut den = source.raw_feature(idx[1]);
            den.extend(target.raw_feature(idx[1]));
            let mut meta = Vec::with_capacity(num.len());
            for (row, (a, b)) in num.iter().zip(&den).enumerate() {
                if *b == 0.0 {
                    let row = if row < n_src { row } else { row - n_src };
                    return Err(Error::ZeroDenominator {
                        row,
                        column: denominator.clone(),
                    });
                }
                meta.push(a * a / b);
            }
            let (_, _, labels) = quartile_groups(&meta);
            let present: BTreeSet<_> = labels.iter().copied().collect();
            if present.len() != 3 {
                return Err(Error::Grouping(
                    "meta-feature quartiles do not separate three non-empty groups".into(),
                ));
            }
            (labels, 3)
        }
        GroupingRule::ByClustering { k, seed } => {
            let joint = ndarray::concatenate(Axis(0), &[source.rows.view(), target.rows.view()])
                .expect("same width");
            if *k == 0 || *k > joint.nrows() {
                return Err(Error::Grouping(format!(
                    "cannot form {k} clusters from {} rows",
                    joint.nrows()
                )));
            }
            let fit = kmeans::fit(joint.view(), *k, *seed, kmeans::MAX_ITERS);
            (fit.assignment.iter().map(|c| c + 1).collect(), *k)
        }
    };
    let (src_labels, tgt_labels) = labels.split_at(n_src);
    Ok((
        source.with_groups(src_labels.to_vec(), num_groups)?,
        target.with_groups(tgt_labels.to_vec(), num_groups)?,
    ))
}

/// Groups from explicit string labels, numbered by sorted label order.
pub fn groups_from_labels(
    source: &LabeledDataset,
    target: &LabeledDataset,
    source_labels: &[String],
    target_labels: &[String],
) -> Result<(LabeledDataset, LabeledDataset, Vec<String>)> {
    let names: Vec<String> = source_labels
        .iter()
        .chain(target_labels)
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id = |l: &String| names.binary_search(l).expect("label collected") + 1;
    let g = names.len();
    Ok((
        source.with_groups(source_labels.iter().map(id).collect(), g)?,
        target.with_groups(target_labels.iter().map(id).collect(), g)?,
        names,
    ))
}

/// Row indices per group, in group-id order. Groups with no rows are omitted.
pub fn group_slices(dataset: &LabeledDataset) -> Vec<(usize, Vec<usize>)> {
    let mut slices: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in dataset.group_of.iter().enumerate() {
        slices.entry(g).or_default().push(i);
    }
    slices.into_iter().collect()
}

/// Matched group slices `(g, source rows, target rows)`. Errors when a group
/// is non-empty on one side and empty on the other.
pub fn paired_group_slices(
    source: &LabeledDataset,
    target: &LabeledDataset,
) -> Result<Vec<(usize, Vec<usize>, Vec<usize>)>> {
    let src: BTreeMap<_, _> = group_slices(source).into_iter().collect();
    let tgt: BTreeMap<_, _> = group_slices(target).into_iter().collect();
    let missing: Vec<usize> = src
        .keys()
        .filter(|g| !tgt.contains_key(g))
        .chain(tgt.keys().filter(|g| !src.contains_key(g)))
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::EmptyGroups { groups: missing });
    }
    Ok(src
        .into_iter()
        .map(|(g, rows)| {
            let t = tgt[&g].clone();
            (g, rows, t)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn schema_age_sex() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature::new("age", FeatureKind::Integer),
            Feature::new("sex", FeatureKind::Boolean).unactionable(),
        ])
        .unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "age,sex\n30,1\n41,0\n25,1\n";
        let t = read_csv(csv.as_bytes(), &schema_age_sex(), Role::Source).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.columns.len(), 2);
        assert_eq!(t.columns[0], RawColumn::Numeric(vec![30.0, 41.0, 25.0]));
    }

    #[test]
    fn column_order_in_file_is_free() {
        let csv = "sex,age\n1,30\n";
        let t = read_csv(csv.as_bytes(), &schema_age_sex(), Role::Source).unwrap();
        assert_eq!(t.columns[0], RawColumn::Numeric(vec![30.0]));
    }

    #[test]
    fn unknown_column_is_named() {
        let csv = "age,sex,height\n30,1,180\n";
        let err = read_csv(csv.as_bytes(), &schema_age_sex(), Role::Source).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        let csv = "age\n30\n";
        let err = read_csv(csv.as_bytes(), &schema_age_sex(), Role::Source).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column } if column == "sex"));
    }

    #[test]
    fn parse_errors_report_position() {
        let csv = "age,sex\n30,1\n4x1,0\n";
        let err = read_csv(csv.as_bytes(), &schema_age_sex(), Role::Source).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let err = read_csv("".as_bytes(), &schema_age_sex(), Role::Source).unwrap_err();
        assert!(matches!(err, Error::EmptyFile { .. }));
        let err = read_csv("age,sex\n".as_bytes(), &schema_age_sex(), Role::Source).unwrap_err();
        assert!(matches!(err, Error::EmptyFile { .. }));
    }

    #[test]
    fn schema_validation() {
        assert!(FeatureSchema::new(vec![Feature::new("", FeatureKind::Real)]).is_err());
        assert!(FeatureSchema::new(vec![
            Feature::new("a", FeatureKind::Real),
            Feature::new("a", FeatureKind::Integer)
        ])
        .is_err());
        assert!(FeatureSchema::new(vec![Feature::categorical("c", ["only"])]).is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let text = r#"
            [[feature]]
            name = "age"
            kind = "integer"

            [[feature]]
            name = "sex"
            kind = "boolean"
            actionable = false

            [[feature]]
            name = "workclass"
            kind = "categorical"
            categories = ["private", "public"]
        "#;
        let s = FeatureSchema::from_toml_str(text).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.features()[0].actionable);
        assert!(!s.features()[1].actionable);
        assert_eq!(s.width(), 4);
        assert_eq!(FeatureSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
        assert!(FeatureSchema::from_toml_str("[[feature]]\nname = \"x\"\nkind = \"categorical\"\n").is_err());
    }

    #[test]
    fn joint_min_max_scaling() {
        let schema = FeatureSchema::new(vec![Feature::new("x", FeatureKind::Real)]).unwrap();
        let s = read_csv("x\n10\n20\n30\n".as_bytes(), &schema, Role::Source).unwrap();
        let t = read_csv("x\n40\n".as_bytes(), &schema, Role::Target).unwrap();
        let (ps, pt) = preprocess(&s, &t).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in ps.rows.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(pt.rows[[0, 0]], 1.0);
        assert_eq!(ps.scaling.columns[0].min, 10.0);
        assert_eq!(ps.scaling.columns[0].max, 40.0);
    }

    #[test]
    fn booleans_unchanged_and_constants_zero() {
        let schema = FeatureSchema::new(vec![
            Feature::new("b", FeatureKind::Boolean),
            Feature::new("c", FeatureKind::Real),
        ])
        .unwrap();
        let s = read_csv("b,c\n0,5\n1,5\n".as_bytes(), &schema, Role::Source).unwrap();
        let t = read_csv("b,c\n1,5\n".as_bytes(), &schema, Role::Target).unwrap();
        let (ps, pt) = preprocess(&s, &t).unwrap();
        assert_eq!(ps.rows, array![[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(pt.rows, array![[1.0, 0.0]]);
        assert_eq!(ps.raw_rows(), array![[0.0, 5.0], [1.0, 5.0]]);
    }

    #[test]
    fn categorical_one_hot() {
        let schema = FeatureSchema::new(vec![Feature::categorical("c", ["a", "b", "c"])]).unwrap();
        let s = read_csv("c\nb\na\n".as_bytes(), &schema, Role::Source).unwrap();
        let t = read_csv("c\nc\n".as_bytes(), &schema, Role::Target).unwrap();
        let (ps, _) = preprocess(&s, &t).unwrap();
        assert_eq!(ps.rows.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(ps.raw_feature(0), vec![1.0, 0.0]);
    }

    #[test]
    fn non_finite_rejected() {
        let schema = FeatureSchema::new(vec![Feature::new("x", FeatureKind::Real)]).unwrap();
        let s = read_csv("x\n1\nNaN\n".as_bytes(), &schema, Role::Source).unwrap();
        let t = read_csv("x\n2\n".as_bytes(), &schema, Role::Target).unwrap();
        assert!(matches!(preprocess(&s, &t), Err(Error::NonFinite { row: 1, .. })));
    }

    fn real_pair(src: &[[f64; 2]], tgt: &[[f64; 2]]) -> (LabeledDataset, LabeledDataset) {
        let schema = FeatureSchema::new(vec![
            Feature::new("r", FeatureKind::Real),
            Feature::new("a", FeatureKind::Real),
        ])
        .unwrap();
        let to_csv = |rows: &[[f64; 2]]| {
            let mut s = String::from("r,a\n");
            for r in rows {
                s.push_str(&format!("{},{}\n", r[0], r[1]));
            }
            s
        };
        let s = read_csv(to_csv(src).as_bytes(), &schema, Role::Source).unwrap();
        let t = read_csv(to_csv(tgt).as_bytes(), &schema, Role::Target).unwrap();
        preprocess(&s, &t).unwrap()
    }

    #[test]
    fn group_by_attribute() {
        let schema = schema_age_sex();
        let s = read_csv("age,sex\n30,1\n41,0\n".as_bytes(), &schema, Role::Source).unwrap();
        let t = read_csv("age,sex\n50,0\n".as_bytes(), &schema, Role::Target).unwrap();
        let (ps, pt) = preprocess(&s, &t).unwrap();
        let rule = GroupingRule::ByAttribute {
            feature: "sex".into(),
        };
        let (gs, gt) = assign_groups(&ps, &pt, &rule).unwrap();
        assert_eq!(gs.group_of, vec![2, 1]);
        assert_eq!(gt.group_of, vec![1]);
        assert_eq!(gs.num_groups, 2);
    }

    #[test]
    fn quartile_thresholds_by_hand() {
        // numpy-style linear interpolation on 1..=8: Q1 = 2.75, Q3 = 6.25
        let vals: Vec<f64> = (1..=8).map(f64::from).collect();
        let (q1, q3, g) = quartile_groups(&vals);
        assert_eq!((q1, q3), (2.75, 6.25));
        assert_eq!(g, vec![1, 1, 2, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn metafeature_grouping_uses_raw_units() {
        // r^2 / a with a = r^2 / m gives meta-feature m = 1..=8
        let rows: Vec<[f64; 2]> = (1..=8)
            .map(|m| {
                let r = 2.0 + m as f64;
                [r, r * r / m as f64]
            })
            .collect();
        let (ps, pt) = real_pair(&rows[..5], &rows[5..]);
        let rule = GroupingRule::ByMetafeatureQuartiles {
            numerator: "r".into(),
            denominator: "a".into(),
        };
        let (gs, gt) = assign_groups(&ps, &pt, &rule).unwrap();
        assert_eq!(gs.group_of, vec![1, 1, 2, 2, 2]);
        assert_eq!(gt.group_of, vec![2, 3, 3]);
    }

    #[test]
    fn metafeature_zero_denominator() {
        let (ps, pt) = real_pair(&[[1.0, 1.0], [2.0, 0.0]], &[[1.0, 3.0]]);
        let rule = GroupingRule::ByMetafeatureQuartiles {
            numerator: "r".into(),
            denominator: "a".into(),
        };
        assert!(matches!(
            assign_groups(&ps, &pt, &rule),
            Err(Error::ZeroDenominator { row: 1, .. })
        ));
    }

    #[test]
    fn clustering_groups_separate_blobs() {
        let src = [[0.0, 0.0], [0.05, 0.02], [1.0, 1.0], [0.98, 0.97]];
        let tgt = [[0.02, 0.01], [0.99, 1.0]];
        let (ps, pt) = real_pair(&src, &tgt);
        let rule = GroupingRule::ByClustering { k: 2, seed: 7 };
        let (gs, gt) = assign_groups(&ps, &pt, &rule).unwrap();
        assert_eq!(gs.group_of[0], gs.group_of[1]);
        assert_eq!(gs.group_of[2], gs.group_of[3]);
        assert_ne!(gs.group_of[0], gs.group_of[2]);
        assert_eq!(gt.group_of[0], gs.group_of[0]);
        assert_eq!(gt.group_of[1], gs.group_of[2]);
        let again = assign_groups(&ps, &pt, &rule).unwrap();
        assert_eq!(again.0.group_of, gs.group_of);
    }

    #[test]
    fn slices_partition_rows() {
        let (ps, pt) = real_pair(&[[0.0, 1.0]; 4], &[[1.0, 0.0]; 1]);
        let ps = ps.with_groups(vec![1, 2, 1, 2], 2).unwrap();
        assert_eq!(group_slices(&ps), vec![(1, vec![0, 2]), (2, vec![1, 3])]);
        assert_eq!(group_slices(&pt), vec![(1, vec![0])]);
        let err = paired_group_slices(&ps, &pt).unwrap_err();
        assert!(matches!(err, Error::EmptyGroups { ref groups } if groups == &vec![2]));
    }
}
