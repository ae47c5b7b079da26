//! Additive mapping families: per-cluster shifts and per-sample shifts, plus
//! rendering of learned shifts as signed feature edits in raw units.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, LabeledDataset, Scaling};
use crate::error::{Error, Result};
use crate::kmeans;

/// K-means partition of the source rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Array2<f64>,
    /// 0-based cluster per source row.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl ClusterModel {
    pub fn fit(rows: ArrayView2<f64>, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > rows.nrows() {
            return Err(Error::Config(format!(
                "cannot form {k} clusters from {} rows",
                rows.nrows()
            )));
        }
        let fit = kmeans::fit(rows, k, seed, kmeans::MAX_ITERS);
        Ok(Self {
            k,
            centroids: fit.centroids,
            assignment: fit.assignment,
            seed,
        })
    }

    /// Rows belonging to each cluster, in cluster order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

pub fn fit_clusters(source: &LabeledDataset, k: usize, seed: u64) -> Result<ClusterModel> {
    ClusterModel::fit(source.rows.view(), k, seed)
}

/// One shift vector per cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KClusterParams {
    pub deltas: Array2<f64>,
}

impl KClusterParams {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            deltas: Array2::zeros((k, d)),
        }
    }
}

/// One shift vector per source row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtParams {
    pub deltas: Array2<f64>,
}

impl OtParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            deltas: Array2::zeros((n, d)),
        }
    }
}

fn check_finite(deltas: &Array2<f64>) -> Result<()> {
    if deltas.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("shift parameters contain non-finite values".into()));
    }
    Ok(())
}

/// Row `i` becomes `x_i + deltas[assignment[i]]`. No clipping.
pub fn apply_kcluster(rows: &Array2<f64>, model: &ClusterModel, params: &KClusterParams) -> Result<Array2<f64>> {
    if model.assignment.len() != rows.nrows() {
        return Err(Error::Dimension(format!(
            "cluster assignment covers {} rows, got {}",
            model.assignment.len(),
            rows.nrows()
        )));
    }
    if params.deltas.dim() != (model.k, rows.ncols()) {
        return Err(Error::Dimension(format!(
            "expected {}x{} cluster shifts, got {:?}",
            model.k,
            rows.ncols(),
            params.deltas.dim()
        )));
    }
    check_finite(&params.deltas)?;
    let mut out = rows.clone();
    for (mut row, &c) in out.rows_mut().into_iter().zip(&model.assignment) {
        row += &params.deltas.row(c);
    }
    Ok(out)
}

/// Row `i` becomes `x_i + deltas[i]`.
pub fn apply_ot(rows: &Array2<f64>, params: &OtParams) -> Result<Array2<f64>> {
    if params.deltas.dim() != rows.dim() {
        return Err(Error::Dimension(format!(
            "expected {:?} per-row shifts, got {:?}",
            rows.dim(),
            params.deltas.dim()
        )));
    }
    check_finite(&params.deltas)?;
    Ok(rows + &params.deltas)
}

/// One rendered edit, `raw_delta` in the units of the source CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaTerm {
    pub feature: String,
    pub raw_delta: f64,
    /// Value shown to the reader: rounded for discrete kinds.
    pub shown: f64,
    pub discrete: bool,
}

impl DeltaTerm {
    pub fn text(&self) -> String {
        if self.discrete {
            format!("{:+} {}", self.shown as i64, self.feature)
        } else {
            format!("{:+.2} {}", self.shown, self.feature)
        }
    }
}

/// Signed terms joined with commas, or "no change".
pub fn terms_text(terms: &[DeltaTerm]) -> String {
    if terms.is_empty() {
        "no change".to_string()
    } else {
        terms.iter().map(DeltaTerm::text).collect::<Vec<_>>().join(", ")
    }
}

/// Salient terms of one scaled shift vector, largest magnitude first.
///
/// Discrete kinds (integer, boolean, one-hot category) are rounded to the
/// nearest integer and dropped when that is zero; real kinds are dropped
/// below 1% of the feature's raw range.
pub fn delta_terms(delta: ArrayView1<f64>, schema: &FeatureSchema, scaling: &Scaling) -> Vec<DeltaTerm> {
    let mut terms = Vec::new();
    for (j, (col, scale)) in schema.columns().iter().zip(&scaling.columns).enumerate() {
        let kind = schema.features()[col.feature].kind;
        let raw = scale.unscale_delta(delta[j]);
        let discrete = kind.is_discrete();
        let shown = if discrete { raw.round() } else { raw };
        let keep = if discrete {
            shown != 0.0
        } else {
            scale.range() > 0.0 && raw.abs() >= 0.01 * scale.range()
        };
        if keep {
            terms.push(DeltaTerm {
                feature: col.name.clone(),
                raw_delta: raw,
                shown,
                discrete,
            });
        }
    }
    terms.sort_by(|a, b| b.shown.abs().total_cmp(&a.shown.abs()));
    terms
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedShift {
    /// "cluster 3", "group 1", ...
    pub label: String,
    pub size: usize,
    pub terms: Vec<DeltaTerm>,
    /// Columns where some mapped member leaves the observed raw range.
    pub out_of_range: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rendering {
    pub entries: Vec<RenderedShift>,
}

impl Rendering {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for c in &self.entries {
            out.push_str(&format!("{} ({} rows): {}\n", c.label, c.size, terms_text(&c.terms)));
            if !c.out_of_range.is_empty() {
                out.push_str(&format!("  outside observed range: {}\n", c.out_of_range.join(", ")));
            }
        }
        out
    }
}

/// Per-cluster edits for a K-cluster explanation of `source`.
pub fn render_explanation(model: &ClusterModel, params: &KClusterParams, source: &LabeledDataset) -> Result<Rendering> {
    let mapped = apply_kcluster(&source.rows, model, params)?;
    let entries = model
        .members()
        .into_iter()
        .enumerate()
        .map(|(c, members)| render_shift(format!("cluster {}", c + 1), params.deltas.row(c), &members, &mapped, source))
        .collect();
    Ok(Rendering { entries })
}

/// Mean per-row shift within each group, for per-sample explanations.
pub fn render_group_means(mapped: &Array2<f64>, source: &LabeledDataset) -> Result<Rendering> {
    if mapped.dim() != source.rows.dim() {
        return Err(Error::Dimension("mapped rows do not align with the source".into()));
    }
    let shifts = mapped - &source.rows;
    let entries = crate::data::group_slices(source)
        .into_iter()
        .map(|(g, members)| {
            let mean = shifts
                .select(ndarray::Axis(0), &members)
                .mean_axis(ndarray::Axis(0))
                .expect("group slices are non-empty");
            render_shift(format!("group {g} mean"), mean.view(), &members, mapped, source)
        })
        .collect();
    Ok(Rendering { entries })
}

fn render_shift(
    label: String,
    delta: ArrayView1<f64>,
    members: &[usize],
    mapped: &Array2<f64>,
    source: &LabeledDataset,
) -> RenderedShift {
    let out_of_range = source
        .schema
        .columns()
        .iter()
        .enumerate()
        .filter(|(j, _)| {
            // constant columns live at 0
            let hi = if source.scaling.columns[*j].range() == 0.0 { 0.0 } else { 1.0 };
            members.iter().any(|&i| {
                let v = mapped[[i, *j]];
                v < -1e-9 || v > hi + 1e-9
            })
        })
        .map(|(_, col)| col.name.clone())
        .collect();
    RenderedShift {
        label,
        size: members.len(),
        terms: delta_terms(delta, &source.schema, &source.scaling),
        out_of_range,
    }
}

/// Row-wise sum of two shift matrices, used to compose additive maps.
pub fn compose(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    Zip::from(&mut out).and(b).for_each(|o, &v| *o += v);
    out
}
