//! Feasibility, the perturbation generator, and robustness of explanations.

use ndarray::{Array2, ArrayView1, Axis};
use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, LabeledDataset};
use crate::error::{Error, Result};
use crate::kmeans::sq_dist;
use crate::pipeline::{fit, Explanation, PipelineConfig, WarmStart};

/// When a single row's change counts as feasible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum FeasibilityRule {
    /// Every protected feature moves by less than `tolerance` raw units.
    /// Categorical features move by their category index.
    Actionability { protected: Vec<String>, tolerance: f64 },
    /// The nearest target row of the mapped row has the source row's group.
    GroupPreservation,
}

impl FeasibilityRule {
    /// Protect the schema's unactionable features, half a raw unit of slack.
    pub fn from_schema(dataset: &LabeledDataset) -> Self {
        FeasibilityRule::Actionability {
            protected: dataset
                .schema
                .features()
                .iter()
                .filter(|f| !f.actionable)
                .map(|f| f.name.clone())
                .collect(),
            tolerance: 0.5,
        }
    }
}

/// Percentage of source rows whose mapping is feasible.
pub fn feasibility(
    source: &LabeledDataset,
    mapped: &Array2<f64>,
    rule: &FeasibilityRule,
    target: &LabeledDataset,
) -> Result<f64> {
    if mapped.dim() != source.rows.dim() {
        return Err(Error::Dimension("mapped rows do not align with the source".into()));
    }
    let n = source.n_rows();
    if n == 0 {
        return Err(Error::Dimension("empty source".into()));
    }
    let ok: Vec<bool> = match rule {
        FeasibilityRule::Actionability { protected, tolerance } => {
            if !(*tolerance > 0.0) {
                return Err(Error::Config("feasibility tolerance must be positive".into()));
            }
            let after = source.with_rows(mapped.clone());
            let mut ok = vec![true; n];
            for name in protected {
                let fi = source
                    .schema
                    .index_of(name)
                    .ok_or_else(|| Error::Config(format!("protected feature `{name}` is not in the schema")))?;
                let before = source.raw_feature(fi);
                let moved = after.raw_feature(fi);
                for (i, (a, b)) in before.iter().zip(&moved).enumerate() {
                    if (b - a).abs() >= *tolerance {
                        ok[i] = false;
                    }
                }
            }
            ok
        }
        FeasibilityRule::GroupPreservation => {
            if target.n_rows() == 0 {
                return Err(Error::Dimension("group preservation needs a non-empty target".into()));
            }
            mapped
                .axis_iter(Axis(0))
                .into_par_iter()
                .zip(source.group_of.par_iter())
                .map(|(row, &g)| target.group_of[nearest_row(row, &target.rows)] == g)
                .collect()
        }
    };
    Ok(100.0 * ok.iter().filter(|b| **b).count() as f64 / n as f64)
}

/// Lowest index among the rows closest to `x`.
fn nearest_row(x: ArrayView1<f64>, rows: &Array2<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, r) in rows.rows().into_iter().enumerate() {
        let d = sq_dist(x, r);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub feature_fraction: f64,
    pub value_fraction: f64,
    /// Shift of real features, in units of their standard deviation.
    pub real_step: f64,
    pub seed: u64,
    /// Perturb exactly this many features instead of a fraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_count: Option<usize>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            feature_fraction: 0.75,
            value_fraction: 0.01,
            real_step: 0.05,
            seed: 0,
            feature_count: None,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.feature_fraction) || !unit(self.value_fraction) {
            return Err(Error::Config("perturbation fractions must lie in (0, 1]".into()));
        }
        if !(self.real_step > 0.0 && self.real_step.is_finite()) {
            return Err(Error::Config("real_step must be positive".into()));
        }
        if self.feature_count == Some(0) {
            return Err(Error::Config("feature_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Cells changed for one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchedFeature {
    pub feature: String,
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Perturbation {
    pub dataset: LabeledDataset,
    pub touched: Vec<TouchedFeature>,
    /// Selected features that had nothing to perturb, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn population_stdev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn cell_count(fraction: f64, eligible: usize) -> usize {
    ((fraction * eligible as f64).round() as usize).clamp(1, eligible)
}

/// Draw `P(eps)`: perturb a random subset of features in raw units and write
/// only the touched cells back through the recorded scaling.
pub fn perturb(source: &LabeledDataset, spec: &PerturbationSpec) -> Result<Perturbation> {
    spec.validate()?;
    let n = source.n_rows();
    if n == 0 {
        return Err(Error::Dimension("cannot perturb an empty dataset".into()));
    }
    let features = source.schema.features();
    let f = features.len();
    let count = spec
        .feature_count
        .unwrap_or_else(|| (spec.feature_fraction * f as f64).round() as usize)
        .clamp(1, f);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = sample(&mut rng, f, count).into_vec();
    chosen.sort_unstable();

    let mut rows = source.rows.clone();
    let mut touched = Vec::new();
    let mut skipped = Vec::new();
    for fi in chosen {
        let feature = &features[fi];
        let span = source.schema.column_span(fi);
        let raw = source.raw_feature(fi);
        let mut skip = |why: &str| skipped.push((feature.name.clone(), why.to_string()));
        let picks: Vec<(usize, f64)> = match feature.kind {
            FeatureKind::Real => {
                let step = spec.real_step * population_stdev(&raw);
                if step == 0.0 {
                    skip("constant feature");
                    continue;
                }
                let cells = sample(&mut rng, n, cell_count(spec.value_fraction, n)).into_vec();
                cells
                    .into_iter()
                    .map(|i| (i, raw[i] + if rng.random::<bool>() { step } else { -step }))
                    .collect()
            }
            FeatureKind::Integer => {
                let cells = sample(&mut rng, n, cell_count(spec.value_fraction, n)).into_vec();
                cells
                    .into_iter()
                    .map(|i| (i, raw[i].round() + if rng.random::<bool>() { 1.0 } else { -1.0 }))
                    .collect()
            }
            FeatureKind::Boolean => {
                let (trues, falses): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| raw[i].round() != 0.0);
                let sides: Vec<&Vec<usize>> = [&trues, &falses].into_iter().filter(|s| !s.is_empty()).collect();
                let side = sides[rng.random_range(0..sides.len())];
                let cells = sample(&mut rng, side.len(), cell_count(spec.value_fraction, side.len())).into_vec();
                cells
                    .into_iter()
                    .map(|k| {
                        let i = side[k];
                        (i, 1.0 - raw[i].round())
                    })
                    .collect()
            }
            FeatureKind::Categorical => {
                let levels = feature.categories.len();
                if levels < 2 {
                    skip("single category");
                    continue;
                }
                let cells = sample(&mut rng, n, cell_count(spec.value_fraction, n)).into_vec();
                cells
                    .into_iter()
                    .map(|i| {
                        let up = rng.random::<bool>();
                        let c = raw[i] as usize;
                        // reverse direction at either end of the category list
                        let next = match (up, c) {
                            (true, c) if c + 1 < levels => c + 1,
                            (true, c) => c - 1,
                            (false, 0) => 1,
                            (false, c) => c - 1,
                        };
                        (i, next as f64)
                    })
                    .collect()
            }
        };
        let mut cells: Vec<usize> = Vec::with_capacity(picks.len());
        for (i, value) in picks {
            if feature.kind == FeatureKind::Categorical {
                for (k, j) in span.clone().enumerate() {
                    let hot = if k == value as usize { 1.0 } else { 0.0 };
                    rows[[i, j]] = source.scaling.columns[j].scale(hot);
                }
            } else {
                rows[[i, span.start]] = source.scaling.columns[span.start].scale(value);
            }
            cells.push(i);
        }
        cells.sort_unstable();
        touched.push(TouchedFeature {
            feature: feature.name.clone(),
            rows: cells,
        });
    }
    Ok(Perturbation {
        dataset: source.with_rows(rows),
        touched,
        skipped,
    })
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `|M(P) - M(P_eps)| / |P - P_eps|` over row-aligned matrices.
pub fn omega(mapped: &Array2<f64>, mapped_perturbed: &Array2<f64>, source: &Array2<f64>, perturbed: &Array2<f64>) -> Result<f64> {
    ratio(&(mapped - mapped_perturbed), source, perturbed)
}

/// `|(M(P) - P) - (M(P_eps) - P_eps)| / |P - P_eps|`: the change in the
/// explanation's shifts rather than in its outputs.
pub fn displacement_omega(
    mapped: &Array2<f64>,
    mapped_perturbed: &Array2<f64>,
    source: &Array2<f64>,
    perturbed: &Array2<f64>,
) -> Result<f64> {
    ratio(&((mapped - source) - (mapped_perturbed - perturbed)), source, perturbed)
}

fn ratio(numerator: &Array2<f64>, source: &Array2<f64>, perturbed: &Array2<f64>) -> Result<f64> {
    if source.dim() != perturbed.dim() || numerator.dim() != source.dim() {
        return Err(Error::Dimension("robustness inputs must be row-aligned".into()));
    }
    let den = frobenius(&(source - perturbed));
    if den == 0.0 {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(frobenius(numerator) / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOmega {
    pub seed: u64,
    pub omega: f64,
    pub displacement_omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Mean over the first `mean_trials` successful trials.
    pub omega: f64,
    /// Maximum over every successful trial.
    pub omega_worst: f64,
    pub displacement_omega: f64,
    pub displacement_omega_worst: f64,
    pub trials: usize,
    pub per_trial: Vec<TrialOmega>,
    /// Trials whose refit failed, with the error message.
    pub failed: Vec<(u64, String)>,
}

impl RobustnessReport {
    pub fn from_trials(per_trial: Vec<TrialOmega>, mean_trials: usize, failed: Vec<(u64, String)>) -> Result<Self> {
        if per_trial.is_empty() {
            return Err(Error::Config("no robustness trial succeeded".into()));
        }
        let m = mean_trials.clamp(1, per_trial.len());
        let mean = |f: fn(&TrialOmega) -> f64| per_trial[..m].iter().map(f).sum::<f64>() / m as f64;
        let worst = |f: fn(&TrialOmega) -> f64| per_trial.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            omega: mean(|t| t.omega),
            omega_worst: worst(|t| t.omega),
            displacement_omega: mean(|t| t.displacement_omega),
            displacement_omega_worst: worst(|t| t.displacement_omega),
            trials: per_trial.len(),
            per_trial,
            failed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessOptions {
    /// Trials averaged into `omega`.
    pub mean_trials: usize,
    /// Trials maximized into `omega_worst`; at least `mean_trials` run.
    pub worst_trials: usize,
    pub warm_start: WarmStart,
    pub perturbation: PerturbationSpec,
}

/// Refit on perturbed sources and compare with the explanation `base` of
/// the unperturbed source. Trial `t` uses perturbation seed `seed + t`.
pub fn robustness(
    cfg: &PipelineConfig,
    source: &LabeledDataset,
    target: &LabeledDataset,
    base: &Explanation,
    opts: &RobustnessOptions,
) -> Result<RobustnessReport> {
    let n = opts.mean_trials.max(opts.worst_trials).max(1);
    let outcomes: Vec<(u64, Result<TrialOmega>)> = (0..n as u64)
        .into_par_iter()
        .map(|t| {
            let seed = opts.perturbation.seed.wrapping_add(t);
            let trial = || -> Result<TrialOmega> {
                let p = perturb(source, &opts.perturbation.with_seed(seed))?;
                let refit = fit(cfg, &p.dataset, target, Some(base), opts.warm_start)?;
                Ok(TrialOmega {
                    seed,
                    omega: omega(&base.mapped, &refit.mapped, &source.rows, &p.dataset.rows)?,
                    displacement_omega: displacement_omega(&base.mapped, &refit.mapped, &source.rows, &p.dataset.rows)?,
                })
            };
            (seed, trial())
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(t) => ok.push(t),
            Err(e) => failed.push((seed, e.to_string())),
        }
    }
    RobustnessReport::from_trials(ok, opts.mean_trials, failed)
}
