//! End-to-end fitting of one explanation method on a (source, target) pair.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::counterfactual::{apply_dice, train_classifier_from, Classifier, ClassifierConfig, CounterfactualConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::maps::{fit_clusters, render_explanation, render_group_means, ClusterModel, KClusterParams, Rendering};
use crate::objective::{optimize, summarize, MapFamily, Objective, ObjectiveSpec, OptimizerConfig, PeSummary, TraceRow};
use crate::wasserstein::{sq_cost, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    KCluster {
        k: usize,
    },
    Ot,
    Dice {
        classifier: ClassifierConfig,
        #[serde(default)]
        counterfactual: CounterfactualConfig,
    },
}

/// Everything that determines a fitted explanation besides the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    /// Group-aware training (worst-group objective, or group-DRO classifier).
    pub group_aware: bool,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    /// Seed for k-means on the source rows.
    #[serde(default)]
    pub cluster_seed: u64,
}

impl PipelineConfig {
    pub fn objective_spec(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            group_aware: self.group_aware,
            ..self.objective
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sinkhorn.validate()?;
        match self.method {
            Method::KCluster { k: 0 } => Err(Error::Config("k must be at least 1".into())),
            Method::Dice {
                classifier,
                counterfactual,
            } => {
                classifier.validate()?;
                counterfactual.validate()
            }
            _ => {
                self.optimizer.validate()?;
                self.objective_spec().validate()
            }
        }
    }
}

/// Learned parameters of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Params {
    KCluster { model: ClusterModel, shifts: KClusterParams },
    Ot { shifts: Array2<f64> },
    Dice { classifier: Classifier, flipped: Vec<bool> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Explanation {
    pub params: Params,
    pub mapped: Array2<f64>,
    /// Empty for counterfactual explanations.
    pub trace: Vec<TraceRow>,
    pub summary: PeSummary,
}

impl Explanation {
    /// Per-row shift `M(x) - x`.
    pub fn shifts(&self, source: &LabeledDataset) -> Array2<f64> {
        &self.mapped - &source.rows
    }

    pub fn render(&self, source: &LabeledDataset) -> Result<Rendering> {
        match &self.params {
            Params::KCluster { model, shifts } => render_explanation(model, shifts, source),
            _ => render_group_means(&self.mapped, source),
        }
    }
}

/// How a refit reuses an earlier explanation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarmStart {
    pub enabled: bool,
    /// Keep the earlier cluster assignment instead of re-running k-means.
    pub freeze_clusters: bool,
}

/// Fit the configured method on `source -> target`.
pub fn fit(
    cfg: &PipelineConfig,
    source: &LabeledDataset,
    target: &LabeledDataset,
    warm: Option<&Explanation>,
    warm_opts: WarmStart,
) -> Result<Explanation> {
    cfg.validate()?;
    let warm = warm.filter(|_| warm_opts.enabled || warm_opts.freeze_clusters);
    match cfg.method {
        Method::KCluster { k } => {
            let previous = match warm.map(|w| &w.params) {
                Some(Params::KCluster { model, shifts }) => Some((model, shifts)),
                Some(_) => return Err(Error::Config("warm start from a different method".into())),
                None => None,
            };
            let model = match previous {
                Some((m, _)) if warm_opts.freeze_clusters => m.clone(),
                _ => fit_clusters(source, k, cfg.cluster_seed)?,
            };
            let init = previous.filter(|_| warm_opts.enabled).map(|(old_model, old)| {
                if warm_opts.freeze_clusters {
                    old.deltas.clone()
                } else {
                    match_cluster_shifts(old_model, &old.deltas, &model)
                }
            });
            let mut objective = Objective::new(MapFamily::KCluster(model.clone()), source, target, cfg.objective_spec(), &cfg.sinkhorn)?;
            let res = optimize(&mut objective, &cfg.optimizer, init)?;
            let mapped = objective.mapped(&res.theta);
            Ok(Explanation {
                params: Params::KCluster {
                    model,
                    shifts: KClusterParams { deltas: res.theta },
                },
                mapped,
                trace: res.trace,
                summary: PeSummary {
                    pe: res.final_pe,
                    group_pe: res.final_group_pe,
                    wg_pe: res.final_wg_pe,
                },
            })
        }
        Method::Ot => {
            let init = match warm.map(|w| &w.params) {
                Some(Params::Ot { shifts }) if warm_opts.enabled => Some(shifts.clone()),
                Some(Params::Ot { .. }) | None => None,
                Some(_) => return Err(Error::Config("warm start from a different method".into())),
            };
            let mut objective = Objective::new(MapFamily::Ot, source, target, cfg.objective_spec(), &cfg.sinkhorn)?;
            let res = optimize(&mut objective, &cfg.optimizer, init)?;
            let mapped = objective.mapped(&res.theta);
            Ok(Explanation {
                params: Params::Ot { shifts: res.theta },
                mapped,
                trace: res.trace,
                summary: PeSummary {
                    pe: res.final_pe,
                    group_pe: res.final_group_pe,
                    wg_pe: res.final_wg_pe,
                },
            })
        }
        Method::Dice {
            classifier,
            counterfactual,
        } => {
            let init = match warm.map(|w| &w.params) {
                Some(Params::Dice { classifier, .. }) if warm_opts.enabled => Some(classifier),
                Some(Params::Dice { .. }) | None => None,
                Some(_) => return Err(Error::Config("warm start from a different method".into())),
            };
            let ccfg = ClassifierConfig {
                group_dro: cfg.group_aware,
                ..classifier
            };
            let h = train_classifier_from(source, target, &ccfg, init)?;
            let out = apply_dice(&source.rows, &h, &counterfactual)?;
            let summary = summarize(&out.mapped, source, target, &cfg.sinkhorn)?;
            Ok(Explanation {
                params: Params::Dice {
                    classifier: h,
                    flipped: out.flipped,
                },
                mapped: out.mapped,
                trace: Vec::new(),
                summary,
            })
        }
    }
}

/// Reorder earlier per-cluster shifts so each lands on the new cluster whose
/// centroid is closest under an optimal one-to-one matching.
fn match_cluster_shifts(old: &ClusterModel, old_shifts: &Array2<f64>, new: &ClusterModel) -> Array2<f64> {
    let cost = sq_cost(new.centroids.view(), old.centroids.view());
    let (new_to_old, _) = assignment::solve(&cost);
    old_shifts.select(ndarray::Axis(0), &new_to_old)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matched_shifts_follow_centroids() {
        let old = ClusterModel {
            k: 2,
            centroids: array![[0.0], [1.0]],
            assignment: vec![0, 1],
            seed: 0,
        };
        let new = ClusterModel {
            k: 2,
            centroids: array![[0.95], [0.05]],
            assignment: vec![1, 0],
            seed: 0,
        };
        let shifts = array![[0.1], [-0.2]];
        assert_eq!(match_cluster_shifts(&old, &shifts, &new), array![[-0.2], [0.1]]);
    }

    #[test]
    fn method_toml_round_trip() {
        let text = "kind = \"k-cluster\"\nk = 4\n";
        let m: Method = toml::from_str(text).unwrap();
        assert_eq!(m, Method::KCluster { k: 4 });
    }
}
