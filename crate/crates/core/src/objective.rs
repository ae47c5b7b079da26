//! PercentExplained, its per-group and worst-group forms, the aggregated
//! worst-group loss, and full-batch gradient descent over shift parameters.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{paired_group_slices, LabeledDataset};
use crate::error::{Error, Result};
use crate::maps::ClusterModel;
use crate::wasserstein::{w2_squared, DivergenceToTarget, PointCloud, SinkhornConfig};

/// Denominators at or below this are treated as "source equals target".
const MIN_DENOMINATOR: f64 = 1e-10;

fn ratio_to_pe(numerator: f64, denominator: f64) -> Result<f64> {
    if !(denominator > MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(denominator));
    }
    Ok(100.0 * (1.0 - numerator / denominator))
}

/// PercentExplained, as a percentage (at most 100, unbounded below).
pub fn percent_explained(
    mapped: &PointCloud,
    source: &PointCloud,
    target: &PointCloud,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let den = w2_squared(source, target, cfg)?.cost;
    if !(den > MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(den));
    }
    let num = w2_squared(mapped, target, cfg)?.cost;
    ratio_to_pe(num, den)
}

fn cloud(rows: Array2<f64>) -> Result<PointCloud> {
    PointCloud::uniform(rows)
}

/// PercentExplained per group, in group-id order.
pub fn group_pe(
    mapped: &Array2<f64>,
    source: &LabeledDataset,
    target: &LabeledDataset,
    cfg: &SinkhornConfig,
) -> Result<Vec<(usize, f64)>> {
    paired_group_slices(source, target)?
        .into_par_iter()
        .map(|(g, src, tgt)| {
            let m = cloud(mapped.select(Axis(0), &src))?;
            let p = cloud(source.rows.select(Axis(0), &src))?;
            let q = cloud(target.rows.select(Axis(0), &tgt))?;
            Ok((g, percent_explained(&m, &p, &q, cfg)?))
        })
        .collect()
}

/// Minimum over groups. NaN for an empty list.
pub fn worst_group_pe(group_pes: &[(usize, f64)]) -> f64 {
    group_pes.iter().map(|(_, v)| *v).fold(f64::NAN, f64::min)
}

/// PE, per-group PE and WG-PE of a mapped source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSummary {
    pub pe: f64,
    pub group_pe: Vec<(usize, f64)>,
    pub wg_pe: f64,
}

pub fn summarize(
    mapped: &Array2<f64>,
    source: &LabeledDataset,
    target: &LabeledDataset,
    cfg: &SinkhornConfig,
) -> Result<PeSummary> {
    let pe = percent_explained(
        &cloud(mapped.clone())?,
        &cloud(source.rows.clone())?,
        &cloud(target.rows.clone())?,
        cfg,
    )?;
    let group_pe = group_pe(mapped, source, target, cfg)?;
    let wg_pe = worst_group_pe(&group_pe);
    Ok(PeSummary { pe, group_pe, wg_pe })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseLoss {
    OneMinusPe,
    CrossEntropy,
}

fn default_dro_step() -> f64 {
    0.01
}

/// How per-group losses are combined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Aggregator {
    Max,
    Sum,
    /// Multiplicative weights `q_g <- q_g exp(step L_g)`, renormalized.
    GroupDro {
        #[serde(default = "default_dro_step")]
        step: f64,
    },
}

impl Default for Aggregator {
    fn default() -> Self {
        Aggregator::GroupDro {
            step: default_dro_step(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSpec {
    pub base_loss: BaseLoss,
    pub aggregator: Aggregator,
    /// Weight of the whole-distribution loss. Unset means 0.1 for `sum`, else 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub group_aware: bool,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            base_loss: BaseLoss::OneMinusPe,
            aggregator: Aggregator::default(),
            lambda: None,
            group_aware: false,
        }
    }
}

impl ObjectiveSpec {
    pub fn vanilla() -> Self {
        Self::default()
    }

    pub fn group_aware(aggregator: Aggregator) -> Self {
        Self {
            aggregator,
            group_aware: true,
            ..Self::default()
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(match self.aggregator {
            Aggregator::Sum => 0.1,
            _ => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
        }
        if let Aggregator::GroupDro { step } = self.aggregator {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Config(format!("group-dro step must be positive, got {step}")));
            }
        }
        // cross-entropy is additive over groups, so summing it is the vanilla loss
        if self.group_aware && self.aggregator == Aggregator::Sum && self.base_loss == BaseLoss::CrossEntropy {
            return Err(Error::Config(
                "sum aggregator requires a loss that is not additive over groups".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Additive mapping family whose parameters are a matrix of shifts.
#[derive(Clone, Debug)]
pub enum MapFamily {
    KCluster(ClusterModel),
    Ot,
}

impl MapFamily {
    pub fn param_shape(&self, n: usize, d: usize) -> (usize, usize) {
        match self {
            MapFamily::KCluster(m) => (m.k, d),
            MapFamily::Ot => (n, d),
        }
    }

    pub fn apply(&self, rows: &Array2<f64>, theta: &Array2<f64>) -> Array2<f64> {
        match self {
            MapFamily::KCluster(m) => {
                let mut out = rows.clone();
                for (mut r, &c) in out.rows_mut().into_iter().zip(&m.assignment) {
                    r += &theta.row(c);
                }
                out
            }
            MapFamily::Ot => rows + theta,
        }
    }

    /// Chain rule from per-row gradients to parameter gradients.
    fn pull_back(&self, row_grad: Array2<f64>) -> Array2<f64> {
        match self {
            MapFamily::KCluster(m) => {
                let mut out = Array2::zeros((m.k, row_grad.ncols()));
                for (r, &c) in row_grad.rows().into_iter().zip(&m.assignment) {
                    let mut o = out.row_mut(c);
                    o += &r;
                }
                out
            }
            MapFamily::Ot => row_grad,
        }
    }
}

/// Normalized transport loss `S(M(P_s), Q_s) / S(P_s, Q_s)` on one slice.
struct Term {
    rows: Vec<usize>,
    target: DivergenceToTarget,
    denominator: f64,
}

impl Term {
    fn new(source: &LabeledDataset, rows: Vec<usize>, target_rows: Array2<f64>, cfg: &SinkhornConfig) -> Result<Self> {
        let target = DivergenceToTarget::new(cloud(target_rows)?, *cfg)?;
        let denominator = target.cost(&cloud(source.rows.select(Axis(0), &rows))?)?;
        if !(denominator > MIN_DENOMINATOR) {
            return Err(Error::DegenerateDenominator(denominator));
        }
        Ok(Self {
            rows,
            target,
            denominator,
        })
    }

    /// Loss and its gradient with respect to the slice's mapped rows.
    fn eval(&self, mapped: &Array2<f64>, want_grad: bool) -> Result<(f64, Option<Array2<f64>>)> {
        let m = cloud(mapped.select(Axis(0), &self.rows))?;
        if want_grad {
            let (c, g) = self.target.cost_and_grad(&m)?;
            Ok((c / self.denominator, Some(g / self.denominator)))
        } else {
            Ok((self.target.cost(&m)? / self.denominator, None))
        }
    }

    fn scatter(&self, grad: &Array2<f64>, weight: f64, into: &mut Array2<f64>) {
        for (local, &row) in self.rows.iter().enumerate() {
            let mut dst = into.row_mut(row);
            dst.scaled_add(weight, &grad.row(local));
        }
    }
}

/// One evaluation of the objective.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    /// Gradient with respect to the shift parameters.
    pub grad: Array2<f64>,
    pub pe: f64,
    pub group_pe: Vec<(usize, f64)>,
    pub wg_pe: f64,
}

/// The aggregated loss `F({L_g}) + lambda L` over one (source, target) pair,
/// with the group-DRO weights as mutable state.
pub struct Objective {
    family: MapFamily,
    source_rows: Array2<f64>,
    spec: ObjectiveSpec,
    whole: Term,
    groups: Vec<(usize, Term)>,
    dro_weights: Vec<f64>,
}

impl Objective {
    pub fn new(
        family: MapFamily,
        source: &LabeledDataset,
        target: &LabeledDataset,
        spec: ObjectiveSpec,
        cfg: &SinkhornConfig,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.base_loss != BaseLoss::OneMinusPe {
            return Err(Error::Config(
                "transport objectives use the one-minus-PE loss; cross-entropy belongs to the classifier".into(),
            ));
        }
        if let MapFamily::KCluster(m) = &family {
            if m.assignment.len() != source.n_rows() {
                return Err(Error::Dimension(format!(
                    "cluster assignment covers {} rows, source has {}",
                    m.assignment.len(),
                    source.n_rows()
                )));
            }
        }
        let whole = Term::new(source, (0..source.n_rows()).collect(), target.rows.clone(), cfg)?;
        let groups = paired_group_slices(source, target)?
            .into_par_iter()
            .map(|(g, src, tgt)| Ok((g, Term::new(source, src, target.rows.select(Axis(0), &tgt), cfg)?)))
            .collect::<Result<Vec<_>>>()?;
        let g = groups.len();
        Ok(Self {
            family,
            source_rows: source.rows.clone(),
            spec,
            whole,
            groups,
            dro_weights: vec![1.0 / g as f64; g],
        })
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    pub fn param_shape(&self) -> (usize, usize) {
        self.family.param_shape(self.source_rows.nrows(), self.source_rows.ncols())
    }

    pub fn dro_weights(&self) -> &[f64] {
        &self.dro_weights
    }

    pub fn mapped(&self, theta: &Array2<f64>) -> Array2<f64> {
        self.family.apply(&self.source_rows, theta)
    }

    /// Evaluate at `theta`, advancing the group-DRO weights when that
    /// aggregator is active.
    pub fn evaluate(&mut self, theta: &Array2<f64>) -> Result<LossEval> {
        if theta.dim() != self.param_shape() {
            return Err(Error::Dimension(format!(
                "expected parameters of shape {:?}, got {:?}",
                self.param_shape(),
                theta.dim()
            )));
        }
        let mapped = self.mapped(theta);
        let aware = self.spec.group_aware;
        let lambda = self.spec.lambda();
        let whole_grad = !aware || lambda > 0.0;
        let (whole_loss, whole_g) = self.whole.eval(&mapped, whole_grad)?;
        let group_evals = self
            .groups
            .par_iter()
            .map(|(_, t)| t.eval(&mapped, aware))
            .collect::<Result<Vec<_>>>()?;
        let group_losses: Vec<f64> = group_evals.iter().map(|(l, _)| *l).collect();

        let mut row_grad = Array2::zeros(mapped.dim());
        let loss = if !aware {
            self.whole.scatter(whole_g.as_ref().expect("requested"), 1.0, &mut row_grad);
            whole_loss
        } else {
            let weights = self.group_weights(&group_losses);
            let mut loss = 0.0;
            for (((_, term), (l, g)), w) in self.groups.iter().zip(&group_evals).zip(&weights) {
                if *w != 0.0 {
                    loss += w * l;
                    term.scatter(g.as_ref().expect("requested"), *w, &mut row_grad);
                }
            }
            if lambda > 0.0 {
                loss += lambda * whole_loss;
                self.whole.scatter(whole_g.as_ref().expect("requested"), lambda, &mut row_grad);
            }
            loss
        };
        let group_pe: Vec<(usize, f64)> = self
            .groups
            .iter()
            .zip(&group_losses)
            .map(|((g, _), l)| (*g, 100.0 * (1.0 - l)))
            .collect();
        Ok(LossEval {
            loss,
            grad: self.family.pull_back(row_grad),
            pe: 100.0 * (1.0 - whole_loss),
            wg_pe: worst_group_pe(&group_pe),
            group_pe,
        })
    }

    fn group_weights(&mut self, losses: &[f64]) -> Vec<f64> {
        match self.spec.aggregator {
            Aggregator::Sum => vec![1.0; losses.len()],
            Aggregator::Max => {
                let mut best = 0;
                for (i, l) in losses.iter().enumerate() {
                    if *l > losses[best] {
                        best = i;
                    }
                }
                (0..losses.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
            }
            Aggregator::GroupDro { step } => {
                for (q, l) in self.dro_weights.iter_mut().zip(losses) {
                    *q *= (step * l).exp();
                }
                let total: f64 = self.dro_weights.iter().sum();
                self.dro_weights.iter_mut().for_each(|q| *q /= total);
                self.dro_weights.clone()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub pe: f64,
    pub wg_pe: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub theta: Array2<f64>,
    /// Values at the parameters each step started from.
    pub trace: Vec<TraceRow>,
    pub final_pe: f64,
    pub final_group_pe: Vec<(usize, f64)>,
    pub final_wg_pe: f64,
}

/// Solver failures after the first step are blamed on the step size, since
/// the starting point already evaluated fine.
fn evaluate_step(objective: &mut Objective, theta: &Array2<f64>, iteration: usize) -> Result<LossEval> {
    let diverged = |cause| Error::Diverged {
        iteration,
        cause: Box::new(cause),
    };
    let e = match objective.evaluate(theta) {
        Err(cause @ Error::NotConverged { .. }) if iteration > 0 => return Err(diverged(cause)),
        other => other?,
    };
    if !e.loss.is_finite() || e.grad.iter().any(|v| !v.is_finite()) {
        return Err(diverged(Error::NonFiniteLoss { iteration }));
    }
    Ok(e)
}

/// Fixed-step full-batch gradient descent from `init` (zero when `None`).
pub fn optimize(objective: &mut Objective, opt: &OptimizerConfig, init: Option<Array2<f64>>) -> Result<OptimizeResult> {
    opt.validate()?;
    let mut theta = match init {
        Some(t) => t,
        None => Array2::zeros(objective.param_shape()),
    };
    let mut trace = Vec::with_capacity(opt.iterations);
    for iteration in 0..opt.iterations {
        let e = evaluate_step(objective, &theta, iteration)?;
        trace.push(TraceRow {
            iteration,
            loss: e.loss,
            pe: e.pe,
            wg_pe: e.wg_pe,
        });
        theta.scaled_add(-opt.learning_rate, &e.grad);
    }
    // final metrics must not advance the DRO state
    let saved = objective.dro_weights.clone();
    let last = evaluate_step(objective, &theta, opt.iterations);
    objective.dro_weights = saved;
    let last = last?;
    Ok(OptimizeResult {
        theta,
        trace,
        final_pe: last.pe,
        final_group_pe: last.group_pe,
        final_wg_pe: last.wg_pe,
    })
}
