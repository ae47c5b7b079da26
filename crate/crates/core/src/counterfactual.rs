//! Source-vs-target classifiers and per-sample counterfactual shifts.
//!
//! Source rows carry label 0 and target rows label 1. A counterfactual for a
//! source row `x` is a small `delta` such that the classifier assigns
//! `x + delta` to the target.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    Logistic,
    /// One ReLU hidden layer.
    OneHidden { width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub group_dro: bool,
    #[serde(default = "default_dro_step")]
    pub dro_step: f64,
}

fn default_dro_step() -> f64 {
    0.01
}

impl ClassifierConfig {
    pub fn logistic(epochs: usize, learning_rate: f64) -> Self {
        Self {
            architecture: Architecture::Logistic,
            epochs,
            learning_rate,
            weight_decay: 0.0,
            seed: 0,
            group_dro: false,
            dro_step: default_dro_step(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("classifier needs at least one epoch".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if !(self.dro_step > 0.0 && self.dro_step.is_finite()) {
            return Err(Error::Config("dro_step must be positive".into()));
        }
        if let Architecture::OneHidden { width: 0 } = self.architecture {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Binary classifier with a logistic output, `h(x) = P(target | x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub config: ClassifierConfig,
    /// Hidden weights (width x d); empty for the logistic model.
    pub hidden_w: Array2<f64>,
    pub hidden_b: Array1<f64>,
    pub out_w: Array1<f64>,
    pub out_b: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct Grads {
    hidden_w: Array2<f64>,
    hidden_b: Array1<f64>,
    out_w: Array1<f64>,
    out_b: f64,
}

impl Classifier {
    fn init(config: ClassifierConfig, d: usize) -> Self {
        match config.architecture {
            Architecture::Logistic => Self {
                config,
                hidden_w: Array2::zeros((0, d)),
                hidden_b: Array1::zeros(0),
                out_w: Array1::zeros(d),
                out_b: 0.0,
            },
            Architecture::OneHidden { width } => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let a = 1.0 / (d as f64).sqrt();
                let hidden_w = Array2::from_shape_fn((width, d), |_| rng.random_range(-a..a));
                let b = 1.0 / (width as f64).sqrt();
                let out_w = Array1::from_shape_fn(width, |_| rng.random_range(-b..b));
                Self {
                    config,
                    hidden_w,
                    hidden_b: Array1::zeros(width),
                    out_w,
                    out_b: 0.0,
                }
            }
        }
    }

    pub fn input_width(&self) -> usize {
        if self.is_logistic() {
            self.out_w.len()
        } else {
            self.hidden_w.ncols()
        }
    }

    fn is_logistic(&self) -> bool {
        matches!(self.config.architecture, Architecture::Logistic)
    }

    /// Pre-activation of the output unit.
    pub fn logit(&self, x: ArrayView1<f64>) -> f64 {
        if self.is_logistic() {
            self.out_w.dot(&x) + self.out_b
        } else {
            let h = (self.hidden_w.dot(&x) + &self.hidden_b).mapv(|v| v.max(0.0));
            self.out_w.dot(&h) + self.out_b
        }
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Gradient of the logit with respect to the input.
    pub fn logit_grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        if self.is_logistic() {
            self.out_w.clone()
        } else {
            let pre = self.hidden_w.dot(&x) + &self.hidden_b;
            let gate = Array1::from_shape_fn(pre.len(), |i| if pre[i] > 0.0 { self.out_w[i] } else { 0.0 });
            self.hidden_w.t().dot(&gate)
        }
    }

    /// Weighted cross-entropy of each row plus the parameter gradient of
    /// `sum_i weight_i * ce_i`.
    fn losses_and_grads(&self, x: &Array2<f64>, y: &[f64], weight: &[f64]) -> (Vec<f64>, Grads) {
        let mut g = Grads {
            hidden_w: Array2::zeros(self.hidden_w.dim()),
            hidden_b: Array1::zeros(self.hidden_b.len()),
            out_w: Array1::zeros(self.out_w.len()),
            out_b: 0.0,
        };
        let mut losses = Vec::with_capacity(x.nrows());
        for ((row, &yi), &wi) in x.rows().into_iter().zip(y).zip(weight) {
            let (z, hidden) = if self.is_logistic() {
                (self.out_w.dot(&row) + self.out_b, None)
            } else {
                let pre = self.hidden_w.dot(&row) + &self.hidden_b;
                let act = pre.mapv(|v| v.max(0.0));
                (self.out_w.dot(&act) + self.out_b, Some((pre, act)))
            };
            losses.push(softplus(z) - yi * z);
            let dz = wi * (sigmoid(z) - yi);
            g.out_b += dz;
            match hidden {
                None => g.out_w.scaled_add(dz, &row),
                Some((pre, act)) => {
                    g.out_w.scaled_add(dz, &act);
                    for k in 0..pre.len() {
                        if pre[k] > 0.0 {
                            let dk = dz * self.out_w[k];
                            g.hidden_b[k] += dk;
                            g.hidden_w.row_mut(k).scaled_add(dk, &row);
                        }
                    }
                }
            }
        }
        (losses, g)
    }

    fn step(&mut self, g: &Grads) {
        let lr = self.config.learning_rate;
        let wd = self.config.weight_decay;
        self.out_w = &self.out_w - &((&g.out_w + &(&self.out_w * wd)) * lr);
        self.out_b -= lr * g.out_b;
        if !self.is_logistic() {
            self.hidden_w = &self.hidden_w - &((&g.hidden_w + &(&self.hidden_w * wd)) * lr);
            self.hidden_b = &self.hidden_b - &(&g.hidden_b * lr);
        }
    }

    pub fn accuracy(&self, x: &Array2<f64>, y: &[f64]) -> f64 {
        let hits = x
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(r, &yi)| (self.predict(*r) > 0.5) == (yi > 0.5))
            .count();
        hits as f64 / y.len() as f64
    }

    /// Mean cross-entropy within each group of the stacked data.
    pub fn group_losses(&self, x: &Array2<f64>, y: &[f64], group_of: &[usize], num_groups: usize) -> Vec<f64> {
        let (losses, _) = self.losses_and_grads(x, y, &vec![0.0; y.len()]);
        let mut sums = vec![0.0; num_groups];
        let mut counts = vec![0usize; num_groups];
        for (l, &g) in losses.iter().zip(group_of) {
            sums[g - 1] += l;
            counts[g - 1] += 1;
        }
        sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
    }
}

/// Source rows labelled 0 followed by target rows labelled 1.
pub fn stack(source: &LabeledDataset, target: &LabeledDataset) -> (Array2<f64>, Vec<f64>, Vec<usize>) {
    let x = ndarray::concatenate(Axis(0), &[source.rows.view(), target.rows.view()]).expect("same width");
    let y = std::iter::repeat_n(0.0, source.n_rows())
        .chain(std::iter::repeat_n(1.0, target.n_rows()))
        .collect();
    let groups = source.group_of.iter().chain(&target.group_of).copied().collect();
    (x, y, groups)
}

/// Full-batch gradient descent on cross-entropy with weight decay. With
/// `group_dro`, per-group mean losses are mixed with multiplicative weights.
pub fn train_classifier(source: &LabeledDataset, target: &LabeledDataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    train_classifier_from(source, target, cfg, None)
}

/// As [`train_classifier`], starting from `init`'s parameters when given.
pub fn train_classifier_from(
    source: &LabeledDataset,
    target: &LabeledDataset,
    cfg: &ClassifierConfig,
    init: Option<&Classifier>,
) -> Result<Classifier> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::Dimension("source and target widths differ".into()));
    }
    let (x, y, groups) = stack(source, target);
    let n = y.len();
    let num_groups = source.num_groups.max(target.num_groups);
    let mut counts = vec![0usize; num_groups];
    for &g in &groups {
        counts[g - 1] += 1;
    }
    let mut q: Vec<f64> = {
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        counts.iter().map(|&c| if c > 0 { 1.0 / present } else { 0.0 }).collect()
    };
    let mut model = match init {
        Some(c) if c.config.architecture == cfg.architecture && c.input_width() == x.ncols() => Classifier {
            config: *cfg,
            ..c.clone()
        },
        Some(_) => return Err(Error::Config("warm-start classifier has a different shape".into())),
        None => Classifier::init(*cfg, x.ncols()),
    };
    let mut weight = vec![1.0 / n as f64; n];
    for epoch in 0..cfg.epochs {
        if cfg.group_dro {
            let gl = model.group_losses(&x, &y, &groups, num_groups);
            for (qg, l) in q.iter_mut().zip(&gl) {
                *qg *= (cfg.dro_step * l).exp();
            }
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= total);
            for (w, &g) in weight.iter_mut().zip(&groups) {
                *w = q[g - 1] / counts[g - 1] as f64;
            }
        }
        let (losses, grads) = model.losses_and_grads(&x, &y, &weight);
        let loss: f64 = losses.iter().zip(&weight).map(|(l, w)| l * w).sum();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: epoch });
        }
        model.step(&grads);
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualConfig {
    pub proximity_weight: f64,
    pub max_steps: usize,
    pub step_size: f64,
    pub flip_threshold: f64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            proximity_weight: 0.5,
            max_steps: 200,
            step_size: 0.05,
            flip_threshold: 0.5,
        }
    }
}

impl CounterfactualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proximity_weight > 0.0 && self.step_size > 0.0 && self.max_steps > 0) {
            return Err(Error::Config(
                "counterfactual proximity weight, step size and step budget must be positive".into(),
            ));
        }
        if !(self.flip_threshold > 0.0 && self.flip_threshold < 1.0) {
            return Err(Error::Config("flip threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Minimize `ce(h(x + delta), 1) + proximity_weight * |delta|^2` by proximal
/// gradient steps with the cross-entropy gradient clipped to unit norm.
///
/// Stops as soon as `h(x + delta)` exceeds the threshold. Otherwise returns
/// the iterate with the highest target probability (never below `h(x)`).
pub fn counterfactual_delta(x: ArrayView1<f64>, h: &Classifier, cfg: &CounterfactualConfig) -> (Array1<f64>, bool) {
    let mut delta = Array1::<f64>::zeros(x.len());
    let start = h.predict(x);
    if start > cfg.flip_threshold {
        return (delta, true);
    }
    let shrink = 1.0 + 2.0 * cfg.step_size * cfg.proximity_weight;
    let mut best = (start, delta.clone());
    for _ in 0..cfg.max_steps {
        let point = &x + &delta;
        let p = h.predict(point.view());
        // d/dx of -log h(x) is (h - 1) * dlogit/dx
        let mut g = h.logit_grad(point.view()) * (p - 1.0);
        let norm = g.dot(&g).sqrt();
        if norm > 1.0 {
            g /= norm;
        }
        delta = (&delta - &(g * cfg.step_size)) / shrink;
        let p = h.predict((&x + &delta).view());
        if p > cfg.flip_threshold {
            return (delta, true);
        }
        if p > best.0 {
            best = (p, delta.clone());
        }
    }
    (best.1, false)
}

#[derive(Clone, Debug)]
pub struct DiceOutcome {
    pub mapped: Array2<f64>,
    pub deltas: Array2<f64>,
    pub flipped: Vec<bool>,
}

impl DiceOutcome {
    pub fn flip_rate(&self) -> f64 {
        if self.flipped.is_empty() {
            return 0.0;
        }
        self.flipped.iter().filter(|f| **f).count() as f64 / self.flipped.len() as f64
    }
}

/// Counterfactual shift for every row.
pub fn apply_dice(rows: &Array2<f64>, h: &Classifier, cfg: &CounterfactualConfig) -> Result<DiceOutcome> {
    cfg.validate()?;
    if rows.ncols() != h.input_width() {
        return Err(Error::Dimension("classifier input width differs from the rows".into()));
    }
    let results: Vec<(Array1<f64>, bool)> = rows
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| counterfactual_delta(x, h, cfg))
        .collect();
    let mut deltas = Array2::zeros(rows.dim());
    let mut flipped = Vec::with_capacity(results.len());
    for (i, (d, f)) in results.into_iter().enumerate() {
        deltas.row_mut(i).assign(&d);
        flipped.push(f);
    }
    Ok(DiceOutcome {
        mapped: rows + &deltas,
        deltas,
        flipped,
    })
}
