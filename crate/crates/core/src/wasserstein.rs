//! Entropic Wasserstein-2 (squared) between weighted point clouds.
//!
//! The solver runs log-domain Sinkhorn iterations with epsilon-annealing. The
//! ground cost is the squared Euclidean distance and `blur` is the entropic
//! scale itself, in squared-distance units. The reported
//! cost is the dual objective `<a, f> + <b, g>`; its gradient with respect to
//! the source positions follows from the converged plan alone (envelope rule),
//! so no solver iterations are differentiated.
//!
//! With `debiased` set, the cost is the Sinkhorn divergence
//! `OT(P,Q) - OT(P,P)/2 - OT(Q,Q)/2`, which vanishes for `P = Q`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};

/// Weighted points, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::Dimension("point cloud needs at least one point".into()));
        }
        if weights.len() != points.nrows() {
            return Err(Error::Dimension(format!(
                "{} weights for {} points",
                weights.len(),
                points.nrows()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("point cloud contains non-finite coordinates".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("weights must be finite and nonnegative".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    /// Equal mass on every point.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows().max(1);
        Self::new(points, Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// Target entropic scale (squared-distance units).
    pub blur: f64,
    /// Iteration budget at the target blur.
    pub max_iters: usize,
    /// Tolerance on the L1 marginal violation.
    pub tol: f64,
    /// Ratio between successive entropic scales during annealing.
    pub scaling: f64,
    pub debiased: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            blur: 0.05,
            max_iters: 500,
            tol: 1e-4,
            scaling: 0.5,
            debiased: true,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur > 0.0 && self.blur.is_finite()) {
            return Err(Error::Config(format!("blur must be positive, got {}", self.blur)));
        }
        if !(self.scaling > 0.0 && self.scaling < 1.0) {
            return Err(Error::Config(format!(
                "scaling must lie in (0, 1), got {}",
                self.scaling
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TransportPlanResult {
    /// W2^2 estimate: the entropic dual value, or the Sinkhorn divergence when debiased.
    pub cost: f64,
    /// `sum_ij plan_ij * |x_i - y_j|^2` for the source/target plan.
    pub transport_cost: f64,
    pub plan: Array2<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn sq_cost(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((x.nrows(), y.nrows()));
    Zip::from(c.rows_mut()).and(x.rows()).par_for_each(|mut row, xi| {
        for (cij, yj) in row.iter_mut().zip(y.rows()) {
            *cij = xi.iter().zip(yj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    c
}

fn log_weights(w: &Array1<f64>) -> Vec<f64> {
    w.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect()
}

/// Below this many cost entries the row loop stays on one thread.
const PAR_THRESHOLD: usize = 16_384;

fn soft_min_row(row: ndarray::ArrayView1<f64>, log_w: &[f64], pot: &[f64], eps: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for ((c, lw), p) in row.iter().zip(log_w).zip(pot) {
        max = max.max(lw + (p - c) / eps);
    }
    if max == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = row
        .iter()
        .zip(log_w)
        .zip(pot)
        .map(|((c, lw), p)| (lw + (p - c) / eps - max).exp())
        .sum();
    -eps * (max + s.ln())
}

/// `-eps * log sum_j exp(log_w[j] + (pot[j] - cost_row[j]) / eps)` for every row.
fn soft_min(cost: &Array2<f64>, log_w: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
    if cost.len() < PAR_THRESHOLD {
        return cost.rows().into_iter().map(|row| soft_min_row(row, log_w, pot, eps)).collect();
    }
    cost.axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| soft_min_row(row, log_w, pot, eps))
        .collect()
}

/// Geometric schedule from the squared diameter down to `cfg.blur`.
fn eps_schedule(cost: &Array2<f64>, cfg: &SinkhornConfig) -> Result<Vec<f64>> {
    let mut eps = cost.iter().copied().fold(0.0f64, f64::max);
    if !eps.is_finite() {
        // squared distances overflowed; no finite scale to anneal from
        return Err(Error::NotConverged {
            iters: 0,
            residual: f64::INFINITY,
        });
    }
    let mut schedule = Vec::new();
    while eps > cfg.blur {
        schedule.push(eps);
        eps *= cfg.scaling;
    }
    schedule.push(cfg.blur);
    Ok(schedule)
}

fn marginal_residual(weights: &[f64], pot: &[f64], next: &[f64], eps: f64) -> f64 {
    weights
        .iter()
        .zip(pot.iter().zip(next))
        .map(|(w, (p, n))| w * (1.0 - ((p - n) / eps).exp()).abs())
        .sum()
}

struct CrossSolution {
    value: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    eps: f64,
    iterations: usize,
    residual: f64,
}

fn solve_cross(
    cost: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<CrossSolution> {
    let cost_t = cost.t().as_standard_layout().to_owned();
    let (la, lb) = (log_weights(a), log_weights(b));
    let schedule = eps_schedule(cost, cfg)?;
    let mut f = vec![0.0; cost.nrows()];
    let mut g = vec![0.0; cost.ncols()];
    for &eps in &schedule[..schedule.len() - 1] {
        f = soft_min(cost, &lb, &g, eps);
        g = soft_min(&cost_t, &la, &f, eps);
    }
    let eps = *schedule.last().expect("schedule ends at the target blur");
    let aw: Vec<f64> = a.to_vec();
    f = soft_min(cost, &lb, &g, eps);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        g = soft_min(&cost_t, &la, &f, eps);
        let next = soft_min(cost, &lb, &g, eps);
        // (f, g) has exact column sums; `residual` is its row violation
        residual = marginal_residual(&aw, &f, &next, eps);
        if residual <= cfg.tol {
            break;
        }
        f = next;
    }
    if !(residual <= cfg.tol) {
        return Err(Error::NotConverged {
            iters: iterations,
            residual,
        });
    }
    let value = dot_finite(a, &f) + dot_finite(b, &g);
    Ok(CrossSolution {
        value,
        f,
        g,
        eps,
        iterations,
        residual,
    })
}

fn dot_finite(w: &Array1<f64>, pot: &[f64]) -> f64 {
    w.iter().zip(pot).filter(|(w, _)| **w > 0.0).map(|(w, p)| w * p).sum()
}

struct SelfSolution {
    value: f64,
    f: Vec<f64>,
    eps: f64,
    iterations: usize,
    residual: f64,
}

/// Symmetric Sinkhorn for OT(P, P): `f <- (f + T(f)) / 2`.
fn solve_self(cost: &Array2<f64>, a: &Array1<f64>, cfg: &SinkhornConfig) -> Result<SelfSolution> {
    let la = log_weights(a);
    let schedule = eps_schedule(cost, cfg)?;
    let mut f = vec![0.0; cost.nrows()];
    for &eps in &schedule[..schedule.len() - 1] {
        let t = soft_min(cost, &la, &f, eps);
        f.iter_mut().zip(t).for_each(|(fi, ti)| *fi = 0.5 * (*fi + ti));
    }
    let eps = *schedule.last().expect("non-empty");
    let aw = a.to_vec();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let t = soft_min(cost, &la, &f, eps);
        residual = marginal_residual(&aw, &f, &t, eps);
        f.iter_mut().zip(t).for_each(|(fi, ti)| *fi = 0.5 * (*fi + ti));
        if residual <= cfg.tol {
            break;
        }
    }
    if !(residual <= cfg.tol) {
        return Err(Error::NotConverged {
            iters: iterations,
            residual,
        });
    }
    Ok(SelfSolution {
        value: 2.0 * dot_finite(a, &f),
        f,
        eps,
        iterations,
        residual,
    })
}

fn plan_from(
    cost: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    f: &[f64],
    g: &[f64],
    eps: f64,
) -> Array2<f64> {
    let mut plan = Array2::zeros(cost.dim());
    Zip::indexed(&mut plan).and(cost).par_for_each(|(i, j), p, &c| {
        let (ai, bj) = (a[i], b[j]);
        if ai > 0.0 && bj > 0.0 {
            *p = ai * bj * ((f[i] + g[j] - c) / eps).exp();
        }
    });
    plan
}

fn check_dims(p: &PointCloud, q: &PointCloud) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "source has dimension {}, target has {}",
            p.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// Entropic W2^2 (or the Sinkhorn divergence when `cfg.debiased`).
pub fn w2_squared(p: &PointCloud, q: &PointCloud, cfg: &SinkhornConfig) -> Result<TransportPlanResult> {
    Ok(w2_squared_with_grad(p, q, cfg, false)?.0)
}

/// Gradient of [`w2_squared`]'s cost with respect to each source point.
pub fn grad_wrt_source(p: &PointCloud, q: &PointCloud, cfg: &SinkhornConfig) -> Result<Array2<f64>> {
    Ok(w2_squared_with_grad(p, q, cfg, true)?.1.expect("gradient requested"))
}

/// Cost and, optionally, the source gradient from a single solve.
pub fn w2_squared_with_grad(
    p: &PointCloud,
    q: &PointCloud,
    cfg: &SinkhornConfig,
    want_grad: bool,
) -> Result<(TransportPlanResult, Option<Array2<f64>>)> {
    check_dims(p, q)?;
    cfg.validate()?;
    let self_q = if cfg.debiased {
        Some(solve_self(&sq_cost(q.points.view(), q.points.view()), &q.weights, cfg)?.value)
    } else {
        None
    };
    cross_with_grad(p, q, self_q, cfg, want_grad)
}

fn cross_with_grad(
    p: &PointCloud,
    q: &PointCloud,
    self_q: Option<f64>,
    cfg: &SinkhornConfig,
    want_grad: bool,
) -> Result<(TransportPlanResult, Option<Array2<f64>>)> {
    let cost = sq_cost(p.points.view(), q.points.view());
    // Identical clouds: the symmetric solver gives the same fixed point and
    // converges far faster than alternating updates on this input.
    let sol = if p == q {
        let s = solve_self(&cost, &p.weights, cfg)?;
        CrossSolution {
            value: s.value,
            g: s.f.clone(),
            f: s.f,
            eps: s.eps,
            iterations: s.iterations,
            residual: s.residual,
        }
    } else {
        solve_cross(&cost, &p.weights, &q.weights, cfg)?
    };
    let plan = plan_from(&cost, &p.weights, &q.weights, &sol.f, &sol.g, sol.eps);
    let transport_cost = (&plan * &cost).sum();

    let mut grad = want_grad.then(|| displacement_grad(&plan, p.points.view(), q.points.view()));
    let mut value = sol.value;
    if let Some(self_q) = self_q {
        let (self_p, self_plan) = if p == q {
            (sol.value, want_grad.then(|| plan.clone()))
        } else {
            let self_cost = sq_cost(p.points.view(), p.points.view());
            let sp = solve_self(&self_cost, &p.weights, cfg)?;
            let plan = want_grad
                .then(|| plan_from(&self_cost, &p.weights, &p.weights, &sp.f, &sp.f, sp.eps));
            (sp.value, plan)
        };
        value -= 0.5 * (self_p + self_q);
        if let (Some(grad), Some(self_plan)) = (grad.as_mut(), self_plan) {
            *grad -= &displacement_grad(&self_plan, p.points.view(), p.points.view());
        }
    }
    Ok((
        TransportPlanResult {
            cost: value,
            transport_cost,
            plan,
            f: Array1::from(sol.f),
            g: Array1::from(sol.g),
            iterations: sol.iterations,
            residual: sol.residual,
        },
        grad,
    ))
}

/// `grad_i = sum_j plan_ij * 2 (x_i - y_j)`.
fn displacement_grad(plan: &Array2<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let row_mass = plan.sum_axis(Axis(1));
    let pulled = plan.dot(&y);
    let mut grad = x.to_owned();
    for (mut gi, m) in grad.rows_mut().into_iter().zip(row_mass.iter()) {
        gi *= *m;
    }
    (grad - pulled) * 2.0
}

/// A fixed target cloud with its self-transport term solved once, for
/// repeated evaluation against moving source clouds.
#[derive(Clone, Debug)]
pub struct DivergenceToTarget {
    target: PointCloud,
    self_cost: Option<f64>,
    cfg: SinkhornConfig,
}

impl DivergenceToTarget {
    pub fn new(target: PointCloud, cfg: SinkhornConfig) -> Result<Self> {
        cfg.validate()?;
        let self_cost = if cfg.debiased {
            let c = sq_cost(target.points.view(), target.points.view());
            Some(solve_self(&c, &target.weights, &cfg)?.value)
        } else {
            None
        };
        Ok(Self {
            target,
            self_cost,
            cfg,
        })
    }

    pub fn target(&self) -> &PointCloud {
        &self.target
    }

    pub fn config(&self) -> &SinkhornConfig {
        &self.cfg
    }

    pub fn cost(&self, source: &PointCloud) -> Result<f64> {
        check_dims(source, &self.target)?;
        Ok(cross_with_grad(source, &self.target, self.self_cost, &self.cfg, false)?.0.cost)
    }

    pub fn cost_and_grad(&self, source: &PointCloud) -> Result<(f64, Array2<f64>)> {
        check_dims(source, &self.target)?;
        let (res, grad) = cross_with_grad(source, &self.target, self.self_cost, &self.cfg, true)?;
        Ok((res.cost, grad.expect("gradient requested")))
    }
}

/// Exact W2^2 between equal-size uniform clouds via optimal assignment.
pub fn w2_squared_exact(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_dims(p, q)?;
    let n = p.len();
    if n != q.len() {
        return Err(Error::Dimension(format!(
            "exact solver needs equal sizes, got {n} and {}",
            q.len()
        )));
    }
    if n > 512 {
        return Err(Error::Dimension(format!("exact solver limited to 512 points, got {n}")));
    }
    let uniform = |c: &PointCloud| c.weights.iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-12);
    if !uniform(p) || !uniform(q) {
        return Err(Error::Config("exact solver needs uniform weights".into()));
    }
    let cost = sq_cost(p.points.view(), q.points.view());
    let (_, total) = assignment::solve(&cost);
    Ok(total / n as f64)
}
