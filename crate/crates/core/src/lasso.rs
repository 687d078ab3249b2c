//! L1-penalized weighted logistic regression of events on lagged spikes.
//!
//! For target neuron `i` and predictor bin `m`, the event probability in the
//! next bin is
//!
//! ```text
//! pi(i, m) = 1 / (1 + exp(-b0(i) - sum_{j != i} beta(j, i) * x[m][j]))
//! ```
//!
//! and the loss is the weighted negative log-likelihood
//!
//! ```text
//! l(beta) = -sum_{m=0}^{M-2} sum_i w[m+1][i] * ( y[m+1][i] log pi(i, m)
//!                                            + (1 - y[m+1][i]) log(1 - pi(i, m)) )
//! ```
//!
//! penalized by `lambda * sum |beta(j, i)|`. Intercepts are not penalized.
//! The weight of a response is chosen from that response's own value, so the
//! balancing rule puts `#ones` on every zero and `#zeros` on every one.
//!
//! Loss and penalty separate across targets, so each target is fitted on its
//! own. The default solver is a proximal Newton method: a quadratic model of
//! the loss at the current point is minimized by cyclic soft-thresholding
//! coordinate descent, followed by a backtracking line search on the true
//! objective. A plain accelerated proximal-gradient solver over all
//! coefficients jointly is available as a second route.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::RankedEdgeList;
use crate::events::BinaryProcessMatrix;
use crate::graph::DirectedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    /// `w = sum of all y` on zeros and `w = sum of all (1 - y)` on ones.
    #[default]
    Balance,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TopologyRule {
    /// Edge iff the coefficient is strictly positive.
    #[default]
    Positive,
    /// Edge iff the coefficient is non-zero.
    Nonzero,
}

impl TopologyRule {
    pub fn includes(self, beta: f64) -> bool {
        match self {
            TopologyRule::Positive => beta > 0.0,
            TopologyRule::Nonzero => beta != 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    ProximalNewton,
    ProximalGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol_kkt: f64,
    pub tol_step: f64,
    pub max_iter: usize,
    pub shared_intercept: bool,
    pub solver: SolverKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_kkt: 1e-4,
            tol_step: 1e-7,
            max_iter: 100_000,
            shared_intercept: false,
            solver: SolverKind::ProximalNewton,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_kkt > 0.0 && self.tol_step > 0.0) {
            return Err(Error::Parameter("solver tolerances must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Aligned spike predictors, event responses and response weights.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    x: BinaryProcessMatrix,
    y: BinaryProcessMatrix,
    /// bins x neurons, aligned with `y`; mean 1.
    weights: Array2<f64>,
    /// Active predictors of each predictor row `m = 0..M-1`.
    active: Vec<Vec<usize>>,
}

/// Raw (unnormalized) weights, one per entry of `y`.
pub fn raw_weights(y: &BinaryProcessMatrix, rule: WeightRule) -> Result<Array2<f64>> {
    match rule {
        WeightRule::None => Ok(Array2::ones(y.values.dim())),
        WeightRule::Balance => {
            let ones = y.count();
            let zeros = y.values.len() - ones;
            if ones == 0 {
                return Err(Error::Degenerate(
                    "no events at all: the balancing weight rule is inapplicable".into(),
                ));
            }
            if zeros == 0 {
                return Err(Error::Degenerate(
                    "every bin holds an event: the balancing weight rule gives zero weight".into(),
                ));
            }
            Ok(y.values
                .mapv(|v| if v == 1 { zeros as f64 } else { ones as f64 }))
        }
    }
}

impl RegressionProblem {
    pub fn new(x: BinaryProcessMatrix, y: BinaryProcessMatrix, rule: WeightRule) -> Result<Self> {
        if x.values.dim() != y.values.dim() {
            return Err(Error::Data(format!(
                "spike matrix {:?} and event matrix {:?} differ in shape",
                x.values.dim(),
                y.values.dim()
            )));
        }
        if (x.delta - y.delta).abs() > 1e-12 * x.delta.abs().max(1.0) {
            return Err(Error::Data(format!(
                "bin widths differ: {} vs {}",
                x.delta, y.delta
            )));
        }
        if x.n_bins() < 2 {
            return Err(Error::Data(
                "need at least two bins for a one-bin lag".into(),
            ));
        }
        if x.n_neurons() < 2 {
            return Err(Error::Data("need at least two neurons".into()));
        }
        let raw = raw_weights(&y, rule)?;
        let mean = raw.mean().unwrap_or(1.0);
        let weights = raw / mean;
        let active = x
            .values
            .rows()
            .into_iter()
            .take(x.n_bins() - 1)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter_map(|(j, &v)| (v == 1).then_some(j))
                    .collect()
            })
            .collect();
        Ok(RegressionProblem {
            x,
            y,
            weights,
            active,
        })
    }

    pub fn with_weights(
        x: BinaryProcessMatrix,
        y: BinaryProcessMatrix,
        weights: Array2<f64>,
    ) -> Result<Self> {
        if weights.dim() != y.values.dim() {
            return Err(Error::Data(
                "weights must match the event matrix shape".into(),
            ));
        }
        if !weights.iter().all(|&w| w.is_finite() && w > 0.0) {
            return Err(Error::Data("weights must be finite and positive".into()));
        }
        let mut p = RegressionProblem::new(x, y, WeightRule::None)?;
        p.weights = weights;
        Ok(p)
    }

    pub fn n_neurons(&self) -> usize {
        self.x.n_neurons()
    }

    /// Number of predictor/response row pairs, `M - 1`.
    pub fn n_rows(&self) -> usize {
        self.x.n_bins() - 1
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn spikes(&self) -> &BinaryProcessMatrix {
        &self.x
    }

    pub fn events(&self) -> &BinaryProcessMatrix {
        &self.y
    }

    fn response(&self, m: usize, i: usize) -> (f64, f64) {
        (self.y.values[[m + 1, i]] as f64, self.weights[[m + 1, i]])
    }
}

pub fn build_problem(
    x: BinaryProcessMatrix,
    y: BinaryProcessMatrix,
    rule: WeightRule,
) -> Result<RegressionProblem> {
    RegressionProblem::new(x, y, rule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    /// One per target. With a shared intercept every entry holds the same value.
    pub intercepts: Vec<f64>,
    /// source x target; the diagonal stays zero.
    pub betas: Array2<f64>,
    pub lambda: f64,
}

impl CoefficientSet {
    pub fn zeros(n: usize, lambda: f64) -> Self {
        CoefficientSet {
            intercepts: vec![0.0; n],
            betas: Array2::zeros((n, n)),
            lambda,
        }
    }

    pub fn n_nonzero(&self) -> usize {
        self.betas.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn l1_norm(&self) -> f64 {
        self.betas.iter().map(|b| b.abs()).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let n = self.intercepts.len();
        let mut betas = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let b = self.betas[[j, i]];
                if b != 0.0 {
                    betas.push(json!([j, i, b]));
                }
            }
        }
        json!({
            "lambda": self.lambda,
            "intercepts": self.intercepts,
            "betas": betas,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("coefficient JSON: {m}"));
        let lambda = v["lambda"].as_f64().ok_or_else(|| bad("missing lambda"))?;
        let intercepts: Vec<f64> = v["intercepts"]
            .as_array()
            .ok_or_else(|| bad("missing intercepts"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("intercept not a number")))
            .collect::<Result<_>>()?;
        let n = intercepts.len();
        let mut betas = Array2::zeros((n, n));
        for e in v["betas"].as_array().ok_or_else(|| bad("missing betas"))? {
            let (j, i, b) = (
                e[0].as_u64().ok_or_else(|| bad("bad source"))? as usize,
                e[1].as_u64().ok_or_else(|| bad("bad target"))? as usize,
                e[2].as_f64().ok_or_else(|| bad("bad value"))?,
            );
            if j >= n || i >= n || i == j {
                return Err(bad("beta index out of range or on the diagonal"));
            }
            betas[[j, i]] = b;
        }
        Ok(CoefficientSet {
            intercepts,
            betas,
            lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Partial derivative for each target's own intercept.
    pub intercepts: Vec<f64>,
    pub betas: Array2<f64>,
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// `-[y log pi + (1 - y) log(1 - pi)]` for a 0/1 response, without cancellation.
fn response_loss(eta: f64, y: f64) -> f64 {
    if y > 0.5 {
        softplus(-eta)
    } else {
        softplus(eta)
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Weighted negative log-likelihood and its exact gradient.
pub fn nll(problem: &RegressionProblem, coeffs: &CoefficientSet) -> Result<(f64, Gradient)> {
    let n = problem.n_neurons();
    if coeffs.intercepts.len() != n || coeffs.betas.dim() != (n, n) {
        return Err(Error::Data(format!(
            "coefficients sized for {} neurons, problem has {n}",
            coeffs.intercepts.len()
        )));
    }
    if !coeffs
        .intercepts
        .iter()
        .chain(coeffs.betas.iter())
        .all(|v| v.is_finite())
    {
        return Err(Error::Numeric("non-finite coefficient".into()));
    }
    let mut value = 0.0;
    let mut g0 = vec![0.0; n];
    let mut gb = Array2::<f64>::zeros((n, n));
    for (m, act) in problem.active.iter().enumerate() {
        for i in 0..n {
            let eta = coeffs.intercepts[i]
                + act
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| coeffs.betas[[j, i]])
                    .sum::<f64>();
            let (y, w) = problem.response(m, i);
            value += w * response_loss(eta, y);
            let r = w * (sigmoid(eta) - y);
            g0[i] += r;
            for &j in act {
                if j != i {
                    gb[[j, i]] += r;
                }
            }
        }
    }
    Ok((
        value,
        Gradient {
            intercepts: g0,
            betas: gb,
        },
    ))
}

/// Penalized objective `l(beta) + lambda * |beta|_1`.
pub fn objective(problem: &RegressionProblem, coeffs: &CoefficientSet) -> Result<f64> {
    let (l, _) = nll(problem, coeffs)?;
    Ok(l + coeffs.lambda * coeffs.l1_norm())
}

/// Largest first-order optimality violation of `coeffs` at its own lambda.
pub fn kkt_violation(
    problem: &RegressionProblem,
    coeffs: &CoefficientSet,
    shared_intercept: bool,
) -> Result<f64> {
    let (_, g) = nll(problem, coeffs)?;
    let n = problem.n_neurons();
    let lambda = coeffs.lambda;
    let mut worst: f64 = if shared_intercept {
        g.intercepts.iter().sum::<f64>().abs()
    } else {
        g.intercepts.iter().fold(0.0, |a, v| a.max(v.abs()))
    };
    for j in 0..n {
        for i in 0..n {
            if i == j {
                continue;
            }
            let b = coeffs.betas[[j, i]];
            let gi = g.betas[[j, i]];
            let v = if b == 0.0 {
                (gi.abs() - lambda).max(0.0)
            } else {
                (gi + lambda * b.signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Intercept-only optimum: the weighted event rate per target (or pooled).
fn null_intercepts(problem: &RegressionProblem, shared: bool) -> Vec<f64> {
    let n = problem.n_neurons();
    let mut wy = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for m in 0..problem.n_rows() {
        for i in 0..n {
            let (y, w) = problem.response(m, i);
            wy[i] += w * y;
            ws[i] += w;
        }
    }
    let logit = |a: f64, s: f64| {
        let p = a / s;
        (p / (1.0 - p)).ln()
    };
    if shared {
        let b0 = logit(wy.iter().sum(), ws.iter().sum());
        vec![b0; n]
    } else {
        (0..n).map(|i| logit(wy[i], ws[i])).collect()
    }
}

/// Intercept-only fit at `lambda`. Targets without any positive (or negative)
/// response get a finite intercept whose gradient is half the tolerance.
fn null_fit(problem: &RegressionProblem, lambda: f64, opts: &SolverOptions) -> CoefficientSet {
    let n = problem.n_neurons();
    let mut intercepts = null_intercepts(problem, opts.shared_intercept);
    for b0 in intercepts.iter_mut() {
        if !b0.is_finite() {
            // the total response weight bounds the gradient
            let total: f64 = problem.weights.sum();
            let mag = (0.5 * opts.tol_kkt / total).ln().abs();
            *b0 = if *b0 > 0.0 { mag } else { -mag };
        }
    }
    CoefficientSet {
        intercepts,
        betas: Array2::zeros((n, n)),
        lambda,
    }
}

/// Smallest lambda whose fit has no non-zero coefficient.
pub fn lambda_max(problem: &RegressionProblem, shared_intercept: bool) -> Result<f64> {
    let opts = SolverOptions {
        shared_intercept,
        ..SolverOptions::default()
    };
    let fit = null_fit(problem, 0.0, &opts);
    let (_, g) = nll(problem, &fit)?;
    Ok(g.betas.iter().fold(0.0, |a, v| a.max(v.abs())))
}

/// Responses and weights of one target, with the shared predictor rows.
struct Target<'a> {
    i: usize,
    n: usize,
    active: &'a [Vec<usize>],
    y: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> Target<'a> {
    fn new(p: &'a RegressionProblem, i: usize) -> Self {
        let (y, w) = (0..p.n_rows()).map(|m| p.response(m, i)).unzip();
        Target {
            i,
            n: p.n_neurons(),
            active: &p.active,
            y,
            w,
        }
    }

    fn eta(&self, m: usize, b0: f64, b: &[f64]) -> f64 {
        b0 + self.active[m]
            .iter()
            .filter(|&&j| j != self.i)
            .map(|&j| b[j])
            .sum::<f64>()
    }

    fn etas(&self, b0: f64, b: &[f64]) -> Vec<f64> {
        (0..self.y.len()).map(|m| self.eta(m, b0, b)).collect()
    }

    /// Loss at `(b0, b)` minus the loss at the linear predictors `old`.
    fn loss_change(&self, old: &[f64], b0: f64, b: &[f64]) -> f64 {
        (0..self.y.len())
            .map(|m| {
                let eta = self.eta(m, b0, b);
                self.w[m] * (response_loss(eta, self.y[m]) - response_loss(old[m], self.y[m]))
            })
            .sum()
    }

    /// Gradient and Hessian over `[b0, b_0 .. b_{n-1}]`.
    fn derivatives(&self, b0: f64, b: &[f64]) -> (Vec<f64>, Array2<f64>) {
        let dim = self.n + 1;
        let mut g = vec![0.0; dim];
        let mut h = Array2::<f64>::zeros((dim, dim));
        for m in 0..self.y.len() {
            let eta = self.eta(m, b0, b);
            let pi = sigmoid(eta);
            let r = self.w[m] * (pi - self.y[m]);
            let v = self.w[m] * pi * (1.0 - pi);
            g[0] += r;
            h[[0, 0]] += v;
            for &j in &self.active[m] {
                if j == self.i {
                    continue;
                }
                g[1 + j] += r;
                h[[0, 1 + j]] += v;
                h[[1 + j, 0]] += v;
                for &k in &self.active[m] {
                    if k != self.i {
                        h[[1 + j, 1 + k]] += v;
                    }
                }
            }
        }
        (g, h)
    }

    fn has_both_outcomes(&self) -> bool {
        let pos = self.y.contains(&1.0);
        let neg = self.y.contains(&0.0);
        pos && neg
    }
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

struct TargetFit {
    b0: f64,
    b: Vec<f64>,
}

/// Proximal Newton on one target. With `fit_intercept = false` the intercept
/// stays at `b0`.
fn solve_target(
    t: &Target,
    lambda: f64,
    mut b0: f64,
    mut b: Vec<f64>,
    fit_intercept: bool,
    opts: &SolverOptions,
) -> Result<TargetFit> {
    let dim = t.n + 1;
    let l1 = |b: &[f64]| b.iter().map(|v| v.abs()).sum::<f64>();
    let mut worst = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let (g, h) = t.derivatives(b0, &b);

        // optimality check on the current point
        worst = if fit_intercept { g[0].abs() } else { 0.0 };
        for j in (0..t.n).filter(|&j| j != t.i) {
            let gj = g[1 + j];
            let v = if b[j] == 0.0 {
                (gj.abs() - lambda).max(0.0)
            } else {
                (gj + lambda * b[j].signum()).abs()
            };
            worst = worst.max(v);
        }

        // minimize the quadratic model by coordinate descent
        let mut d = vec![0.0; dim];
        let mut hd = vec![0.0; dim];
        let coords: Vec<usize> = (0..dim)
            .filter(|&k| (k != 0 || fit_intercept) && k != 1 + t.i && h[[k, k]] > 0.0)
            .collect();
        for _sweep in 0..10_000 {
            let mut max_delta: f64 = 0.0;
            for &k in &coords {
                let hkk = h[[k, k]];
                let gk = g[k] + hd[k];
                let delta = if k == 0 {
                    -gk / hkk
                } else {
                    let z = b[k - 1] + d[k];
                    soft_threshold(hkk * z - gk, lambda) / hkk - z
                };
                if delta != 0.0 {
                    d[k] += delta;
                    for (l, hdl) in hd.iter_mut().enumerate() {
                        *hdl += h[[l, k]] * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < 1e-14 {
                break;
            }
        }

        // backtracking on the penalized objective. The change is summed row
        // by row: near the optimum it is far below the rounding error of the
        // objective itself.
        let b_dir: Vec<f64> = (0..t.n).map(|j| b[j] + d[1 + j]).collect();
        let decrease =
            g.iter().zip(&d).map(|(a, c)| a * c).sum::<f64>() + lambda * (l1(&b_dir) - l1(&b));
        let max_d = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max_d == 0.0 || decrease >= 0.0 {
            if worst <= opts.tol_kkt {
                return Ok(TargetFit { b0, b });
            }
            break;
        }
        let etas = t.etas(b0, &b);
        let mut step = 1.0;
        let accepted = loop {
            let nb0 = b0 + step * d[0];
            let nb: Vec<f64> = (0..t.n).map(|j| b[j] + step * d[1 + j]).collect();
            let change = t.loss_change(&etas, nb0, &nb) + lambda * (l1(&nb) - l1(&b));
            if change <= 1e-4 * step * decrease {
                break Some((nb0, nb));
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        let Some((new_b0, new_b)) = accepted else {
            if worst <= opts.tol_kkt {
                return Ok(TargetFit { b0, b });
            }
            break;
        };
        let moved = step * max_d;
        b0 = new_b0;
        b = new_b;
        if moved < opts.tol_step && worst <= opts.tol_kkt {
            return Ok(TargetFit { b0, b });
        }
    }
    Err(Error::Convergence {
        lambda,
        iterations,
        worst_violation: worst,
    })
}

fn fit_per_target(
    problem: &RegressionProblem,
    lambda: f64,
    warm: &CoefficientSet,
    opts: &SolverOptions,
) -> Result<CoefficientSet> {
    let n = problem.n_neurons();
    let fallback = null_fit(problem, lambda, opts);
    let fits: Vec<TargetFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = Target::new(problem, i);
            if !t.has_both_outcomes() {
                return Ok(TargetFit {
                    b0: fallback.intercepts[i],
                    b: vec![0.0; n],
                });
            }
            let b: Vec<f64> = (0..n)
                .map(|j| if j == i { 0.0 } else { warm.betas[[j, i]] })
                .collect();
            solve_target(&t, lambda, warm.intercepts[i], b, true, opts)
        })
        .collect::<Result<_>>()?;
    let mut out = CoefficientSet::zeros(n, lambda);
    for (i, f) in fits.into_iter().enumerate() {
        out.intercepts[i] = f.b0;
        for j in 0..n {
            out.betas[[j, i]] = f.b[j];
        }
    }
    Ok(out)
}

/// Block coordinate descent: betas per target at fixed intercept, then a
/// one-dimensional Newton solve for the common intercept.
fn fit_shared_intercept(
    problem: &RegressionProblem,
    lambda: f64,
    warm: &CoefficientSet,
    opts: &SolverOptions,
) -> Result<CoefficientSet> {
    let n = problem.n_neurons();
    let targets: Vec<Target> = (0..n).map(|i| Target::new(problem, i)).collect();
    let mut b0 = warm.intercepts.iter().sum::<f64>() / n as f64;
    let mut betas = warm.betas.clone();
    let inner = SolverOptions {
        tol_step: opts.tol_step * 0.1,
        tol_kkt: opts.tol_kkt * 0.1,
        ..opts.clone()
    };
    for _ in 0..opts.max_iter.min(10_000) {
        let fits: Vec<TargetFit> = targets
            .par_iter()
            .map(|t| {
                let b: Vec<f64> = (0..n).map(|j| betas[[j, t.i]]).collect();
                solve_target(t, lambda, b0, b, false, &inner)
            })
            .collect::<Result<_>>()?;
        let mut change: f64 = 0.0;
        for (i, f) in fits.into_iter().enumerate() {
            for j in 0..n {
                change = change.max((betas[[j, i]] - f.b[j]).abs());
                betas[[j, i]] = f.b[j];
            }
        }
        for _ in 0..100 {
            let (mut g, mut h) = (0.0, 0.0);
            for t in &targets {
                let b: Vec<f64> = (0..n).map(|j| betas[[j, t.i]]).collect();
                for m in 0..t.y.len() {
                    let pi = sigmoid(t.eta(m, b0, &b));
                    g += t.w[m] * (pi - t.y[m]);
                    h += t.w[m] * pi * (1.0 - pi);
                }
            }
            if h <= 0.0 {
                break;
            }
            let step = g / h;
            b0 -= step;
            change = change.max(step.abs());
            if step.abs() < 1e-13 {
                break;
            }
        }
        let coeffs = CoefficientSet {
            intercepts: vec![b0; n],
            betas: betas.clone(),
            lambda,
        };
        if change < opts.tol_step && kkt_violation(problem, &coeffs, true)? <= opts.tol_kkt {
            return Ok(coeffs);
        }
    }
    let coeffs = CoefficientSet {
        intercepts: vec![b0; n],
        betas,
        lambda,
    };
    Err(Error::Convergence {
        lambda,
        iterations: opts.max_iter.min(10_000),
        worst_violation: kkt_violation(problem, &coeffs, true)?,
    })
}

/// Accelerated proximal gradient over every coefficient at once, with
/// backtracking on the step and restart when the objective rises.
fn fit_proximal_gradient(
    problem: &RegressionProblem,
    lambda: f64,
    warm: &CoefficientSet,
    opts: &SolverOptions,
) -> Result<CoefficientSet> {
    let n = problem.n_neurons();
    let shared = opts.shared_intercept;
    let prox = |c: &CoefficientSet, g: &Gradient, step: f64| {
        let mut out = c.clone();
        if shared {
            let s: f64 = g.intercepts.iter().sum();
            out.intercepts.iter_mut().for_each(|b| *b -= step * s);
        } else {
            for (b, gi) in out.intercepts.iter_mut().zip(&g.intercepts) {
                *b -= step * gi;
            }
        }
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    out.betas[[j, i]] =
                        soft_threshold(c.betas[[j, i]] - step * g.betas[[j, i]], step * lambda);
                }
            }
        }
        out
    };
    let diff_dot = |a: &CoefficientSet, b: &CoefficientSet, g: &Gradient| {
        let mut dot = 0.0;
        let mut sq = 0.0;
        let gs: f64 = g.intercepts.iter().sum();
        for i in 0..n {
            let d = a.intercepts[i] - b.intercepts[i];
            sq += d * d;
            dot += if shared {
                d * gs / n as f64
            } else {
                d * g.intercepts[i]
            };
        }
        if shared {
            // the n copies of one parameter count once
            let d = a.intercepts[0] - b.intercepts[0];
            sq = d * d;
            dot = d * gs;
        }
        for (x, (y, gg)) in a.betas.iter().zip(b.betas.iter().zip(g.betas.iter())) {
            let d = x - y;
            sq += d * d;
            dot += d * gg;
        }
        (dot, sq)
    };

    let mut x = warm.clone();
    x.lambda = lambda;
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut step = 1.0 / problem.n_rows().max(1) as f64;
    let mut f_x = objective(problem, &x)?;
    let mut worst = f64::INFINITY;
    let mut iter = 0usize;
    for _ in 0..opts.max_iter {
        let (l_y, g_y) = nll(problem, &y)?;
        let candidate = loop {
            let c = prox(&y, &g_y, step);
            let (l_c, _) = nll(problem, &c)?;
            let (dot, sq) = diff_dot(&c, &y, &g_y);
            if l_c <= l_y + dot + sq / (2.0 * step) + 1e-12 * l_y.abs() {
                break c;
            }
            step *= 0.5;
            if step < 1e-30 {
                return Err(Error::Numeric("proximal gradient step collapsed".into()));
            }
        };
        let f_c = objective(problem, &candidate)?;
        let moved = candidate
            .betas
            .iter()
            .zip(x.betas.iter())
            .map(|(a, b)| (a - b).abs())
            .chain(
                candidate
                    .intercepts
                    .iter()
                    .zip(&x.intercepts)
                    .map(|(a, b)| (a - b).abs()),
            )
            .fold(0.0, f64::max);
        if f_c > f_x {
            // restart acceleration from the last accepted point
            momentum = 1.0;
            y = x.clone();
            continue;
        }
        let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_m;
        let mut ny = candidate.clone();
        for (o, (c, p)) in ny
            .intercepts
            .iter_mut()
            .zip(candidate.intercepts.iter().zip(&x.intercepts))
        {
            *o = c + beta * (c - p);
        }
        for ((o, c), p) in ny
            .betas
            .iter_mut()
            .zip(candidate.betas.iter())
            .zip(x.betas.iter())
        {
            *o = c + beta * (c - p);
        }
        momentum = next_m;
        x = candidate;
        f_x = f_c;
        y = ny;
        step *= 1.5;
        iter += 1;
        if moved < opts.tol_step || iter.is_multiple_of(10) {
            worst = kkt_violation(problem, &x, shared)?;
            if worst <= opts.tol_kkt {
                return Ok(x);
            }
        }
    }
    Err(Error::Convergence {
        lambda,
        iterations: opts.max_iter,
        worst_violation: worst.min(kkt_violation(problem, &x, shared)?),
    })
}

/// Minimizes the penalized objective at `lambda`, starting from `warm` when given.
/// The returned fit always carries a verified optimality certificate.
pub fn fit_lasso_from(
    problem: &RegressionProblem,
    lambda: f64,
    warm: Option<&CoefficientSet>,
    opts: &SolverOptions,
) -> Result<CoefficientSet> {
    opts.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda = {lambda} must be >= 0")));
    }
    let lmax = lambda_max(problem, opts.shared_intercept)?;
    if lambda >= lmax {
        return Ok(null_fit(problem, lambda, opts));
    }
    let start = match warm {
        Some(w) => {
            if w.intercepts.len() != problem.n_neurons() {
                return Err(Error::Data("warm start has the wrong size".into()));
            }
            w.clone()
        }
        None => null_fit(problem, lambda, opts),
    };
    let fit = match (opts.solver, opts.shared_intercept) {
        (SolverKind::ProximalGradient, _) => fit_proximal_gradient(problem, lambda, &start, opts)?,
        (SolverKind::ProximalNewton, false) => fit_per_target(problem, lambda, &start, opts)?,
        (SolverKind::ProximalNewton, true) => fit_shared_intercept(problem, lambda, &start, opts)?,
    };
    let worst = kkt_violation(problem, &fit, opts.shared_intercept)?;
    if worst > opts.tol_kkt {
        return Err(Error::Convergence {
            lambda,
            iterations: opts.max_iter,
            worst_violation: worst,
        });
    }
    Ok(fit)
}

pub fn fit_lasso(
    problem: &RegressionProblem,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<CoefficientSet> {
    fit_lasso_from(problem, lambda, None, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOptions {
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            n_lambdas: 50,
            lambda_min_ratio: 1e-3,
        }
    }
}

impl PathOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambdas < 2 {
            return Err(Error::Parameter("n_lambdas must be at least 2".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Parameter(
                "lambda_min_ratio must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<CoefficientSet>,
}

/// Log-spaced lambdas from `lambda_max` down to `lambda_max * lambda_min_ratio`,
/// each fit warm-started from the previous one.
pub fn fit_path(
    problem: &RegressionProblem,
    path: &PathOptions,
    opts: &SolverOptions,
) -> Result<LambdaPath> {
    path.validate()?;
    let lmax = lambda_max(problem, opts.shared_intercept)?;
    if lmax == 0.0 {
        return Err(Error::Degenerate(
            "lambda_max is zero: no predictor correlates with any response".into(),
        ));
    }
    let k = path.n_lambdas;
    let lambdas: Vec<f64> = (0..k)
        .map(|s| lmax * path.lambda_min_ratio.powf(s as f64 / (k - 1) as f64))
        .collect();
    let mut fits: Vec<CoefficientSet> = Vec::with_capacity(k);
    for &lambda in &lambdas {
        let fit = fit_lasso_from(problem, lambda, fits.last(), opts)?;
        fits.push(fit);
    }
    Ok(LambdaPath { lambdas, fits })
}

impl LambdaPath {
    /// `lambda,n_nonzero,objective`
    pub fn summary_csv(&self, problem: &RegressionProblem) -> Result<String> {
        let mut out = String::from("lambda,n_nonzero,objective\n");
        for fit in &self.fits {
            out.push_str(&format!(
                "{},{},{}\n",
                fit.lambda,
                fit.n_nonzero(),
                objective(problem, fit)?
            ));
        }
        Ok(out)
    }

    pub fn write_fits_json(&self, path: &Path) -> Result<()> {
        let doc: Vec<serde_json::Value> = self.fits.iter().map(CoefficientSet::to_json).collect();
        let text = serde_json::to_string_pretty(&doc).expect("fits serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_fits_json(path: &Path) -> Result<Vec<CoefficientSet>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Vec<serde_json::Value> =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_owned(),
                source,
            })?;
        v.iter().map(CoefficientSet::from_json).collect()
    }

    /// Edges ordered by the largest lambda at which they are first included,
    /// ties by |beta| at the last lambda, then by `(source, target)`.
    /// The score of an edge is its entry lambda.
    pub fn rank_edges(&self, rule: TopologyRule) -> RankedEdgeList {
        let Some(last) = self.fits.last() else {
            return RankedEdgeList::new("lasso", Vec::new());
        };
        let n = last.intercepts.len();
        let mut entries: Vec<(usize, usize, f64, f64)> = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if i == j {
                    continue;
                }
                if let Some(fit) = self.fits.iter().find(|f| rule.includes(f.betas[[j, i]])) {
                    entries.push((j, i, fit.lambda, last.betas[[j, i]].abs()));
                }
            }
        }
        entries.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then(b.3.total_cmp(&a.3))
                .then((a.0, a.1).cmp(&(b.0, b.1)))
        });
        RankedEdgeList::new(
            "lasso",
            entries.into_iter().map(|(j, i, l, _)| (j, i, l)).collect(),
        )
    }
}

pub fn estimate_topology(coeffs: &CoefficientSet, rule: TopologyRule) -> DirectedGraph {
    let n = coeffs.intercepts.len();
    let mut g = DirectedGraph::empty(n);
    for j in 0..n {
        for i in 0..n {
            if i != j && rule.includes(coeffs.betas[[j, i]]) {
                g.insert(j, i).expect("off-diagonal pair inserted once");
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::ProcessKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(values: Array2<u8>, kind: ProcessKind) -> BinaryProcessMatrix {
        BinaryProcessMatrix {
            delta: 1.0,
            values,
            kind,
        }
    }

    /// Random instance whose events follow spikes of neuron 0 on target 1.
    pub(crate) fn random_problem(n: usize, bins: usize, seed: u64) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<u8>::zeros((bins, n));
        let mut y = Array2::<u8>::zeros((bins, n));
        for m in 0..bins {
            for j in 0..n {
                x[[m, j]] = (rng.random::<f64>() < 0.2) as u8;
            }
        }
        for m in 1..bins {
            for i in 0..n {
                let driven = i == 1 && x[[m - 1, 0]] == 1;
                let p = if driven { 0.7 } else { 0.15 };
                y[[m, i]] = (rng.random::<f64>() < p) as u8;
            }
        }
        RegressionProblem::new(
            mat(x, ProcessKind::Spike),
            mat(y, ProcessKind::Event),
            WeightRule::Balance,
        )
        .unwrap()
    }

    fn random_coeffs(n: usize, seed: u64) -> CoefficientSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = CoefficientSet::zeros(n, 0.0);
        for i in 0..n {
            c.intercepts[i] = rng.random_range(-2.0..1.0);
            for j in 0..n {
                if i != j {
                    c.betas[[j, i]] = rng.random_range(-1.5..1.5);
                }
            }
        }
        c
    }

    #[test]
    fn balance_weights_by_direct_substitution() {
        // 10 ones and 90 zeros in total
        let mut y = Array2::<u8>::zeros((25, 4));
        for k in 0..10 {
            y[[k * 2, k % 4]] = 1;
        }
        let y = mat(y, ProcessKind::Event);
        let w = raw_weights(&y, WeightRule::Balance).unwrap();
        for (v, yv) in w.iter().zip(y.values.iter()) {
            assert_eq!(*v, if *yv == 1 { 90.0 } else { 10.0 });
        }
        let none = raw_weights(&y, WeightRule::None).unwrap();
        assert!(none.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn degenerate_responses_rejected() {
        let x = mat(Array2::zeros((10, 3)), ProcessKind::Spike);
        let zeros = mat(Array2::zeros((10, 3)), ProcessKind::Event);
        let ones = mat(Array2::ones((10, 3)), ProcessKind::Event);
        assert!(matches!(
            RegressionProblem::new(x.clone(), zeros, WeightRule::Balance),
            Err(Error::Degenerate(m)) if m.contains("weight rule")
        ));
        assert!(matches!(
            RegressionProblem::new(x, ones, WeightRule::Balance),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn weights_normalized_to_unit_mean() {
        let p = random_problem(3, 80, 1);
        assert_relative_eq!(p.weights().mean().unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_coefficients_give_log_two() {
        let mut y = Array2::<u8>::zeros((40, 3));
        y[[5, 1]] = 1;
        let p = RegressionProblem::new(
            mat(Array2::zeros((40, 3)), ProcessKind::Spike),
            mat(y, ProcessKind::Event),
            WeightRule::None,
        )
        .unwrap();
        let (l, _) = nll(&p, &CoefficientSet::zeros(3, 0.0)).unwrap();
        assert_relative_eq!(l, (39 * 3) as f64 * 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn perfect_fit_limit() {
        let p = RegressionProblem::new(
            mat(Array2::zeros((20, 2)), ProcessKind::Spike),
            mat(Array2::ones((20, 2)), ProcessKind::Event),
            WeightRule::None,
        )
        .unwrap();
        let mut c = CoefficientSet::zeros(2, 0.0);
        let mut prev = f64::INFINITY;
        for b0 in [5.0, 20.0, 50.0, 700.0] {
            c.intercepts = vec![b0; 2];
            let (l, _) = nll(&p, &c).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-250);
    }

    #[test]
    fn non_finite_coefficients_rejected() {
        let p = random_problem(3, 30, 2);
        let mut c = CoefficientSet::zeros(3, 0.0);
        c.betas[[0, 1]] = f64::NAN;
        assert!(matches!(nll(&p, &c), Err(Error::Numeric(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = random_problem(3, 50, 7);
        let c = random_coeffs(3, 8);
        let (_, g) = nll(&p, &c).unwrap();
        let h = 1e-5;
        let f = |c: &CoefficientSet| nll(&p, c).unwrap().0;
        for i in 0..3 {
            let (mut a, mut b) = (c.clone(), c.clone());
            a.intercepts[i] += h;
            b.intercepts[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - g.intercepts[i]).abs() <= 1e-6 * fd.abs().max(1.0));
            for j in (0..3).filter(|&j| j != i) {
                let (mut a, mut b) = (c.clone(), c.clone());
                a.betas[[j, i]] += h;
                b.betas[[j, i]] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                assert!((fd - g.betas[[j, i]]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn above_lambda_max_everything_is_zero() {
        let p = random_problem(4, 200, 3);
        let opts = SolverOptions::default();
        let lmax = lambda_max(&p, false).unwrap();
        for scale in [1.0, 1.5, 10.0] {
            let fit = fit_lasso(&p, lmax * scale, &opts).unwrap();
            assert_eq!(fit.n_nonzero(), 0);
        }
        let below = fit_lasso(&p, lmax * 0.9, &opts).unwrap();
        assert!(below.n_nonzero() > 0);
    }

    #[test]
    fn fits_carry_certificate_and_beat_null_point() {
        let p = random_problem(4, 150, 11);
        let opts = SolverOptions::default();
        let lmax = lambda_max(&p, false).unwrap();
        for frac in [0.5, 0.1, 0.01] {
            let lambda = lmax * frac;
            let fit = fit_lasso(&p, lambda, &opts).unwrap();
            assert!(kkt_violation(&p, &fit, false).unwrap() <= 1e-4);
            let null = null_fit(&p, lambda, &opts);
            assert!(objective(&p, &fit).unwrap() <= objective(&p, &null).unwrap());
        }
    }

    #[test]
    fn driven_edge_is_recovered() {
        let p = random_problem(4, 400, 5);
        let lmax = lambda_max(&p, false).unwrap();
        let fit = fit_lasso(&p, 0.3 * lmax, &SolverOptions::default()).unwrap();
        assert!(fit.betas[[0, 1]] > 0.0);
        let g = estimate_topology(&fit, TopologyRule::Positive);
        assert!(g.contains(0, 1));
    }

    #[test]
    fn solvers_agree() {
        let p = random_problem(3, 120, 21);
        let lmax = lambda_max(&p, false).unwrap();
        let lambda = 0.05 * lmax;
        let newton = fit_lasso(&p, lambda, &SolverOptions::default()).unwrap();
        let grad = fit_lasso(
            &p,
            lambda,
            &SolverOptions {
                solver: SolverKind::ProximalGradient,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        for (a, b) in newton.betas.iter().zip(grad.betas.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        for (a, b) in newton.intercepts.iter().zip(&grad.intercepts) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn shared_intercept_routes_agree() {
        let p = random_problem(3, 120, 22);
        let lmax = lambda_max(&p, true).unwrap();
        let lambda = 0.1 * lmax;
        let base = SolverOptions {
            shared_intercept: true,
            ..SolverOptions::default()
        };
        let bcd = fit_lasso(&p, lambda, &base).unwrap();
        assert!(bcd.intercepts.windows(2).all(|w| w[0] == w[1]));
        let pg = fit_lasso(
            &p,
            lambda,
            &SolverOptions {
                solver: SolverKind::ProximalGradient,
                ..base
            },
        )
        .unwrap();
        for (a, b) in bcd.betas.iter().zip(pg.betas.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn target_without_events_keeps_zero_betas() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((100, 3), |_| (rng.random::<f64>() < 0.3) as u8);
        let mut y = Array2::from_shape_fn((100, 3), |_| (rng.random::<f64>() < 0.2) as u8);
        y.column_mut(2).fill(0);
        let p = RegressionProblem::new(
            mat(x, ProcessKind::Spike),
            mat(y, ProcessKind::Event),
            WeightRule::Balance,
        )
        .unwrap();
        let lmax = lambda_max(&p, false).unwrap();
        let fit = fit_lasso(&p, 0.01 * lmax, &SolverOptions::default()).unwrap();
        assert!(fit.betas.column(2).iter().all(|&b| b == 0.0));
        assert!(fit.intercepts[2] < -10.0);
    }

    #[test]
    fn path_endpoints() {
        let p = random_problem(4, 150, 9);
        let path = fit_path(
            &p,
            &PathOptions {
                n_lambdas: 8,
                lambda_min_ratio: 1e-2,
            },
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(path.fits.len(), 8);
        assert_eq!(path.fits[0].n_nonzero(), 0);
        assert!(path.lambdas.windows(2).all(|w| w[0] > w[1]));
        assert_relative_eq!(
            path.lambdas[7] / path.lambdas[0],
            1e-2,
            max_relative = 1e-12
        );

        let flat = fit_path(
            &p,
            &PathOptions {
                n_lambdas: 3,
                lambda_min_ratio: 1.0 - 1e-9,
            },
            &SolverOptions::default(),
        )
        .unwrap();
        for f in &flat.fits {
            assert!(f.n_nonzero() <= 1);
            for (a, b) in f.betas.iter().zip(flat.fits[0].betas.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(matches!(
            fit_path(
                &p,
                &PathOptions {
                    n_lambdas: 1,
                    lambda_min_ratio: 0.1
                },
                &SolverOptions::default()
            ),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn topology_rules() {
        let mut c = CoefficientSet::zeros(6, 0.1);
        assert_eq!(estimate_topology(&c, TopologyRule::Positive).n_edges(), 0);
        c.betas[[2, 5]] = 0.7;
        let g = estimate_topology(&c, TopologyRule::Positive);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(2, 5)]);
        c.betas[[1, 3]] = -0.2;
        assert!(!estimate_topology(&c, TopologyRule::Positive).contains(1, 3));
        assert!(estimate_topology(&c, TopologyRule::Nonzero).contains(1, 3));
    }

    #[test]
    fn ranking_by_entry_lambda() {
        let mk = |lambda: f64, entries: &[((usize, usize), f64)]| {
            let mut c = CoefficientSet::zeros(3, lambda);
            for &((j, i), b) in entries {
                c.betas[[j, i]] = b;
            }
            c
        };
        let path = LambdaPath {
            lambdas: vec![3.0, 2.0, 1.0],
            fits: vec![
                mk(3.0, &[]),
                mk(2.0, &[((0, 1), 0.5), ((2, 1), -0.3)]),
                mk(
                    1.0,
                    &[((0, 1), 0.9), ((1, 2), 0.2), ((2, 0), 0.4), ((2, 1), -0.5)],
                ),
            ],
        };
        let ranked = path.rank_edges(TopologyRule::Positive);
        let order: Vec<_> = ranked.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(order, vec![(0, 1), (2, 0), (1, 2)]);
        assert_eq!(ranked.edges[0].2, 2.0);
        let nz = path.rank_edges(TopologyRule::Nonzero);
        assert_eq!(nz.edges[1].0, 2);
        assert_eq!(nz.edges[1].1, 1);
    }

    #[test]
    fn coefficient_json_round_trip() {
        let c = random_coeffs(4, 3);
        let back = CoefficientSet::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
