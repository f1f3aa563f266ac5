//! Projected gradient descent with Armijo backtracking and quadratic
//! penalty rounds for halfspace constraints on the mapped colors.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::colormap::{init_params, project_theta, ColormapParams};
use crate::cost::{evaluate, ProblemSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub penalty_weight: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 500,
            rel_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            penalty_weight: 10.0,
            penalty_growth: 10.0,
            penalty_rounds: 4,
            seed: 0,
            restarts: 3,
        }
    }
}

/// Consecutive small relative changes needed to stop.
const STALL_WINDOW: usize = 5;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e8;

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("armijo_c", self.armijo_c),
            ("initial_step", self.initial_step),
            ("penalty_weight", self.penalty_weight),
            ("penalty_growth", self.penalty_growth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "backtrack_factor must be in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if self.armijo_c >= 1.0 {
            return Err(Error::InvalidParameter("armijo_c must be < 1".into()));
        }
        if self.max_iters == 0 || self.penalty_rounds == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter(
                "max_iters, penalty_rounds and restarts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A differentiable objective over a projectable feasible set.
pub trait Objective {
    fn dim(&self) -> usize;

    /// `(value, gradient, max constraint violation)`; the gradient is empty
    /// when not requested.
    fn evaluate(&self, theta: &[f64], penalty_weight: f64, want_grad: bool) -> Result<(f64, Vec<f64>, f64)>;

    fn project(&self, theta: &mut [f64]);

    /// Whether penalty rounds are needed.
    fn has_constraints(&self) -> bool {
        false
    }
}

impl Objective for ProblemSpec {
    fn dim(&self) -> usize {
        self.n_params()
    }

    fn evaluate(&self, theta: &[f64], penalty_weight: f64, want_grad: bool) -> Result<(f64, Vec<f64>, f64)> {
        let e = evaluate(theta, self, penalty_weight, want_grad)?;
        Ok((e.value, e.gradient, e.max_violation))
    }

    fn project(&self, theta: &mut [f64]) {
        project_theta(self.family(), theta);
    }

    fn has_constraints(&self) -> bool {
        !self.halfspaces.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterRecord {
    pub round: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTrace {
    pub iterations: Vec<IterRecord>,
    pub theta: Vec<f64>,
    pub final_cost: f64,
    /// Stopped on the relative-change criterion or a stationary point.
    pub converged: bool,
    /// Backtracking hit the minimum step without progress.
    pub stalled: bool,
    /// Final cost of every restart, in seed order.
    pub restart_costs: Vec<f64>,
    pub best_restart: usize,
    pub wall_time_s: f64,
}

impl SolveTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.cost).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One projected-gradient run from `theta`.
pub fn minimize_from<O: Objective + ?Sized>(obj: &O, theta: &[f64], opts: &SolveOptions) -> Result<SolveTrace> {
    opts.validate()?;
    let start = Instant::now();
    if theta.len() != obj.dim() {
        return Err(Error::DimensionMismatch(format!("theta has {} entries, expected {}", theta.len(), obj.dim())));
    }
    let mut x = theta.to_vec();
    obj.project(&mut x);
    let rounds = if obj.has_constraints() { opts.penalty_rounds } else { 1 };
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut stalled = false;
    let mut f = 0.0;
    let mut step = opts.initial_step;

    for round in 0..rounds {
        let rho = if obj.has_constraints() {
            opts.penalty_weight * opts.penalty_growth.powi(round as i32)
        } else {
            0.0
        };
        let (f0, g0, v0) = obj.evaluate(&x, rho, true)?;
        f = f0;
        let mut g = g0;
        iterations.push(IterRecord {
            round,
            cost: f,
            grad_norm: norm(&g),
            step: 0.0,
            violation: v0,
        });
        converged = false;
        stalled = false;
        let mut small = 0;
        let mut trial = vec![0.0; x.len()];
        for _ in 0..opts.max_iters {
            let accepted = loop {
                for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                    *t = xi - step * gi;
                }
                obj.project(&mut trial);
                let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| gi * (t - xi)).sum();
                if trial == x {
                    break None;
                }
                let (ft, gt, vt) = obj.evaluate(&trial, rho, true)?;
                if ft <= f + opts.armijo_c * decrease {
                    break Some((ft, gt, vt));
                }
                step *= opts.backtrack_factor;
                if step < MIN_STEP {
                    stalled = true;
                    break None;
                }
            };
            let Some((ft, gt, vt)) = accepted else {
                if !stalled {
                    // projected gradient step is a fixed point
                    converged = true;
                }
                break;
            };
            let rel = (f - ft).abs() / f.abs().max(f64::MIN_POSITIVE);
            std::mem::swap(&mut x, &mut trial);
            f = ft;
            g = gt;
            iterations.push(IterRecord {
                round,
                cost: f,
                grad_norm: norm(&g),
                step,
                violation: vt,
            });
            small = if rel < opts.rel_tol { small + 1 } else { 0 };
            if small >= STALL_WINDOW {
                converged = true;
                break;
            }
            step = (step / opts.backtrack_factor).min(MAX_STEP);
        }
        if iterations.last().is_some_and(|r| r.violation == 0.0) && round + 1 < rounds {
            break;
        }
    }
    Ok(SolveTrace {
        iterations,
        theta: x,
        final_cost: f,
        converged,
        stalled,
        restart_costs: vec![f],
        best_restart: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Best of several runs started from the given points (ties keep the
/// earliest).
pub fn minimize_multi<O: Objective + ?Sized>(obj: &O, starts: &[Vec<f64>], opts: &SolveOptions) -> Result<SolveTrace> {
    let begin = Instant::now();
    let mut best: Option<SolveTrace> = None;
    let mut costs = Vec::with_capacity(starts.len());
    let mut best_idx = 0;
    for (k, s) in starts.iter().enumerate() {
        let t = minimize_from(obj, s, opts)?;
        costs.push(t.final_cost);
        if best.as_ref().is_none_or(|b| t.final_cost < b.final_cost) {
            best = Some(t);
            best_idx = k;
        }
    }
    let mut best = best.ok_or_else(|| Error::InvalidParameter("no starting points".into()))?;
    best.restart_costs = costs;
    best.best_restart = best_idx;
    best.wall_time_s = begin.elapsed().as_secs_f64();
    Ok(best)
}

/// Minimizes `spec` from `opts.restarts` random starts seeded
/// `seed, seed + 1, ...`.
pub fn minimize(spec: &ProblemSpec, opts: &SolveOptions) -> Result<(ColormapParams, SolveTrace)> {
    spec.validate()?;
    opts.validate()?;
    let starts: Vec<Vec<f64>> = (0..opts.restarts as u64)
        .map(|r| init_params(spec.family(), opts.seed.wrapping_add(r)).theta)
        .collect();
    let trace = minimize_multi(spec, &starts, opts)?;
    let params = ColormapParams::new(spec.family().clone(), trace.theta.clone())?;
    Ok((params, trace))
}

/// Largest `|g_fd - g| / max(1, |g_fd|)` over coordinates, with central
/// differences of step `h` (no penalty term).
pub fn check_gradient<O: Objective + ?Sized>(obj: &O, theta: &[f64], h: f64) -> Result<f64> {
    let (_, g, _) = obj.evaluate(theta, 0.0, true)?;
    let mut worst: f64 = 0.0;
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        t[k] = theta[k] + h;
        let fp = obj.evaluate(&t, 0.0, false)?.0;
        t[k] = theta[k] - h;
        let fm = obj.evaluate(&t, 0.0, false)?.0;
        t[k] = theta[k];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
