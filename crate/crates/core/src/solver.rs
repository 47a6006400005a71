//! Box-constrained minimization of node subproblems and assembly of the
//! inferred network.
//!
//! Every subproblem is convex over the box `[log EPS_A, 0]^d`, so projected
//! gradient descent converges to the global minimizer.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{CascadeSet, TransmissionModel};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::likelihood::{b_lower, build_subproblem, NodeSubproblem, TransformedPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop once the projected-gradient sup-norm falls to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Stage-1 weights below this are declared absent edges.
    pub zero_threshold: f64,
    /// Starting edge probability for every free coordinate.
    pub init_a: f64,
    /// Sparsity weight.
    pub rho: f64,
    /// Keep the accepted-iterate objective sequence in each [`MinimizeReport`].
    #[serde(skip)]
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grad_tol: 1e-6,
            max_iter: 5000,
            zero_threshold: 1e-4,
            init_a: 0.1,
            rho: 0.0,
            record_history: false,
        }
    }
}

impl SolverOptions {
    pub fn with_rho(&self, rho: f64) -> Self {
        SolverOptions { rho, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if !(self.init_a > 0.0 && self.init_a < 1.0) {
            return Err(Error::invalid("init_a must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.zero_threshold) {
            return Err(Error::invalid("zero_threshold must lie in [0, 1)"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("rho must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// Stopped because the objective no longer changed at machine precision.
    pub stalled: bool,
    /// Final projected-gradient sup-norm.
    pub pg_norm: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-8;
const MAX_STEP: f64 = 1e8;
/// Largest move of any coordinate in one trial step, in log-domain units.
/// Near an unexplained cascade the gradient can exceed 1e12, and an
/// unscaled step would project straight onto a corner of the box.
const MAX_DISPLACEMENT: f64 = 1.0;
/// Consecutive accepted iterations without a representable decrease before
/// giving up on reaching `grad_tol`.
const STALL_ITERS: usize = 10;
/// Interior fallback probability when the initial point has infinite objective.
const FALLBACK_INIT_A: f64 = 0.5;

/// Minimizes the subproblem over `[log EPS_A, 0]^d` with the coordinates in
/// `fixed_zero` pinned at `b = 0` (edge absent), using `opts.rho`.
pub fn minimize_box(
    sp: &NodeSubproblem,
    opts: &SolverOptions,
    fixed_zero: &[usize],
) -> Result<(TransformedPoint, MinimizeReport)> {
    opts.validate()?;
    let mut pinned = vec![false; sp.dim()];
    for &j in fixed_zero {
        if j >= sp.dim() {
            return Err(Error::DimensionMismatch {
                expected: sp.dim(),
                got: j + 1,
            });
        }
        pinned[j] = true;
    }
    minimize_in_box(sp, opts.rho, opts, &pinned, 0.0, None)
}

/// Projected gradient with Barzilai-Borwein initial steps and Armijo
/// backtracking along the projection arc. Free coordinates live in
/// `[log EPS_A, upper]`.
fn minimize_in_box(
    sp: &NodeSubproblem,
    rho: f64,
    opts: &SolverOptions,
    pinned: &[bool],
    upper: f64,
    start: Option<&[f64]>,
) -> Result<(TransformedPoint, MinimizeReport)> {
    let dim = sp.dim();
    let lower = b_lower();
    // Without a penalty, a parent that never failed to transmit only ever
    // lowers the objective as A grows, so its minimizer is the lower bound.
    let saturated: Vec<bool> = (0..dim)
        .map(|j| rho == 0.0 && !pinned[j] && sp.negative_counts[j] == 0)
        .collect();
    let free: Vec<usize> = (0..dim)
        .filter(|&j| !pinned[j] && !saturated[j])
        .collect();
    if free.is_empty() {
        let x: Vec<f64> = saturated
            .iter()
            .map(|&s| if s { lower } else { 0.0 })
            .collect();
        let f = sp.eval(&x, rho, None) + rho * dim as f64;
        return Ok((
            TransformedPoint { b_hat: x },
            MinimizeReport {
                iterations: 0,
                objective: f,
                converged: true,
                stalled: false,
                pg_norm: 0.0,
                history: if opts.record_history { vec![f] } else { vec![] },
            },
        ));
    }
    // Positive cascades whose parents are all pinned are constant in the free
    // variables (and infinite), so they are left out of the minimization.
    let reduced;
    let sp = if free.len() < dim {
        reduced = NodeSubproblem {
            positive: sp
                .positive
                .iter()
                .filter(|terms| terms.iter().any(|&(j, _)| !pinned[j]))
                .cloned()
                .collect(),
            ..sp.clone()
        };
        &reduced
    } else {
        sp
    };
    let project = |v: f64| v.clamp(lower, upper);

    let init_point = |a: f64| -> Vec<f64> {
        let b0 = project((-a).ln_1p());
        (0..dim)
            .map(|j| match (pinned[j], start) {
                (true, _) => 0.0,
                _ if saturated[j] => lower,
                (false, Some(s)) => project(s[j]),
                (false, None) => b0,
            })
            .collect()
    };

    let mut x = init_point(opts.init_a);
    let mut g = vec![0.0; dim];
    let mut f = sp.eval(&x, rho, Some(&mut g));
    if !f.is_finite() {
        x = init_point(FALLBACK_INIT_A.max(opts.init_a));
        f = sp.eval(&x, rho, Some(&mut g));
        if !f.is_finite() {
            return Err(Error::Solver {
                node: sp.target,
                msg: format!("objective not finite at the initial point ({f})"),
            });
        }
    }

    let pg_norm = |x: &[f64], g: &[f64]| {
        free.iter()
            .map(|&j| (x[j] - project(x[j] - g[j])).abs())
            .fold(0.0, f64::max)
    };

    let offset = rho * dim as f64;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(f + offset);
    }
    let mut x_new = x.clone();
    let mut g_new = vec![0.0; dim];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut norm = pg_norm(&x, &g);
    let mut converged = norm <= opts.grad_tol;
    let mut flat = 0;
    let mut stalled = false;

    while !converged && !stalled && iterations < opts.max_iter {
        let mut accepted = false;
        let mut f_new = f;
        // Coordinates within MAX_DISPLACEMENT of the bound they head for
        // cannot overshoot it, so only the others limit the step.
        let g_max = free
            .iter()
            .filter(|&&j| {
                let room = if g[j] > 0.0 { x[j] - lower } else { upper - x[j] };
                room > MAX_DISPLACEMENT
            })
            .map(|&j| g[j].abs())
            .fold(0.0, f64::max);
        let mut trial = step.min(MAX_DISPLACEMENT / g_max);
        loop {
            let mut decrease = 0.0;
            let mut moved = false;
            for &j in &free {
                x_new[j] = project(x[j] - trial * g[j]);
                decrease += g[j] * (x_new[j] - x[j]);
                moved |= x_new[j] != x[j];
            }
            if !moved {
                break;
            }
            f_new = sp.eval(&x_new, rho, Some(&mut g_new));
            if f_new.is_finite() && f_new <= f + ARMIJO * decrease {
                accepted = true;
                break;
            }
            trial *= BACKTRACK;
        }
        if !accepted {
            stalled = true;
            break;
        }
        iterations += 1;

        let (mut ss, mut sy) = (0.0, 0.0);
        for &j in &free {
            let s = x_new[j] - x[j];
            ss += s * s;
            sy += s * (g_new[j] - g[j]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(MIN_STEP, MAX_STEP) } else { 1.0 };

        if f - f_new <= 4.0 * f64::EPSILON * f.abs().max(1.0) {
            flat += 1;
            stalled = flat >= STALL_ITERS;
        } else {
            flat = 0;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        if opts.record_history {
            history.push(f + offset);
        }
        norm = pg_norm(&x, &g);
        converged = norm <= opts.grad_tol;
    }

    Ok((
        TransformedPoint { b_hat: x },
        MinimizeReport {
            iterations,
            objective: f + offset,
            converged,
            stalled: stalled && !converged,
            pg_norm: norm,
            history,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: usize,
    pub candidate_parents: usize,
    pub iterations: usize,
    /// Unpenalized objective after the second stage.
    pub objective: f64,
    pub converged: bool,
    /// Some stage stopped at machine precision before reaching `grad_tol`.
    pub stalled: bool,
    pub stage1_support: usize,
    #[serde(skip)]
    pub stage1: Option<MinimizeReport>,
    #[serde(skip)]
    pub stage2: Option<MinimizeReport>,
}

/// Inferred incoming weights of one node, indexed like `sp.parents`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSolution {
    pub weights: Vec<f64>,
    pub report: NodeReport,
}

/// Two-stage solve: a penalized pass picks the support, then an unpenalized
/// pass re-estimates the surviving weights with the rejected ones held at zero.
///
/// Surviving coordinates stay at or above `zero_threshold` in the second
/// stage, so the support after stage 2 is exactly the thresholded stage-1 support.
pub fn solve_node(sp: &NodeSubproblem, opts: &SolverOptions) -> Result<NodeSolution> {
    opts.validate()?;
    let dim = sp.dim();
    if dim == 0 {
        return Ok(NodeSolution {
            weights: Vec::new(),
            report: NodeReport {
                node: sp.target,
                candidate_parents: 0,
                iterations: 0,
                objective: 0.0,
                converged: true,
                stalled: false,
                stage1_support: 0,
                stage1: None,
                stage2: None,
            },
        });
    }

    let none = vec![false; dim];
    let (x1, r1) = minimize_in_box(sp, opts.rho, opts, &none, 0.0, None)?;
    let a1 = x1.weights();
    let pinned: Vec<bool> = a1.iter().map(|&a| a < opts.zero_threshold).collect();
    let support = pinned.iter().filter(|&&p| !p).count();

    let upper = (-opts.zero_threshold).ln_1p();
    let (x2, r2) = minimize_in_box(sp, 0.0, opts, &pinned, upper, Some(&x1.b_hat))?;
    let weights = x2
        .weights()
        .into_iter()
        .zip(&pinned)
        .map(|(a, &p)| if p { 0.0 } else { a })
        .collect();

    Ok(NodeSolution {
        weights,
        report: NodeReport {
            node: sp.target,
            candidate_parents: dim,
            iterations: r1.iterations + r2.iterations,
            objective: r2.objective,
            converged: r1.converged && r2.converged,
            stalled: r1.stalled || r2.stalled,
            stage1_support: support,
            stage1: Some(r1),
            stage2: Some(r2),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub nodes: Vec<NodeReport>,
    pub converged_nodes: usize,
    pub total_edges: usize,
    /// Left out of serialized reports so that they are reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Solves every node's subproblem on the current rayon pool and assembles the
/// columns into a network. The output does not depend on the pool size.
pub fn infer_network(
    cs: &CascadeSet,
    model: &TransmissionModel,
    opts: &SolverOptions,
) -> Result<(Network, SolveReport)> {
    opts.validate()?;
    let started = Instant::now();
    let results: Vec<Result<(Vec<usize>, NodeSolution)>> = (0..cs.n)
        .into_par_iter()
        .map(|i| {
            let sp = build_subproblem(cs, i, model)?;
            let sol = solve_node(&sp, opts).map_err(|e| match e {
                Error::Solver { .. } => e,
                other => Error::Solver {
                    node: i,
                    msg: other.to_string(),
                },
            })?;
            log::debug!(
                "node {i}: {} parents, {} iterations, support {}",
                sp.dim(),
                sol.report.iterations,
                sol.report.stage1_support
            );
            Ok((sp.parents, sol))
        })
        .collect();

    let mut net = Network::new(cs.n);
    let mut nodes = Vec::with_capacity(cs.n);
    for (i, r) in results.into_iter().enumerate() {
        let (parents, sol) = r?;
        for (&j, &w) in parents.iter().zip(&sol.weights) {
            if w > 0.0 {
                net.add_edge(j, i, w)?;
            }
        }
        let mut report = sol.report;
        report.stage1 = None;
        report.stage2 = None;
        nodes.push(report);
    }
    let report = SolveReport {
        converged_nodes: nodes.iter().filter(|r| r.converged).count(),
        total_edges: net.edge_count(),
        nodes,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((net, report))
}

/// Runs `f` on a dedicated rayon pool of `threads` workers.
pub fn with_threads<T, F>(threads: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
