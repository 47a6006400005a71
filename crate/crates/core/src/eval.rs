//! Scoring inferred networks against ground truth and sweeping the sparsity weight.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::{CascadeSet, TransmissionModel};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::solver::{infer_network, SolverOptions};

fn support(net: &Network) -> BTreeSet<(usize, usize)> {
    net.edges()
        .filter(|&(_, _, w)| w > 0.0)
        .map(|(s, d, _)| (s, d))
        .collect()
}

fn same_size(a: &Network, b: &Network) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::NodeCountMismatch(a.n(), b.n()));
    }
    Ok(())
}

/// Edge-presence precision and recall; an edge is present when its weight is
/// positive. Both ratios are 1 when their denominator is 0.
pub fn precision_recall(truth: &Network, inferred: &Network) -> Result<(f64, f64)> {
    same_size(truth, inferred)?;
    let t = support(truth);
    let p = support(inferred);
    let tp = t.intersection(&p).count();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((ratio(tp, p.len()), ratio(tp, t.len())))
}

/// Mean squared weight error over the union of true and inferred edge
/// positions, missing entries counting as 0.
pub fn mse(truth: &Network, inferred: &Network) -> Result<f64> {
    same_size(truth, inferred)?;
    let union: BTreeSet<(usize, usize)> = support(truth).union(&support(inferred)).copied().collect();
    if union.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = union
        .iter()
        .map(|&(s, d)| {
            let e = truth.weight(s, d).unwrap_or(0.0) - inferred.weight(s, d).unwrap_or(0.0);
            e * e
        })
        .sum();
    Ok(sum / union.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub rho: f64,
    pub precision: f64,
    pub recall: f64,
    pub edges_inferred: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub curve: Vec<PrPoint>,
    pub true_edges: usize,
    pub break_even: f64,
    /// Set when precision - recall never changed sign over the grid.
    pub break_even_extrapolated: bool,
    /// MSE at the grid point whose edge count is nearest `true_edges`.
    pub mse_at_true_edge_count: f64,
    pub rho_at_true_edge_count: f64,
    /// Whether the inferred edge count was non-increasing in rho on this sweep.
    pub edge_count_monotone: bool,
}

/// Precision-recall break-even value of a curve sorted by rho.
///
/// Linear interpolation at the first sign change of `precision - recall`;
/// without one, the mean of precision and recall at the point where they are
/// closest, flagged as extrapolated.
pub fn break_even(curve: &[PrPoint]) -> Option<(f64, bool)> {
    let diff = |p: &PrPoint| p.precision - p.recall;
    for (k, p) in curve.iter().enumerate() {
        if diff(p) == 0.0 {
            return Some((p.precision, false));
        }
        if let Some(q) = curve.get(k + 1) {
            let (d0, d1) = (diff(p), diff(q));
            if d0 * d1 < 0.0 {
                let t = d0 / (d0 - d1);
                return Some((p.precision + t * (q.precision - p.precision), false));
            }
        }
    }
    curve
        .iter()
        .min_by(|a, b| diff(a).abs().total_cmp(&diff(b).abs()))
        .map(|p| ((p.precision + p.recall) / 2.0, true))
}

/// 0 followed by 20 log-spaced values over `[0.01, 1000]`.
pub fn default_rho_grid() -> Vec<f64> {
    std::iter::once(0.0).chain(log_grid(0.01, 1000.0, 20)).collect()
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|k| {
                    if k == count - 1 {
                        hi
                    } else {
                        (a + (b - a) * k as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Parses `log:<lo>,<hi>,<count>` (preceded by an implicit 0) or a plain
/// comma-separated list of values.
pub fn parse_rho_grid(s: &str) -> Result<Vec<f64>> {
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|e| Error::invalid(format!("bad rho value '{p}': {e}")))
    };
    let grid = if let Some(spec) = s.strip_prefix("log:") {
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("expected log:<lo>,<hi>,<count>, got '{s}'")));
        }
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("bad grid size '{}': {e}", parts[2])))?;
        if !(lo > 0.0 && hi >= lo && count >= 1) {
            return Err(Error::invalid(format!("invalid log grid '{s}'")));
        }
        std::iter::once(0.0).chain(log_grid(lo, hi, count)).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    validate_grid(&grid)?;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("rho grid is empty"));
    }
    if grid.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::invalid("rho values must be finite and >= 0"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("rho grid must be sorted ascending"));
    }
    Ok(())
}

/// Infers the network once per rho and scores every result against `truth`.
pub fn pr_sweep(
    cs: &CascadeSet,
    model: &TransmissionModel,
    truth: &Network,
    rho_grid: &[f64],
    opts: &SolverOptions,
) -> Result<EvalReport> {
    validate_grid(rho_grid)?;
    if truth.n() != cs.n {
        return Err(Error::NodeCountMismatch(truth.n(), cs.n));
    }
    let mut curve = Vec::with_capacity(rho_grid.len());
    for &rho in rho_grid {
        let (inferred, report) = infer_network(cs, model, &opts.with_rho(rho))?;
        let (precision, recall) = precision_recall(truth, &inferred)?;
        let point = PrPoint {
            rho,
            precision,
            recall,
            edges_inferred: inferred.edge_count(),
            mse: mse(truth, &inferred)?,
        };
        log::info!(
            "rho {rho}: {} edges, precision {precision:.4}, recall {recall:.4} ({:.2}s)",
            point.edges_inferred,
            report.wall_time_secs
        );
        curve.push(point);
    }
    Ok(summarize(curve, truth.edge_count()))
}

pub fn summarize(curve: Vec<PrPoint>, true_edges: usize) -> EvalReport {
    let (be, extrapolated) = break_even(&curve).unwrap_or((0.0, true));
    let nearest = curve
        .iter()
        .min_by_key(|p| p.edges_inferred.abs_diff(true_edges))
        .expect("nonempty curve");
    EvalReport {
        true_edges,
        break_even: be,
        break_even_extrapolated: extrapolated,
        mse_at_true_edge_count: nearest.mse,
        rho_at_true_edge_count: nearest.rho,
        edge_count_monotone: curve.windows(2).all(|w| w[1].edges_inferred <= w[0].edges_inferred),
        curve,
    }
}

/// Writes the curve as CSV: `rho,precision,recall,edges_inferred`.
pub fn write_curve_csv<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    writeln!(w, "rho,precision,recall,edges_inferred")?;
    for p in &report.curve {
        writeln!(w, "{},{},{},{}", p.rho, p.precision, p.recall, p.edges_inferred)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{attempt_rng, simulate_cascade};
    use rand::Rng;
    use proptest::prelude::*;

    fn net(n: usize, edges: &[(usize, usize, f64)]) -> Network {
        Network::from_edges(n, edges.iter().copied()).unwrap()
    }

    fn point(rho: f64, precision: f64, recall: f64) -> PrPoint {
        PrPoint {
            rho,
            precision,
            recall,
            edges_inferred: 0,
            mse: 0.0,
        }
    }

    #[test]
    fn precision_recall_counts() {
        let truth = net(4, &[(0, 1, 0.5), (1, 2, 0.5)]);
        assert_eq!(precision_recall(&truth, &truth).unwrap(), (1.0, 1.0));
        let padded = net(4, &[(0, 1, 0.5), (1, 2, 0.5), (2, 3, 0.1), (3, 0, 0.2)]);
        assert_eq!(precision_recall(&truth, &padded).unwrap(), (0.5, 1.0));
        let disjoint = net(4, &[(2, 3, 0.1)]);
        assert_eq!(precision_recall(&truth, &disjoint).unwrap(), (0.0, 0.0));
        assert_eq!(precision_recall(&truth, &Network::new(4)).unwrap(), (1.0, 0.0));
        assert_eq!(precision_recall(&Network::new(4), &Network::new(4)).unwrap(), (1.0, 1.0));
        assert!(precision_recall(&truth, &Network::new(5)).is_err());
        // zero-weight entries are not edges
        let zero = net(4, &[(0, 1, 0.0)]);
        assert_eq!(precision_recall(&truth, &zero).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn mse_values() {
        let truth = net(3, &[(0, 1, 0.6)]);
        assert_eq!(mse(&truth, &truth).unwrap(), 0.0);
        assert!((mse(&truth, &Network::new(3)).unwrap() - 0.36).abs() < 1e-15);
        let truth = net(3, &[(0, 1, 0.5)]);
        let inferred = net(3, &[(0, 1, 0.5), (1, 2, 0.3)]);
        assert!((mse(&truth, &inferred).unwrap() - 0.045).abs() < 1e-15);
        assert_eq!(mse(&Network::new(3), &Network::new(3)).unwrap(), 0.0);
        assert!(mse(&truth, &Network::new(2)).is_err());
    }

    proptest! {
        #[test]
        fn metrics_ignore_edge_order(edges in proptest::collection::vec((0usize..6, 0usize..6, 0.0f64..=1.0), 0..20),
                                     other in proptest::collection::vec((0usize..6, 0usize..6, 0.0f64..=1.0), 0..20)) {
            let dedup = |v: &[(usize, usize, f64)]| {
                let mut seen = BTreeSet::new();
                v.iter().copied().filter(|&(s, d, _)| s != d && seen.insert((s, d))).collect::<Vec<_>>()
            };
            let a = dedup(&edges);
            let b = dedup(&other);
            let mut a_rev = a.clone();
            a_rev.reverse();
            let ta = net(6, &a);
            let tr = net(6, &a_rev);
            let ib = net(6, &b);
            prop_assert_eq!(precision_recall(&ta, &ib).unwrap(), precision_recall(&tr, &ib).unwrap());
            let m = mse(&ta, &ib).unwrap();
            prop_assert_eq!(m, mse(&tr, &ib).unwrap());
            prop_assert!((0.0..=1.0).contains(&m));
        }

        #[test]
        fn break_even_within_observed_range(vals in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..12)) {
            let curve: Vec<PrPoint> = vals.iter().enumerate().map(|(k, &(p, r))| point(k as f64, p, r)).collect();
            let (be, _) = break_even(&curve).unwrap();
            let lo = vals.iter().flat_map(|&(p, r)| [p, r]).fold(f64::INFINITY, f64::min);
            let hi = vals.iter().flat_map(|&(p, r)| [p, r]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(be >= lo - 1e-12 && be <= hi + 1e-12);
        }
    }

    #[test]
    fn break_even_interpolates() {
        let curve = [point(0.0, 0.5, 1.0), point(1.0, 0.9, 0.7)];
        // d goes -0.5 -> 0.2, crossing at t = 5/7
        let (be, extra) = break_even(&curve).unwrap();
        assert!(!extra);
        assert!((be - (0.5 + 5.0 / 7.0 * 0.4)).abs() < 1e-12);
        let (be, extra) = break_even(&[point(0.0, 0.6, 0.9), point(1.0, 0.7, 0.8)]).unwrap();
        assert!(extra);
        assert!((be - 0.75).abs() < 1e-12);
        let (be, extra) = break_even(&[point(0.0, 0.8, 0.8)]).unwrap();
        assert_eq!((be, extra), (0.8, false));
        assert!(break_even(&[]).is_none());
    }

    #[test]
    fn grids() {
        let g = default_rho_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.01).abs() < 1e-15);
        assert_eq!(g[20], 1000.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(parse_rho_grid("log:0.01,1000,20").unwrap(), g);
        assert_eq!(parse_rho_grid("0, 1,5").unwrap(), vec![0.0, 1.0, 5.0]);
        assert!(parse_rho_grid("5,1").is_err());
        assert!(parse_rho_grid("-1").is_err());
        assert!(parse_rho_grid("log:0,10,3").is_err());
        assert!(parse_rho_grid("").is_err());
    }

    #[test]
    fn tiny_perfect_recovery() {
        let truth = net(3, &[(0, 1, 0.7), (1, 2, 0.6)]);
        let m = TransmissionModel::exponential(1.0).unwrap();
        let mut rng_cs = CascadeSet::new(3);
        for k in 0..600u64 {
            let mut rng = attempt_rng(21, k);
            let seed = rng.random_range(0..3);
            let mut c = simulate_cascade(&truth, &m, seed, &mut rng);
            if c.len() > 1 {
                c.id = rng_cs.len() as u64;
                rng_cs.cascades.push(c);
            }
        }
        let report = pr_sweep(&rng_cs, &m, &truth, &[0.0, 0.1, 1.0], &SolverOptions::default()).unwrap();
        assert_eq!(report.break_even, 1.0);
        assert!(report.edge_count_monotone);
        let again = pr_sweep(&rng_cs, &m, &truth, &[0.0, 0.1, 1.0], &SolverOptions::default()).unwrap();
        assert_eq!(report, again);
        let mut buf = Vec::new();
        write_curve_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("rho,precision,recall,edges_inferred\n"));
    }
}
