//! Per-node likelihood subproblems in log-transformed variables.
//!
//! For a target node `i` the free variables are `b_j = log(1 - A_ji)` over the
//! candidate parents `j`. With `P_c = prod_j (1 - w_j^c + w_j^c e^{b_j})` the
//! convex objective is
//!
//! ```text
//! F(b) = sum_c -log(1 - P_c) - sum_j n_j b_j + rho * sum_j e^{-b_j}
//! ```
//!
//! where the first sum runs over cascades in which `i` was infected, `n_j`
//! counts cascades where `j` was infected but `i` was not, and the last term
//! is the sparsity penalty `rho * sum_j 1 / (1 - A_ji)`.

use crate::diffusion::{CascadeSet, TransmissionModel};
use crate::error::{Error, Result};
use crate::graph::Network;

/// Largest admissible edge probability is `1 - EPS_A`.
pub const EPS_A: f64 = 1e-12;

/// Lower box bound on every log-domain variable.
pub fn b_lower() -> f64 {
    EPS_A.ln()
}

/// Range cached delay densities are clamped to, keeping every factor
/// `1 - w + w e^b` inside `(0, 1]`.
pub const W_MIN: f64 = 1e-12;
pub const W_MAX: f64 = 1.0;

pub fn clamped_density(model: &TransmissionModel, dt: f64) -> f64 {
    model.density(dt).clamp(W_MIN, W_MAX)
}

/// Data of the convex program for the incoming edges of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSubproblem {
    pub target: usize,
    /// Candidate parents, sorted by node id.
    pub parents: Vec<usize>,
    /// One entry per cascade where the target was infected after at least one
    /// other node: `(parent index, w_j^c)` for every strictly earlier parent.
    pub positive: Vec<Vec<(usize, f64)>>,
    /// Per parent index: cascades where the parent was infected and the target was not.
    pub negative_counts: Vec<u64>,
}

impl NodeSubproblem {
    pub fn dim(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    fn check_dim(&self, x: &TransformedPoint) -> Result<()> {
        if x.b_hat.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.b_hat.len(),
            });
        }
        Ok(())
    }

    /// Objective value less the constant `rho * dim`, and its gradient into
    /// `grad` when given. Dropping the constant keeps the value on the scale
    /// of the likelihood when `rho` is large.
    ///
    /// Returns `+inf` when some positive cascade has zero infection probability.
    pub(crate) fn eval(&self, b: &[f64], rho: f64, mut grad: Option<&mut [f64]>) -> f64 {
        debug_assert_eq!(b.len(), self.dim());
        let mut value = 0.0;
        if let Some(g) = grad.as_deref_mut() {
            for (gj, (&bj, &nj)) in g.iter_mut().zip(b.iter().zip(&self.negative_counts)) {
                *gj = -(nj as f64) - rho * (-bj).exp();
            }
        }
        for (&bj, &nj) in b.iter().zip(&self.negative_counts) {
            value += -(nj as f64) * bj + rho * (-bj).exp_m1();
        }
        for terms in &self.positive {
            // log P = sum_j log(1 - w_j A_j)
            let log_p: f64 = terms
                .iter()
                .map(|&(j, w)| (-w * -b[j].exp_m1()).ln_1p())
                .sum();
            let one_minus_p = -log_p.exp_m1();
            if one_minus_p <= 0.0 {
                if let Some(g) = grad.as_deref_mut() {
                    for &(j, _) in terms {
                        g[j] = f64::INFINITY;
                    }
                }
                return f64::INFINITY;
            }
            value -= one_minus_p.ln();
            if let Some(g) = grad.as_deref_mut() {
                let odds = log_p.exp() / one_minus_p;
                for &(j, w) in terms {
                    let e = b[j].exp();
                    g[j] += odds * (w * e / (1.0 - w + w * e));
                }
            }
        }
        value
    }

    /// Log-likelihood of the target's observations for incoming weights `a`
    /// (indexed like `parents`), computed in the original variables.
    pub fn log_likelihood(&self, a: &[f64]) -> Result<f64> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: a.len(),
            });
        }
        let mut ll = 0.0;
        for terms in &self.positive {
            let p: f64 = terms.iter().map(|&(j, w)| 1.0 - w * a[j]).product();
            ll += (1.0 - p).ln();
        }
        for (&aj, &nj) in a.iter().zip(&self.negative_counts) {
            if nj > 0 {
                ll += nj as f64 * (1.0 - aj).ln();
            }
        }
        Ok(ll)
    }
}

/// Point in the log domain: `b_hat[j] = log(1 - A_j)` in `[log EPS_A, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPoint {
    pub b_hat: Vec<f64>,
}

impl TransformedPoint {
    pub fn from_weights(a: &[f64]) -> Self {
        let lo = b_lower();
        TransformedPoint {
            b_hat: a.iter().map(|&aj| (-aj).ln_1p().clamp(lo, 0.0)).collect(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.b_hat.iter().map(|&b| -b.exp_m1()).collect()
    }
}

/// Collects candidate parents, cached delay densities and negative-evidence
/// counts for `target`.
///
/// A node is a candidate parent only if it was infected strictly before the
/// target in at least one cascade; every other incoming weight has MLE zero.
pub fn build_subproblem(
    cs: &CascadeSet,
    target: usize,
    model: &TransmissionModel,
) -> Result<NodeSubproblem> {
    if target >= cs.n {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} nodes",
            cs.n
        )));
    }
    // Positive cascades keyed by node id first; remapped to parent indices below.
    let mut raw_positive: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut is_parent = vec![false; cs.n];
    for c in &cs.cascades {
        let Some(ti) = c.time(target) else { continue };
        let terms: Vec<(usize, f64)> = c
            .times
            .iter()
            .filter(|&(&j, &tj)| j != target && tj < ti)
            .map(|(&j, &tj)| (j, clamped_density(model, ti - tj)))
            .collect();
        if terms.is_empty() {
            continue;
        }
        for &(j, _) in &terms {
            is_parent[j] = true;
        }
        raw_positive.push(terms);
    }

    let parents: Vec<usize> = (0..cs.n).filter(|&j| is_parent[j]).collect();
    let mut index = vec![usize::MAX; cs.n];
    for (k, &j) in parents.iter().enumerate() {
        index[j] = k;
    }
    let positive = raw_positive
        .into_iter()
        .map(|terms| terms.into_iter().map(|(j, w)| (index[j], w)).collect())
        .collect();

    let mut negative_counts = vec![0u64; parents.len()];
    for c in &cs.cascades {
        if c.time(target).is_some() {
            continue;
        }
        for &j in c.times.keys() {
            if index[j] != usize::MAX {
                negative_counts[index[j]] += 1;
            }
        }
    }

    Ok(NodeSubproblem {
        target,
        parents,
        positive,
        negative_counts,
    })
}

/// Penalized negative log-likelihood in the log domain.
pub fn objective(sp: &NodeSubproblem, x: &TransformedPoint, rho: f64) -> Result<f64> {
    sp.check_dim(x)?;
    Ok(sp.eval(&x.b_hat, rho, None) + rho * sp.dim() as f64)
}

/// Exact gradient of [`objective`] with respect to `b_hat`.
pub fn gradient(sp: &NodeSubproblem, x: &TransformedPoint, rho: f64) -> Result<Vec<f64>> {
    sp.check_dim(x)?;
    let mut g = vec![0.0; sp.dim()];
    sp.eval(&x.b_hat, rho, Some(&mut g));
    Ok(g)
}

/// `rho * sum_j e^{-b_j}`, the sparsity penalty alone.
pub fn penalty(x: &TransformedPoint, rho: f64) -> f64 {
    rho * x.b_hat.iter().map(|&b| (-b).exp()).sum::<f64>()
}

/// Full log-likelihood `log L(A; D)` of a cascade set under weights `a_hat`,
/// without penalty.
///
/// Evaluated directly from the cascades in the original variables, so it is
/// independent of the subproblem construction. Seeds contribute no positive
/// term; `-inf` signals an observation with probability zero.
pub fn log_likelihood(
    a_hat: &Network,
    cs: &CascadeSet,
    model: &TransmissionModel,
) -> Result<f64> {
    if a_hat.n() != cs.n {
        return Err(Error::NodeCountMismatch(a_hat.n(), cs.n));
    }
    let a = |j: usize, i: usize| a_hat.weight(j, i).unwrap_or(0.0);
    let mut ll = 0.0;
    for c in &cs.cascades {
        for i in 0..cs.n {
            match c.time(i) {
                Some(ti) => {
                    if i == c.seed_node {
                        continue;
                    }
                    let mut p_none = 1.0;
                    for (&j, &tj) in &c.times {
                        if j != i && tj < ti {
                            p_none *= 1.0 - clamped_density(model, ti - tj) * a(j, i);
                        }
                    }
                    ll += (1.0 - p_none).ln();
                }
                None => {
                    for &j in c.times.keys() {
                        ll += (1.0 - a(j, i)).ln();
                    }
                }
            }
        }
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Cascade;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn cascade(id: u64, times: &[(usize, f64)]) -> Cascade {
        let times: BTreeMap<usize, f64> = times.iter().copied().collect();
        let seed_node = *times.iter().find(|(_, &t)| t == 0.0).unwrap().0;
        Cascade {
            id,
            times,
            seed_node,
        }
    }

    fn exp1() -> TransmissionModel {
        TransmissionModel::exponential(1.0).unwrap()
    }

    /// Subproblem with explicit data, independent of `build_subproblem`.
    fn manual(positive: Vec<Vec<(usize, f64)>>, negative_counts: Vec<u64>) -> NodeSubproblem {
        NodeSubproblem {
            target: 0,
            parents: (1..=negative_counts.len()).collect(),
            positive,
            negative_counts,
        }
    }

    fn random_subproblem(rng: &mut ChaCha8Rng, dim: usize) -> NodeSubproblem {
        let cascades = rng.random_range(1..8);
        let positive = (0..cascades)
            .map(|_| {
                let mut terms: Vec<(usize, f64)> = (0..dim)
                    .filter_map(|j| rng.random_bool(0.6).then(|| (j, rng.random_range(0.05..1.0))))
                    .collect();
                if terms.is_empty() {
                    terms.push((rng.random_range(0..dim), rng.random_range(0.05..1.0)));
                }
                terms
            })
            .collect();
        let negative = (0..dim).map(|_| rng.random_range(0..4)).collect();
        manual(positive, negative)
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> TransformedPoint {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..0.99)).collect();
        TransformedPoint::from_weights(&a)
    }

    #[test]
    fn candidate_rule() {
        // j=1, i=0, k=2
        let cs = CascadeSet {
            n: 3,
            cascades: vec![cascade(0, &[(1, 0.0), (0, 2.0)]), cascade(1, &[(2, 0.0)])],
        };
        let sp = build_subproblem(&cs, 0, &exp1()).unwrap();
        assert_eq!(sp.parents, vec![1]);
        assert_eq!(sp.positive, vec![vec![(0, (-2.0f64).exp())]]);
        assert_eq!(sp.negative_counts, vec![0]);

        let cs = CascadeSet {
            n: 2,
            cascades: vec![cascade(0, &[(1, 0.0), (0, 1.0)]), cascade(1, &[(1, 0.0)])],
        };
        let sp = build_subproblem(&cs, 0, &exp1()).unwrap();
        assert_eq!(sp.parents, vec![1]);
        assert_eq!(sp.positive, vec![vec![(0, (-1.0f64).exp())]]);
        assert_eq!(sp.negative_counts, vec![1]);

        let cs = CascadeSet {
            n: 2,
            cascades: vec![cascade(0, &[(0, 0.0), (1, 1.0)])],
        };
        assert!(build_subproblem(&cs, 0, &exp1()).unwrap().is_empty());
        assert!(build_subproblem(&cs, 2, &exp1()).is_err());
    }

    #[test]
    fn simultaneous_infections_are_not_parents() {
        let cs = CascadeSet {
            n: 3,
            cascades: vec![cascade(0, &[(2, 0.0), (0, 1.0), (1, 1.0)])],
        };
        let sp = build_subproblem(&cs, 0, &exp1()).unwrap();
        assert_eq!(sp.parents, vec![2]);
    }

    #[test]
    fn densities_are_clamped() {
        let fast = TransmissionModel::exponential(5.0).unwrap();
        let cs = CascadeSet {
            n: 2,
            cascades: vec![cascade(0, &[(1, 0.0), (0, 0.01)]), cascade(1, &[(1, 0.0), (0, 500.0)])],
        };
        let sp = build_subproblem(&cs, 0, &fast).unwrap();
        assert_eq!(sp.positive[0][0].1, 1.0);
        assert_eq!(sp.positive[1][0].1, W_MIN);
    }

    #[test]
    fn objective_values() {
        let sp = manual(vec![vec![(0, 0.5)]], vec![0]);
        let x = TransformedPoint::from_weights(&[0.5]);
        let v = objective(&sp, &x, 0.0).unwrap();
        assert!((v - (-(0.25f64).ln())).abs() < 1e-12);
        assert!((v - 1.3863).abs() < 1e-4);

        let zero = TransformedPoint { b_hat: vec![0.0] };
        assert_eq!(objective(&sp, &zero, 0.0).unwrap(), f64::INFINITY);

        let sp = manual(vec![], vec![3]);
        let v = objective(&sp, &TransformedPoint::from_weights(&[0.2]), 0.0).unwrap();
        assert!((v - (-3.0 * 0.8f64.ln())).abs() < 1e-12);
        assert!((v - 0.6694).abs() < 1e-4);

        let sp = manual(vec![], vec![0, 0]);
        let x = TransformedPoint::from_weights(&[0.0, 0.5]);
        assert!((objective(&sp, &x, 1.0).unwrap() - 3.0).abs() < 1e-12);

        assert!(matches!(
            objective(&sp, &TransformedPoint { b_hat: vec![0.0] }, 0.0),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(gradient(&sp, &TransformedPoint { b_hat: vec![] }, 0.0).is_err());
    }

    #[test]
    fn gradient_linear_only() {
        let sp = manual(vec![], vec![2, 0, 5]);
        let x = TransformedPoint::from_weights(&[0.3, 0.6, 0.1]);
        assert_eq!(gradient(&sp, &x, 0.0).unwrap(), vec![-2.0, 0.0, -5.0]);
    }

    #[test]
    fn gradient_vanishes_at_closed_form_optimum() {
        // k positive, m negative single-parent cascades: optimum A = k / (k + m).
        for (k, m) in [(1usize, 1u64), (2, 3), (4, 1)] {
            let sp = manual(vec![vec![(0, 0.7)]; k], vec![m]);
            let a = k as f64 / (k as f64 + m as f64);
            // With a single parent the w factor cancels out of the stationarity condition.
            let g = gradient(&sp, &TransformedPoint::from_weights(&[a]), 0.0).unwrap();
            assert!(g[0].abs() < 1e-8, "k={k} m={m} grad={}", g[0]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let h = 1e-6;
        for _ in 0..100 {
            let dim = rng.random_range(1..6);
            let sp = random_subproblem(&mut rng, dim);
            let x = random_point(&mut rng, dim);
            let rho = [0.0, 1.0, 10.0][rng.random_range(0..3)];
            let g = gradient(&sp, &x, rho).unwrap();
            for j in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.b_hat[j] += h;
                xm.b_hat[j] -= h;
                let fd = (objective(&sp, &xp, rho).unwrap() - objective(&sp, &xm, rho).unwrap())
                    / (2.0 * h);
                let err = (fd - g[j]).abs() / g[j].abs().max(1.0);
                assert!(err < 1e-5, "fd {fd} analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for rho in [0.0, 1.0, 10.0] {
            for _ in 0..200 {
                let dim = rng.random_range(1..6);
                let sp = random_subproblem(&mut rng, dim);
                let x = random_point(&mut rng, dim);
                let y = random_point(&mut rng, dim);
                let lam: f64 = rng.random();
                let mid = TransformedPoint {
                    b_hat: x.b_hat.iter().zip(&y.b_hat).map(|(a, b)| lam * a + (1.0 - lam) * b).collect(),
                };
                let lhs = objective(&sp, &mid, rho).unwrap();
                let rhs = lam * objective(&sp, &x, rho).unwrap()
                    + (1.0 - lam) * objective(&sp, &y, rho).unwrap();
                assert!(lhs <= rhs + 1e-8, "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn negative_evidence_increases_objective() {
        let x = TransformedPoint::from_weights(&[0.4]);
        let mut last = f64::NEG_INFINITY;
        for m in 0..6 {
            let sp = manual(vec![vec![(0, 0.5)]], vec![m]);
            let v = objective(&sp, &x, 0.0).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    proptest! {
        #[test]
        fn objective_is_negative_log_likelihood(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = rng.random_range(1..6);
            let sp = random_subproblem(&mut rng, dim);
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(0.001..0.999)).collect();
            let x = TransformedPoint::from_weights(&a);
            let f = objective(&sp, &x, 0.0).unwrap();
            let ll = sp.log_likelihood(&a).unwrap();
            prop_assert!((f + ll).abs() <= 1e-9 * f.abs().max(1.0), "{} vs {}", f, -ll);
        }

        #[test]
        fn penalty_matches_original_variables(a in proptest::collection::vec(0.0f64..0.999, 1..8),
                                              rho in 0.0f64..100.0) {
            let x = TransformedPoint::from_weights(&a);
            let direct: f64 = rho * a.iter().map(|&aj| 1.0 / (1.0 - aj)).sum::<f64>();
            prop_assert!((penalty(&x, rho) - direct).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn full_log_likelihood() {
        let m = exp1();
        let cs = CascadeSet {
            n: 2,
            cascades: vec![cascade(0, &[(0, 0.0), (1, 0.7)])],
        };
        let truth = Network::from_edges(2, [(0, 1, 1.0)]).unwrap();
        let ll = log_likelihood(&truth, &cs, &m).unwrap();
        assert!((ll - m.density(0.7).ln()).abs() < 1e-12);

        let empty = Network::new(2);
        assert_eq!(log_likelihood(&empty, &cs, &m).unwrap(), f64::NEG_INFINITY);
        assert!(log_likelihood(&Network::new(3), &cs, &m).is_err());

        // One positive and one negative observation: L(A) = w A (1 - A).
        let cs = CascadeSet {
            n: 2,
            cascades: vec![cascade(0, &[(0, 0.0), (1, 0.7)]), cascade(1, &[(0, 0.0)])],
        };
        let at = |a: f64| {
            let net = Network::from_edges(2, [(0, 1, a)]).unwrap();
            log_likelihood(&net, &cs, &m).unwrap()
        };
        assert!(at(0.5) > at(0.1));
        assert!(at(0.5) > at(0.9));
        let w = m.density(0.7);
        assert!((at(0.5) - (w * 0.25f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn subproblems_sum_to_full_likelihood() {
        use crate::diffusion::generate_cascade_set;
        use crate::graph::{assign_uniform_weights, generate_erdos_renyi};
        let base = generate_erdos_renyi(30, 60, 2).unwrap();
        let net = assign_uniform_weights(&base, 0.2, 0.9, 3).unwrap();
        let m = TransmissionModel::weibull(2.0, 1.5).unwrap();
        let (cs, _) = generate_cascade_set(&net, &m, 0.9, 200, 4).unwrap();
        // Keep only edges from candidate parents, where the reduction is exact.
        let mut restricted = Network::new(net.n());
        let mut total = 0.0;
        for i in 0..net.n() {
            let sp = build_subproblem(&cs, i, &m).unwrap();
            let a: Vec<f64> = sp.parents.iter().map(|&j| net.weight(j, i).unwrap_or(0.0)).collect();
            for (&j, &aj) in sp.parents.iter().zip(&a) {
                if aj > 0.0 {
                    restricted.add_edge(j, i, aj).unwrap();
                }
            }
            total += sp.log_likelihood(&a).unwrap();
        }
        let full = log_likelihood(&restricted, &cs, &m).unwrap();
        assert!(full.is_finite());
        assert!((full - total).abs() < 1e-8 * full.abs(), "{full} vs {total}");
    }
}
