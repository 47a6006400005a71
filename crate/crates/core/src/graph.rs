//! Directed weighted networks, synthetic generators and the TSV edge-list format.
//!
//! Entry `(i, j)` of a [`Network`] is the probability that an infected `i`
//! transmits to a susceptible `j` within one cascade.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numfmt::sig17;

/// Weighted directed graph over dense node ids `0..n`.
///
/// Out-edges are kept sorted by destination, so iteration order is canonical
/// and independent of insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    out: Vec<Vec<(usize, f64)>>,
    edge_count: usize,
}

impl Network {
    pub fn new(n: usize) -> Self {
        Network {
            n,
            out: vec![Vec::new(); n],
            edge_count: 0,
        }
    }

    /// Builds a network from an edge list, validating every invariant.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut net = Network::new(n);
        for (src, dst, w) in edges {
            net.add_edge(src, dst, w)?;
        }
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Inserts a new edge. Self-loops, out-of-range ids, weights outside
    /// `[0, 1]` and duplicate pairs are rejected.
    pub fn add_edge(&mut self, src: usize, dst: usize, weight: f64) -> Result<()> {
        if src >= self.n || dst >= self.n {
            return Err(Error::invalid(format!(
                "edge {src}->{dst} out of range for {} nodes",
                self.n
            )));
        }
        if src == dst {
            return Err(Error::invalid(format!("self-loop on node {src}")));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(format!(
                "weight {weight} of edge {src}->{dst} outside [0, 1]"
            )));
        }
        let row = &mut self.out[src];
        match row.binary_search_by_key(&dst, |&(d, _)| d) {
            Ok(_) => Err(Error::invalid(format!("duplicate edge {src}->{dst}"))),
            Err(pos) => {
                row.insert(pos, (dst, weight));
                self.edge_count += 1;
                Ok(())
            }
        }
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        let row = self.out.get(src)?;
        row.binary_search_by_key(&dst, |&(d, _)| d)
            .ok()
            .map(|pos| row[pos].1)
    }

    /// Out-edges of `src` as `(dst, weight)`, sorted by `dst`.
    pub fn out_edges(&self, src: usize) -> &[(usize, f64)] {
        &self.out[src]
    }

    /// All edges as `(src, dst, weight)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(src, row)| row.iter().map(move |&(dst, w)| (src, dst, w)))
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for (_, dst, _) in self.edges() {
            deg[dst] += 1;
        }
        deg
    }
}

/// Uniform random directed graph with exactly `m` distinct non-self-loop edges.
pub fn generate_erdos_renyi(n: usize, m: usize, rng_seed: u64) -> Result<Network> {
    if n == 0 {
        return Err(Error::invalid("node count must be at least 1"));
    }
    let pairs = n
        .checked_mul(n - 1)
        .ok_or_else(|| Error::invalid("node count too large"))?;
    if m > pairs {
        return Err(Error::invalid(format!(
            "{m} edges requested but only {pairs} ordered pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut net = Network::new(n);
    // Pair index k enumerates (src, dst) with dst skipping over src.
    for k in index::sample(&mut rng, pairs, m) {
        let src = k / (n - 1);
        let mut dst = k % (n - 1);
        if dst >= src {
            dst += 1;
        }
        net.add_edge(src, dst, 1.0)?;
    }
    Ok(net)
}

/// Directed preferential-attachment graph.
///
/// Node `v` arrives with `min(out_degree, v)` edges pointing at earlier nodes,
/// each target drawn with probability proportional to its in-degree plus one.
/// Repeated targets are redrawn.
pub fn generate_preferential_attachment(
    n: usize,
    out_degree: usize,
    rng_seed: u64,
) -> Result<Network> {
    if out_degree == 0 {
        return Err(Error::invalid("out_degree must be at least 1"));
    }
    if n <= out_degree {
        return Err(Error::invalid(format!(
            "node count {n} must exceed out_degree {out_degree}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut net = Network::new(n);
    // One ticket per node plus one per received edge.
    let mut tickets: Vec<usize> = vec![0];
    let mut chosen = Vec::with_capacity(out_degree);
    for v in 1..n {
        chosen.clear();
        let k = out_degree.min(v);
        while chosen.len() < k {
            let t = tickets[rng.random_range(0..tickets.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            net.add_edge(v, t, 1.0)?;
            tickets.push(t);
        }
        tickets.push(v);
    }
    Ok(net)
}

/// Replaces every edge weight with an independent draw from `[lo, hi]`.
pub fn assign_uniform_weights(net: &Network, lo: f64, hi: f64, rng_seed: u64) -> Result<Network> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
        return Err(Error::invalid(format!("weight range [{lo}, {hi}] outside [0, 1]")));
    }
    if lo > hi {
        return Err(Error::invalid(format!("lo {lo} exceeds hi {hi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = net.clone();
    for row in out.out.iter_mut() {
        for (_, w) in row.iter_mut() {
            let u: f64 = rng.random();
            *w = (lo + (hi - lo) * u).min(hi);
        }
    }
    Ok(out)
}

/// Builds a network from pairwise interaction counts, where each of the
/// `m_ij` interactions independently carries the contagion with probability
/// `xi` and every interacting pair has a floor probability `phi`:
/// `A_ij = 1 - (1 - phi) (1 - xi)^m_ij`.
pub fn weights_from_interactions(
    n: usize,
    counts: &BTreeMap<(usize, usize), u64>,
    xi: f64,
    phi: f64,
) -> Result<Network> {
    if !(0.0..=1.0).contains(&xi) || !(0.0..=1.0).contains(&phi) {
        return Err(Error::invalid(format!(
            "xi={xi} and phi={phi} must both lie in [0, 1]"
        )));
    }
    let mut net = Network::new(n);
    for (&(i, j), &m) in counts {
        if i == j {
            log::warn!("ignoring {m} self-interactions on node {i}");
            continue;
        }
        if m == 0 {
            continue;
        }
        net.add_edge(i, j, interaction_weight(m, xi, phi))?;
    }
    Ok(net)
}

pub fn interaction_weight(m: u64, xi: f64, phi: f64) -> f64 {
    1.0 - (1.0 - phi) * (1.0 - xi).powf(m as f64)
}

pub fn write_network<W: Write>(net: &Network, mut w: W) -> Result<()> {
    writeln!(w, "# nodes={}", net.n)?;
    for (src, dst, weight) in net.edges() {
        writeln!(w, "{src}\t{dst}\t{}", sig17(weight))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_network<R: BufRead>(r: R) -> Result<Network> {
    let mut net: Option<Network> = None;
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("nodes=") {
                if net.is_some() {
                    return Err(Error::parse(lineno, "repeated nodes header"));
                }
                let n = v
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::parse(lineno, format!("bad node count: {e}")))?;
                net = Some(Network::new(n));
            }
            continue;
        }
        let net = net
            .as_mut()
            .ok_or_else(|| Error::parse(lineno, "edge before '# nodes=<n>' header"))?;
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let src = parse_field::<usize>(fields[0], lineno, "source")?;
        let dst = parse_field::<usize>(fields[1], lineno, "destination")?;
        let weight = parse_field::<f64>(fields[2], lineno, "weight")?;
        net.add_edge(src, dst, weight).map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::parse(lineno, msg),
            other => other,
        })?;
    }
    net.ok_or_else(|| Error::parse(1, "missing '# nodes=<n>' header"))
}

pub(crate) fn parse_field<T>(s: &str, line: usize, what: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse::<T>()
        .map_err(|e| Error::parse(line, format!("bad {what} '{s}': {e}")))
}

pub fn write_network_file(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_network(net, BufWriter::new(File::create(path)?))
}

pub fn read_network_file(path: impl AsRef<Path>) -> Result<Network> {
    read_network(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Network> {
        read_network(s.as_bytes())
    }

    #[test]
    fn erdos_renyi_counts() {
        let net = generate_erdos_renyi(512, 1024, 7).unwrap();
        assert_eq!(net.n(), 512);
        assert_eq!(net.edge_count(), 1024);

        let net = generate_erdos_renyi(2, 1, 0).unwrap();
        assert_eq!(net.edge_count(), 1);
        let (s, d, w) = net.edges().next().unwrap();
        assert!((s, d) == (0, 1) || (s, d) == (1, 0));
        assert_eq!(w, 1.0);

        let net = generate_erdos_renyi(5, 20, 0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(net.weight(i, j).is_some(), i != j);
            }
        }
        assert!(matches!(
            generate_erdos_renyi(5, 21, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn preferential_attachment_counts() {
        let net = generate_preferential_attachment(512, 2, 1).unwrap();
        // 0 edges from node 0, 1 from node 1, 2 from each of the other 510.
        let expected: usize = (0..512).map(|v: usize| v.min(2)).sum();
        assert_eq!(expected, 1021);
        assert_eq!(net.edge_count(), expected);
        for (s, d, w) in net.edges() {
            assert!(d < s);
            assert_eq!(w, 1.0);
        }

        let net = generate_preferential_attachment(2, 1, 0).unwrap();
        assert_eq!(net.edges().collect::<Vec<_>>(), vec![(1, 0, 1.0)]);
        assert!(generate_preferential_attachment(2, 2, 0).is_err());
        assert!(generate_preferential_attachment(5, 0, 0).is_err());
    }

    #[test]
    fn preferential_attachment_is_heavy_tailed() {
        let net = generate_preferential_attachment(1000, 2, 3).unwrap();
        let mut deg = net.in_degrees();
        deg.sort_unstable();
        let median = deg[deg.len() / 2].max(1);
        let max = *deg.last().unwrap();
        assert!(max > 10 * median, "max {max} median {median}");
    }

    #[test]
    fn generators_are_reproducible() {
        assert_eq!(
            generate_erdos_renyi(100, 300, 9).unwrap(),
            generate_erdos_renyi(100, 300, 9).unwrap()
        );
        assert_eq!(
            generate_preferential_attachment(100, 3, 9).unwrap(),
            generate_preferential_attachment(100, 3, 9).unwrap()
        );
    }

    #[test]
    fn uniform_weights() {
        let base = generate_erdos_renyi(200, 10_000, 5).unwrap();
        let net = assign_uniform_weights(&base, 0.05, 1.0, 11).unwrap();
        let ws: Vec<f64> = net.edges().map(|e| e.2).collect();
        assert!(ws.iter().all(|&w| (0.05..=1.0).contains(&w)));
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        let band = 3.0 * (0.95 / 12f64.sqrt()) / 100.0;
        assert!((mean - 0.525).abs() < band, "mean {mean}");

        let fixed = assign_uniform_weights(&base, 0.3, 0.3, 1).unwrap();
        assert!(fixed.edges().all(|e| e.2 == 0.3));
        assert!(assign_uniform_weights(&base, 0.6, 0.5, 1).is_err());
        let topo: Vec<_> = net.edges().map(|e| (e.0, e.1)).collect();
        let base_topo: Vec<_> = base.edges().map(|e| (e.0, e.1)).collect();
        assert_eq!(topo, base_topo);
    }

    #[test]
    fn interaction_weights() {
        let mut counts = BTreeMap::new();
        counts.insert((0, 1), 1);
        counts.insert((1, 2), 1000);
        counts.insert((2, 0), 0);
        counts.insert((2, 2), 7);
        let net = weights_from_interactions(3, &counts, 0.001, 0.05).unwrap();
        assert_eq!(net.edge_count(), 2);
        assert!((net.weight(0, 1).unwrap() - 0.05095).abs() < 1e-12);
        assert!((net.weight(1, 2).unwrap() - (1.0 - 0.95 * 0.999f64.powi(1000))).abs() < 1e-12);
        assert!((net.weight(1, 2).unwrap() - 0.6507).abs() < 1e-4);
        assert!(net.weight(2, 0).is_none());
        assert!(weights_from_interactions(3, &counts, 1.5, 0.05).is_err());
        assert!(weights_from_interactions(3, &counts, 0.1, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn interaction_weight_monotone(a in 0u64..5000, b in 0u64..5000,
                                       xi in 0.0f64..=1.0, phi in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(interaction_weight(lo, xi, phi) <= interaction_weight(hi, xi, phi));
            let one = interaction_weight(1, xi, phi);
            prop_assert!((one - (phi + xi * (1.0 - phi))).abs() < 1e-15);
        }

        #[test]
        fn tsv_round_trip(n in 2usize..40, m in 0usize..200, seed in any::<u64>()) {
            let m = m.min(n * (n - 1));
            let net = generate_erdos_renyi(n, m, seed).unwrap();
            let net = assign_uniform_weights(&net, 0.0, 1.0, seed).unwrap();
            let mut buf = Vec::new();
            write_network(&net, &mut buf).unwrap();
            prop_assert_eq!(read_network(buf.as_slice()).unwrap(), net);
        }
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse("# nodes=4\n3\t3\t0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("# nodes=4\n0\t1\t0.5\n0\t1\t1.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse("# nodes=4\n0\t9\t0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse("# nodes=4\n0\tx\t0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse("0\t1\t0.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(parse("# a comment\n").is_err());
    }

    #[test]
    fn isolated_nodes_survive_round_trip() {
        let net = parse("# generated\n# nodes=10\n\n0\t1\t0.25\n").unwrap();
        assert_eq!(net.n(), 10);
        assert_eq!(net.edge_count(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.tsv");
        write_network_file(&net, &path).unwrap();
        assert_eq!(read_network_file(&path).unwrap(), net);
    }
}
