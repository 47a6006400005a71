//! Transmission-time models, the SI cascade simulator and the cascade TSV format.

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Ordering;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{parse_field, Network};
use crate::numfmt::sig17;

/// Distribution `w(t)` of the delay between an infector's and an infectee's
/// infection times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransmissionModel {
    /// `w(t) = rate * exp(-rate * t)`.
    Exponential { rate: f64 },
    /// `w(t) = (alpha - 1) t_min^(alpha - 1) t^(-alpha)` for `t >= t_min`.
    PowerLaw { alpha: f64, t_min: f64 },
    /// `w(t) = (k / scale) (t / scale)^(k - 1) exp(-(t / scale)^k)`.
    Weibull { scale: f64, shape: f64 },
}

pub const DEFAULT_POWER_LAW_T_MIN: f64 = 1.0;

impl TransmissionModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        TransmissionModel::Exponential { rate }.validated()
    }

    pub fn power_law(alpha: f64, t_min: f64) -> Result<Self> {
        TransmissionModel::PowerLaw { alpha, t_min }.validated()
    }

    pub fn weibull(scale: f64, shape: f64) -> Result<Self> {
        TransmissionModel::Weibull { scale, shape }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            TransmissionModel::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            TransmissionModel::PowerLaw { alpha, t_min } => {
                alpha > 1.0 && alpha.is_finite() && t_min > 0.0 && t_min.is_finite()
            }
            TransmissionModel::Weibull { scale, shape } => {
                scale > 0.0 && scale.is_finite() && shape > 0.0 && shape.is_finite()
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::invalid(format!("invalid transmission model {self}")))
        }
    }

    /// Probability density at `t`; zero outside the support.
    pub fn density(&self, t: f64) -> f64 {
        match *self {
            TransmissionModel::Exponential { rate } => {
                if t < 0.0 {
                    0.0
                } else {
                    rate * (-rate * t).exp()
                }
            }
            TransmissionModel::PowerLaw { alpha, t_min } => {
                if t < t_min {
                    0.0
                } else {
                    (alpha - 1.0) / t_min * (t / t_min).powf(-alpha)
                }
            }
            TransmissionModel::Weibull { scale, shape } => {
                if t < 0.0 {
                    return 0.0;
                }
                let z = t / scale;
                if z == 0.0 {
                    // Limit at the origin depends on the shape.
                    return match shape.partial_cmp(&1.0) {
                        Some(Ordering::Less) => f64::INFINITY,
                        Some(Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    };
                }
                shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            TransmissionModel::Exponential { rate } => {
                if t <= 0.0 {
                    0.0
                } else {
                    -(-rate * t).exp_m1()
                }
            }
            TransmissionModel::PowerLaw { alpha, t_min } => {
                if t <= t_min {
                    0.0
                } else {
                    1.0 - (t / t_min).powf(1.0 - alpha)
                }
            }
            TransmissionModel::Weibull { scale, shape } => {
                if t <= 0.0 {
                    0.0
                } else {
                    -(-(t / scale).powf(shape)).exp_m1()
                }
            }
        }
    }

    /// Inverse of the survival function: the delay `t` with `P(T > t) = s`.
    fn inverse_survival(&self, s: f64) -> f64 {
        match *self {
            TransmissionModel::Exponential { rate } => -s.ln() / rate,
            TransmissionModel::PowerLaw { alpha, t_min } => t_min * s.powf(-1.0 / (alpha - 1.0)),
            TransmissionModel::Weibull { scale, shape } => scale * (-s.ln()).powf(1.0 / shape),
        }
    }

    /// Draws one delay by inverse-CDF sampling. Always strictly positive.
    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Open01 excludes both endpoints, so the logarithms stay finite and nonzero.
        let s: f64 = rng.sample(Open01);
        self.inverse_survival(s)
    }
}

impl fmt::Display for TransmissionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TransmissionModel::Exponential { rate } => write!(f, "exp:{rate}"),
            TransmissionModel::PowerLaw { alpha, t_min } => write!(f, "powerlaw:{alpha},{t_min}"),
            TransmissionModel::Weibull { scale, shape } => write!(f, "weibull:{scale},{shape}"),
        }
    }
}

/// Parses `exp:<rate>`, `powerlaw:<alpha>[,<t_min>]` or `weibull:<scale>,<shape>`.
impl FromStr for TransmissionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected <model>:<params>, got '{s}'")))?;
        let params: Vec<f64> = params
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad parameter '{p}' in '{s}': {e}")))
            })
            .collect::<Result<_>>()?;
        let model = match (kind.trim(), params.as_slice()) {
            ("exp" | "exponential", [rate]) => TransmissionModel::Exponential { rate: *rate },
            ("powerlaw" | "pl", [alpha]) => TransmissionModel::PowerLaw {
                alpha: *alpha,
                t_min: DEFAULT_POWER_LAW_T_MIN,
            },
            ("powerlaw" | "pl", [alpha, t_min]) => TransmissionModel::PowerLaw {
                alpha: *alpha,
                t_min: *t_min,
            },
            ("weibull" | "wb", [scale, shape]) => TransmissionModel::Weibull {
                scale: *scale,
                shape: *shape,
            },
            _ => return Err(Error::invalid(format!("unrecognised transmission model '{s}'"))),
        };
        model.validated()
    }
}

/// Infection times observed in one cascade. Nodes absent from `times` were
/// never infected.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub id: u64,
    pub times: BTreeMap<usize, f64>,
    pub seed_node: usize,
}

impl Cascade {
    pub fn time(&self, node: usize) -> Option<f64> {
        self.times.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSet {
    pub n: usize,
    pub cascades: Vec<Cascade>,
}

impl CascadeSet {
    pub fn new(n: usize) -> Self {
        CascadeSet {
            n,
            cascades: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cascades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cascades.is_empty()
    }
}

/// Result of one simulated cascade, including the hidden infector of every
/// non-seed node.
#[derive(Debug, Clone)]
pub struct TracedCascade {
    pub cascade: Cascade,
    /// `(infector, infectee, delay)` for every transmission that caused an infection.
    pub transmissions: Vec<(usize, usize, f64)>,
}

#[derive(Debug, PartialEq)]
struct Event {
    time: f64,
    node: usize,
    source: usize,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so that BinaryHeap pops the earliest event; ties break on ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.source.cmp(&self.source))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs one SI cascade from `seed_node`.
///
/// Each newly infected node makes a single Bernoulli attempt along every
/// out-edge to a node that is not yet infected. A node hit by several
/// successful attempts takes the earliest arrival time.
pub fn simulate_cascade<R: Rng + ?Sized>(
    net: &Network,
    model: &TransmissionModel,
    seed_node: usize,
    rng: &mut R,
) -> Cascade {
    simulate_traced(net, model, seed_node, rng).cascade
}

pub fn simulate_traced<R: Rng + ?Sized>(
    net: &Network,
    model: &TransmissionModel,
    seed_node: usize,
    rng: &mut R,
) -> TracedCascade {
    assert!(seed_node < net.n(), "seed node {seed_node} out of range");
    let mut times = BTreeMap::new();
    let mut transmissions = Vec::new();
    let mut queue = BinaryHeap::new();
    queue.push(Event {
        time: 0.0,
        node: seed_node,
        source: seed_node,
    });
    while let Some(Event { time, node, source }) = queue.pop() {
        if times.contains_key(&node) {
            continue;
        }
        times.insert(node, time);
        if node != seed_node {
            let delay = time - times[&source];
            transmissions.push((source, node, delay));
        }
        for &(dst, p) in net.out_edges(node) {
            if times.contains_key(&dst) {
                continue;
            }
            if rng.random::<f64>() < p {
                let delay = model.sample_delay(rng);
                queue.push(Event {
                    time: time + delay,
                    node: dst,
                    source: node,
                });
            }
        }
    }
    TracedCascade {
        cascade: Cascade {
            id: 0,
            times,
            seed_node,
        },
        transmissions,
    }
}

/// Outcome of [`generate_cascade_set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub cascades: usize,
    pub attempts: usize,
    pub discarded: usize,
    pub coverage_target: f64,
    pub coverage: f64,
    pub covered_edges: usize,
    pub total_edges: usize,
    /// Mean delay over every transmission in the kept cascades.
    pub mean_transmission_delay: f64,
    /// Set when the coverage target was not reached.
    pub warning: Option<String>,
}

/// Per-attempt RNG stream: attempt `k` always sees the same random numbers.
pub fn attempt_rng(master_seed: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(attempt);
    rng
}

const ATTEMPT_BATCH: usize = 256;
const MAX_ATTEMPTS_PER_CASCADE: usize = 100;

/// Simulates cascades from uniformly random seeds until `coverage_target` of
/// the true edges have carried at least one infection, or `max_cascades`
/// informative cascades were kept. Single-node cascades are discarded.
///
/// Attempts run in parallel batches on the current rayon pool; the result
/// depends only on the inputs and `master_seed`.
pub fn generate_cascade_set(
    net: &Network,
    model: &TransmissionModel,
    coverage_target: f64,
    max_cascades: usize,
    master_seed: u64,
) -> Result<(CascadeSet, GenerationReport)> {
    if !(coverage_target > 0.0 && coverage_target <= 1.0) {
        return Err(Error::invalid(format!(
            "coverage target {coverage_target} outside (0, 1]"
        )));
    }
    if max_cascades == 0 {
        return Err(Error::invalid("max_cascades must be at least 1"));
    }
    if net.n() == 0 {
        return Err(Error::invalid("network has no nodes"));
    }

    let total_edges = net.edge_count();
    let mut row_offset = Vec::with_capacity(net.n());
    let mut acc = 0;
    for src in 0..net.n() {
        row_offset.push(acc);
        acc += net.out_edges(src).len();
    }
    let edge_index = |src: usize, dst: usize| -> usize {
        let pos = net
            .out_edges(src)
            .binary_search_by_key(&dst, |&(d, _)| d)
            .expect("transmission along a non-edge");
        row_offset[src] + pos
    };

    let coverage_of = |covered: usize| {
        if total_edges == 0 {
            1.0
        } else {
            covered as f64 / total_edges as f64
        }
    };

    let max_attempts = max_cascades.saturating_mul(MAX_ATTEMPTS_PER_CASCADE);
    let mut covered = vec![false; total_edges];
    let mut covered_count = 0;
    let mut set = CascadeSet::new(net.n());
    let mut attempts = 0;
    let mut discarded = 0;
    let mut delay_sum = 0.0;
    let mut delay_count = 0usize;

    'outer: while coverage_of(covered_count) < coverage_target
        && set.len() < max_cascades
        && attempts < max_attempts
    {
        let batch_end = (attempts + ATTEMPT_BATCH).min(max_attempts);
        let batch: Vec<TracedCascade> = (attempts..batch_end)
            .into_par_iter()
            .map(|k| {
                let mut rng = attempt_rng(master_seed, k as u64);
                let seed_node = rng.random_range(0..net.n());
                simulate_traced(net, model, seed_node, &mut rng)
            })
            .collect();
        for traced in batch {
            attempts += 1;
            if traced.cascade.len() < 2 {
                discarded += 1;
            } else {
                let mut cascade = traced.cascade;
                cascade.id = set.len() as u64;
                set.cascades.push(cascade);
                for &(src, dst, delay) in &traced.transmissions {
                    let e = edge_index(src, dst);
                    if !covered[e] {
                        covered[e] = true;
                        covered_count += 1;
                    }
                    delay_sum += delay;
                    delay_count += 1;
                }
            }
            if coverage_of(covered_count) >= coverage_target || set.len() >= max_cascades {
                break 'outer;
            }
        }
    }

    let coverage = coverage_of(covered_count);
    let warning = (coverage < coverage_target).then(|| {
        let msg = format!(
            "coverage {coverage:.4} below target {coverage_target} after {} cascades ({attempts} attempts)",
            set.len()
        );
        log::warn!("{msg}");
        msg
    });
    let report = GenerationReport {
        cascades: set.len(),
        attempts,
        discarded,
        coverage_target,
        coverage,
        covered_edges: covered_count,
        total_edges,
        mean_transmission_delay: if delay_count == 0 {
            0.0
        } else {
            delay_sum / delay_count as f64
        },
        warning,
    };
    Ok((set, report))
}

/// Mean, over cascades with at least one non-seed infection, of the average
/// gap between each non-seed node's infection time and that of the earliest
/// infected node preceding it (the cascade's seed).
pub fn mean_infection_gap(cs: &CascadeSet) -> f64 {
    let per_cascade: Vec<f64> = cs
        .cascades
        .iter()
        .filter_map(|c| {
            let origin = c.times.values().copied().fold(f64::INFINITY, f64::min);
            let gaps: Vec<f64> = c
                .times
                .iter()
                .filter(|&(&node, _)| node != c.seed_node)
                .map(|(_, &t)| t - origin)
                .collect();
            (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
        })
        .collect();
    if per_cascade.is_empty() {
        0.0
    } else {
        per_cascade.iter().sum::<f64>() / per_cascade.len() as f64
    }
}

/// Smallest time a perturbed non-seed infection may take; keeps the seed the
/// unique node at time zero.
const MIN_PERTURBED_TIME: f64 = f64::MIN_POSITIVE;

/// Adds independent `Normal(0, sigma^2)` noise to every non-seed infection time.
///
/// Returns the perturbed set and the noise-to-signal ratio: mean absolute
/// perturbation over [`mean_infection_gap`] of the input.
pub fn perturb_times<R: Rng + ?Sized>(
    cs: &CascadeSet,
    sigma: f64,
    rng: &mut R,
) -> Result<(CascadeSet, f64)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok((cs.clone(), 0.0));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = cs.clone();
    let mut abs_sum = 0.0;
    let mut count = 0usize;
    for c in &mut out.cascades {
        let seed = c.seed_node;
        for (&node, t) in c.times.iter_mut() {
            if node == seed {
                continue;
            }
            let e = normal.sample(rng);
            abs_sum += e.abs();
            count += 1;
            *t = (*t + e).max(MIN_PERTURBED_TIME);
        }
    }
    let gap = mean_infection_gap(cs);
    let ratio = if count == 0 || gap == 0.0 {
        0.0
    } else {
        (abs_sum / count as f64) / gap
    };
    Ok((out, ratio))
}

pub fn write_cascades<W: Write>(cs: &CascadeSet, mut w: W) -> Result<()> {
    writeln!(w, "# cascades n={}", cs.n)?;
    for c in &cs.cascades {
        for (&node, &t) in &c.times {
            writeln!(w, "{}\t{}\t{}", c.id, node, sig17(t))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cascades<R: BufRead>(r: R) -> Result<CascadeSet> {
    struct Partial {
        first_line: usize,
        times: BTreeMap<usize, f64>,
        seed: Option<usize>,
    }

    let mut n: Option<usize> = None;
    let mut order: Vec<u64> = Vec::new();
    let mut partial: HashMap<u64, Partial> = HashMap::new();

    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("cascades") {
                let v = rest
                    .trim()
                    .strip_prefix("n=")
                    .ok_or_else(|| Error::parse(lineno, "expected '# cascades n=<count>'"))?;
                if n.is_some() {
                    return Err(Error::parse(lineno, "repeated cascades header"));
                }
                n = Some(parse_field(v, lineno, "node count")?);
            }
            continue;
        }
        let n = n.ok_or_else(|| Error::parse(lineno, "record before '# cascades n=<n>' header"))?;
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: u64 = parse_field(fields[0], lineno, "cascade id")?;
        let node: usize = parse_field(fields[1], lineno, "node")?;
        let t: f64 = parse_field(fields[2], lineno, "time")?;
        if node >= n {
            return Err(Error::parse(lineno, format!("node {node} out of range for {n} nodes")));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::parse(lineno, format!("time {t} must be finite and >= 0")));
        }
        let entry = partial.entry(id).or_insert_with(|| {
            order.push(id);
            Partial {
                first_line: lineno,
                times: BTreeMap::new(),
                seed: None,
            }
        });
        if entry.times.insert(node, t).is_some() {
            return Err(Error::parse(
                lineno,
                format!("duplicate record for node {node} in cascade {id}"),
            ));
        }
        if t == 0.0 {
            if let Some(prev) = entry.seed {
                return Err(Error::parse(
                    lineno,
                    format!("cascade {id} has two time-0 nodes ({prev} and {node})"),
                ));
            }
            entry.seed = Some(node);
        }
    }

    let n = n.ok_or_else(|| Error::parse(1, "missing '# cascades n=<n>' header"))?;
    let mut cs = CascadeSet::new(n);
    for id in order {
        let p = partial.remove(&id).expect("recorded id");
        let seed_node = p
            .seed
            .ok_or_else(|| Error::parse(p.first_line, format!("cascade {id} has no time-0 node")))?;
        cs.cascades.push(Cascade {
            id,
            times: p.times,
            seed_node,
        });
    }
    Ok(cs)
}

pub fn write_cascades_file(cs: &CascadeSet, path: impl AsRef<Path>) -> Result<()> {
    write_cascades(cs, BufWriter::new(File::create(path)?))
}

pub fn read_cascades_file(path: impl AsRef<Path>) -> Result<CascadeSet> {
    read_cascades(BufReader::new(File::open(path)?))
}
