//! Flag value grammars and the interaction-count file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// `uniform:lo,hi` or `interactions:PATH`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Uniform { lo: f64, hi: f64 },
    Interactions(PathBuf),
}

impl FromStr for WeightSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("expected uniform:lo,hi or interactions:PATH, got {s:?}"))?;
        match kind {
            "uniform" => {
                let (lo, hi) = rest
                    .split_once(',')
                    .ok_or_else(|| format!("expected uniform:lo,hi, got {s:?}"))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("bad bound {v:?}: {e}"))
                };
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                    return Err(format!("need 0 <= lo <= hi <= 1, got {lo},{hi}"));
                }
                Ok(WeightSpec::Uniform { lo, hi })
            }
            "interactions" if !rest.is_empty() => Ok(WeightSpec::Interactions(rest.into())),
            _ => Err(format!("unknown weight scheme {s:?}")),
        }
    }
}

/// Reads `src<TAB>dst<TAB>count` lines. `#` lines are comments. Repeated
/// pairs accumulate.
pub fn read_interactions(path: &Path) -> Result<BTreeMap<(usize, usize), u64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut counts = BTreeMap::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            bail!("{}: line {}: expected 3 tab-separated fields", path.display(), k + 1);
        }
        let parse = |v: &str| {
            v.parse::<u64>()
                .with_context(|| format!("{}: line {}: bad integer {v:?}", path.display(), k + 1))
        };
        let (src, dst, m) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
        *counts.entry((src as usize, dst as usize)).or_insert(0) += m;
    }
    Ok(counts)
}
