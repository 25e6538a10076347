//! Ablation grid syntax.
//!
//! ```text
//! grid    := segment ('|' segment)*
//! segment := [label ':'] assign (';' assign)*
//! assign  := ('k' | 'n') '=' values
//! values  := INT '..' INT          inclusive range
//!          | INT (',' INT)*
//! ```
//!
//! Each segment expands to the cross product of its `k` and `n` values (k
//! outer); segments are concatenated in order. A key missing from a segment
//! takes the base configuration's value. The name `table3` expands to
//! `varying-k: k=1..5;n=1 | varying-n: k=4;n=1..4`.

use std::fmt;

pub const TABLE3_GRID: &str = "varying-k: k=1..5;n=1 | varying-n: k=4;n=1..4";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCell {
    pub group: String,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridError(pub String);

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed grid: {}", self.0)
    }
}

impl std::error::Error for GridError {}

fn parse_values(key: &str, text: &str) -> Result<Vec<usize>, GridError> {
    let int = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| GridError(format!("`{}` is not a non-negative integer in `{key}={text}`", s.trim())))
    };
    let values = if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (int(lo)?, int(hi)?);
        if lo > hi {
            return Err(GridError(format!("empty range `{key}={text}`")));
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(int).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err(GridError(format!("no values for `{key}`")));
    }
    Ok(values)
}

pub fn parse_grid(spec: &str, default_k: usize, default_n: usize) -> Result<Vec<GridCell>, GridError> {
    let spec = if spec.trim() == "table3" { TABLE3_GRID } else { spec };
    if spec.trim().is_empty() {
        return Err(GridError("empty grid".into()));
    }
    let mut cells = Vec::new();
    for (si, segment) in spec.split('|').enumerate() {
        let (label, body) = match segment.split_once(':') {
            Some((l, b)) => (l.trim().to_string(), b),
            None => (format!("g{si}"), segment),
        };
        if label.is_empty() {
            return Err(GridError(format!("segment {si} has an empty label")));
        }
        let mut ks = None;
        let mut ns = None;
        for assign in body.split(';').map(str::trim).filter(|a| !a.is_empty()) {
            let (key, values) = assign
                .split_once('=')
                .ok_or_else(|| GridError(format!("expected key=values, got `{assign}`")))?;
            let key = key.trim();
            let slot = match key {
                "k" => &mut ks,
                "n" => &mut ns,
                other => return Err(GridError(format!("unknown key `{other}` (expected k or n)"))),
            };
            if slot.is_some() {
                return Err(GridError(format!("`{key}` given twice in segment {si}")));
            }
            *slot = Some(parse_values(key, values)?);
        }
        if ks.is_none() && ns.is_none() {
            return Err(GridError(format!("segment {si} assigns neither k nor n")));
        }
        let ks = ks.unwrap_or_else(|| vec![default_k]);
        let ns = ns.unwrap_or_else(|| vec![default_n]);
        if ks.contains(&0) {
            return Err(GridError("k must be at least 1".into()));
        }
        for &k in &ks {
            for &n in &ns {
                cells.push(GridCell {
                    group: label.clone(),
                    k,
                    n,
                });
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kn(cells: &[GridCell]) -> Vec<(usize, usize)> {
        cells.iter().map(|c| (c.k, c.n)).collect()
    }

    #[test]
    fn simple_cross_product() {
        let cells = parse_grid("k=1..5;n=1..4", 4, 3).unwrap();
        assert_eq!(cells.len(), 20);
        assert_eq!(kn(&cells[..5]), vec![(1, 1), (1, 2), (1, 3), (1, 4), (2, 1)]);
        assert!(cells.iter().all(|c| c.group == "g0"));
    }

    #[test]
    fn two_k_values() {
        assert_eq!(kn(&parse_grid("k=1..2;n=1", 4, 3).unwrap()), vec![(1, 1), (2, 1)]);
    }

    #[test]
    fn table3_layout() {
        let cells = parse_grid("table3", 4, 3).unwrap();
        assert_eq!(
            kn(&cells),
            vec![(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (4, 1), (4, 2), (4, 3), (4, 4)]
        );
        assert_eq!(cells[0].group, "varying-k");
        assert_eq!(cells[8].group, "varying-n");
    }

    #[test]
    fn defaults_fill_missing_keys() {
        assert_eq!(kn(&parse_grid("k=1,3", 4, 3).unwrap()), vec![(1, 3), (3, 3)]);
        assert_eq!(kn(&parse_grid("n=0", 4, 3).unwrap()), vec![(4, 0)]);
    }

    #[test]
    fn malformed() {
        for bad in ["", "k", "k=", "k=a", "x=1", "k=3..1", "k=1;k=2", "k=0", ": k=1", "k=1|"] {
            assert!(parse_grid(bad, 4, 3).is_err(), "{bad:?} should fail");
        }
    }
}
