//! Bradley-Terry ratings on the Elo scale, fitted by MAP Newton iteration.
//!
//! Votes CSV columns: `a,b,wins_a,wins_b`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub const ELO_PRIOR_SIGMA: f64 = 350.0;
const GRAD_TOL: f64 = 1e-9;
const MAX_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairwiseRecord {
    pub a: String,
    pub b: String,
    pub wins_a: u64,
    pub wins_b: u64,
}

impl PairwiseRecord {
    pub fn new(a: impl Into<String>, b: impl Into<String>, wins_a: u64, wins_b: u64) -> Result<Self> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(invalid(format!("contestant `{a}` compared with itself")));
        }
        if wins_a == 0 && wins_b == 0 {
            return Err(invalid(format!("record {a} vs {b} has no games")));
        }
        Ok(Self { a, b, wins_a, wins_b })
    }
}

pub type Ratings = BTreeMap<String, f64>;

pub fn read_votes(path: &Path) -> Result<Vec<PairwiseRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["a", "b", "wins_a", "wins_b"] {
        return Err(invalid("votes CSV header must be a,b,wins_a,wins_b"));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let count = |k: usize| {
            row[k]
                .trim()
                .parse::<u64>()
                .map_err(|e| invalid(format!("votes row {}: `{}`: {e}", i + 1, &row[k])))
        };
        out.push(PairwiseRecord::new(&row[0], &row[1], count(2)?, count(3)?)?);
    }
    Ok(out)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn components(names: &[String], wins: &DMatrix<f64>) -> Vec<Vec<String>> {
    let n = names.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if wins[(i, j)] > 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(name.clone());
    }
    groups.into_values().collect()
}

/// Log posterior, gradient and Hessian at `r`.
fn evaluate(r: &DVector<f64>, wins: &DMatrix<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let k = std::f64::consts::LN_10 / 400.0;
    let prior = 1.0 / (ELO_PRIOR_SIGMA * ELO_PRIOR_SIGMA);
    let n = r.len();
    let mut f = -0.5 * prior * r.norm_squared();
    let mut g = -prior * r;
    let mut h = DMatrix::from_diagonal_element(n, n, -prior);
    for i in 0..n {
        for j in i + 1..n {
            let (wij, wji) = (wins[(i, j)], wins[(j, i)]);
            if wij + wji == 0.0 {
                continue;
            }
            let d = k * (r[i] - r[j]);
            let log_sig = |t: f64| if t >= 0.0 { -(-t).exp().ln_1p() } else { t - t.exp().ln_1p() };
            f += wij * log_sig(d) + wji * log_sig(-d);
            let p = 1.0 / (1.0 + (-d).exp());
            let gi = k * (wij - (wij + wji) * p);
            g[i] += gi;
            g[j] -= gi;
            let c = k * k * (wij + wji) * p * (1.0 - p);
            h[(i, i)] -= c;
            h[(j, j)] -= c;
            h[(i, j)] += c;
            h[(j, i)] += c;
        }
    }
    (f, g, h)
}

/// MAP ratings under a zero-centred Gaussian prior, shifted to mean 0.
pub fn bayesian_elo(records: &[PairwiseRecord]) -> Result<Ratings> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in records {
        for name in [&rec.a, &rec.b] {
            let next = index.len();
            index.entry(name).or_insert(next);
        }
    }
    if index.is_empty() {
        return Ok(Ratings::new());
    }
    // Ordered by name so that results do not depend on record order.
    let names: Vec<String> = index.keys().map(|s| s.to_string()).collect();
    let pos: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = names.len();
    let mut wins = DMatrix::zeros(n, n);
    for rec in records {
        let (a, b) = (pos[rec.a.as_str()], pos[rec.b.as_str()]);
        wins[(a, b)] += rec.wins_a as f64;
        wins[(b, a)] += rec.wins_b as f64;
    }
    let comps = components(&names, &wins);
    if comps.len() > 1 {
        return Err(Error::Disconnected(comps));
    }

    let mut r = DVector::zeros(n);
    let (mut f, mut g, mut h) = evaluate(&r, &wins);
    let mut iters = 0;
    while g.norm() >= GRAD_TOL {
        iters += 1;
        if iters > MAX_ITERS {
            return Err(invalid(format!("rating fit did not converge, gradient norm {:e}", g.norm())));
        }
        let step = (-&h)
            .cholesky()
            .ok_or_else(|| invalid("rating Hessian is not negative definite"))?
            .solve(&g);
        let mut t = 1.0;
        loop {
            let cand = &r + t * &step;
            let (fc, gc, hc) = evaluate(&cand, &wins);
            if fc >= f - 1e-12 * f.abs() || t < 1e-8 {
                (r, f, g, h) = (cand, fc, gc, hc);
                break;
            }
            t *= 0.5;
        }
    }
    let mean = r.mean();
    Ok(names.into_iter().zip(r.iter().map(|v| v - mean)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(a: &str, b: &str, wa: u64, wb: u64) -> PairwiseRecord {
        PairwiseRecord::new(a, b, wa, wb).unwrap()
    }

    #[test]
    fn even_split_is_equal() {
        let r = bayesian_elo(&[rec("a", "b", 37, 37)]).unwrap();
        assert!((r["a"] - r["b"]).abs() < 1e-6);
        assert!(r["a"].abs() < 1e-6);
    }

    #[test]
    fn eighty_twenty_matches_closed_form() {
        let r = bayesian_elo(&[rec("a", "b", 800, 200)]).unwrap();
        let gap = r["a"] - r["b"];
        assert!((gap - 400.0 * 4f64.log10()).abs() < 5.0, "{gap}");
        assert!(gap < 400.0 * 4f64.log10());
        assert!((r["a"] + r["b"]).abs() < 1e-9);
    }

    #[test]
    fn gap_grows_with_evidence() {
        let mut last = 0.0;
        for f in [1, 2, 5, 10, 100] {
            let r = bayesian_elo(&[rec("a", "b", 4 * f, f)]).unwrap();
            let gap = r["a"] - r["b"];
            assert!(gap >= last);
            last = gap;
        }
    }

    #[test]
    fn relabeling_permutes() {
        let base = [rec("x", "y", 30, 10), rec("y", "z", 12, 20), rec("x", "z", 7, 7)];
        let r = bayesian_elo(&base).unwrap();
        let renamed: Vec<_> = base
            .iter()
            .map(|p| {
                let m = |s: &str| match s {
                    "x" => "q",
                    "y" => "a",
                    _ => "m",
                };
                rec(m(&p.a), m(&p.b), p.wins_a, p.wins_b)
            })
            .collect();
        let s = bayesian_elo(&renamed).unwrap();
        for (from, to) in [("x", "q"), ("y", "a"), ("z", "m")] {
            assert!((r[from] - s[to]).abs() < 1e-9);
        }
        let mut rev = base.to_vec();
        rev.reverse();
        let t = bayesian_elo(&rev).unwrap();
        assert!(r.iter().all(|(k, v)| (t[k] - v).abs() < 1e-9));
    }

    #[test]
    fn lopsided_records_converge() {
        let r = bayesian_elo(&[rec("a", "b", 1000, 0), rec("b", "c", 3, 0)]).unwrap();
        assert!(r["a"] > r["b"] && r["b"] > r["c"]);
    }

    #[test]
    fn disconnected_lists_components() {
        match bayesian_elo(&[rec("a", "b", 1, 2), rec("c", "d", 3, 1), rec("e", "c", 1, 0)]) {
            Err(Error::Disconnected(c)) => {
                assert_eq!(c.len(), 2);
                assert!(c.contains(&vec!["a".to_string(), "b".to_string()]));
                assert!(c.contains(&vec!["c".to_string(), "d".to_string(), "e".to_string()]));
            }
            other => panic!("{other:?}"),
        }
        assert!(PairwiseRecord::new("a", "a", 1, 1).is_err());
        assert!(PairwiseRecord::new("a", "b", 0, 0).is_err());
    }
}
