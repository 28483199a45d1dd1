//! Scale table and 16-bit cumulative frequency tables.

use crate::detmath;
use crate::error::{invalid, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;

pub const SCALE_COUNT: usize = 64;
pub const SCALE_MIN: f64 = 0.11;
pub const SCALE_MAX: f64 = 256.0;
pub const DEFAULT_SUPPORT: i32 = 32;

/// 64 log-spaced Gaussian scales from 0.11 to 256.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTable {
    pub sigmas: Vec<f64>,
}

impl Default for ScaleTable {
    fn default() -> Self {
        Self::new()
    }
}

impl ScaleTable {
    pub fn new() -> Self {
        let (lo, hi) = (detmath::ln(SCALE_MIN), detmath::ln(SCALE_MAX));
        let step = (hi - lo) / (SCALE_COUNT - 1) as f64;
        let mut sigmas: Vec<f64> = (0..SCALE_COUNT).map(|i| detmath::exp(lo + step * i as f64)).collect();
        sigmas[0] = SCALE_MIN;
        sigmas[SCALE_COUNT - 1] = SCALE_MAX;
        Self { sigmas }
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// Frequencies over the symbols `-S..=S` followed by one escape bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    support: i32,
    freqs: Vec<u32>,
    cum: Vec<u32>,
}

impl CdfTable {
    pub fn from_frequencies(support: i32, freqs: Vec<u32>) -> Result<Self> {
        if support < 0 {
            return Err(invalid("negative support"));
        }
        if freqs.len() != 2 * support as usize + 2 {
            return Err(invalid(format!(
                "support {support} needs {} frequencies, got {}",
                2 * support + 2,
                freqs.len()
            )));
        }
        if freqs.contains(&0) {
            return Err(invalid("every bucket needs a non-zero frequency"));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in &freqs {
            acc = acc.checked_add(f).ok_or_else(|| invalid("frequency overflow"))?;
            cum.push(acc);
        }
        if acc != TOTAL {
            return Err(invalid(format!("frequencies sum to {acc}, expected {TOTAL}")));
        }
        Ok(Self { support, freqs, cum })
    }

    /// Quantises a probability vector (same layout as the frequencies) with a
    /// floor of one per bucket. Remaining units go by largest remainder, ties
    /// to the smaller magnitude; with `symmetric`, mirrored symbols are
    /// promoted together so `freq(k) == freq(-k)`.
    pub fn from_probabilities(support: i32, probs: &[f64], symmetric: bool) -> Result<Self> {
        let n = 2 * support as usize + 2;
        if probs.len() != n || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probability vector malformed"));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(invalid("probabilities sum to zero"));
        }
        let budget = (TOTAL as usize - n) as f64;
        let mut freqs = vec![1u32; n];
        let mut frac = vec![0f64; n];
        for i in 0..n {
            let v = probs[i] / sum * budget;
            let f = v.floor();
            freqs[i] += f as u32;
            frac[i] = v - f;
        }
        if symmetric {
            for k in 1..=support as usize {
                let (a, b) = (support as usize - k, support as usize + k);
                let (f, r) = (freqs[a].min(freqs[b]), frac[a].min(frac[b]));
                freqs[a] = f;
                freqs[b] = f;
                frac[a] = r;
                frac[b] = r;
            }
        }
        let magnitude = |i: usize| -> i32 {
            if i == n - 1 {
                support + 1
            } else {
                (i as i32 - support).abs()
            }
        };
        let mut remaining = TOTAL as i64 - freqs.iter().map(|&f| f as i64).sum::<i64>();
        let center = support as usize;
        if remaining < 0 {
            freqs[center] = (freqs[center] as i64 + remaining).max(1) as u32;
            remaining = TOTAL as i64 - freqs.iter().map(|&f| f as i64).sum::<i64>();
            if remaining != 0 {
                return Err(invalid("cannot normalise frequencies"));
            }
        }
        // candidates: each symbol (or mirrored pair) once
        let mut cands: Vec<usize> = (0..n)
            .filter(|&i| !symmetric || i >= center || i == n - 1)
            .collect();
        cands.sort_by(|&a, &b| {
            frac[b]
                .partial_cmp(&frac[a])
                .unwrap()
                .then(magnitude(a).cmp(&magnitude(b)))
                .then(a.cmp(&b))
        });
        while remaining > 0 {
            let before = remaining;
            for &i in &cands {
                let paired = symmetric && i > center && i != n - 1;
                let cost = if paired { 2 } else { 1 };
                if remaining >= cost {
                    freqs[i] += 1;
                    if paired {
                        freqs[2 * center - i] += 1;
                    }
                    remaining -= cost;
                }
                if remaining == 0 {
                    break;
                }
            }
            if remaining == before {
                freqs[center] += remaining as u32;
                remaining = 0;
            }
        }
        Self::from_frequencies(support, freqs)
    }

    pub fn support(&self) -> i32 {
        self.support
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cum(&self) -> &[u32] {
        &self.cum
    }

    pub fn escape_index(&self) -> usize {
        self.freqs.len() - 1
    }

    /// Bucket of a symbol; out-of-support values map to the escape bucket.
    pub fn bucket(&self, symbol: i32) -> usize {
        if symbol.abs() <= self.support {
            (symbol + self.support) as usize
        } else {
            self.escape_index()
        }
    }

    pub fn freq(&self, symbol: i32) -> u32 {
        self.freqs[self.bucket(symbol)]
    }

    /// Bucket whose cumulative interval contains `target < TOTAL`.
    pub fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Symbol value of an in-support bucket.
    pub fn symbol(&self, bucket: usize) -> i32 {
        bucket as i32 - self.support
    }

    /// Ideal code length of `symbol` in bits, escape payload included.
    pub fn cost_bits(&self, symbol: i32) -> f64 {
        let b = self.bucket(symbol);
        let bits = PRECISION_BITS as f64 - (self.freqs[b] as f64).log2();
        if b == self.escape_index() {
            bits + ESCAPE_BITS as f64
        } else {
            bits
        }
    }
}

/// Raw bits following an escape: the value as 16-bit two's complement.
pub const ESCAPE_BITS: u32 = 16;

/// Discretised zero-mean Gaussian mass of `k` (and of the escape bucket).
pub fn gaussian_probabilities(sigma: f64, support: i32) -> Vec<f64> {
    let n = 2 * support as usize + 2;
    let mut p = vec![0.0; n];
    let inv = 1.0 / (sigma * std::f64::consts::SQRT_2);
    // mass of [k - 1/2, k + 1/2] via tails, mirrored for symmetry
    let tail = |x: f64| 0.5 * detmath::erfc(x * inv);
    p[support as usize] = 1.0 - 2.0 * tail(0.5);
    for k in 1..=support {
        let m = tail(k as f64 - 0.5) - tail(k as f64 + 0.5);
        p[(support + k) as usize] = m;
        p[(support - k) as usize] = m;
    }
    p[n - 1] = 2.0 * tail(support as f64 + 0.5);
    p
}

/// One table per scale-table entry.
#[derive(Clone, Debug, PartialEq)]
pub struct CdfTables {
    pub scales: ScaleTable,
    pub tables: Vec<CdfTable>,
}

impl CdfTables {
    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

pub fn build_cdf_tables(st: &ScaleTable, support: i32) -> Result<CdfTables> {
    if support < 1 {
        return Err(invalid("support radius must be at least 1"));
    }
    let tables = st
        .sigmas
        .iter()
        .map(|&s| CdfTable::from_probabilities(support, &gaussian_probabilities(s, support), true))
        .collect::<Result<_>>()?;
    Ok(CdfTables {
        scales: st.clone(),
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn scale_table_shape() {
        let st = ScaleTable::new();
        assert_eq!(st.len(), 64);
        assert_eq!(st.sigmas[0], 0.11);
        assert_eq!(st.sigmas[63], 256.0);
        assert!(st.sigmas.windows(2).all(|w| w[0] < w[1]));
        let ratio = st.sigmas[1] / st.sigmas[0];
        assert!((st.sigmas[40] / st.sigmas[39] - ratio).abs() < 1e-12);
    }

    #[test]
    fn unit_sigma_center_mass() {
        let p = gaussian_probabilities(1.0, 32);
        let n = Normal::new(0.0, 1.0).unwrap();
        let want = n.cdf(0.5) - n.cdf(-0.5);
        assert!((p[32] - want).abs() < 1e-12);
        assert!((want - 0.3829).abs() < 1e-4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tables_are_valid_and_symmetric() {
        let t = build_cdf_tables(&ScaleTable::new(), 32).unwrap();
        assert_eq!(t.len(), 64);
        for table in &t.tables {
            assert_eq!(table.cum()[0], 0);
            assert_eq!(*table.cum().last().unwrap(), TOTAL);
            assert!(table.freqs().iter().all(|&f| f >= 1));
            for k in 1..=32 {
                assert_eq!(table.freq(k), table.freq(-k));
            }
        }
    }

    #[test]
    fn widest_scale_is_nearly_uniform() {
        let st = ScaleTable::new();
        let t = CdfTable::from_probabilities(16, &gaussian_probabilities(st.sigmas[63], 16), true).unwrap();
        let inner = &t.freqs()[..33];
        let (mx, mn) = (*inner.iter().max().unwrap(), *inner.iter().min().unwrap());
        assert!((mx as f64) / (mn as f64) < 1.2, "{mx}/{mn}");
    }

    #[test]
    fn lookup_and_costs() {
        let t = build_cdf_tables(&ScaleTable::new(), 4).unwrap();
        let table = &t.tables[10];
        for b in 0..table.freqs().len() {
            assert_eq!(table.find(table.cum()[b]), b);
            assert_eq!(table.find(table.cum()[b + 1] - 1), b);
        }
        assert_eq!(table.bucket(5), table.escape_index());
        assert_eq!(table.bucket(-4), 0);
        assert!(table.cost_bits(100) > 16.0);
        // smallest sigma: zero costs almost nothing
        assert!(t.tables[0].cost_bits(0) < 0.01);
    }

    #[test]
    fn bad_frequency_vectors_rejected() {
        assert!(CdfTable::from_frequencies(1, vec![1, 2, 3]).is_err());
        assert!(CdfTable::from_frequencies(1, vec![0, 1, 1, TOTAL - 2]).is_err());
        assert!(CdfTable::from_frequencies(1, vec![1, 1, 1, 1]).is_err());
        assert!(build_cdf_tables(&ScaleTable::new(), 0).is_err());
    }

    #[test]
    fn asymmetric_quantisation_sums() {
        let probs = [0.5, 0.2, 0.1, 0.1, 0.05, 0.05];
        let t = CdfTable::from_probabilities(2, &probs, false).unwrap();
        assert_eq!(t.freqs().iter().sum::<u32>(), TOTAL);
        assert!(t.freq(-2) > t.freq(-1));
    }
}
