//! Architecture search over the outer-network family: enumeration, MAC
//! filtering, sampled runtime filtering and ranking.
//!
//! Hyperparameters are ordered stage 1 to 3, and within a stage
//! `C, R1, E1, F1, R2, E2, F2`. Enumeration is lexicographic in that order
//! with the last hyperparameter varying fastest.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{config, invalid, Error, Result};
use crate::model::{decoder_kmacs, encoder_kmacs, ChainConfig, ModelConfig, Role, StageConfig};

pub const HP_PER_STAGE: usize = 7;
pub const STAGES: usize = 3;
pub const HP_COUNT: usize = HP_PER_STAGE * STAGES;

const HP_SUFFIX: [&str; HP_PER_STAGE] = ["C", "R1", "E1", "F1", "R2", "E2", "F2"];

/// Value sets per hyperparameter for one outer network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchSpace {
    pub role: Role,
    pub sets: Vec<Vec<usize>>,
}

/// `C1, R11, E11, F11, R12, ...`
pub fn hp_names() -> Vec<String> {
    (1..=STAGES)
        .flat_map(|s| {
            HP_SUFFIX.iter().map(move |h| {
                let (name, chain) = h.split_at(1);
                format!("{name}{s}{chain}")
            })
        })
        .collect()
}

fn v(x: &[usize]) -> Vec<usize> {
    x.to_vec()
}

impl SearchSpace {
    pub fn new(role: Role, sets: Vec<Vec<usize>>) -> Result<Self> {
        if !role.is_outer() {
            return Err(config("role", "search spaces cover the outer networks"));
        }
        if sets.len() != HP_COUNT {
            return Err(config("space", format!("expected {HP_COUNT} value sets, got {}", sets.len())));
        }
        let names = hp_names();
        for (name, s) in names.iter().zip(&sets) {
            if s.is_empty() {
                return Err(config(name.clone(), "empty value set"));
            }
        }
        Ok(Self { role, sets })
    }

    /// Outer encoder space.
    pub fn encoder() -> Self {
        Self {
            role: Role::OuterEncoder,
            sets: vec![
                v(&[32, 64]), v(&[1, 2]), v(&[1]), v(&[1, 2]), v(&[1, 2]), v(&[1, 2, 4]), v(&[1, 2]),
                v(&[64, 96]), v(&[2, 4]), v(&[1]), v(&[1]), v(&[1, 2, 3]), v(&[1, 2, 4]), v(&[1, 2]),
                v(&[96, 128, 160]), v(&[2, 4, 6]), v(&[1]), v(&[1]), v(&[2, 4]), v(&[1, 2, 4]), v(&[1, 2]),
            ],
        }
    }

    /// Outer decoder space.
    pub fn decoder() -> Self {
        Self {
            role: Role::OuterDecoder,
            sets: vec![
                v(&[96, 128, 160]), v(&[2, 3, 4]), v(&[1]), v(&[1]), v(&[2, 3]), v(&[1, 2, 4]), v(&[1, 2]),
                v(&[64, 96]), v(&[1, 2, 3]), v(&[1]), v(&[1]), v(&[1, 2]), v(&[1, 2, 4]), v(&[1, 2]),
                v(&[32, 64]), v(&[1, 2]), v(&[1, 2]), v(&[1, 2]), v(&[1, 2]), v(&[1, 2, 3]), v(&[1, 2]),
            ],
        }
    }

    /// Text form: a `role <name>` line, then one `<HP> v1,v2,...` line per
    /// hyperparameter.
    pub fn parse(text: &str) -> Result<Self> {
        let mut role = None;
        let mut map = HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, val) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| config("space", format!("malformed line `{line}`")))?;
            let val = val.trim();
            if k == "role" {
                role = Some(val.parse::<Role>()?);
                continue;
            }
            let set = val
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| config(k, format!("bad value `{x}`"))))
                .collect::<Result<Vec<_>>>()?;
            map.insert(k.to_string(), set);
        }
        let role = role.ok_or_else(|| config("role", "missing"))?;
        let sets = hp_names()
            .into_iter()
            .map(|n| map.remove(&n).ok_or_else(|| config(n, "missing value set")))
            .collect::<Result<_>>()?;
        if let Some(k) = map.keys().next() {
            return Err(config(k.clone(), "unknown hyperparameter"));
        }
        Self::new(role, sets)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("role {}\n", self.role);
        for (n, set) in hp_names().iter().zip(&self.sets) {
            let vals: Vec<String> = set.iter().map(|x| x.to_string()).collect();
            s.push_str(&format!("{n} {}\n", vals.join(",")));
        }
        s
    }

    /// `encoder`, `decoder`, or a path to a space file.
    pub fn resolve(name: &str) -> Result<Self> {
        match name {
            "encoder" => Ok(Self::encoder()),
            "decoder" => Ok(Self::decoder()),
            path => Self::parse(&std::fs::read_to_string(path)?),
        }
    }

    pub fn cardinality(&self) -> u64 {
        self.sets.iter().map(|s| s.len() as u64).product()
    }

    /// Hyperparameter values of the `index`-th configuration.
    pub fn values_at(&self, index: u64) -> [usize; HP_COUNT] {
        let mut out = [0; HP_COUNT];
        let mut rest = index;
        for i in (0..HP_COUNT).rev() {
            let n = self.sets[i].len() as u64;
            out[i] = self.sets[i][(rest % n) as usize];
            rest /= n;
        }
        out
    }

    pub fn config_at(&self, index: u64) -> ModelConfig {
        config_from_values(self.role, &self.values_at(index))
    }

    /// Lazily yields `(index, config)` in enumeration order.
    pub fn enumerate(&self) -> impl Iterator<Item = (u64, ModelConfig)> + '_ {
        (0..self.cardinality()).map(move |i| (i, self.config_at(i)))
    }
}

pub fn config_from_values(role: Role, hp: &[usize; HP_COUNT]) -> ModelConfig {
    let stages = hp
        .chunks(HP_PER_STAGE)
        .map(|s| StageConfig::new(s[0], ChainConfig::new(s[1], s[2], s[3]), ChainConfig::new(s[4], s[5], s[6])))
        .collect();
    let mut cfg = match role {
        Role::OuterEncoder => ModelConfig::final_encoder(),
        _ => ModelConfig::final_decoder(),
    };
    cfg.stages = stages;
    cfg
}

pub fn values_of(cfg: &ModelConfig) -> [usize; HP_COUNT] {
    let mut out = [0; HP_COUNT];
    for (i, s) in cfg.stages.iter().take(STAGES).enumerate() {
        out[i * HP_PER_STAGE..(i + 1) * HP_PER_STAGE].copy_from_slice(&[
            s.channels,
            s.chain1.repeats,
            s.chain1.expand_3x3,
            s.chain1.expand_1x1,
            s.chain2.repeats,
            s.chain2.expand_3x3,
            s.chain2.expand_1x1,
        ]);
    }
    out
}

/// Analytic kMACs/pixel of an outer network config.
pub fn kmacs_of(cfg: &ModelConfig) -> f64 {
    match cfg.role {
        Role::OuterEncoder => encoder_kmacs(cfg),
        _ => decoder_kmacs(cfg),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateRecord {
    pub index: u64,
    pub config: ModelConfig,
    pub kmacs: f64,
    pub runtime_ms: Option<f64>,
    pub metric: Option<f64>,
}

impl CandidateRecord {
    pub fn new(index: u64, config: ModelConfig) -> Self {
        let kmacs = kmacs_of(&config);
        Self {
            index,
            config,
            kmacs,
            runtime_ms: None,
            metric: None,
        }
    }
}

/// Keeps configs whose kMACs/pixel lie in `[lo, hi]`.
pub fn filter_by_macs(
    stream: impl Iterator<Item = (u64, ModelConfig)>,
    lo: f64,
    hi: f64,
) -> impl Iterator<Item = CandidateRecord> {
    stream
        .map(|(i, c)| CandidateRecord::new(i, c))
        .filter(move |r| r.kmacs >= lo && r.kmacs <= hi)
}

/// Parallel form of enumerate + [`filter_by_macs`]; output is in
/// enumeration order regardless of worker count.
pub fn filter_space(space: &SearchSpace, lo: f64, hi: f64) -> Result<Vec<CandidateRecord>> {
    if !(lo < hi) {
        return Err(invalid(format!("empty kMACs band [{lo}, {hi}]")));
    }
    Ok((0..space.cardinality())
        .into_par_iter()
        .filter_map(|i| {
            let c = space.config_at(i);
            let k = kmacs_of(&c);
            (k >= lo && k <= hi).then(|| CandidateRecord {
                index: i,
                config: c,
                kmacs: k,
                runtime_ms: None,
                metric: None,
            })
        })
        .collect())
}

/// Count-only variant of [`filter_space`].
pub fn count_in_band(space: &SearchSpace, lo: f64, hi: f64) -> u64 {
    (0..space.cardinality())
        .into_par_iter()
        .filter(|&i| {
            let k = kmacs_of(&space.config_at(i));
            k >= lo && k <= hi
        })
        .count() as u64
}

/// Predicted runtime (ms) of one 512x512 tile.
pub trait CostModel: Sync {
    fn runtime_ms(&self, rec: &CandidateRecord) -> Result<f64>;
}

pub struct ConstantCost(pub f64);

impl CostModel for ConstantCost {
    fn runtime_ms(&self, _: &CandidateRecord) -> Result<f64> {
        Ok(self.0)
    }
}

/// `a * kmacs + b`.
pub struct KmacsLinearCost {
    pub a: f64,
    pub b: f64,
}

impl CostModel for KmacsLinearCost {
    fn runtime_ms(&self, rec: &CandidateRecord) -> Result<f64> {
        Ok(self.a * rec.kmacs + self.b)
    }
}

/// Measured runtimes keyed by config id.
pub struct TableCost(pub HashMap<u64, f64>);

impl TableCost {
    /// CSV with `config-id` and `runtime_ms` columns.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("cost table lacks a `{name}` column")))
        };
        let (id, rt) = (col("config-id")?, col("runtime_ms")?);
        let mut map = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            let parse = |i: usize| row.get(i).unwrap_or("").trim().to_string();
            let k = parse(id).parse::<u64>().map_err(|_| Error::Parse("bad config-id".into()))?;
            let v = parse(rt).parse::<f64>().map_err(|_| Error::Parse("bad runtime_ms".into()))?;
            map.insert(k, v);
        }
        Ok(Self(map))
    }
}

impl CostModel for TableCost {
    fn runtime_ms(&self, rec: &CandidateRecord) -> Result<f64> {
        self.0
            .get(&rec.index)
            .copied()
            .ok_or_else(|| invalid(format!("no runtime recorded for config {}", rec.index)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub sampled: usize,
    pub dropped: usize,
    pub retained: Vec<CandidateRecord>,
}

/// Uniform sample of `n` records without replacement (all of them when
/// `n` exceeds the population), costed and kept when within `tol * target`.
pub fn sample_and_cost(
    records: &[CandidateRecord],
    n: usize,
    seed: u64,
    cm: &dyn CostModel,
    target_ms: f64,
    tol: f64,
) -> Result<SampleOutcome> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let mut picks: Vec<usize> = if n >= records.len() {
        (0..records.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, records.len(), n).into_vec()
    };
    picks.sort_unstable();
    let costed: Vec<Option<CandidateRecord>> = picks
        .par_iter()
        .map(|&i| match cm.runtime_ms(&records[i]) {
            Ok(rt) => Some(CandidateRecord {
                runtime_ms: Some(rt),
                ..records[i].clone()
            }),
            Err(e) => {
                log::debug!("cost model failed on config {}: {e}", records[i].index);
                None
            }
        })
        .collect();
    let dropped = costed.iter().filter(|c| c.is_none()).count();
    let retained = costed
        .into_iter()
        .flatten()
        .filter(|r| (r.runtime_ms.unwrap() - target_ms).abs() <= tol * target_ms)
        .collect();
    Ok(SampleOutcome {
        sampled: picks.len(),
        dropped,
        retained,
    })
}

/// Top `k` by metric; ties keep enumeration order.
pub fn rank_candidates(records: &[CandidateRecord], k: usize, descending: bool) -> Result<Vec<CandidateRecord>> {
    let mut keyed = records
        .iter()
        .map(|r| {
            r.metric
                .filter(|m| !m.is_nan())
                .map(|m| (m, r))
                .ok_or_else(|| invalid(format!("config {} has no metric", r.index)))
        })
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|(ma, ra), (mb, rb)| {
        let ord = ma.partial_cmp(mb).unwrap();
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(ra.index.cmp(&rb.index))
    });
    Ok(keyed.into_iter().take(k).map(|(_, r)| r.clone()).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns: `config-id`, the 21 hyperparameters, `kmacs`, `runtime_ms`,
/// `metric`. Empty cells are absent values.
pub fn write_records(w: impl Write, records: &[CandidateRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["config-id".to_string()];
    header.extend(hp_names());
    header.extend(["kmacs", "runtime_ms", "metric"].map(String::from));
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string()];
        row.extend(values_of(&r.config).iter().map(|v| v.to_string()));
        row.push(format!("{:.6}", r.kmacs));
        row.push(opt(r.runtime_ms));
        row.push(opt(r.metric));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records(r: impl Read, role: Role) -> Result<Vec<CandidateRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("records lack a `{name}` column")))
    };
    let id = col("config-id")?;
    let hp_cols = hp_names().iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let (rt, metric) = (col("runtime_ms")?, col("metric")?);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let num = |i: usize| -> Result<Option<f64>> {
            let s = cell(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Parse(format!("bad number `{s}`")))
        };
        let index = cell(id).parse().map_err(|_| Error::Parse("bad config-id".into()))?;
        let mut hp = [0usize; HP_COUNT];
        for (slot, &c) in hp.iter_mut().zip(&hp_cols) {
            *slot = cell(c).parse().map_err(|_| Error::Parse(format!("bad value `{}`", cell(c))))?;
        }
        let mut rec = CandidateRecord::new(index, config_from_values(role, &hp));
        rec.runtime_ms = num(rt)?;
        rec.metric = num(metric)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records_file(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    write_records(std::fs::File::create(path)?, records)
}
