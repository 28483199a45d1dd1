//! Golden vectors: recorded (model hash, input, output) triples.
//!
//! ```text
//! PICO-GOLDEN 1
//! model <sha256 of the quantised model container>
//! case <c> <h> <w> <input hex> <output hex>
//! ```
//!
//! Input bytes are the network's 8-bit input codes, output bytes the scale
//! indices.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::model::WeightStore;
use crate::quant::model::{QuantizedModel, QuantizedTensor};
use crate::tensor::Shape;

const MAGIC_LINE: &str = "PICO-GOLDEN 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenCase {
    pub shape: Shape,
    pub input: Vec<u8>,
    pub output: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenFile {
    pub model_hash: String,
    pub cases: Vec<GoldenCase>,
}

pub fn model_hash(qm: &QuantizedModel) -> Result<String> {
    let mut st = WeightStore::new();
    qm.save(&mut st, "")?;
    Ok(st.content_hash())
}

fn run(qm: &QuantizedModel, shape: Shape, input: &[u8]) -> Result<Vec<u8>> {
    let x = QuantizedTensor {
        shape,
        data: input.to_vec(),
    };
    let out = qm.forward(x)?;
    Ok(out.data.iter().map(|&q| crate::quant::model::head_to_index(q)).collect())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unhex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Parse("odd-length hex field".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| Error::Parse(format!("bad hex at {i}"))))
        .collect()
}

impl GoldenFile {
    /// Records `count` random inputs of spatial size `h` x `w`. Inputs are
    /// hyper-latent codes drawn around the zero point.
    pub fn record(qm: &QuantizedModel, count: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(1, qm.config.hyper_channels, h, w);
        let cases = (0..count)
            .map(|_| {
                let input: Vec<u8> = (0..shape.numel()).map(|_| rng.gen_range(116..=140)).collect();
                let output = run(qm, shape, &input)?;
                Ok(GoldenCase { shape, input, output })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model_hash: model_hash(qm)?,
            cases,
        })
    }

    /// Re-runs every case and returns the indices of mismatches.
    pub fn verify(&self, qm: &QuantizedModel) -> Result<Vec<usize>> {
        if model_hash(qm)? != self.model_hash {
            return Err(invalid("model hash does not match the golden file"));
        }
        let mut bad = Vec::new();
        for (i, c) in self.cases.iter().enumerate() {
            if run(qm, c.shape, &c.input)? != c.output {
                bad.push(i);
            }
        }
        Ok(bad)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC_LINE}\nmodel {}\n", self.model_hash);
        for c in &self.cases {
            let _ = writeln!(
                s,
                "case {} {} {} {} {}",
                c.shape.c,
                c.shape.h,
                c.shape.w,
                hex(&c.input),
                hex(&c.output)
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC_LINE) {
            return Err(Error::Parse("not a golden-vector file".into()));
        }
        let model_hash = lines
            .next()
            .and_then(|l| l.strip_prefix("model "))
            .ok_or_else(|| Error::Parse("missing model line".into()))?
            .to_string();
        let mut cases = Vec::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 6 || f[0] != "case" {
                return Err(Error::Parse(format!("bad case line `{l}`")));
            }
            let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad dimension `{s}`")));
            let shape = Shape::new(1, dim(f[1])?, dim(f[2])?, dim(f[3])?);
            let input = unhex(f[4])?;
            if input.len() != shape.numel() {
                return Err(Error::Parse("input length does not match shape".into()));
            }
            cases.push(GoldenCase {
                shape,
                input,
                output: unhex(f[5])?,
            });
        }
        Ok(Self { model_hash, cases })
    }
}
