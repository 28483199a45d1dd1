//! Rate-distortion CSV files.
//!
//! Columns, in order: `codec,level,bpp,metric,value`. One row per codec,
//! level and metric. Floats are written in shortest round-trip form.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Result};
use crate::metrics::bdrate::RdPoint;

pub const RD_COLUMNS: [&str; 5] = ["codec", "level", "bpp", "metric", "value"];

#[derive(Clone, Debug, PartialEq)]
pub struct RdRow {
    pub codec: String,
    pub level: u32,
    pub bpp: f64,
    pub metric: String,
    pub value: f64,
}

pub fn write_rd<W: Write>(w: W, rows: &[RdRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RD_COLUMNS)?;
    for r in rows {
        wtr.write_record([
            r.codec.clone(),
            r.level.to_string(),
            r.bpp.to_string(),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_rd<R: Read>(r: R) -> Result<Vec<RdRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().collect::<Vec<_>>() != RD_COLUMNS {
        return Err(invalid(format!("RD CSV header must be {}", RD_COLUMNS.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |col: &str, e: &dyn std::fmt::Display| invalid(format!("RD row {}: {col}: {e}", i + 1));
        out.push(RdRow {
            codec: row[0].to_string(),
            level: row[1].parse().map_err(|e| bad("level", &e))?,
            bpp: row[2].parse().map_err(|e| bad("bpp", &e))?,
            metric: row[3].to_string(),
            value: row[4].parse().map_err(|e| bad("value", &e))?,
        });
    }
    Ok(out)
}

pub fn write_rd_csv(path: &Path, rows: &[RdRow]) -> Result<()> {
    write_rd(std::fs::File::create(path)?, rows)
}

pub fn read_rd_csv(path: &Path) -> Result<Vec<RdRow>> {
    read_rd(std::fs::File::open(path)?)
}

/// `(bpp, value)` points of one codec and metric, in file order.
pub fn curve(rows: &[RdRow], codec: &str, metric: &str) -> Vec<RdPoint> {
    rows.iter()
        .filter(|r| r.codec == codec && r.metric == metric)
        .map(|r| RdPoint {
            bpp: r.bpp,
            quality: r.value,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_lossless() {
        let rows = vec![
            RdRow {
                codec: "pico".into(),
                level: 0,
                bpp: 0.1 + 0.2,
                metric: "psnr".into(),
                value: 31.123456789012345,
            },
            RdRow {
                codec: "with,comma".into(),
                level: 70,
                bpp: 1e-7,
                metric: "ms_ssim".into(),
                value: f64::INFINITY,
            },
        ];
        let mut buf = Vec::new();
        write_rd(&mut buf, &rows).unwrap();
        assert_eq!(read_rd(buf.as_slice()).unwrap(), rows);
        assert_eq!(curve(&rows, "pico", "psnr").len(), 1);
    }

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_rd(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "codec,level,bpp,metric,value\n");
        assert!(read_rd(buf.as_slice()).unwrap().is_empty());
        assert!(read_rd("a,b\n".as_bytes()).is_err());
    }
}
