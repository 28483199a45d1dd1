//! Container layout, all integers little-endian:
//!
//! ```text
//! "PICO" | version u8 | level u8 | width u32 | height u32 | cols u16 | rows u16
//! | per tile, row-major: z_len u32, y_len u32
//! | crc32 of all preceding header bytes
//! | per tile: z payload, then y payload
//! ```

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PICO";
pub const VERSION: u8 = 1;
const FIXED_LEN: usize = 4 + 1 + 1 + 4 + 4 + 2 + 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub level: u8,
    pub width: u32,
    pub height: u32,
    pub cols: u16,
    pub rows: u16,
    /// `(z_len, y_len)` per tile.
    pub tiles: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePayload {
    pub z: Vec<u8>,
    pub y: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub tiles: Vec<TilePayload>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

impl BitstreamHeader {
    pub fn byte_len(&self) -> usize {
        FIXED_LEN + 8 * self.tiles.len() + 4
    }

    pub fn payload_len(&self) -> u64 {
        self.tiles.iter().map(|&(z, y)| z as u64 + y as u64).sum()
    }
}

pub fn serialize_header(h: &BitstreamHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(h.byte_len());
    out.extend_from_slice(MAGIC);
    out.push(h.version);
    out.push(h.level);
    out.extend_from_slice(&h.width.to_le_bytes());
    out.extend_from_slice(&h.height.to_le_bytes());
    out.extend_from_slice(&h.cols.to_le_bytes());
    out.extend_from_slice(&h.rows.to_le_bytes());
    for &(z, y) in &h.tiles {
        out.extend_from_slice(&z.to_le_bytes());
        out.extend_from_slice(&y.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses the header at the front of `bytes`; returns it with its length.
pub fn parse_header(bytes: &[u8]) -> Result<(BitstreamHeader, usize)> {
    if bytes.len() < FIXED_LEN {
        return Err(parse_err("stream shorter than the fixed header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(parse_err("bad magic"));
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(parse_err(format!("unsupported version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let (level, width, height, cols, rows) = (bytes[5], u32_at(6), u32_at(10), u16_at(14), u16_at(16));
    let n = cols as usize * rows as usize;
    let len = FIXED_LEN + 8 * n + 4;
    if bytes.len() < len {
        return Err(parse_err(format!("header truncated: {n} tile entries need {len} bytes")));
    }
    let crc = u32_at(len - 4);
    if crc32fast::hash(&bytes[..len - 4]) != crc {
        return Err(parse_err("header CRC mismatch"));
    }
    let tiles = (0..n)
        .map(|i| (u32_at(FIXED_LEN + 8 * i), u32_at(FIXED_LEN + 8 * i + 4)))
        .collect();
    Ok((
        BitstreamHeader {
            version,
            level,
            width,
            height,
            cols,
            rows,
            tiles,
        },
        len,
    ))
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serialize_header(&self.header);
        for t in &self.tiles {
            out.extend_from_slice(&t.z);
            out.extend_from_slice(&t.y);
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let (header, mut pos) = parse_header(bytes)?;
        let mut tiles = Vec::with_capacity(header.tiles.len());
        for (i, &(z, y)) in header.tiles.iter().enumerate() {
            let (z, y) = (z as usize, y as usize);
            if bytes.len() - pos < z + y {
                return Err(parse_err(format!(
                    "payload truncated: tile {i} needs {} bytes, {} remain",
                    z + y,
                    bytes.len() - pos
                )));
            }
            tiles.push(TilePayload {
                z: bytes[pos..pos + z].to_vec(),
                y: bytes[pos + z..pos + z + y].to_vec(),
            });
            pos += z + y;
        }
        if pos != bytes.len() {
            return Err(parse_err(format!("{} trailing bytes after the last tile", bytes.len() - pos)));
        }
        Ok(Self { header, tiles })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(cols: u16, rows: u16, seed: u32) -> BitstreamHeader {
        BitstreamHeader {
            version: VERSION,
            level: (seed % 71) as u8,
            width: 1 + seed % 5000,
            height: 7 + seed % 3000,
            cols,
            rows,
            tiles: (0..cols as u32 * rows as u32).map(|i| (i * 3 + seed, i ^ seed)).collect(),
        }
    }

    proptest! {
        #[test]
        fn header_roundtrip(cols in 1u16..6, rows in 1u16..6, seed in any::<u32>()) {
            let h = header(cols, rows, seed);
            let bytes = serialize_header(&h);
            prop_assert_eq!(bytes.len(), h.byte_len());
            prop_assert_eq!(parse_header(&bytes).unwrap(), (h, bytes.len()));
        }
    }

    #[test]
    fn flipped_byte_fails_crc() {
        let bytes = serialize_header(&header(2, 2, 9));
        for i in 5..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(parse_header(&b).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn minimal_header() {
        let h = BitstreamHeader {
            version: VERSION,
            level: 0,
            width: 1,
            height: 1,
            cols: 1,
            rows: 1,
            tiles: vec![(0, 0)],
        };
        assert_eq!(parse_header(&serialize_header(&h)).unwrap().0, h);
    }

    #[test]
    fn truncated_payload_names_tile() {
        let mut h = header(2, 1, 0);
        h.tiles = vec![(3, 4), (5, 6)];
        let bs = Bitstream {
            header: h,
            tiles: vec![
                TilePayload { z: vec![1; 3], y: vec![2; 4] },
                TilePayload { z: vec![3; 5], y: vec![4; 6] },
            ],
        };
        let bytes = bs.to_bytes();
        assert_eq!(Bitstream::parse(&bytes).unwrap(), bs);
        match Bitstream::parse(&bytes[..bytes.len() - 2]) {
            Err(Error::Parse(m)) => assert!(m.contains("tile 1"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(Bitstream::parse(b"JPEG....................").is_err());
    }
}
