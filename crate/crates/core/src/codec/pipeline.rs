//! Tiled encode and decode.

use std::sync::mpsc::sync_channel;

use rayon::prelude::*;

use crate::codec::bitstream::{Bitstream, BitstreamHeader, TilePayload, VERSION};
use crate::codec::level::{apply_level_gain, level_embedding, GainDirection, QualityLevel};
use crate::codec::models::ModelBundle;
use crate::codec::tiles::{extract_padded_tile, partition_tiles, place_tile, TileGrid};
use crate::coding::{
    context_phases, dequantize_value, estimate_rate_bits, quantize_hyper, quantize_value, range_decode, range_encode,
};
use crate::error::{invalid, Error, Result};
use crate::image_io::RgbImage;
use crate::tensor::{Shape, Tensor};

/// Per-tile intermediate values, for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct TileTrace {
    pub z_hat: Vec<i32>,
    pub sigma: Vec<u8>,
    pub y_hat: Vec<i32>,
    /// Ideal code length of ẑ and ŷ under their tables.
    pub estimated_bits: f64,
}

fn tile_err(tile: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Tile {
        tile,
        source: Box::new(e),
    }
}

fn z_tensor(shape: Shape, z_hat: &[i32]) -> Result<Tensor> {
    Tensor::from_vec(shape, z_hat.iter().map(|&v| v as f32).collect())
}

fn z_shape(b: &ModelBundle) -> Shape {
    let s = crate::codec::tiles::TILE_PADDED / 64;
    Shape::new(1, b.hyper_channels(), s, s)
}

fn y_shape(b: &ModelBundle) -> Shape {
    let s = crate::codec::tiles::TILE_PADDED / 16;
    Shape::new(1, b.latent_channels(), s, s)
}

/// Context prior, then per phase `(mu, q)` and the caller's update.
/// `visit(i, mu, q)` returns the dequantised value of element `i`.
fn run_phases(
    b: &ModelBundle,
    z: &Tensor,
    mut visit: impl FnMut(usize, f32, f32) -> Result<f32>,
) -> Result<Tensor> {
    let prior = b.runtime().context_decoder.forward(z, None)?.out;
    let ys = y_shape(b);
    let mut partial = Tensor::zeros(ys);
    for (phase, mask) in context_phases(b.schedule(), ys)?.iter().enumerate() {
        let (mu, q) = b.context.predict(&prior, &partial, phase)?;
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            partial.data_mut()[i] = visit(i, mu.data()[i], q.data()[i])?;
        }
    }
    Ok(partial)
}

fn encode_tile(b: &ModelBundle, l: QualityLevel, tile: &Tensor) -> Result<(TilePayload, TileTrace)> {
    let rt = b.runtime();
    let emb = level_embedding(l);
    let out = rt.encoder.forward(tile, Some(&emb))?;
    let (y, z) = (out.y.expect("encoder emits y"), out.z.expect("encoder emits z"));
    let y = apply_level_gain(&y, l, &b.gains, GainDirection::Forward)?;
    if y.shape() != y_shape(b) || z.shape() != z_shape(b) {
        return Err(invalid(format!("unexpected latent shapes {} / {}", y.shape(), z.shape())));
    }
    let z_hat = quantize_hyper(&z);
    let z_bytes = b.hyper_prior.encode(z.shape(), &z_hat)?;
    let sigma = b.scale_decoder.run_scale_decoder(z.shape(), &z_hat)?;
    let mut y_hat = vec![0i32; y.len()];
    run_phases(b, &z_tensor(z.shape(), &z_hat)?, |i, mu, q| {
        let k = quantize_value(y.data()[i], mu, q);
        y_hat[i] = k;
        Ok(dequantize_value(k, mu, q))
    })?;
    let ids: Vec<usize> = sigma.iter().map(|&s| s as usize).collect();
    let y_bytes = range_encode(&y_hat, &ids, &rt.tables)?;
    let estimated_bits =
        estimate_rate_bits(&y_hat, &sigma, &rt.tables)? + b.hyper_prior.estimate_bits(z.shape(), &z_hat);
    Ok((
        TilePayload { z: z_bytes, y: y_bytes },
        TileTrace {
            z_hat,
            sigma,
            y_hat,
            estimated_bits,
        },
    ))
}

/// Encodes `img` at level `l`; also returns the per-tile trace.
pub fn encode_image_traced(img: &RgbImage, l: QualityLevel, b: &ModelBundle) -> Result<(Bitstream, Vec<TileTrace>)> {
    let grid = partition_tiles(img.width, img.height)?;
    let cols = u16::try_from(grid.cols).map_err(|_| invalid("too many tile columns"))?;
    let rows = u16::try_from(grid.rows).map_err(|_| invalid("too many tile rows"))?;
    let coords: Vec<(usize, usize)> = grid.coords().collect();
    let results: Vec<(TilePayload, TileTrace)> = coords
        .par_iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let tile = extract_padded_tile(img, &grid, r, c)?;
            encode_tile(b, l, &tile).map_err(tile_err(i))
        })
        .collect::<Result<_>>()?;
    let len32 = |n: usize| u32::try_from(n).map_err(|_| invalid("tile payload exceeds 4 GiB"));
    let header = BitstreamHeader {
        version: VERSION,
        level: l.index() as u8,
        width: u32::try_from(img.width).map_err(|_| invalid("width exceeds 32 bits"))?,
        height: u32::try_from(img.height).map_err(|_| invalid("height exceeds 32 bits"))?,
        cols,
        rows,
        tiles: results
            .iter()
            .map(|(p, _)| Ok((len32(p.z.len())?, len32(p.y.len())?)))
            .collect::<Result<_>>()?,
    };
    let (tiles, traces) = results.into_iter().unzip();
    Ok((Bitstream { header, tiles }, traces))
}

pub fn encode_image(img: &RgbImage, l: QualityLevel, b: &ModelBundle) -> Result<Vec<u8>> {
    Ok(encode_image_traced(img, l, b)?.0.to_bytes())
}

/// Entropy-side result for one tile: the dequantised latent.
struct EntropyOut {
    latent: Tensor,
    trace: TileTrace,
}

fn entropy_stage(b: &ModelBundle, p: &TilePayload) -> Result<EntropyOut> {
    let rt = b.runtime();
    let zs = z_shape(b);
    let z_hat = b.hyper_prior.decode(zs, &p.z)?;
    let sigma = b.scale_decoder.run_scale_decoder(zs, &z_hat)?;
    let ids: Vec<usize> = sigma.iter().map(|&s| s as usize).collect();
    let y_hat = range_decode(&p.y, &ids, &rt.tables)?;
    let latent = run_phases(b, &z_tensor(zs, &z_hat)?, |i, mu, q| Ok(dequantize_value(y_hat[i], mu, q)))?;
    let estimated_bits = estimate_rate_bits(&y_hat, &sigma, &rt.tables)? + b.hyper_prior.estimate_bits(zs, &z_hat);
    Ok(EntropyOut {
        latent,
        trace: TileTrace {
            z_hat,
            sigma,
            y_hat,
            estimated_bits,
        },
    })
}

fn neural_stage(b: &ModelBundle, l: QualityLevel, latent: &Tensor) -> Result<Tensor> {
    let y = apply_level_gain(latent, l, &b.gains, GainDirection::Inverse)?;
    Ok(b.runtime().decoder.forward(&y, Some(&level_embedding(l)))?.out)
}

fn open(bytes: &[u8]) -> Result<(Bitstream, TileGrid, QualityLevel, RgbImage)> {
    let bs = Bitstream::parse(bytes)?;
    let h = &bs.header;
    let l = QualityLevel::new(h.level as usize).map_err(|_| Error::Parse(format!("bad level byte {}", h.level)))?;
    let grid = partition_tiles(h.width as usize, h.height as usize).map_err(|e| Error::Parse(e.to_string()))?;
    if grid.cols != h.cols as usize || grid.rows != h.rows as usize {
        return Err(Error::Parse(format!(
            "tile grid {}x{} does not match a {}x{} image",
            h.cols, h.rows, h.width, h.height
        )));
    }
    let img = RgbImage::new(grid.width, grid.height, vec![0; grid.width * grid.height * 3])?;
    Ok((bs, grid, l, img))
}

/// Strictly sequential decode; also returns the per-tile trace.
pub fn decode_image_traced(bytes: &[u8], b: &ModelBundle) -> Result<(RgbImage, Vec<TileTrace>)> {
    let (bs, grid, l, mut img) = open(bytes)?;
    let mut traces = Vec::with_capacity(grid.len());
    for (i, (r, c)) in grid.coords().enumerate() {
        let e = entropy_stage(b, &bs.tiles[i]).map_err(tile_err(i))?;
        let tile = neural_stage(b, l, &e.latent).map_err(tile_err(i))?;
        place_tile(&mut img, &grid, r, c, &tile)?;
        traces.push(e.trace);
    }
    Ok((img, traces))
}

pub fn decode_image(bytes: &[u8], b: &ModelBundle) -> Result<RgbImage> {
    Ok(decode_image_traced(bytes, b)?.0)
}

/// Two-stage pipeline: a worker runs entropy decoding, the scale decoder
/// and the context phases for tile `i + 1` while the calling thread runs
/// the synthesis network on tile `i`. Queue depth 2, row-major order.
pub fn decode_image_pipelined(bytes: &[u8], b: &ModelBundle) -> Result<RgbImage> {
    let (bs, grid, l, mut img) = open(bytes)?;
    let coords: Vec<(usize, usize)> = grid.coords().collect();
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel::<(usize, Result<EntropyOut>)>(2);
        let tiles = &bs.tiles;
        s.spawn(move || {
            for (i, p) in tiles.iter().enumerate() {
                let res = entropy_stage(b, p);
                let failed = res.is_err();
                if tx.send((i, res)).is_err() || failed {
                    break;
                }
            }
        });
        for (i, res) in rx {
            let e = res.map_err(tile_err(i))?;
            let tile = neural_stage(b, l, &e.latent).map_err(tile_err(i))?;
            let (r, c) = coords[i];
            place_tile(&mut img, &grid, r, c, &tile)?;
            if i + 1 == coords.len() {
                return Ok(());
            }
        }
        Err(invalid("entropy stage stopped early"))
    })?;
    Ok(img)
}
