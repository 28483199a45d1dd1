//! Tile grid, padded tile extraction and reassembly.

use crate::error::{invalid, shape, Result};
use crate::image_io::RgbImage;
use crate::tensor::{Shape, Tensor};

pub const TILE_CORE: usize = 504;
pub const TILE_PADDED: usize = 512;
pub const TILE_MARGIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub core_width: usize,
    pub core_height: usize,
    pub cols: usize,
    pub rows: usize,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Core rectangle of tile `(r, c)`.
    pub fn core(&self, r: usize, c: usize) -> Result<TileRect> {
        if r >= self.rows || c >= self.cols {
            return Err(invalid(format!("tile ({r}, {c}) outside a {}x{} grid", self.rows, self.cols)));
        }
        let (x, y) = (c * self.core_width, r * self.core_height);
        Ok(TileRect {
            x,
            y,
            width: self.core_width.min(self.width - x),
            height: self.core_height.min(self.height - y),
        })
    }

    /// Row-major tile coordinates.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }
}

pub fn partition_tiles(width: usize, height: usize) -> Result<TileGrid> {
    TileGrid::with_core(width, height, TILE_CORE, TILE_CORE)
}

impl TileGrid {
    /// Grid with arbitrary core size; the codec always uses 504.
    pub fn with_core(width: usize, height: usize, core_width: usize, core_height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image size {width}x{height} must be positive")));
        }
        if core_width == 0 || core_height == 0 {
            return Err(invalid("tile core size must be positive"));
        }
        Ok(TileGrid {
            width,
            height,
            core_width,
            core_height,
            cols: width.div_ceil(core_width),
            rows: height.div_ceil(core_height),
        })
    }
}

/// 512x512 tile in `[0, 1]`. The core sits at offset `(4, 4)`; every pixel
/// is fetched from the image with coordinates clamped to its bounds, which
/// gives true neighbours inside the image and edge replication outside.
pub fn extract_padded_tile(img: &RgbImage, grid: &TileGrid, r: usize, c: usize) -> Result<Tensor> {
    if img.width != grid.width || img.height != grid.height {
        return Err(shape("grid does not match the image"));
    }
    let core = grid.core(r, c)?;
    let mut t = Tensor::zeros(Shape::new(1, 3, TILE_PADDED, TILE_PADDED));
    let x0 = core.x as isize - TILE_MARGIN as isize;
    let y0 = core.y as isize - TILE_MARGIN as isize;
    let clampx = |v: isize| v.clamp(0, img.width as isize - 1) as usize;
    let clampy = |v: isize| v.clamp(0, img.height as isize - 1) as usize;
    let cols: Vec<usize> = (0..TILE_PADDED).map(|px| clampx(x0 + px as isize)).collect();
    for ch in 0..3 {
        let plane = t.plane_mut(0, ch);
        for py in 0..TILE_PADDED {
            let src_row = clampy(y0 + py as isize) * img.width;
            let dst = &mut plane[py * TILE_PADDED..(py + 1) * TILE_PADDED];
            for (d, &sx) in dst.iter_mut().zip(&cols) {
                *d = img.data[(src_row + sx) * 3 + ch] as f32 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Writes the core of a decoded 512x512 tile into `img`.
pub fn place_tile(img: &mut RgbImage, grid: &TileGrid, r: usize, c: usize, tile: &Tensor) -> Result<()> {
    if tile.shape() != Shape::new(1, 3, TILE_PADDED, TILE_PADDED) {
        return Err(shape(format!("decoded tile has shape {}", tile.shape())));
    }
    let core = grid.core(r, c)?;
    for ch in 0..3 {
        let plane = tile.plane(0, ch);
        for y in 0..core.height {
            let src = &plane[(y + TILE_MARGIN) * TILE_PADDED + TILE_MARGIN..][..core.width];
            let row = (core.y + y) * img.width + core.x;
            for (x, &v) in src.iter().enumerate() {
                img.data[(row + x) * 3 + ch] = to_u8(v);
            }
        }
    }
    Ok(())
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn grid_sizes() {
        let g = partition_tiles(4032, 3024).unwrap();
        assert_eq!((g.cols, g.rows, g.len()), (8, 6, 48));
        assert!(g.coords().all(|(r, c)| {
            let t = g.core(r, c).unwrap();
            t.width == 504 && t.height == 504
        }));
        let g = partition_tiles(1512, 1512).unwrap();
        assert_eq!((g.cols, g.rows), (3, 3));
        let g = partition_tiles(700, 500).unwrap();
        assert_eq!((g.cols, g.rows), (2, 1));
        assert_eq!(g.core(0, 1).unwrap().width, 196);
        assert!(partition_tiles(0, 5).is_err());
        assert!(g.core(1, 0).is_err());
    }

    #[test]
    fn interior_margin_is_true_neighbourhood() {
        let img = random_image(1600, 1100, 1);
        let g = partition_tiles(img.width, img.height).unwrap();
        let t = extract_padded_tile(&img, &g, 1, 1).unwrap();
        for (py, px) in [(0, 0), (3, 200), (511, 511), (250, 0)] {
            let (y, x) = (504 - 4 + py, 504 - 4 + px);
            assert_eq!(t.at(0, 1, py, px), img.data[(y * img.width + x) * 3 + 1] as f32 / 255.0);
        }
    }

    #[test]
    fn single_small_tile_is_replicated() {
        let img = random_image(100, 100, 2);
        let g = partition_tiles(100, 100).unwrap();
        let t = extract_padded_tile(&img, &g, 0, 0).unwrap();
        let px = |y: usize, x: usize| img.data[(y * 100 + x) * 3] as f32 / 255.0;
        assert_eq!(t.at(0, 0, 4, 4), px(0, 0));
        assert_eq!(t.at(0, 0, 0, 0), px(0, 0));
        assert_eq!(t.at(0, 0, 103, 103), px(99, 99));
        assert_eq!(t.at(0, 0, 511, 300), px(99, 99));
        assert_eq!(t.at(0, 0, 50, 2), px(46, 0));
    }

    #[test]
    fn cores_reassemble_exactly() {
        let img = random_image(700, 500, 3);
        let g = partition_tiles(700, 500).unwrap();
        let mut out = RgbImage::new(700, 500, vec![0; 700 * 500 * 3]).unwrap();
        for (r, c) in g.coords() {
            let t = extract_padded_tile(&img, &g, r, c).unwrap();
            place_tile(&mut out, &g, r, c, &t).unwrap();
        }
        assert_eq!(out, img);
    }
}
