//! Directory-level evaluation of reconstructed images.

use std::path::Path;

use rayon::prelude::*;

use crate::codec::TileGrid;
use crate::error::{invalid, Result};
use crate::image_io::read_image;
use crate::metrics::artifacts::{boundary_lowfreq_error, tiling_artifact_loss};
use crate::metrics::pixel::{mse, psnr, FloatImage};
use crate::metrics::ssim::ms_ssim;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub name: String,
    pub mse: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub tal: f64,
    pub boundary: f64,
}

pub const SCORE_COLUMNS: [&str; 6] = ["image", "mse", "psnr", "ms_ssim", "tal", "boundary"];

pub fn score_pair(name: &str, x: &FloatImage, y: &FloatImage, core: (usize, usize)) -> Result<ImageScores> {
    let grid = TileGrid::with_core(x.width, x.height, core.0, core.1)?;
    Ok(ImageScores {
        name: name.to_string(),
        mse: mse(x, y)?,
        psnr: psnr(x, y)?,
        ms_ssim: ms_ssim(x, y)?,
        tal: tiling_artifact_loss(x, y)?,
        boundary: boundary_lowfreq_error(x, y, &grid)?,
    })
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pnm")
    )
}

/// Scores every image of `ref_dir` against the file of the same name in
/// `test_dir`. Rows are sorted by file name whatever the worker count.
pub fn evaluate_dirs(ref_dir: &Path, test_dir: &Path, core: (usize, usize)) -> Result<Vec<ImageScores>> {
    let mut names: Vec<String> = std::fs::read_dir(ref_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(invalid(format!("no PNG/PPM images in {}", ref_dir.display())));
    }
    names
        .par_iter()
        .map(|n| {
            let test = test_dir.join(n);
            if !test.is_file() {
                return Err(invalid(format!("{} has no counterpart in {}", n, test_dir.display())));
            }
            let x = FloatImage::from_rgb(&read_image(&ref_dir.join(n))?);
            let y = FloatImage::from_rgb(&read_image(&test)?);
            score_pair(n, &x, &y, core)
        })
        .collect()
}
