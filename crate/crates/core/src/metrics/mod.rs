//! Distortion metrics, artifact losses, loss aggregation and evaluation
//! statistics (BD-rate, Bayesian Elo, RD curve files).

pub mod artifacts;
pub mod batch;
pub mod bdrate;
pub mod elo;
pub mod loss;
pub mod pixel;
pub mod rd;
pub mod ssim;

pub use artifacts::{
    boundary_lowfreq_error, boundary_report, text_fidelity_loss, tiling_artifact_loss, BoundaryReport, Histogram, SeamAxis,
    SeamError, TextMask, TAL_LEVELS,
};
pub use batch::{evaluate_dirs, score_pair, ImageScores, SCORE_COLUMNS};
pub use bdrate::{bd_rate, RdPoint};
pub use elo::{bayesian_elo, read_votes, PairwiseRecord, Ratings, ELO_PRIOR_SIGMA};
pub use loss::{distortion, total_loss, DistortionTerms, DistortionWeights, LevelSchedule};
pub use pixel::{mse, psnr, FloatImage};
pub use rd::{curve, read_rd, read_rd_csv, write_rd, write_rd_csv, RdRow, RD_COLUMNS};
pub use ssim::{ms_ssim, ms_ssim_scales, MS_SSIM_WEIGHTS};
