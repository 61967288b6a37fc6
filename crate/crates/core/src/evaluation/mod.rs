//! Quality metrics, RD curves and Bjøntegaard deltas.

mod bd;
mod metrics;
mod sweep;

pub use bd::{bd_psnr, bd_rate, overlap_fraction, poly_integral, polyfit, RDCurve};
pub use metrics::{ms_ssim, ms_ssim_auto, ms_ssim_with, mse, psnr, ssim, PSNR_CSV_CAP};
pub use sweep::{quality, rd_sweep, read_rows_csv, write_rows_csv, Quality, RdRow, RdSweep, MEAN_ROW};
