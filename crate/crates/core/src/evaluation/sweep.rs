//! Rate-distortion sweep over codebook sizes.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bd::{csv_err, RDCurve};
use super::metrics::{ms_ssim_auto, psnr, ssim, PSNR_CSV_CAP};
use crate::codec::Sample;
use crate::transport::{CodebookRegistry, Endpoint};
use crate::codec::HoloCodec;
use crate::{Error, Result, Scalar};

/// Image name used for per-size mean rows.
pub const MEAN_ROW: &str = "mean";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdRow {
    pub image: String,
    pub channel: u8,
    #[serde(rename = "K")]
    pub k: usize,
    pub bpp_fixed: f64,
    pub bpp_entropy: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
}

/// Quality of a reconstruction against its target; the peak (and SSIM
/// range) is the target maximum.
pub fn quality(recon: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Quality> {
    let peak = target.iter().copied().fold(0.0, f64::max);
    Ok(Quality {
        psnr: psnr(recon, target, peak)?,
        ssim: ssim(recon, target, peak)?,
        msssim: ms_ssim_auto(recon, target, peak)?,
    })
}

#[derive(Clone, Debug)]
pub struct RdSweep {
    /// Per image and size, followed by one mean row per size.
    pub rows: Vec<RdRow>,
    /// Mean `(bpp_entropy, psnr)` per size.
    pub curve: RDCurve,
}

impl RdSweep {
    pub fn means(&self) -> impl Iterator<Item = &RdRow> {
        self.rows.iter().filter(|r| r.image == MEAN_ROW)
    }
}

fn target_of<T: Scalar>(s: &Sample<T>) -> Array2<f64> {
    s.target_map().0.mapv(|v| v.to64())
}

/// Compresses every image at every size with registry books, decodes it and
/// scores the reconstruction on the roi.
pub fn rd_sweep<T: Scalar>(
    model: &HoloCodec<T>,
    registry: &CodebookRegistry<T>,
    corpus: &[(String, Sample<T>)],
    sizes: &[usize],
    huffman: bool,
) -> Result<RdSweep> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ep = Endpoint::new(model, registry);
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &k in sizes {
        registry.pair(model.channel, k)?;
        let per: Vec<RdRow> = corpus
            .par_iter()
            .map(|(name, s)| {
                let stream = ep.encode(s, k, huffman)?;
                let phase = ep.decode(&stream)?;
                let amp = model.reconstruct(&phase)?.0.mapv(|v| v.to64());
                let q = quality(amp.view(), target_of(s).view())?;
                Ok(RdRow {
                    image: name.clone(),
                    channel: model.channel,
                    k,
                    bpp_fixed: stream.fixed_bpp()?,
                    bpp_entropy: stream.bpp()?,
                    psnr: q.psnr.min(PSNR_CSV_CAP),
                    ssim: q.ssim,
                    msssim: q.msssim,
                })
            })
            .collect::<Result<_>>()?;
        let n = per.len() as f64;
        let mean = |f: fn(&RdRow) -> f64| per.iter().map(f).sum::<f64>() / n;
        means.push(RdRow {
            image: MEAN_ROW.into(),
            channel: model.channel,
            k,
            bpp_fixed: mean(|r| r.bpp_fixed),
            bpp_entropy: mean(|r| r.bpp_entropy),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            msssim: mean(|r| r.msssim),
        });
        rows.extend(per);
    }
    let curve = RDCurve::new(means.iter().map(|r| (r.bpp_entropy, r.psnr)).collect())?;
    rows.extend(means);
    Ok(RdSweep { rows, curve })
}

/// CSV with header `image,channel,K,bpp_fixed,bpp_entropy,psnr,ssim,msssim`.
pub fn write_rows_csv<W: Write>(rows: &[RdRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["image", "channel", "K", "bpp_fixed", "bpp_entropy", "psnr", "ssim", "msssim"])
            .map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<RdRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}
