//! Checkpoint container: `"RAVK"`, u16 LE version, then a JSON document with
//! profile, optics, loss weights, parameters, codebooks and adapters.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::Codec;
use super::train::HoloCodec;
use super::{CodecProfile, LossWeights};
use crate::adapt::{AdapterModel, AdapterShape};
use crate::nn::{ParamStore, Tensor};
use crate::optics::OpticsConfig;
use crate::vq::Codebook;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RAVK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredBook {
    vectors: Vec<f64>,
    size: usize,
    dim: usize,
    counts: Vec<f64>,
    sums: Vec<f64>,
    decay: f64,
    laplace_eps: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredAdapter {
    shape: AdapterShape,
    params: Vec<StoredTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    scalar: String,
    profile: CodecProfile,
    optics: OpticsConfig,
    weights: LossWeights,
    beta: f64,
    channel: u8,
    stage1_epochs: usize,
    stage1_complete: bool,
    params: Vec<StoredTensor>,
    books: Option<(StoredBook, StoredBook)>,
    adapters: Option<(StoredAdapter, StoredAdapter)>,
}

fn store_out<T: Scalar>(p: &ParamStore<T>) -> Vec<StoredTensor> {
    p.iter()
        .map(|(name, t)| StoredTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.to64()).collect(),
        })
        .collect()
}

fn store_in<T: Scalar>(v: Vec<StoredTensor>) -> Result<ParamStore<T>> {
    let mut p = ParamStore::new();
    for t in v {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!("tensor {} has inconsistent shape", t.name)));
        }
        p.add(t.name, Tensor::new(&t.shape, t.data.into_iter().map(T::of).collect()));
    }
    Ok(p)
}

fn book_out<T: Scalar>(b: &Codebook<T>) -> StoredBook {
    StoredBook {
        vectors: b.vectors().iter().map(|v| v.to64()).collect(),
        size: b.size(),
        dim: b.dim(),
        counts: b.ema_counts().iter().map(|v| v.to64()).collect(),
        sums: b.ema_sums().iter().map(|v| v.to64()).collect(),
        decay: b.decay,
        laplace_eps: b.laplace_eps,
    }
}

fn book_in<T: Scalar>(b: StoredBook) -> Result<Codebook<T>> {
    let shape = (b.size, b.dim);
    let bad = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let v = Array2::from_shape_vec(shape, b.vectors.into_iter().map(T::of).collect()).map_err(bad)?;
    let s = Array2::from_shape_vec(shape, b.sums.into_iter().map(T::of).collect()).map_err(bad)?;
    let c = Array1::from_vec(b.counts.into_iter().map(T::of).collect());
    let mut book = Codebook::new(v)?;
    book.set_accumulators(c, s)?;
    book.decay = b.decay;
    book.laplace_eps = b.laplace_eps;
    Ok(book)
}

pub fn save_checkpoint<T: Scalar>(model: &HoloCodec<T>) -> Result<Vec<u8>> {
    let doc = Document {
        scalar: T::type_name().to_string(),
        profile: model.codec.profile.clone(),
        optics: model.optics.clone(),
        weights: model.weights,
        beta: model.beta,
        channel: model.channel,
        stage1_epochs: model.stage1_epochs,
        stage1_complete: model.stage1_complete,
        params: store_out(&model.codec.params),
        books: model.books.as_ref().map(|(b, t)| (book_out(b), book_out(t))),
        adapters: model.adapters.as_ref().map(|(b, t)| {
            (
                StoredAdapter { shape: b.shape, params: store_out(&b.params) },
                StoredAdapter { shape: t.shape, params: store_out(&t.params) },
            )
        }),
    };
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    serde_json::to_writer(&mut out, &doc).map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

/// Loads a checkpoint; parameters convert to `T` whatever precision they
/// were saved in.
pub fn load_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<HoloCodec<T>> {
    if bytes.len() < 6 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version as u32,
            expected: CHECKPOINT_VERSION as u32,
        });
    }
    let doc: Document = serde_json::from_slice(&bytes[6..]).map_err(|e| Error::Format(e.to_string()))?;
    let codec = Codec::with_params(doc.profile, store_in(doc.params)?)?;
    let books = match doc.books {
        Some((b, t)) => Some((book_in(b)?, book_in(t)?)),
        None => None,
    };
    let adapters = match doc.adapters {
        Some((b, t)) => Some((
            AdapterModel::from_params(b.shape, store_in(b.params)?)?,
            AdapterModel::from_params(t.shape, store_in(t.params)?)?,
        )),
        None => None,
    };
    doc.optics.validate()?;
    Ok(HoloCodec {
        codec,
        optics: doc.optics,
        weights: doc.weights,
        beta: doc.beta,
        channel: doc.channel,
        books,
        adapters,
        stage1_epochs: doc.stage1_epochs,
        stage1_complete: doc.stage1_complete,
    })
}
