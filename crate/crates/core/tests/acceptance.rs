//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed; the process
//! exits non-zero when any criterion fails.

use std::io::Cursor;
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use holocodec::bitstream::{
    build_huffman, fixed_bpp, profile_fixed_bpp, HoloBitstream, HuffmanTable, StreamHeader,
};
use holocodec::codec::{
    prepare_sample, synthetic_corpus, Codec, CodecProfile, HoloCodec, LossWeights, QuantMode, ReconContext, Sample,
    TrainSchedule,
};
use holocodec::evaluation::{bd_psnr, bd_rate, rd_sweep, RDCurve};
use holocodec::nn::{Graph, Tensor};
use holocodec::optics::fft::Fft2;
use holocodec::optics::{asm_kernel, propagate, AmplitudeMap, ComplexField, OpticsConfig};
use holocodec::transport::{read_frame, write_frame, CodebookRegistry, Endpoint};
use holocodec::vq::{quantize, Codebook, IndexGrid, LatentGrid};
use holocodec::Error;
use ndarray::{Array2, Array3};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn green(pad: f64, roi: (usize, usize)) -> OpticsConfig {
    OpticsConfig {
        wavelength: 520e-9,
        pixel_pitch: 6.4e-6,
        distance: 0.2,
        pad_factor: pad,
        roi,
    }
}

/// Random field whose spectrum is confined to the central half of each
/// frequency axis.
fn band_limited(dim: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<Complex<f64>> {
    let (h, w) = dim;
    let mut spec = vec![Complex::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            let fy = i.min(h - i);
            let fx = j.min(w - j);
            if 4 * fy < h && 4 * fx < w {
                spec[i * w + j] = Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
    }
    Fft2::<f64>::new(h, w).inverse(&mut spec);
    Array2::from_shape_vec(dim, spec).unwrap()
}

fn energy(a: &Array2<Complex<f64>>) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>()
}

fn optics_round_trip() -> Outcome {
    let cfg = green(1.0, (128, 128));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let field = band_limited((128, 128), &mut rng);
    let start = Instant::now();
    let f = ComplexField::new(field.clone(), cfg).map_err(err)?;
    let back = propagate(&propagate(&f, 0.2).map_err(err)?, -0.2).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let peak = field.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let worst = back.data.iter().zip(field.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / peak;
    check(worst < 1e-6 && secs < 1.0, format!("max relative error {worst:.2e}, {secs:.3} s"))
}

fn optics_unitarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for n in 0..100 {
        let dim = (32 + 16 * (n % 4), 48 + 16 * (n % 3));
        let d = rng.random_range(-0.5..0.5);
        let field = band_limited(dim, &mut rng);
        let f = ComplexField::new(field.clone(), green(1.0, dim)).map_err(err)?;
        let out = propagate(&f, d).map_err(err)?;
        let e0 = energy(&field);
        worst = worst.max((energy(&out.data) - e0).abs() / e0);
    }
    check(worst < 1e-9, format!("100 fields, max relative energy change {worst:.2e}"))
}

fn kernel_cutoff() -> Outcome {
    let mut zeros = 0usize;
    let mut inband = 0usize;
    let mut worst = 0.0f64;
    // The sub-wavelength pitch places part of the grid beyond 1/lambda.
    for (pitch, shape) in [(0.3e-6, (64, 96)), (6.4e-6, (64, 64))] {
        let cfg = OpticsConfig { pixel_pitch: pitch, ..green(2.0, (8, 8)) };
        let k = asm_kernel::<f64>(shape, &cfg, 0.2).map_err(err)?;
        let (h, w) = shape;
        for ((i, j), v) in k.indexed_iter() {
            let fy = (i as f64 - (h / 2) as f64) / (h as f64 * pitch);
            let fx = (j as f64 - (w / 2) as f64) / (w as f64 * pitch);
            if fx * fx + fy * fy >= 1.0 / (cfg.wavelength * cfg.wavelength) {
                if v.re != 0.0 || v.im != 0.0 {
                    return Err(format!("bin ({i},{j}) beyond cutoff is {v}"));
                }
                zeros += 1;
            } else {
                inband += 1;
                worst = worst.max((v.norm() - 1.0).abs());
            }
        }
    }
    check(
        zeros > 0 && worst < 1e-12,
        format!("{zeros} evanescent bins exactly 0, {inband} in-band bins, max ||H|-1| {worst:.1e}"),
    )
}

fn vq_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0usize;
    let mut cells = 0usize;
    for _ in 0..1000 {
        let k = rng.random_range(1..=64);
        let d = rng.random_range(1..=8);
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let mut vecs: Array2<f64> = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
        if k > 2 {
            // duplicated rows exercise the lowest-index tie rule
            let row = vecs.row(0).to_owned();
            vecs.row_mut(k - 1).assign(&row);
        }
        let book = Codebook::new(vecs.clone()).map_err(err)?;
        let lat: Array3<f64> = Array3::from_shape_fn((h, w, d), |_| rng.random_range(-1.2..1.2));
        let grid = LatentGrid::new(lat.clone()).map_err(err)?;
        let (idx, q) = quantize(&grid, &book).map_err(err)?;
        for i in 0..h {
            for j in 0..w {
                let mut best = (0usize, f64::INFINITY);
                for c in 0..k {
                    let dist: f64 = (0..d).map(|t| (lat[[i, j, t]] - vecs[[c, t]]).powi(2)).sum();
                    if dist < best.1 {
                        best = (c, dist);
                    }
                }
                cells += 1;
                let got = idx.data[[i, j]] as usize;
                if got != best.0 || (0..d).any(|t| q.data[[i, j, t]] != vecs[[best.0, t]]) {
                    mismatches += 1;
                }
            }
        }
    }
    check(mismatches == 0, format!("1000 instances, {cells} cells, {mismatches} mismatches"))
}

fn ema_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let means: [[f64; 2]; 2] = [[-2.0, 1.0], [3.0, -1.5]];
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut book = Codebook::<f64>::with_vectors(ndarray::arr2(&[[-0.5, 0.0], [0.5, 0.0]]), 0.95).map_err(err)?;
    for _ in 0..500 {
        let lat = Array3::from_shape_fn((16, 16, 2), |(i, _, t)| means[i % 2][t] + noise.sample(&mut rng));
        let grid = LatentGrid::new(lat).map_err(err)?;
        let (idx, _) = quantize(&grid, &book).map_err(err)?;
        book.ema_update(&[grid], &[idx]).map_err(err)?;
    }
    let v = book.vectors();
    let mut worst = 0.0f64;
    for m in means {
        let dist = (0..2)
            .map(|c| (0..2).map(|t| (v[[c, t]] - m[t]).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(dist);
    }
    check(worst < 1e-2, format!("max coordinate error after 500 updates {worst:.2e}"))
}

fn sub(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect())
}

fn gradient_check() -> Outcome {
    let profile = CodecProfile::micro();
    if profile.latent_dim != 4 {
        return Err("micro profile must have D = 4".into());
    }
    let frame = (8, 16);
    let mut codec = Codec::<f64>::new(profile, 7).map_err(err)?;
    let optics = OpticsConfig { distance: 0.01, ..green(2.0, frame) };
    // 8x16 is too small for an 11-tap SSIM window; the check covers the MSE
    // and Watson terms through the ASM reconstruction.
    let weights = LossWeights { mse: 1.0, msssim: 0.0, wfft: 0.025 };
    let ctx = ReconContext::<f64>::new(frame, &optics, weights).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = Tensor::new(&[3, 8, 16], (0..3 * 128).map(|_| rng.random_range(-1.0..1.0)).collect());
    let target = Tensor::new(&[1, 8, 16], (0..128).map(|_| rng.random_range(0.2..1.5)).collect());
    let book = |rng: &mut ChaCha8Rng| Codebook::new(Array2::from_shape_fn((8, 4), |_| rng.random_range(-0.5..0.5)));
    let (bb, bt) = (book(&mut rng).map_err(err)?, book(&mut rng).map_err(err)?);

    let (rb, rt) = {
        let g = Graph::new();
        let f = codec
            .forward(&g, &input, QuantMode::Nearest { bottom: &bb, top: &bt }, false)
            .map_err(err)?;
        (
            sub(&f.q_bottom.value(), &f.z_bottom.value()),
            sub(&f.q_top.value(), &f.z_top.value()),
        )
    };
    let analytic = |codec: &Codec<f64>, mode: QuantMode<'_, '_, f64>| -> Result<(f64, Vec<Option<Tensor<f64>>>), String> {
        let g = Graph::new();
        let f = codec.forward(&g, &input, mode, true).map_err(err)?;
        let loss = ctx.loss(f.phase, g.constant(target.clone()));
        let mut grads = g.backward(loss);
        Ok((loss.item(), grads.params(&codec.params)))
    };
    let value = |codec: &Codec<f64>| -> f64 {
        let g = Graph::new();
        let f = codec
            .forward(&g, &input, QuantMode::Frozen { bottom: &rb, top: &rt }, false)
            .expect("frozen forward");
        ctx.loss(f.phase, g.constant(target.clone())).item()
    };
    let (_, ste) = analytic(&codec, QuantMode::Nearest { bottom: &bb, top: &bt })?;
    let (_, frozen) = analytic(&codec, QuantMode::Frozen { bottom: &rb, top: &rt })?;

    let mut ste_gap = 0.0f64;
    for (a, b) in ste.iter().zip(&frozen) {
        if let (Some(a), Some(b)) = (a, b) {
            for (x, y) in a.data().iter().zip(b.data()) {
                ste_gap = ste_gap.max((x - y).abs() / x.abs().max(y.abs()).max(1e-12));
            }
        }
    }

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for id in 0..codec.params.len() {
        let Some(grad) = frozen[id].clone() else {
            return Err(format!("parameter {} got no gradient", codec.params.name(id)));
        };
        for i in 0..grad.len() {
            let orig = codec.params.get(id).data()[i];
            codec.params.get_mut(id).data_mut()[i] = orig + h;
            let up = value(&codec);
            codec.params.get_mut(id).data_mut()[i] = orig - h;
            let down = value(&codec);
            codec.params.get_mut(id).data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grad.data()[i];
            // relative error with a floor for gradients that are numerically zero
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    check(
        worst < 1e-4 && ste_gap < 1e-12,
        format!("{checked} parameters, max relative error {worst:.2e}; STE vs frozen-residual gap {ste_gap:.1e}"),
    )
}

fn bpp_arithmetic() -> Outcome {
    let low = CodecProfile::full_low();
    let frame = (1072usize, 1920usize);
    let pixels = (frame.0 * frame.1) as u64;
    let (hb, wb) = low.bottom_shape(frame);
    let (ht, wt) = low.top_shape(frame);
    let bottom_bits = (hb * wb * 12) as u64;
    let top_bits = (ht * wt * 12) as u64;
    // 0.75 = 3/4, 0.1875 = 3/16, 0.9375 = 15/16
    let exact = bottom_bits * 4 == pixels * 3 && top_bits * 16 == pixels * 3 && (bottom_bits + top_bits) * 16 == pixels * 15;
    let lib = fixed_bpp(&[(hb * wb, 4096), (ht * wt, 4096)], pixels as usize).map_err(err)?;
    let profile = profile_fixed_bpp(&low, 4096, 4096);
    let header = StreamHeader::new(&low, &green(2.0, frame), 1, frame, 4096, 4096, false).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = |h: usize, w: usize, rng: &mut ChaCha8Rng| IndexGrid::new(Array2::from_shape_fn((h, w), |_| rng.random_range(0..4096)));
    let s = HoloBitstream::encode(header, &grid(hb, wb, &mut rng), &grid(ht, wt, &mut rng)).map_err(err)?;
    let stream = s.fixed_bpp().map_err(err)?;
    check(
        exact && lib == 0.9375 && profile == 0.9375 && stream == 0.9375,
        format!(
            "bottom {}/{} + top {}/{} bits/pixel; library {lib}, profile {profile}, stream {stream}",
            bottom_bits, pixels, top_bits, pixels
        ),
    )
}

fn entropy(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

fn weighted_len(hist: &[u64], lens: &[u32]) -> u64 {
    hist.iter().zip(lens).map(|(&c, &l)| c * l as u64).sum()
}

/// Smallest total length over every prefix code of `n` symbols with
/// lengths up to `max`, enumerated through the Kraft inequality.
fn best_prefix_code(hist: &[u64], max: u32) -> u64 {
    let n = hist.len();
    let mut lens = vec![1u32; n];
    let mut best = u64::MAX;
    loop {
        let kraft: f64 = lens.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
        if kraft <= 1.0 {
            best = best.min(weighted_len(hist, &lens));
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            lens[i] += 1;
            if lens[i] <= max {
                break;
            }
            lens[i] = 1;
            i += 1;
        }
    }
}

fn table_lengths(t: &HuffmanTable, n: usize) -> Vec<u32> {
    (0..n as u32).map(|s| t.length_of(s).unwrap_or(0) as u32).collect()
}

fn huffman() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut small = 0;
    for case in 0..500 {
        let n = if case % 5 == 0 { rng.random_range(2..=5) } else { rng.random_range(2..=300) };
        let mut hist: Vec<u64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(1..1000) })
            .collect();
        // a single-symbol source has H = 0 but needs 1 bit, so every
        // histogram keeps at least two used symbols
        hist[0] = hist[0].max(1);
        hist[n - 1] = hist[n - 1].max(1);
        let table = build_huffman(&hist).map_err(err)?;
        let symbols: Vec<u32> = (0..2000)
            .map(|_| loop {
                let s = rng.random_range(0..n);
                if hist[s] > 0 {
                    break s as u32;
                }
            })
            .collect();
        let (bytes, bits) = table.encode(&symbols).map_err(err)?;
        if table.decode(&bytes, bits, symbols.len()).map_err(err)? != symbols {
            return Err(format!("case {case}: decode(encode) differs"));
        }
        let h = entropy(&hist);
        let mean = table.mean_length(&hist);
        let total: u64 = hist.iter().sum();
        let own = weighted_len(&hist, &table_lengths(&table, n)) as f64 / total as f64;
        if !(mean >= h - 1e-12 && mean < h + 1.0) || (own - mean).abs() > 1e-9 {
            return Err(format!("case {case}: mean length {mean} vs entropy {h}"));
        }
        let used: Vec<u64> = hist.iter().copied().filter(|&c| c > 0).collect();
        if used.len() <= 5 {
            small += 1;
            let lens: Vec<u32> = table_lengths(&table, n).into_iter().filter(|&l| l > 0).collect();
            let ours = weighted_len(&used, &lens);
            let best = best_prefix_code(&used, 6);
            if ours > best {
                return Err(format!("case {case}: huffman {ours} bits vs prefix code {best}"));
            }
        }
    }
    Ok(format!("500 histograms round-trip, H <= L < H+1; {small} small alphabets optimal"))
}

fn fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let profile = CodecProfile::tiny();
    let mut seeds = Vec::new();
    for (frame, k, huff) in [((64, 128), 64, true), ((64, 128), 8, false), ((32, 32), 16, true), ((16, 64), 32, false)] {
        let header = StreamHeader::new(&profile, &green(2.0, frame), 1, frame, k, k, huff).map_err(err)?;
        let grid = |s: (usize, usize), rng: &mut ChaCha8Rng| {
            IndexGrid::new(Array2::from_shape_fn(s, |_| rng.random_range(0..(k as u32 / 2).max(1))))
        };
        let b = grid(profile.bottom_shape(frame), &mut rng);
        let t = grid(profile.top_shape(frame), &mut rng);
        let mut framed = Vec::new();
        write_frame(&mut framed, &HoloBitstream::encode(header, &b, &t).map_err(err)?.serialize()).map_err(err)?;
        seeds.push(framed);
    }
    let (mut checksum, mut other, mut accepted, mut crashes) = (0usize, 0usize, 0usize, 0usize);
    for n in 0..100_000 {
        let mut bytes = seeds[n % seeds.len()].clone();
        match rng.random_range(0..6) {
            0 => {
                for _ in 0..rng.random_range(1..=8) {
                    let i = rng.random_range(0..bytes.len());
                    bytes[i] ^= 1 << rng.random_range(0..8);
                }
            }
            1 => {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random();
            }
            2 => bytes.truncate(rng.random_range(0..bytes.len())),
            3 => bytes.extend((0..rng.random_range(1..16)).map(|_| rng.random::<u8>())),
            4 => {
                // corrupt the payload but keep the length prefix consistent
                let i = rng.random_range(4..bytes.len());
                bytes[i] = rng.random();
            }
            _ => {
                let len = rng.random_range(0..600);
                bytes = (0..len).map(|_| rng.random()).collect();
            }
        }
        let result = catch_unwind(AssertUnwindSafe(|| -> Result<Option<HoloBitstream>, Error> {
            let mut c = Cursor::new(bytes.as_slice());
            match read_frame(&mut c)? {
                Some(payload) => HoloBitstream::parse(&payload).map(Some),
                None => Ok(None),
            }
        }));
        match result {
            Err(_) => crashes += 1,
            Ok(Err(Error::Checksum { .. })) => checksum += 1,
            Ok(Err(_)) | Ok(Ok(None)) => other += 1,
            Ok(Ok(Some(s))) => {
                let (b, t) = s.indices().map_err(err)?;
                let valid = b.check_below(s.header.k_bottom()).is_ok()
                    && t.check_below(s.header.k_top()).is_ok()
                    && HoloBitstream::parse(&s.serialize()).ok().as_ref() == Some(&s);
                if !valid {
                    return Err(format!("case {n}: accepted stream is not structurally valid"));
                }
                accepted += 1;
            }
        }
    }
    check(
        crashes == 0,
        format!("1e5 frames: {crashes} crashes, {checksum} checksum rejections, {other} other rejections, {accepted} accepted and valid"),
    )
}

fn psnr(recon: &AmplitudeMap<f32>, target: &Tensor<f32>) -> f64 {
    let t = target.data();
    let peak = t.iter().map(|&v| v as f64).fold(0.0, f64::max);
    let mse = recon.0.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / t.len() as f64;
    10.0 * (peak * peak / mse).log10()
}

fn held_out_psnr(m: &HoloCodec<f32>, data: &[Sample<f32>]) -> f64 {
    let (b, t) = m.books.clone().expect("books");
    data.iter()
        .map(|s| {
            let (_, _, p) = m.round_trip(s, &b, &t).expect("round trip");
            psnr(&m.reconstruct(&p).expect("reconstruct"), &s.target)
        })
        .sum::<f64>()
        / data.len() as f64
}

struct Desk {
    model: HoloCodec<f32>,
    train: Vec<Sample<f32>>,
    test: Vec<Sample<f32>>,
}

const SIZES: [usize; 4] = [8, 16, 32, 64];

fn desk_training(slot: &mut Option<Desk>) -> Outcome {
    let frame = (64, 128);
    let optics = OpticsConfig::desk(1, frame);
    let prep = |imgs: Vec<Array2<f64>>| -> Result<Vec<Sample<f32>>, String> {
        imgs.iter().map(|i| prepare_sample(i.view(), &optics, 2.2).map_err(err)).collect()
    };
    let train = prep(synthetic_corpus(32, frame.0, frame.1, 1))?;
    let test = prep(synthetic_corpus(8, frame.0, frame.1, 2))?;
    let mut m = HoloCodec::<f32>::new(CodecProfile::tiny(), optics.clone(), LossWeights::default(), 1, 0).map_err(err)?;
    let schedule = TrainSchedule::desk();
    m.init_books(&train[..schedule.batch_size], schedule.seed).map_err(err)?;
    let before = held_out_psnr(&m, &test);
    let start = Instant::now();
    let log = m.train_stage1(&train, &schedule).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let after = held_out_psnr(&m, &test);
    let (l0, l1) = (log.epoch_loss[0], *log.epoch_loss.last().unwrap());
    *slot = Some(Desk { model: m, train, test });
    check(
        l1 < l0 && after >= before + 5.0,
        format!(
            "loss {l0:.4} -> {l1:.4}; held-out PSNR {before:.2} -> {after:.2} dB ({:+.2} dB); {secs:.1} s",
            after - before
        ),
    )
}

fn rate_adaptivity(desk: &mut Desk) -> Outcome {
    let schedule = TrainSchedule {
        stage2_epochs: 20,
        learning_rate: holocodec::codec::DESK_ADAPTER_LEARNING_RATE,
        ..TrainSchedule::desk()
    };
    let hidden = holocodec::adapt::DEFAULT_HIDDEN;
    desk.model.init_adapters(hidden, 0).map_err(err)?;
    desk.model
        .train_adapters(&desk.train, (&SIZES, &SIZES), hidden, &schedule)
        .map_err(err)?;
    let reg = CodebookRegistry::from_model(&desk.model, &SIZES).map_err(err)?;
    let corpus: Vec<(String, Sample<f32>)> =
        desk.test.iter().enumerate().map(|(i, s)| (format!("held_out_{i}"), s.clone())).collect();
    let sweep = rd_sweep(&desk.model, &reg, &corpus, &SIZES, true).map_err(err)?;
    let means: Vec<_> = sweep.means().collect();
    let bpp_up = means.windows(2).all(|w| w[1].bpp_entropy > w[0].bpp_entropy);
    let psnr_ok = means.windows(2).all(|w| w[1].psnr >= w[0].psnr - 0.2);
    let detail = means
        .iter()
        .map(|r| format!("K={} {:.3} bpp {:.2} dB", r.k, r.bpp_entropy, r.psnr))
        .collect::<Vec<_>>()
        .join(", ");
    check(means.len() == 4 && bpp_up && psnr_ok, detail)
}

fn transport_identity(desk: &Desk) -> Outcome {
    let reg = CodebookRegistry::from_model(&desk.model, &SIZES).map_err(err)?;
    let ep = Endpoint::new(&desk.model, &reg);
    let optics = &desk.model.optics;
    let samples: Vec<Sample<f32>> = synthetic_corpus(50, 64, 128, 3)
        .iter()
        .map(|i| prepare_sample(i.view(), optics, 2.2).map_err(err))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let plan: Vec<(usize, bool)> = (0..50).map(|_| (SIZES[rng.random_range(0..4)], rng.random_bool(0.5))).collect();
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (sent, received) = std::thread::scope(|s| -> Result<_, String> {
        let sender = s.spawn(|| -> Result<usize, String> {
            let mut conn = TcpStream::connect(addr).map_err(|e| e.to_string())?;
            let mut total = 0;
            for (sample, &(k, huff)) in samples.iter().zip(&plan) {
                total += ep.send(sample, k, huff, &mut conn).map_err(err)?;
            }
            Ok(total)
        });
        let (mut conn, _) = listener.accept().map_err(|e| e.to_string())?;
        let mut got = Vec::new();
        while let Some(r) = ep.receive(&mut conn).map_err(err)? {
            got.push(r);
        }
        let sent = sender.join().map_err(|_| "sender panicked".to_string())??;
        Ok((sent, got))
    })?;
    if received.len() != 50 {
        return Err(format!("received {} of 50 frames", received.len()));
    }
    let mut wire = 0usize;
    let mut serialized = 0usize;
    for ((sample, &(k, huff)), r) in samples.iter().zip(&plan).zip(&received) {
        let local = ep.encode(sample, k, huff).map_err(err)?;
        let phase = ep.decode(&local).map_err(err)?;
        let same = phase.0.len() == r.phase.0.len()
            && phase.0.iter().zip(r.phase.0.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || local != r.stream {
            return Err("received phase differs from local decode".into());
        }
        let len = local.serialize().len();
        if r.wire_bytes != len + 4 {
            return Err(format!("frame of {len} bytes measured {} on the wire", r.wire_bytes));
        }
        serialized += len;
        wire += r.wire_bytes;
    }
    check(
        wire == sent && wire == serialized + 4 * 50,
        format!("50 frames bit-identical; {serialized} stream bytes + 200 prefix bytes = {wire} received = {sent} sent"),
    )
}

/// Lagrange interpolant through `(x, y)` evaluated at `t`.
fn lagrange(x: &[f64], y: &[f64], t: f64) -> f64 {
    (0..x.len())
        .map(|i| {
            let basis: f64 = (0..x.len()).filter(|&j| j != i).map(|j| (t - x[j]) / (x[i] - x[j])).product();
            y[i] * basis
        })
        .sum()
}

/// Mean gap `g_test - g_anchor` over the overlap of the abscissae, by
/// trapezoidal integration on 10^4 samples of the interpolants.
fn dense_gap(xa: &[f64], ya: &[f64], xt: &[f64], yt: &[f64]) -> f64 {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (min(xa).max(min(xt)), max(xa).min(max(xt)));
    let n = 10_000;
    let step = (hi - lo) / n as f64;
    let f = |t: f64| lagrange(xt, yt, t) - lagrange(xa, ya, t);
    let mut area = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        area += f(lo + i as f64 * step);
    }
    area * step / (hi - lo)
}

fn oracle_bd(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> (f64, f64) {
    let lr = |c: &[(f64, f64)]| c.iter().map(|p| p.0.log10()).collect::<Vec<_>>();
    let q = |c: &[(f64, f64)]| c.iter().map(|p| p.1).collect::<Vec<_>>();
    let rate = dense_gap(&q(anchor), &lr(anchor), &q(test), &lr(test));
    let psnr = dense_gap(&lr(anchor), &q(anchor), &lr(test), &q(test));
    ((10f64.powf(rate) - 1.0) * 100.0, psnr)
}

fn bd_metrics() -> Outcome {
    let curve = |pts: &[(f64, f64)]| RDCurve::new(pts.to_vec()).map_err(err);
    let base = [(0.25, 28.0), (0.5, 31.0), (1.0, 33.5), (2.0, 35.2)];
    let a = curve(&base)?;
    let (r0, p0) = (bd_rate(&a, &a).map_err(err)?, bd_psnr(&a, &a).map_err(err)?);
    let doubled: Vec<(f64, f64)> = base.iter().map(|&(r, q)| (2.0 * r, q)).collect();
    let r2 = bd_rate(&a, &curve(&doubled)?).map_err(err)?;
    if r0 != 0.0 || p0 != 0.0 {
        return Err(format!("identical curves gave {r0} % / {p0} dB"));
    }
    if (r2 - 100.0).abs() > 0.1 {
        return Err(format!("doubled rate gave {r2} %"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let random_curve = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
        let mut r = rng.random_range(0.1..0.3);
        let mut q = rng.random_range(24.0..30.0);
        (0..4)
            .map(|_| {
                let p = (r, q);
                r *= rng.random_range(1.4..2.2);
                q += rng.random_range(1.0..3.5);
                p
            })
            .collect()
    };
    for _ in 0..20 {
        let (pa, pt) = (random_curve(&mut rng), random_curve(&mut rng));
        let (oa, op) = oracle_bd(&pa, &pt);
        let (ca, ct) = (curve(&pa)?, curve(&pt)?);
        let (lr, lp) = match (bd_rate(&ca, &ct), bd_psnr(&ca, &ct)) {
            (Ok(r), Ok(p)) => (r, p),
            // a pair without quality overlap has no BD-rate; the oracle has none either
            (Err(Error::UndefinedOverlap(_)), _) | (_, Err(Error::UndefinedOverlap(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(err(e)),
        };
        worst = worst.max((lr - oa).abs() / oa.abs().max(1e-3));
        worst = worst.max((lp - op).abs() / op.abs().max(1e-3));
    }
    check(
        worst < 1e-3,
        format!("identical 0 / 0; doubled rate {r2:.4} %; 20 random pairs max relative gap to oracle {worst:.1e}"),
    )
}

fn main() {
    let mut desk: Option<Desk> = None;
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: std::thread::Result<Outcome>| {
        let (tag, detail) = match outcome {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(p) => (
                "FAIL",
                format!("panic: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()),
            ),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!("acceptance {n:>2} {tag}: {name}: {detail}");
    };
    let run = |f: fn() -> Outcome| catch_unwind(f);
    report(1, "optics round trip", run(optics_round_trip));
    report(2, "optics unitarity", run(optics_unitarity));
    report(3, "ASM kernel cutoff", run(kernel_cutoff));
    report(4, "VQ oracle equivalence", run(vq_oracle));
    report(5, "EMA convergence", run(ema_convergence));
    report(6, "straight-through + ASM gradient check", run(gradient_check));
    report(7, "Bpp arithmetic", run(bpp_arithmetic));
    report(8, "entropy coding", run(huffman));
    report(9, "bitstream robustness", run(fuzz));
    report(10, "desk-scale training", catch_unwind(AssertUnwindSafe(|| desk_training(&mut desk))));
    let adapt = match desk.as_mut() {
        Some(d) => catch_unwind(AssertUnwindSafe(|| rate_adaptivity(d))),
        None => Ok(Err("no trained desk model".into())),
    };
    report(11, "rate adaptivity", adapt);
    let transport = match desk.as_ref() {
        Some(d) => catch_unwind(AssertUnwindSafe(|| transport_identity(d))),
        None => Ok(Err("no trained desk model".into())),
    };
    report(12, "transport identity", transport);
    report(13, "BD metrics", run(bd_metrics));
    println!("acceptance: {} of 13 passed", 13 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
