use holocodec::bitstream::{build_huffman, histogram, pack_channels, unpack_channels, HoloBitstream, StreamHeader};
use holocodec::codec::CodecProfile;
use holocodec::evaluation::{bd_psnr, bd_rate, psnr, RDCurve};
use holocodec::optics::{propagate, reconstruct_amplitude, ComplexField, OpticsConfig, PhaseMap};
use holocodec::vq::{dequantize, quantize, utilization, vq_losses, Codebook, IndexGrid, LatentGrid};
use holocodec::wrap_phase;
use ndarray::{Array2, Array3};
use num_complex::Complex;
use proptest::prelude::*;

fn optics(frame: (usize, usize)) -> OpticsConfig {
    OpticsConfig {
        wavelength: 520e-9,
        pixel_pitch: 6.4e-6,
        distance: 0.05,
        pad_factor: 1.0,
        roi: frame,
    }
}

/// Frame multiple of 8 with matching random index grids for the tiny profile.
fn stream_case() -> impl Strategy<Value = ((usize, usize), u32, bool, Vec<u32>, Vec<u32>)> {
    (1usize..=4, 1usize..=4, 0u32..=6, any::<bool>()).prop_flat_map(|(a, b, log_k, huff)| {
        let frame = (8 * a, 8 * b);
        let k = 1u32 << log_k;
        let nb = (2 * a) * (2 * b);
        let nt = a * b;
        (
            Just(frame),
            Just(k),
            Just(huff),
            prop::collection::vec(0..k, nb),
            prop::collection::vec(0..k, nt),
        )
    })
}

fn build(frame: (usize, usize), k: u32, huff: bool, b: Vec<u32>, t: Vec<u32>) -> HoloBitstream {
    let p = CodecProfile::tiny();
    let header = StreamHeader::new(&p, &optics(frame), 1, frame, k as usize, k as usize, huff).unwrap();
    let ib = IndexGrid::from_vec(p.bottom_shape(frame), b).unwrap();
    let it = IndexGrid::from_vec(p.top_shape(frame), t).unwrap();
    HoloBitstream::encode(header, &ib, &it).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bitstream_round_trip((frame, k, huff, b, t) in stream_case()) {
        let s = build(frame, k, huff, b.clone(), t.clone());
        let bytes = s.serialize();
        prop_assert_eq!(bytes.len(), s.byte_len());
        let back = HoloBitstream::parse(&bytes).unwrap();
        prop_assert_eq!(&back, &s);
        let (ib, it) = back.indices().unwrap();
        prop_assert_eq!(ib.data.iter().copied().collect::<Vec<_>>(), b);
        prop_assert_eq!(it.data.iter().copied().collect::<Vec<_>>(), t);
        // fixed-length Bpp counts only index bits
        let pixels = (frame.0 * frame.1) as f64;
        let expect = (s.header.bottom.0 as f64 * s.header.bottom.1 as f64 + s.header.top.0 as f64 * s.header.top.1 as f64)
            * k.trailing_zeros() as f64 / pixels;
        prop_assert!((s.fixed_bpp().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn any_single_byte_change_is_rejected_or_valid((frame, k, huff, b, t) in stream_case(), pos in any::<prop::sample::Index>(), val in any::<u8>()) {
        let s = build(frame, k, huff, b, t);
        let mut bytes = s.serialize();
        let i = pos.index(bytes.len());
        bytes[i] = val;
        if let Ok(p) = HoloBitstream::parse(&bytes) {
            prop_assert_eq!(p.serialize(), bytes);
            let (ib, it) = p.indices().unwrap();
            prop_assert!(ib.check_below(p.header.k_bottom()).is_ok());
            prop_assert!(it.check_below(p.header.k_top()).is_ok());
        }
    }

    #[test]
    fn container_round_trip(cases in prop::collection::vec(stream_case(), 1..4)) {
        let streams: Vec<HoloBitstream> = cases
            .into_iter()
            .enumerate()
            .map(|(c, (frame, k, huff, b, t))| {
                let mut s = build(frame, k, huff, b, t);
                s.header.channel = c as u8;
                s
            })
            .collect();
        let packed = pack_channels(&streams).unwrap();
        prop_assert_eq!(unpack_channels(&packed).unwrap(), streams);
    }

    #[test]
    fn huffman_round_trip_and_kraft(symbols in prop::collection::vec(0u32..40, 1..400)) {
        let hist = histogram(&symbols, 40).unwrap();
        let table = build_huffman(&hist).unwrap();
        let (bytes, bits) = table.encode(&symbols).unwrap();
        prop_assert_eq!(table.decode(&bytes, bits, symbols.len()).unwrap(), symbols);
        let used = hist.iter().filter(|&&c| c > 0).count();
        let kraft: f64 = table.entries().iter().map(|&(_, l)| 0.5f64.powi(l as i32)).sum();
        if used > 1 {
            // a full binary tree has Kraft sum exactly 1
            prop_assert!((kraft - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(kraft, 0.5);
        }
    }

    #[test]
    fn wrapped_phase_interval(x in -1e4f64..1e4) {
        let w = wrap_phase(x);
        let pi = std::f64::consts::PI;
        prop_assert!(w > -pi && w <= pi);
        let turns = (x - w) / (2.0 * pi);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn quantization_is_idempotent(
        k in 1usize..24,
        d in 1usize..6,
        (h, w) in (1usize..6, 1usize..6),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let book = Codebook::new(Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0f64..1.0))).unwrap();
        let lat = LatentGrid::new(Array3::from_shape_fn((h, w, d), |_| rng.random_range(-2.0..2.0))).unwrap();
        let (idx, q) = quantize(&lat, &book).unwrap();
        let (idx2, q2) = quantize(&q, &book).unwrap();
        prop_assert_eq!(&q2, &q);
        prop_assert_eq!(&dequantize(&idx, &book).unwrap(), &q);
        // duplicate codevectors may map to a lower index but never a different vector
        prop_assert!(idx2.data.iter().zip(idx.data.iter()).all(|(a, b)| a <= b));
        let (cb, commit) = vq_losses(&lat, &q, 0.25).unwrap();
        prop_assert!((commit - 0.25 * cb).abs() <= 1e-12 * cb.max(1.0));
        let u = utilization(&[idx], k).unwrap();
        prop_assert!(u > 0.0 && u <= 1.0);
    }

    #[test]
    fn propagation_conserves_energy(h in 2usize..24, w in 2usize..24, d in -0.3f64..0.3, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let field: Array2<Complex<f64>> = Array2::from_shape_fn((h, w), |_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let f = ComplexField::new(field, optics((h, w))).unwrap();
        let out = propagate(&f, d).unwrap();
        prop_assert!((out.energy() - f.energy()).abs() <= 1e-9 * f.energy());
        let back = propagate(&out, -d).unwrap();
        let err = back.data.iter().zip(f.data.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9);
    }

    #[test]
    fn reconstruction_is_finite_and_nonnegative(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let phase = PhaseMap::wrapped(Array2::from_shape_fn((h, w), |_| rng.random_range(-10.0f64..10.0))).unwrap();
        let cfg = OpticsConfig { pad_factor: 2.0, ..optics((h, w)) };
        let amp = reconstruct_amplitude(&phase, &cfg).unwrap();
        prop_assert!(amp.0.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn bd_metrics_are_antisymmetric_under_rate_scaling(scale in 1.05f64..3.0, shift in -2.0f64..2.0) {
        let base = vec![(0.2, 27.0), (0.45, 30.5), (0.9, 33.0), (1.8, 35.5)];
        let a = RDCurve::new(base.clone()).unwrap();
        let slower = RDCurve::new(base.iter().map(|&(r, q)| (r * scale, q)).collect()).unwrap();
        let expect = (scale - 1.0) * 100.0;
        prop_assert!((bd_rate(&a, &slower).unwrap() - expect).abs() < 1e-6 * expect.max(1.0));
        let inverse = bd_rate(&slower, &a).unwrap();
        prop_assert!((inverse - (1.0 / scale - 1.0) * 100.0).abs() < 1e-6 * 100.0);
        let lifted = RDCurve::new(base.iter().map(|&(r, q)| (r, q + shift)).collect()).unwrap();
        prop_assert!((bd_psnr(&a, &lifted).unwrap() - shift).abs() < 1e-9);
    }

    #[test]
    fn psnr_of_constant_offset(v in 0.1f64..2.0, e in 1e-3f64..0.5) {
        let a = Array2::from_elem((4, 5), v);
        let b = a.mapv(|x| x + e);
        let p = psnr(b.view(), a.view(), v).unwrap();
        prop_assert!((p - 10.0 * (v * v / (e * e)).log10()).abs() < 1e-9);
    }
}
