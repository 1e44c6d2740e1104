use layerbuild::layers::{
    compose, compose_colors, compose_unclamped, filter_layer, layers_from_bytes, layers_to_bytes, load_layers, project,
    save_layers, Kernel, LayerSet, HEADER_LEN,
};
use layerbuild::manifold::SparseRowMatrix;
use layerbuild::palette::Palette;
use layerbuild::solver::SuperpixelLayers;
use layerbuild::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, w: usize, h: usize, t: usize, n: usize) -> LayerSet {
    let palette = loop {
        let colors: Vec<[f32; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen::<f32>())).collect();
        if let Ok(p) = Palette::new(colors) {
            break p;
        }
    };
    let planes = (0..n)
        .map(|_| (0..w * h * t).map(|_| rng.gen_range(-0.3f32..1.3)).collect())
        .collect();
    LayerSet::new(w, h, t, palette, planes).unwrap()
}

#[test]
fn projection_matches_dense_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (p, s, n) = (300, 40, 3);
    let rows: Vec<Vec<(usize, f64)>> = (0..p)
        .map(|_| (0..5).map(|_| (rng.gen_range(0..s), rng.gen_range(-0.5..1.0))).collect())
        .collect();
    let q = SparseRowMatrix::from_rows(s, rows).unwrap();
    let values: Vec<f64> = (0..s * n).map(|_| rng.gen_range(-0.2..1.2)).collect();
    let l = SuperpixelLayers::new(s, n, values.clone()).unwrap();
    let planes = project(&q, &l).unwrap();
    let dense = q.to_dense();
    for j in 0..n {
        for (r, row) in dense.iter().enumerate() {
            let want: f64 = row.iter().enumerate().map(|(c, v)| v * values[j * s + c]).sum();
            let got = planes[j][r] as f64;
            // planes are stored as f32
            assert!((got - want).abs() <= 1e-9 + want.abs() * f32::EPSILON as f64, "{got} vs {want}");
        }
    }
}

#[test]
fn recolor_with_original_palette_is_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let set = random_set(&mut rng, 17, 9, 2, 4);
    let baseline = compose(&set, set.palette()).unwrap();
    let again = compose_colors(&set, set.palette().colors()).unwrap();
    assert_eq!(baseline.data(), again.data());
}

#[test]
fn save_load_and_corrupted_headers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set = random_set(&mut rng, 8, 6, 1, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.lbld");
    save_layers(&set, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = load_layers(&path).unwrap();
    assert_eq!(layers_to_bytes(&loaded), bytes);

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(layers_from_bytes(&magic), Err(Error::BadMagic)));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(layers_from_bytes(&version), Err(Error::VersionMismatch { found: 2, expected: 1 })));

    // header says 3 planes, payload holds 2 (plus a valid checksum over what is there)
    let plane_bytes = 8 * 6 * 4;
    let mut short = bytes[..bytes.len() - 4 - plane_bytes].to_vec();
    let crc = crc32fast::hash(&short);
    short.extend_from_slice(&crc.to_le_bytes());
    let err = layers_from_bytes(&short).unwrap_err();
    assert_eq!(err.to_string(), "truncated payload");

    let mut flipped = bytes.clone();
    flipped[HEADER_LEN + 5] ^= 0x40;
    assert!(matches!(layers_from_bytes(&flipped), Err(Error::ChecksumMismatch)));

    assert!(matches!(layers_from_bytes(&bytes[..3]), Err(Error::TruncatedPayload)));
}

#[test]
fn filtering_one_layer_leaves_the_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set = random_set(&mut rng, 20, 12, 2, 3);
    for kernel in [
        Kernel::Gaussian { sigma: 2.0 },
        Kernel::Emboss,
        Kernel::MotionBlur { length: 4, angle: 30.0 },
    ] {
        let out = filter_layer(&set, 1, kernel).unwrap();
        assert_eq!(out.plane(0).unwrap(), set.plane(0).unwrap());
        assert_eq!(out.plane(2).unwrap(), set.plane(2).unwrap());
        assert_ne!(out.plane(1).unwrap(), set.plane(1).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lbld_round_trip_is_byte_identical(seed in any::<u64>(), w in 1usize..12, h in 1usize..12, t in 1usize..3, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, w, h, t, n);
        let bytes = layers_to_bytes(&set);
        let back = layers_from_bytes(&bytes).unwrap();
        prop_assert_eq!(layers_to_bytes(&back), bytes);
        for j in 0..n {
            let a: Vec<u32> = set.plane(j).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.plane(j).unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn any_truncation_is_rejected(seed in any::<u64>(), cut in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 5, 4, 1, 2);
        let bytes = layers_to_bytes(&set);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(layers_from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn compose_is_linear_in_the_palette(seed in any::<u64>(), alpha in 0.0f32..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 9, 7, 1, 3);
        let c1: Vec<[f32; 3]> = (0..3).map(|_| std::array::from_fn(|_| rng.gen::<f32>())).collect();
        let c2: Vec<[f32; 3]> = (0..3).map(|_| std::array::from_fn(|_| rng.gen::<f32>())).collect();
        let mix: Vec<[f32; 3]> = c1
            .iter()
            .zip(&c2)
            .map(|(a, b)| std::array::from_fn(|d| alpha * a[d] + (1.0 - alpha) * b[d]))
            .collect();
        let a = compose_unclamped(&set, &c1).unwrap();
        let b = compose_unclamped(&set, &c2).unwrap();
        let m = compose_unclamped(&set, &mix).unwrap();
        for i in 0..m.len() {
            let want = alpha * a[i] + (1.0 - alpha) * b[i];
            prop_assert!((m[i] - want).abs() <= 1e-6, "{} vs {}", m[i], want);
        }
    }

    #[test]
    fn gaussian_keeps_constant_planes(sigma in 0.2f64..6.0, value in -1.0f32..2.0) {
        let palette = Palette::new(vec![[0.1, 0.2, 0.3], [0.7, 0.6, 0.5]]).unwrap();
        let set = LayerSet::new(13, 8, 2, palette, vec![vec![value; 13 * 8 * 2], vec![0.0; 13 * 8 * 2]]).unwrap();
        let out = filter_layer(&set, 0, Kernel::Gaussian { sigma }).unwrap();
        for v in out.plane(0).unwrap() {
            prop_assert!((v - value).abs() <= 1e-6);
        }
    }
}
