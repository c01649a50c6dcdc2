use mcnet::data::{
    augment, encode_cifar, load_cifar, make_synthetic, normalize, parse_cifar, parse_idx,
    sample_erase_region, AugmentPolicy, ChannelStats, CifarVariant, Dataset, EraseRegion,
    EraseSpec, SyntheticKind, CIFAR_BATCH_RECORDS,
};
use mcnet::{Error, SeededRng};
use proptest::prelude::*;

const RECORD: usize = 1 + 3 * 32 * 32;

/// Record `i` carries label `i % 10` and pixel bytes `(i + p) % 256`.
fn cifar_bytes(n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n * RECORD);
    for i in 0..n {
        out.push((i % 10) as u8);
        out.extend((0..3072).map(|p| ((i + p) % 256) as u8));
    }
    out
}

#[test]
fn full_cifar_batch_decodes() {
    let bytes = cifar_bytes(CIFAR_BATCH_RECORDS);
    let ds = parse_cifar(&bytes, CifarVariant::Cifar10).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.image_shape(), [3, 32, 32]);
    for i in [0, 1, 4321, 9999] {
        assert_eq!(ds.label(i), i % 10);
        let img = ds.image(i);
        // red plane row 0, green plane start, last blue pixel
        for p in [0, 1024, 3071] {
            assert_eq!(img[p], ((i + p) % 256) as f32 / 255.0);
        }
    }
    assert_eq!(encode_cifar(&ds, CifarVariant::Cifar10).unwrap(), bytes);
}

#[test]
fn partial_record_is_rejected() {
    let mut bytes = cifar_bytes(3);
    bytes.pop();
    assert!(matches!(parse_cifar(&bytes, CifarVariant::Cifar10), Err(Error::Format(_))));
}

#[test]
fn cifar100_keeps_fine_label_and_round_trips() {
    let mut bytes = Vec::new();
    for i in 0..5u8 {
        bytes.push(i);
        bytes.push(90 + i);
        bytes.extend(std::iter::repeat_n(i * 40, 3072));
    }
    let ds = parse_cifar(&bytes, CifarVariant::Cifar100).unwrap();
    assert_eq!(ds.labels(), &[90, 91, 92, 93, 94]);
    assert_eq!(encode_cifar(&ds, CifarVariant::Cifar100).unwrap(), bytes);
}

#[test]
fn load_reads_canonical_layout() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cifar-100-binary");
    std::fs::create_dir(&sub).unwrap();
    let record = |i: usize| {
        let mut r = vec![0u8, (i % 100) as u8];
        r.extend(std::iter::repeat_n((i % 256) as u8, 3072));
        r
    };
    let train: Vec<u8> = (0..50_000).flat_map(record).collect();
    let test: Vec<u8> = (0..10_000).flat_map(record).collect();
    std::fs::write(sub.join("train.bin"), &train).unwrap();
    std::fs::write(sub.join("test.bin"), &test).unwrap();
    let (tr, te) = load_cifar(dir.path(), CifarVariant::Cifar100).unwrap();
    assert_eq!((tr.len(), te.len()), (50_000, 10_000));
    assert_eq!(tr.label(12_345), 45);

    std::fs::write(sub.join("test.bin"), &test[..test.len() - RECORD - 1]).unwrap();
    assert!(matches!(load_cifar(dir.path(), CifarVariant::Cifar100), Err(Error::Format(_))));
}

#[test]
fn missing_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_cifar(&dir.path().join("nope"), CifarVariant::Cifar10),
        Err(Error::Data(_))
    ));
}

fn idx_files(n: u32, rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    for v in [0x803, n, rows, cols] {
        img.extend(v.to_be_bytes());
    }
    img.extend((0..n * rows * cols).map(|p| (p % 256) as u8));
    let mut lab = Vec::new();
    for v in [0x801, labels.len() as u32] {
        lab.extend(v.to_be_bytes());
    }
    lab.extend(labels);
    (img, lab)
}

#[test]
fn idx_decodes_and_validates() {
    let (img, lab) = idx_files(3, 2, 2, &[1, 0, 1]);
    let ds = parse_idx(&img, &lab, 2).unwrap();
    assert_eq!(ds.image_shape(), [1, 2, 2]);
    assert_eq!(ds.image(1), &[4.0 / 255.0, 5.0 / 255.0, 6.0 / 255.0, 7.0 / 255.0]);

    let mut bad = img.clone();
    bad[3] = 0x04;
    assert!(matches!(parse_idx(&bad, &lab, 2), Err(Error::Format(_))));
    assert!(matches!(parse_idx(&img[..10], &lab, 2), Err(Error::Truncated(_))));
    assert!(matches!(parse_idx(&img[..img.len() - 1], &lab, 2), Err(Error::Format(_))));
    let (_, short) = idx_files(3, 2, 2, &[1, 0]);
    assert!(matches!(parse_idx(&img, &short, 2), Err(Error::Data(_))));
    let (_, wide) = idx_files(3, 2, 2, &[1, 0, 5]);
    assert!(matches!(parse_idx(&img, &wide, 2), Err(Error::Data(_))));
}

#[test]
fn channel_stats_match_direct_computation() {
    let ds = make_synthetic(SyntheticKind::StripedPatterns, 20, 4, 6, 1).unwrap();
    let stats = ChannelStats::from_dataset(&ds).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..ds.len())
            .flat_map(|i| ds.image(i)[c * 36..(c + 1) * 36].iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((stats.mean[c] - mean).abs() < 1e-12);
        assert!((stats.std[c] - sd).abs() < 1e-12);
    }
    let normed: Vec<f32> = (0..ds.len())
        .flat_map(|i| normalize(&ds.get(i), &stats).pixels.into_data())
        .collect();
    let n = ds.len() * 36;
    let m0: f64 = normed.chunks(36).step_by(3).flatten().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    assert!(m0.abs() < 1e-5);
}

#[test]
fn constant_channel_gets_unit_std() {
    let ds = Dataset::new([1, 2, 2], 2, vec![0.5; 8], vec![0, 1]).unwrap();
    assert_eq!(ChannelStats::from_dataset(&ds).unwrap().std, vec![1.0]);
}

/// Independent restatement of the erase sampler on the same stream.
fn erase_oracle(h: usize, w: usize, spec: &EraseSpec, rng: &mut SeededRng) -> Option<EraseRegion> {
    if rng.uniform() >= spec.prob {
        return None;
    }
    let area = (h * w) as f64;
    for _ in 0..spec.attempts {
        let a = spec.area.0 + (spec.area.1 - spec.area.0) * rng.uniform();
        let r = spec.aspect.0 + (spec.aspect.1 - spec.aspect.0) * rng.uniform();
        let eh = (a * area * r).sqrt().round() as usize;
        let ew = (a * area / r).sqrt().round() as usize;
        if (1..h).contains(&eh) && (1..w).contains(&ew) {
            let top = rng.below(h - eh + 1);
            let left = rng.below(w - ew + 1);
            return Some(EraseRegion {
                top,
                left,
                height: eh,
                width: ew,
            });
        }
    }
    None
}

#[test]
fn erase_region_matches_oracle() {
    let spec = EraseSpec::default();
    let mut hits = 0;
    for seed in 0..2000 {
        let mut a = SeededRng::new(seed);
        let mut b = SeededRng::new(seed);
        let got = sample_erase_region(32, 32, &spec, &mut a);
        assert_eq!(got, erase_oracle(32, 32, &spec, &mut b), "seed {seed}");
        if let Some(r) = got {
            hits += 1;
            assert!(r.top + r.height <= 32 && r.left + r.width <= 32);
            let frac = (r.height * r.width) as f64 / 1024.0;
            assert!(frac > 0.01 && frac < 0.45, "{frac}");
        }
    }
    // prob 0.5 over 2000 draws
    assert!((850..1150).contains(&hits), "{hits}");
}

#[test]
fn disabled_policy_is_identity() {
    let ds = make_synthetic(SyntheticKind::TwoGaussians, 4, 2, 5, 0).unwrap();
    let mut rng = SeededRng::new(0);
    for i in 0..4 {
        assert_eq!(augment(&ds.get(i), &AugmentPolicy::disabled(), &mut rng), ds.get(i));
    }
}

#[test]
fn certain_flip_mirrors_rows() {
    let ds = make_synthetic(SyntheticKind::StripedPatterns, 1, 2, 4, 0).unwrap();
    let policy = AugmentPolicy {
        flip_prob: 1.0,
        ..AugmentPolicy::disabled()
    };
    let out = augment(&ds.get(0), &policy, &mut SeededRng::new(1));
    let (src, dst) = (ds.image(0), out.pixels.data());
    for row in 0..12 {
        for x in 0..4 {
            assert_eq!(dst[row * 4 + x], src[row * 4 + 3 - x]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augment_keeps_shape_label_and_is_seeded(seed in 0u64..10_000, pad in 0usize..4) {
        let ds = make_synthetic(SyntheticKind::StripedPatterns, 3, 3, 8, seed).unwrap();
        let stats = ChannelStats::from_dataset(&ds).unwrap();
        let policy = AugmentPolicy { crop_pad: pad, ..AugmentPolicy::standard(stats) };
        let img = ds.get(1);
        let a = augment(&img, &policy, &mut SeededRng::new(seed));
        let b = augment(&img, &policy, &mut SeededRng::new(seed));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.label, img.label);
        prop_assert_eq!(a.pixels.shape(), img.pixels.shape());
    }

    #[test]
    fn crop_values_come_from_the_image_or_padding(seed in 0u64..10_000) {
        let ds = make_synthetic(SyntheticKind::TwoGaussians, 1, 2, 6, seed).unwrap();
        let policy = AugmentPolicy { crop_pad: 2, ..AugmentPolicy::disabled() };
        let out = augment(&ds.get(0), &policy, &mut SeededRng::new(seed));
        let src = ds.image(0);
        for &v in out.pixels.data() {
            prop_assert!(v == 0.0 || src.contains(&v));
        }
    }

    #[test]
    fn synthetic_is_deterministic(seed in 0u64..1000, n in 0usize..30, k in 2usize..12) {
        let a = make_synthetic(SyntheticKind::StripedPatterns, n, k, 4, seed).unwrap();
        let b = make_synthetic(SyntheticKind::StripedPatterns, n, k, 4, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.labels().iter().all(|&l| l < k));
    }
}
