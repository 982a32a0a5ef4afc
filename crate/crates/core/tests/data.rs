use cgtn_core::data::{
    batch_iter, bilinear_resize, parse_cifar10, parse_idx, sha256_hex, shuffled_indices,
    write_pgm, write_ppm, DirLock, LabeledImageSet,
};
use cgtn_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn idx_images(count: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0, 0, 8, 3];
    for dim in [count, h, w] {
        bytes.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    bytes.extend_from_slice(pixels);
    bytes
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0, 0, 8, 1];
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    bytes
}

fn small_set(labels: &[u8], num_classes: usize) -> LabeledImageSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(labels.len() as u64);
    let n = labels.len();
    let images = Tensor::new(
        vec![n, 1, 2, 2],
        (0..n * 4).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    LabeledImageSet::new(images, labels.to_vec(), num_classes).unwrap()
}

#[test]
fn idx_image_files_scale_to_unit_range() {
    let pixels: Vec<u8> = (0..24).collect();
    let t: Tensor<f64> = parse_idx(&idx_images(2, 3, 4, &pixels)).unwrap();
    assert_eq!(t.shape(), &[2, 1, 3, 4]);
    for (i, v) in t.data().iter().enumerate() {
        assert_eq!(*v, i as f64 / 255.0);
    }
}

#[test]
fn idx_label_files_keep_raw_values() {
    let t: Tensor<f32> = parse_idx(&idx_labels(&[7, 2, 9])).unwrap();
    assert_eq!(t.shape(), &[3]);
    assert_eq!(t.data(), &[7.0, 2.0, 9.0]);
}

#[test]
fn idx_rejects_malformed_files() {
    assert!(parse_idx::<f32>(&[0, 0]).is_err());
    assert!(parse_idx::<f32>(&[0, 0, 8, 9, 0, 0, 0, 1]).is_err());
    // Header cut off mid-dimension.
    assert!(parse_idx::<f32>(&idx_images(2, 3, 4, &[0; 24])[..10]).is_err());
    // Payload shorter than the dimensions promise.
    let err = parse_idx::<f32>(&idx_images(2, 3, 4, &[0; 23]))
        .unwrap_err()
        .to_string();
    assert!(err.contains("payload"), "{err}");
}

#[test]
fn cifar_records_are_label_then_channel_major_pixels() {
    let mut bytes = Vec::new();
    for (label, fill) in [(3u8, 10u8), (9, 200)] {
        bytes.push(label);
        for ch in 0..3u8 {
            bytes.extend(std::iter::repeat(fill + ch).take(1024));
        }
    }
    let set: LabeledImageSet<f64> = parse_cifar10(&bytes).unwrap();
    assert_eq!(set.images().shape(), &[2, 3, 32, 32]);
    assert_eq!(set.labels(), &[3, 9]);
    assert_eq!(set.num_classes(), 10);
    // Image 1, channel 2, arbitrary pixel.
    let v = set.images().data()[1 * 3072 + 2 * 1024 + 77];
    assert_eq!(v, 202.0 / 255.0);
}

#[test]
fn cifar_rejects_bad_lengths_and_labels() {
    assert!(parse_cifar10::<f32>(&[]).is_err());
    assert!(parse_cifar10::<f32>(&[0; 3072]).is_err());
    let mut record = vec![0u8; 3073];
    record[0] = 10; // label out of range for ten classes
    assert!(parse_cifar10::<f32>(&record).is_err());
}

#[test]
fn cache_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.cgds");
    let set = small_set(&[0, 1, 2, 1], 3);
    set.save_cache(&path).unwrap();

    let back = LabeledImageSet::<f32>::load_cache(&path).unwrap();
    assert_eq!(back.images().shape(), set.images().shape());
    assert_eq!(back.images().data(), set.images().data());
    assert_eq!(back.labels(), set.labels());
    assert_eq!(back.num_classes(), 3);

    // Writing the reloaded set reproduces the file byte for byte.
    let again = dir.path().join("again.cgds");
    back.save_cache(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn cache_loading_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.cgds");
    small_set(&[0, 1], 2).save_cache(&path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("magic", {
            let mut b = good.clone();
            b[0] = b'X';
            b
        }),
        ("version", {
            let mut b = good.clone();
            b[4] = 9;
            b
        }),
        ("truncated", good[..good.len() - 1].to_vec()),
        ("padded", {
            let mut b = good.clone();
            b.push(0);
            b
        }),
        ("short", good[..10].to_vec()),
    ];
    for (what, bytes) in cases {
        std::fs::write(&path, &bytes).unwrap();
        assert!(
            LabeledImageSet::<f32>::load_cache(&path).is_err(),
            "{what} corruption went unnoticed"
        );
    }
}

#[test]
fn bilinear_downsample_averages_cell_blocks() {
    let img = Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
    let out = bilinear_resize(&img, 2, 2).unwrap();
    assert_eq!(out.shape(), &[1, 2, 2]);
    assert_eq!(out.data(), &[2.5, 4.5, 10.5, 12.5]);
}

#[test]
fn bilinear_identity_and_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Tensor::<f64>::new(
        vec![2, 3, 5],
        (0..30).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let same = bilinear_resize(&img, 3, 5).unwrap();
    for (a, b) in img.data().iter().zip(same.data()) {
        assert!((a - b).abs() < 1e-12);
    }

    let flat = Tensor::new(vec![1, 2, 2], vec![0.6f64; 4]).unwrap();
    for (h, w) in [(1, 1), (3, 3), (7, 2)] {
        let out = bilinear_resize(&flat, h, w).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }
}

#[test]
fn bilinear_upsample_clamps_at_the_border() {
    let img = Tensor::new(vec![1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let out = bilinear_resize(&img, 4, 4).unwrap();
    let d = out.data();
    assert_eq!(d[0], 1.0);
    assert_eq!(d[3], 2.0);
    assert_eq!(d[12], 3.0);
    assert_eq!(d[15], 4.0);

    assert!(bilinear_resize(&img, 0, 4).is_err());
    let flat = Tensor::new(vec![4], vec![0.0f64; 4]).unwrap();
    assert!(bilinear_resize(&flat, 2, 2).is_err());
}

#[test]
fn batches_cover_every_image_once() {
    let set = small_set(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0], 3);
    for batch in [1usize, 3, 4, 10, 16] {
        let mut seen = vec![0usize; set.count()];
        let mut total = 0;
        for (images, labels) in batch_iter(&set, batch, 7).unwrap() {
            assert_eq!(images.shape()[1..], [1, 2, 2]);
            assert_eq!(images.shape()[0], labels.len());
            assert!(labels.len() <= batch);
            total += labels.len();
            // Match returned rows back to source images by content.
            for r in 0..labels.len() {
                let row = &images.data()[r * 4..(r + 1) * 4];
                let hit = (0..set.count())
                    .find(|&i| set.image(i) == row && set.labels()[i] == labels[r])
                    .expect("batch row must come from the set");
                seen[hit] += 1;
            }
        }
        assert_eq!(total, set.count(), "batch size {batch}");
        assert!(seen.iter().all(|&c| c == 1), "batch size {batch}: {seen:?}");
    }
}

#[test]
fn batch_order_is_a_function_of_the_seed() {
    let set = small_set(&[0, 1, 0, 1, 0, 1, 0, 1], 2);
    let collect = |seed: u64| -> Vec<u8> {
        batch_iter(&set, 3, seed)
            .unwrap()
            .flat_map(|(_, l)| l)
            .collect()
    };
    assert_eq!(collect(5), collect(5));
    let baseline = collect(5);
    assert!((0..20).any(|s| collect(s) != baseline));
}

#[test]
fn batching_rejects_degenerate_requests() {
    let set = small_set(&[0, 1], 2);
    assert!(batch_iter(&set, 0, 0).is_err());
    let empty = LabeledImageSet::<f32>::new(Tensor::zeros(vec![0, 1, 2, 2]), vec![], 2).unwrap();
    assert!(batch_iter(&empty, 4, 0).is_err());
}

#[test]
fn shuffled_indices_permute() {
    let order = shuffled_indices(100, 3);
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    assert_eq!(order, shuffled_indices(100, 3));
    assert_ne!(order, shuffled_indices(100, 4));
    assert_ne!(order, sorted, "a 100-element shuffle left everything fixed");
}

#[test]
fn balanced_resample_equalizes_the_histogram() {
    let set = small_set(&[0, 0, 0, 0, 0, 1, 1, 2], 3);
    let balanced = set.balanced_resample(4, 9).unwrap();
    assert_eq!(balanced.class_histogram(), vec![4, 4, 4]);

    // The lone class-2 image is repeated, never invented.
    let src = set.image(7);
    for i in balanced.indices_of_class(2) {
        assert_eq!(balanced.image(i), src);
    }
    // A class larger than the quota contributes distinct images.
    let mut rows: Vec<&[f32]> = balanced
        .indices_of_class(0)
        .into_iter()
        .map(|i| balanced.image(i))
        .collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rows.dedup();
    assert_eq!(rows.len(), 4);

    let missing = small_set(&[0, 0, 1], 3);
    assert!(missing.balanced_resample(2, 0).is_err());
}

#[test]
fn standardization_reports_the_applied_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f64> = (0..5 * 2 * 9).map(|_| rng.gen_range(0.0..4.0)).collect();
    let images = Tensor::new(vec![5, 2, 3, 3], data.clone()).unwrap();
    let mut set = LabeledImageSet::new(images, vec![0; 5], 1).unwrap();
    let stats = set.standardize_per_channel();
    assert_eq!(stats.len(), 2);

    for ch in 0..2 {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..5 {
            for p in 0..9 {
                let v = set.images().data()[i * 18 + ch * 9 + p];
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / 45.0;
        let var = sq / 45.0 - mean * mean;
        assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "channel {ch} var {var}");
        // Reapplying the reported transform to the raw data reproduces it.
        let (m, s) = stats[ch];
        let v0 = data[ch * 9];
        assert!((set.images().data()[ch * 9] - (v0 - m) / s).abs() < 1e-12);
    }

    let constant = Tensor::new(vec![2, 1, 2, 2], vec![0.25f64; 8]).unwrap();
    let mut set = LabeledImageSet::new(constant, vec![0, 0], 1).unwrap();
    set.standardize_per_channel();
    assert!(set.images().data().iter().all(|&v| v == 0.0));
}

#[test]
fn subsets_check_their_indices() {
    let set = small_set(&[0, 1, 2], 3);
    let sub = set.subset(&[2, 0]).unwrap();
    assert_eq!(sub.labels(), &[2, 0]);
    assert_eq!(sub.image(0), set.image(2));
    assert!(set.subset(&[3]).is_err());
}

#[test]
fn labeled_set_construction_is_validated() {
    let images = Tensor::<f32>::zeros(vec![2, 1, 2, 2]);
    assert!(LabeledImageSet::new(images.clone(), vec![0], 2).is_err());
    assert!(LabeledImageSet::new(images.clone(), vec![0, 2], 2).is_err());
    assert!(LabeledImageSet::new(images.clone(), vec![0, 0], 0).is_err());
    assert!(LabeledImageSet::new(Tensor::<f32>::zeros(vec![2, 4]), vec![0, 0], 2).is_err());
    assert!(LabeledImageSet::new(images, vec![0, 1], 2).is_ok());
}

#[test]
fn resizing_a_set_resizes_each_member() {
    let set = small_set(&[0, 1, 1], 2);
    let small = set.resized(1, 1).unwrap();
    assert_eq!(small.images().shape(), &[3, 1, 1, 1]);
    for i in 0..3 {
        let img = Tensor::new(vec![1, 2, 2], set.image(i).to_vec()).unwrap();
        let direct = bilinear_resize(&img, 1, 1).unwrap();
        assert_eq!(small.image(i), direct.data());
    }
    assert_eq!(small.labels(), set.labels());
}

#[test]
fn image_files_carry_the_netpbm_headers() {
    let dir = tempfile::tempdir().unwrap();
    let gray = dir.path().join("img.pgm");
    write_pgm(&gray, 3, 2, &[0, 50, 100, 150, 200, 250]).unwrap();
    let bytes = std::fs::read(&gray).unwrap();
    assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(&bytes[11..], &[0, 50, 100, 150, 200, 250]);
    assert!(write_pgm(&gray, 3, 2, &[0; 5]).is_err());

    let color = dir.path().join("img.ppm");
    write_ppm(&color, 1, 2, &[255, 0, 0, 0, 255, 0]).unwrap();
    let bytes = std::fs::read(&color).unwrap();
    assert!(bytes.starts_with(b"P6\n1 2\n255\n"));
    assert_eq!(&bytes[11..], &[255, 0, 0, 0, 255, 0]);
    assert!(write_ppm(&color, 2, 2, &[0; 6]).is_err());
}

#[test]
fn sha256_matches_the_reference_vector() {
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn directory_locks_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let lock = DirLock::acquire(dir.path()).unwrap();
    let err = match DirLock::acquire(dir.path()) {
        Ok(_) => panic!("second lock on the same directory succeeded"),
        Err(e) => e.to_string(),
    };
    assert!(err.contains("locked"), "{err}");
    drop(lock);
    DirLock::acquire(dir.path()).unwrap();
}
