mod common;

use std::time::Instant;

use common::*;
use jpgnet_core::data::{
    classify_mask_ratio, epoch_order, generate_irregular_mask, load_dataset, load_image, read_manifest, save_image,
    toy_dataset, write_manifest, BatchSampler, Bucket, FILL_VALUE,
};
use jpgnet_core::{Error, Tensor};

fn on_grid(dims: &[usize], seed: u64) -> Tensor {
    uniform(dims, 0.0, 1.0, &mut rng(seed)).map(|v| (v * 255.0).round() / 255.0)
}

#[test]
fn file_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = on_grid(&[1, 3, 9, 13], 1);
    let gray = on_grid(&[1, 1, 9, 13], 2);
    for (name, img) in [("a.png", &rgb), ("b.ppm", &rgb), ("c.png", &gray), ("d.pgm", &gray)] {
        let path = dir.path().join(name);
        save_image(&path, img).unwrap();
        assert_eq!(&load_image(&path).unwrap(), img, "{name}");
    }
    assert!(matches!(save_image(dir.path().join("e.jpg"), &rgb), Err(Error::Format(_))));
    assert!(matches!(save_image(dir.path().join("f.pgm"), &rgb), Err(Error::Format(_))));
    assert!(matches!(load_image(dir.path().join("missing.png")), Err(Error::Io { .. })));
}

#[test]
fn saving_clamps_and_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::new(vec![1, 1, 1, 3], vec![-0.5, 0.5, 1.5]).unwrap();
    let path = dir.path().join("x.pgm");
    save_image(&path, &img).unwrap();
    assert_eq!(load_image(&path).unwrap().data(), &[0.0, 128.0 / 255.0, 1.0]);
}

#[test]
fn manifest_and_dataset_loading() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = toy_dataset(3, 16, &mut rng(4)).unwrap();
    let names: Vec<String> = (0..3).map(|i| format!("im{i}.png")).collect();
    for (n, img) in names.iter().zip(&imgs) {
        save_image(dir.path().join(n), img).unwrap();
    }
    write_manifest(dir.path().join("manifest.txt"), &names).unwrap();
    assert_eq!(read_manifest(dir.path().join("manifest.txt")).unwrap().len(), 3);
    assert_eq!(load_dataset(dir.path()).unwrap(), imgs);
    assert_eq!(load_dataset(dir.path().join("manifest.txt")).unwrap(), imgs);
    write_manifest(dir.path().join("empty.txt"), &[]).unwrap();
    assert!(matches!(load_dataset(dir.path().join("empty.txt")), Err(Error::EmptyDataset)));
}

#[test]
fn masks_land_in_their_bucket() {
    for bucket in Bucket::ALL {
        let mut r = rng(bucket as u64);
        for _ in 0..200 {
            let m = generate_irregular_mask(64, 64, bucket, &mut r).unwrap();
            assert_eq!(classify_mask_ratio(&m).unwrap(), bucket);
        }
    }
    let m = generate_irregular_mask(31, 17, Bucket::B60, &mut rng(3)).unwrap();
    assert_eq!((m.height(), m.width()), (31, 17));
}

#[test]
fn masks_are_seed_deterministic() {
    let a: Vec<_> = (0..5).map(|s| generate_irregular_mask(64, 64, Bucket::B20, &mut rng(s)).unwrap()).collect();
    let b: Vec<_> = (0..5).map(|s| generate_irregular_mask(64, 64, Bucket::B20, &mut rng(s)).unwrap()).collect();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
}

#[test]
fn toy_dataset_is_fast() {
    let t = Instant::now();
    let d = toy_dataset(100, 32, &mut rng(0)).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0, "{:?}", t.elapsed());
    assert_eq!(d.len(), 100);
    assert!(d.iter().all(|i| i.dims() == [1, 3, 32, 32]));
}

#[test]
fn sampler_is_a_function_of_the_seed() {
    let data = toy_dataset(5, 16, &mut rng(0)).unwrap();
    let draw = |seed| {
        let mut s = BatchSampler::new(&data, 3, seed).unwrap();
        (0..4).map(|_| s.next_batch().unwrap().input).collect::<Vec<_>>()
    };
    assert_eq!(draw(7), draw(7));
    assert_ne!(draw(7), draw(8));
    let mut s = BatchSampler::new(&data, 5, 1).unwrap().with_buckets(&[Bucket::B40]);
    let b = s.next_batch().unwrap();
    assert_eq!(b.truth.dims(), &[5, 3, 16, 16]);
    // the first epoch visits every image once, in epoch_order
    let order = epoch_order(5, 1, 0);
    for (i, &j) in order.iter().enumerate() {
        assert_eq!(b.truth.sample(i).unwrap(), data[j]);
    }
    for i in 0..5 {
        let m = b.mask.sample(i).unwrap();
        let ratio = m.mean();
        assert!(ratio > 0.2 && ratio <= 0.4);
        let inp = b.input.sample(i).unwrap();
        let holes = m.data().iter().filter(|&&v| v == 1.0).count();
        assert!(inp.data().iter().filter(|&&v| v == FILL_VALUE).count() >= 3 * holes);
    }
}
