mod common;

use std::fs;

use common::*;
use mscale::data::dataset::{generate_dataset, generate_split};
use mscale::data::netpbm::{depth_to_mm, read_depth, write_depth, Netpbm};
use mscale::data::{load_split, write_split, Checkpoint, SceneSpec, Split, TensorData, TensorFile};
use mscale::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn tensor_container_round_trips() {
    let rng = &mut ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let t = random_tensor_file(rng);
        let bytes = t.to_bytes();
        let back = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.dims, t.dims);
        assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn netpbm_round_trips() {
    let rng = &mut ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let img = random_netpbm(rng);
        let bytes = img.encode().unwrap();
        assert_eq!(Netpbm::decode(&bytes).unwrap(), img);
    }
}

#[test]
fn checkpoint_round_trips_through_files() {
    let rng = &mut ChaCha8Rng::seed_from_u64(43);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let ck = random_checkpoint(rng);
        let path = dir.path().join(format!("{i}.ckpt"));
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back.to_bytes().unwrap(), fs::read(&path).unwrap());
        assert_eq!(back.text, ck.text);
    }
}

#[test]
fn corrupted_headers_are_format_errors() {
    let rng = &mut ChaCha8Rng::seed_from_u64(44);
    for _ in 0..20 {
        let t = random_tensor_file(rng);
        let bytes = t.to_bytes();
        // magic, version, dtype and rank bytes
        for bad in corrupted_headers(&bytes, 7) {
            match TensorFile::from_bytes(&bad) {
                Err(Error::Format { .. }) => {}
                Ok(parsed) => assert_ne!(parsed.to_bytes(), bytes, "corruption went unnoticed"),
                Err(e) => panic!("unexpected error class: {e}"),
            }
        }
        let ck = random_checkpoint(rng).to_bytes().unwrap();
        for bad in corrupted_headers(&ck, 5) {
            assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        }
        let img = random_netpbm(rng).encode().unwrap();
        for bad in corrupted_headers(&img, 2) {
            assert!(matches!(Netpbm::decode(&bad), Err(Error::Format { .. })));
        }
    }
}

#[test]
fn truncated_payloads_are_format_errors() {
    let t = TensorFile::new(&[2, 3], TensorData::F64(vec![1.0; 6])).unwrap();
    let bytes = t.to_bytes();
    for cut in 1..bytes.len() {
        assert!(matches!(TensorFile::from_bytes(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(TensorFile::from_bytes(&long), Err(Error::Format { .. })));
}

#[test]
fn depth_images_store_millimeters() {
    let rng = &mut ChaCha8Rng::seed_from_u64(45);
    let dir = tempfile::tempdir().unwrap();
    let d = random_depth(rng, 11, 7);
    let path = dir.path().join("d.pgm");
    write_depth(&path, &d).unwrap();
    let back = read_depth(&path).unwrap();
    assert_eq!(back.mask, d.mask);
    for ((a, b), &m) in back.depth.as_slice().iter().zip(d.depth.as_slice()).zip(d.mask.as_slice()) {
        if m {
            assert_eq!(*a, f64::from(depth_to_mm(*b)) / 1000.0);
        }
    }
}

#[test]
fn dataset_files_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::desk(16, 12, 4);
    let meta = generate_dataset(dir.path(), &spec, 7, 3, 2).unwrap();
    assert_eq!(meta.count(Split::Train), 3);
    let (_, train) = load_split(dir.path(), Split::Train).unwrap();
    let copy = tempfile::tempdir().unwrap();
    write_split(copy.path(), Split::Train, &train).unwrap();
    for entry in fs::read_dir(dir.path().join("train")).unwrap() {
        let p = entry.unwrap().path();
        let q = copy.path().join("train").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap(), "{}", p.display());
    }
    let (_, test) = load_split(dir.path(), Split::Test).unwrap();
    for a in &train {
        for b in &test {
            assert_ne!(a.digest(), b.digest());
        }
    }
}

#[test]
fn disjoint_seed_ranges_share_no_sample() {
    let spec = SceneSpec::desk(16, 12, 5);
    let a = generate_split(&spec, (0, 20)).unwrap();
    let b = generate_split(&spec, (20, 40)).unwrap();
    let digests: std::collections::HashSet<_> = a.iter().map(|s| s.digest()).collect();
    assert!(b.iter().all(|s| !digests.contains(&s.digest())));
}

proptest! {
    #[test]
    fn f64_payload_bits_survive(values in prop::collection::vec(any::<u64>(), 1..64)) {
        let n = values.len();
        let t = TensorFile::new(&[n], TensorData::F64(values.iter().map(|&b| f64::from_bits(b)).collect())).unwrap();
        let back = TensorFile::from_bytes(&t.to_bytes()).unwrap();
        match back.data {
            TensorData::F64(v) => prop_assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), values),
            _ => prop_assert!(false, "dtype changed"),
        }
    }
}
