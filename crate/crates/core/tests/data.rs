use lqgan::autodiff::Tensor;
use lqgan::data::*;
use lqgan::Error;

#[test]
fn file_round_trip_keeps_pixels() {
    let ds = synth_dataset(20, 3, SynthKind::StripedFields).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.lqgd");
    ds.save(&path).unwrap();
    let back = ImageDataset::load(&path).unwrap();
    assert_eq!(back.images(), ds.images());
    assert_eq!(back.dims(), (SYNTH_SIDE, SYNTH_SIDE, SYNTH_CHANNELS));
}

#[test]
fn missing_and_truncated_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ImageDataset::load(dir.path().join("absent.lqgd")).is_err());
    let ds = synth_dataset(2, 0, SynthKind::GaussianBlobs).unwrap();
    let path = dir.path().join("cut.lqgd");
    ds.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(ImageDataset::load(&path), Err(Error::Data(_))));
}

#[test]
fn out_of_range_pixels_are_rejected() {
    let t = Tensor::full(&[1, 2, 2, 1], 1.5);
    assert!(matches!(ImageDataset::new(t, "bad"), Err(Error::Data(_))));
}

#[test]
fn seeds_select_different_subsets() {
    let ds = synth_dataset(100, 1, SynthKind::GaussianBlobs).unwrap();
    let a = ds.subselect(30, 42).unwrap();
    let b = ds.subselect(30, 42).unwrap();
    let c = ds.subselect(30, 43).unwrap();
    assert_eq!(a.images(), b.images());
    assert_ne!(a.images(), c.images());
    assert_eq!(a.seed, Some(42));
    assert!(ds.subselect(101, 0).is_err());
}

#[test]
fn epoch_batches_partition_and_reshuffle() {
    let e0 = epoch_batches(50, 12, 7, 0);
    let e1 = epoch_batches(50, 12, 7, 1);
    let mut all: Vec<usize> = e0.concat();
    all.sort_unstable();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
    assert_eq!(e0.iter().map(Vec::len).collect::<Vec<_>>(), [12, 12, 12, 12, 2]);
    assert_ne!(e0, e1);
    assert_eq!(e0, epoch_batches(50, 12, 7, 0));
}
